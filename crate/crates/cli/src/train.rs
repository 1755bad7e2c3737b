use std::path::Path;

use lchf::forest::{train_on_views, Node};
use lchf::io::{model_to_bytes, write_atomic};

use crate::config::RunConfig;
use crate::source::{open_archive, training_views};
use crate::CliError;

pub const MODEL_FILE: &str = "model.lchf";

pub fn run(cfg: &mut RunConfig, archive_path: &Path, out: &Path) -> Result<(), CliError> {
    cfg.set_path("archive", archive_path);
    cfg.train.validate()?;
    let archive = open_archive(archive_path)?;
    let object = cfg.object_model()?;
    let views = training_views(&archive, &object.id)?;
    let model = train_on_views(&views, &object.id, object.diameter(), &cfg.descriptor, &cfg.train)?;
    let bytes = model_to_bytes(&model)?;
    cfg.write_to(out)?;
    write_atomic(&out.join(MODEL_FILE), &bytes)?;

    println!(
        "trained {} trees on {} views of {:?} (diameter {:.1} mm)",
        model.trees.len(),
        views.len(),
        object.id,
        object.diameter()
    );
    println!("tree\tdepth\tleaves\tp_fg_min\tp_fg_max");
    for (i, t) in model.trees.iter().enumerate() {
        let p: Vec<f32> = t
            .nodes()
            .iter()
            .filter_map(|n| match n {
                Node::Leaf(l) => Some(l.p_fg),
                Node::Split { .. } => None,
            })
            .collect();
        let lo = p.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = p.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        println!("{i}\t{}\t{}\t{lo}\t{hi}", t.depth(), t.leaf_count());
    }
    match model.balance() {
        Some(b) => println!("balance {b:.4}"),
        None => println!("balance n/a"),
    }
    println!("checksum {:08x}", crc32fast::hash(&bytes));
    println!("model written to {}", out.join(MODEL_FILE).display());
    Ok(())
}
