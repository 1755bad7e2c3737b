use std::path::Path;

use lchf::eval::{results_tsv, run_experiment, write_experiment, ExperimentInput, Sweep};

use crate::config::RunConfig;
use crate::source::{eval_scenes, open_archive, training_views};
use crate::CliError;

pub fn parse_sweep(arg: &str) -> Result<Sweep, CliError> {
    let bad = |why: String| CliError::Usage(format!("invalid --sweep {arg:?}: {why}"));
    let (name, values) = arg.split_once('=').ok_or_else(|| bad("expected <parameter>=<v1>,<v2>,...".into()))?;
    let parts: Vec<&str> = values.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if parts.is_empty() {
        return Err(bad("no values".into()));
    }
    let floats = || {
        parts
            .iter()
            .map(|p| p.parse::<f64>().map_err(|e| bad(format!("{p:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()
    };
    let ints = || {
        parts
            .iter()
            .map(|p| p.parse::<usize>().map_err(|e| bad(format!("{p:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()
    };
    Ok(match name.trim() {
        "patch_size_fraction" => Sweep::PatchSizeFraction(floats()?),
        "tree_count" => Sweep::TreeCount(ints()?),
        "iterations" => Sweep::Iterations(ints()?),
        "bag_size" => Sweep::BagSize(ints()?),
        other => return Err(bad(format!("unknown parameter {other:?}"))),
    })
}

pub fn run(cfg: &mut RunConfig, sweep: &str, training: &Path, scenes: &Path, out: &Path) -> Result<(), CliError> {
    let sweep = parse_sweep(sweep)?;
    cfg.set_path("training", training);
    cfg.set_path("scenes", scenes);
    cfg.paths.insert("sweep".into(), format!("{sweep:?}"));
    cfg.train.validate()?;
    let object = cfg.object_model()?;
    let views = training_views(&open_archive(training)?, &object.id)?;
    let scenes = eval_scenes(&open_archive(scenes)?, &object.id)?;
    let input = ExperimentInput {
        views: &views,
        object: &object,
        scenes: &scenes,
        train: cfg.train.clone(),
        infer: cfg.infer.clone(),
        params: cfg.descriptor,
        k_m: cfg.eval.k_m,
    };
    let rows = run_experiment(&sweep, &input)?;
    cfg.write_to(out)?;
    write_experiment(&rows, out)?;
    print!("{}", results_tsv(&rows));
    Ok(())
}
