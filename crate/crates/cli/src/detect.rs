use std::path::Path;

use lchf::inference::{detect, Detection};
use lchf::io::{load_model, write_atomic, write_gray16_png, write_rgb_png};
use lchf::{Mask, RgbdFrame};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::source::open_archive;
use crate::{draw, hypotheses, CliError};

pub const HYPOTHESES_FILE: &str = "hypotheses.txt";

fn scaled(values: impl Iterator<Item = f64> + Clone) -> Vec<u16> {
    let max = values.clone().fold(0.0, f64::max);
    values
        .map(|v| if max > 0.0 { (v.max(0.0) / max * 65535.0).round() as u16 } else { 0 })
        .collect()
}

fn mask16(m: &Mask) -> Vec<u16> {
    m.data().iter().map(|&b| if b { u16::MAX } else { 0 }).collect()
}

struct FrameSummary {
    id: String,
    hypotheses: usize,
    valid: usize,
    best: f64,
}

fn write_frame(dir: &Path, frame: &RgbdFrame, det: &Detection, object_id: &str, diameter: f64) -> lchf::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| lchf::Error::io(dir, e))?;
    let intr = frame.intrinsics();
    let (w, h) = (intr.width, intr.height);
    write_atomic(
        &dir.join(HYPOTHESES_FILE),
        hypotheses::format(object_id, det.theta_valid, &det.hypotheses).as_bytes(),
    )?;
    let acc = &det.accumulator;
    write_gray16_png(&dir.join("accumulator.png"), w, h, &scaled(acc.data.iter().copied()))?;
    let prob = &det.foreground.probability;
    write_gray16_png(&dir.join("probability.png"), w, h, &scaled(prob.iter().map(|&v| v as f64)))?;
    write_gray16_png(&dir.join("foreground.png"), w, h, &mask16(&det.foreground.binary))?;
    write_gray16_png(&dir.join("segmentation.png"), w, h, &mask16(&det.segmentation))?;
    let mut rgb = frame.rgb().to_vec();
    // Worst first, so the best hypothesis ends up on top.
    for hyp in det.hypotheses.iter().rev().filter(|h| h.valid) {
        draw::axes(&mut rgb, intr, &hyp.pose, diameter / 2.0);
    }
    write_rgb_png(&dir.join("overlay.png"), w, h, &rgb)
}

pub fn run(cfg: &mut RunConfig, archive_path: &Path, model_path: &Path, out: &Path) -> Result<(), CliError> {
    cfg.set_path("archive", archive_path);
    cfg.set_path("model", model_path);
    let model = load_model(model_path)?;
    if model.params != cfg.descriptor {
        return Err(CliError::Pipeline(lchf::Error::IncompatibleModel(format!(
            "model was trained with descriptor parameters {:?}, config has {:?}",
            model.params, cfg.descriptor
        ))));
    }
    cfg.infer.validate(model.trees.len())?;
    let archive = open_archive(archive_path)?;
    cfg.write_to(out)?;
    let summaries = archive
        .ids()
        .par_iter()
        .map(|id| {
            let frame = archive.read_frame(id)?;
            let det = detect(&frame, &model, &cfg.infer)?;
            write_frame(&out.join(id), &frame, &det, &model.object_id, model.diameter)?;
            Ok(FrameSummary {
                id: id.clone(),
                hypotheses: det.hypotheses.len(),
                valid: det.hypotheses.iter().filter(|h| h.valid).count(),
                best: det.hypotheses.first().map_or(0.0, |h| h.score),
            })
        })
        .collect::<lchf::Result<Vec<_>>>()?;
    println!("frame\thypotheses\tvalid\tbest_score");
    for s in &summaries {
        println!("{}\t{}\t{}\t{:.3}", s.id, s.hypotheses, s.valid, s.best);
    }
    println!("{} frames written to {}", summaries.len(), out.display());
    Ok(())
}
