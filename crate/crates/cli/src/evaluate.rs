use std::fmt::Write;
use std::path::Path;

use lchf::eval::{assign_detections, pr_sweep, DetectionRecord};
use lchf::io::write_atomic;
use lchf::Pose6D;

use crate::config::RunConfig;
use crate::detect::HYPOTHESES_FILE;
use crate::source::{open_archive, poses_of};
use crate::{hypotheses, CliError};

fn records_tsv(records: &[DetectionRecord]) -> String {
    let mut s = String::from("frame_id\tobject_id\tscore\tcorrect\tmatched_gt\tm\n");
    for r in records {
        let matched = r.matched_gt.map_or("-".to_string(), |g| g.to_string());
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{matched}\t{}",
            r.frame_id,
            r.object_id,
            r.score,
            u8::from(r.matched_gt.is_some()),
            r.m
        );
    }
    s
}

/// Frame ids are the subdirectories of `dir` holding a hypotheses file.
fn detection_ids(dir: &Path) -> lchf::Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| lchf::Error::io(dir, e))? {
        let entry = entry.map_err(|e| lchf::Error::io(dir, e))?;
        if entry.path().join(HYPOTHESES_FILE).is_file() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn run(cfg: &mut RunConfig, detections: &Path, archive_path: &Path, out: &Path) -> Result<(), CliError> {
    cfg.set_path("detections", detections);
    cfg.set_path("archive", archive_path);
    let archive = open_archive(archive_path)?;
    let object = cfg.object_model()?;
    let ids = detection_ids(detections)?;
    if ids.is_empty() {
        return Err(CliError::Pipeline(lchf::Error::LayoutMismatch {
            path: detections.to_path_buf(),
            reason: format!("no */{HYPOTHESES_FILE} found"),
        }));
    }
    let mut records = Vec::new();
    let mut gt_count = 0;
    for id in &ids {
        if !archive.ids().contains(id) {
            return Err(CliError::Pipeline(lchf::Error::LayoutMismatch {
                path: archive.root().join(id),
                reason: "no ground truth for this frame".into(),
            }));
        }
        let truth = poses_of(&archive.read_gt(id)?, &object.id);
        gt_count += truth.len();
        let path = detections.join(id).join(HYPOTHESES_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| lchf::Error::io(&path, e))?;
        let dets: Vec<(Pose6D, f64)> = hypotheses::parse(&text, &path)?
            .into_iter()
            .filter(|h| h.valid)
            .map(|h| (h.pose, h.score))
            .collect();
        records.extend(assign_detections(id, &object, &dets, &truth, cfg.eval.k_m)?);
    }
    let curve = pr_sweep(&records, gt_count)?;
    let best = curve.best_point();
    let (p, r, t) = best.map_or((0.0, 0.0, f64::NAN), |b| (b.precision, b.recall, b.threshold));
    let metrics = format!(
        "frames\tground_truth\tdetections\tk_m\tthreshold\tprecision\trecall\tf1\n{}\t{gt_count}\t{}\t{}\t{t}\t{p:.6}\t{r:.6}\t{:.6}\n",
        ids.len(),
        records.len(),
        cfg.eval.k_m,
        curve.f1_best
    );
    cfg.write_to(out)?;
    write_atomic(&out.join("records.tsv"), records_tsv(&records).as_bytes())?;
    write_atomic(&out.join("pr_curve.tsv"), curve.to_tsv().as_bytes())?;
    write_atomic(&out.join("metrics.tsv"), metrics.as_bytes())?;
    print!("{metrics}");
    Ok(())
}
