//! Reading frames and ground truth out of archives.

use std::path::Path;

use lchf::eval::EvalScene;
use lchf::io::{load_linemod_layout, FrameArchive, GtEntry, CAMERA_FILE};
use lchf::synth::RenderedView;
use lchf::Pose6D;
use rayon::prelude::*;

use crate::CliError;

/// A native archive, or a LINEMOD object directory when there is no camera
/// file but a `data/` directory.
pub fn open_archive(root: &Path) -> Result<FrameArchive, CliError> {
    if !root.join(CAMERA_FILE).is_file() && root.join("data").is_dir() {
        Ok(load_linemod_layout(root)?)
    } else {
        Ok(FrameArchive::open(root)?)
    }
}

pub fn poses_of(gts: &[GtEntry], object_id: &str) -> Vec<Pose6D> {
    gts.iter().filter(|g| g.object_id == object_id).map(|g| g.pose).collect()
}

/// Rebuilds training views from isolated renders; each frame must carry
/// exactly one instance of the object.
pub fn training_views(archive: &FrameArchive, object_id: &str) -> Result<Vec<RenderedView>, CliError> {
    let ids = archive.ids();
    if ids.is_empty() {
        return Err(CliError::Pipeline(lchf::Error::LayoutMismatch {
            path: archive.root().to_path_buf(),
            reason: "archive holds no frames".into(),
        }));
    }
    ids.par_iter()
        .map(|id| {
            let poses = poses_of(&archive.read_gt(id)?, object_id);
            let [pose] = poses[..] else {
                return Err(CliError::Pipeline(lchf::Error::LayoutMismatch {
                    path: archive.root().join(format!("{id}.gt.txt")),
                    reason: format!("expected one instance of {object_id:?}, found {}", poses.len()),
                }));
            };
            Ok(RenderedView::from_frame(archive.read_frame(id)?, pose)?)
        })
        .collect()
}

pub fn eval_scenes(archive: &FrameArchive, object_id: &str) -> Result<Vec<EvalScene>, CliError> {
    archive
        .ids()
        .par_iter()
        .map(|id| {
            Ok(EvalScene {
                id: id.clone(),
                frame: archive.read_frame(id)?,
                truth: poses_of(&archive.read_gt(id)?, object_id),
            })
        })
        .collect()
}
