use std::path::{Path, PathBuf};

use lchf::io::{FrameArchive, GtEntry};
use lchf::synth::{
    compose_scene, generate_scene_set, render_view, training_poses, SceneSetConfig, SceneSpec, TrainingViewConfig,
    ViewSphere,
};
use lchf::CameraIntrinsics;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

/// Frames rendered in parallel before being written out.
const CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    ClutterFree,
    Occlusion,
    TwoInstances,
}

impl Preset {
    fn config(self) -> SceneSetConfig {
        match self {
            Preset::ClutterFree => SceneSetConfig::clutter_free(),
            Preset::Occlusion => SceneSetConfig::occlusion(),
            Preset::TwoInstances => SceneSetConfig::two_instances(),
        }
    }
}

/// A set of random scenes. `set` replaces the preset when both are given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    pub name: String,
    #[serde(default)]
    pub preset: Option<Preset>,
    #[serde(default)]
    pub set: Option<SceneSetConfig>,
    pub count: usize,
    /// Defaults to the run seed.
    #[serde(default)]
    pub base_seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSpec {
    pub training: Option<TrainingViewConfig>,
    pub generate: Vec<GenerateSpec>,
    /// Scene spec files, relative to this file. Rendered into `scenes/listed`.
    pub scenes: Vec<PathBuf>,
}

fn usage(path: &Path, what: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{what} {}: {e}", path.display()))
}

fn read_spec(path: &Path) -> Result<RenderSpec, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(path, "cannot read render spec", e))?;
    let spec: RenderSpec = toml::from_str(&text).map_err(|e| usage(path, "invalid render spec", e))?;
    for g in &spec.generate {
        if g.name.is_empty() || g.name.contains(['/', '\\']) || g.name.starts_with('.') || g.name == "listed" {
            return Err(usage(path, "invalid scene set name", format!("{:?}", g.name)));
        }
        if g.preset.is_none() && g.set.is_none() {
            return Err(usage(path, "scene set needs a preset or a set table", &g.name));
        }
    }
    Ok(spec)
}

pub fn run(cfg: &mut RunConfig, spec_path: &Path, out: &Path) -> Result<(), CliError> {
    let spec = read_spec(spec_path)?;
    cfg.set_path("spec", spec_path);
    let base = spec_path.parent().unwrap_or(Path::new("."));
    let listed: Vec<(PathBuf, SceneSpec)> = spec
        .scenes
        .iter()
        .map(|rel| {
            let p = base.join(rel);
            let text = std::fs::read_to_string(&p).map_err(|e| usage(&p, "cannot read scene spec", e))?;
            let s = SceneSpec::from_toml(&text, &p).map_err(|e| CliError::Usage(e.to_string()))?;
            Ok((p, s))
        })
        .collect::<Result<_, CliError>>()?;

    cfg.write_to(out)?;
    let intr = cfg.camera;
    let mut total = 0usize;
    if let Some(views) = &spec.training {
        let n = render_training(cfg, views, &intr, &out.join("training"))?;
        println!("training: {n} views ({} sphere points x {} in-plane)", n / views.in_plane_deg.len().max(1), views.in_plane_deg.len());
        total += n;
    }
    for g in &spec.generate {
        let set = g.set.clone().unwrap_or_else(|| g.preset.expect("checked").config());
        let seed = g.base_seed.unwrap_or(cfg.seed());
        let specs = generate_scene_set(&cfg.object.id, &cfg.object.shape, &set, &intr, g.count, seed)?;
        let n = render_scenes(cfg, &specs, &intr, &out.join("scenes").join(&g.name))?;
        println!("scenes/{}: {n} frames", g.name);
        total += n;
    }
    if !listed.is_empty() {
        let specs: Vec<SceneSpec> = listed.into_iter().map(|(_, s)| s).collect();
        let n = render_scenes(cfg, &specs, &intr, &out.join("scenes").join("listed"))?;
        println!("scenes/listed: {n} frames");
        total += n;
    }
    println!("{total} frames written to {}", out.display());
    Ok(())
}

fn render_training(
    cfg: &RunConfig,
    views: &TrainingViewConfig,
    intr: &CameraIntrinsics,
    dir: &Path,
) -> Result<usize, CliError> {
    let sphere = ViewSphere::new(views.level, views.radius_mm)?;
    let poses = training_poses(&sphere.vertices, sphere.radius, &views.in_plane_deg);
    let mut archive = FrameArchive::create(dir, *intr)?;
    cfg.write_to(dir)?;
    for (c, chunk) in poses.chunks(CHUNK).enumerate() {
        let rendered = chunk
            .par_iter()
            .map(|p| render_view(&cfg.object.shape, p, intr))
            .collect::<lchf::Result<Vec<_>>>()?;
        for (i, view) in rendered.iter().enumerate() {
            let gt = GtEntry {
                object_id: cfg.object.id.clone(),
                pose: view.object_pose,
                visibility: 1.0,
            };
            archive.write_frame_as(&format!("{:06}", c * CHUNK + i), &view.frame, &[gt])?;
        }
    }
    Ok(poses.len())
}

fn render_scenes(cfg: &RunConfig, specs: &[SceneSpec], intr: &CameraIntrinsics, dir: &Path) -> Result<usize, CliError> {
    let mut archive = FrameArchive::create(dir, *intr)?;
    cfg.write_to(dir)?;
    for (c, chunk) in specs.chunks(CHUNK).enumerate() {
        let composed = chunk
            .par_iter()
            .map(|s| compose_scene(s, intr))
            .collect::<lchf::Result<Vec<_>>>()?;
        for (i, (scene, spec)) in composed.iter().zip(chunk).enumerate() {
            let id = format!("{:06}", c * CHUNK + i);
            let gts: Vec<GtEntry> = spec
                .targets
                .iter()
                .zip(&scene.instances)
                .map(|(t, truth)| GtEntry {
                    object_id: spec.object_id.clone(),
                    pose: t.pose,
                    visibility: truth.visibility(),
                })
                .collect();
            lchf::io::write_atomic(&dir.join(format!("{id}.scene.toml")), spec.to_toml()?.as_bytes())?;
            archive.write_frame_as(&id, &scene.frame, &gts)?;
        }
    }
    Ok(specs.len())
}
