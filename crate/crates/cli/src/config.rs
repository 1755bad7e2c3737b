use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lchf::features::DescriptorParams;
use lchf::forest::TrainConfig;
use lchf::inference::InferConfig;
use lchf::synth::ParametricShape;
use lchf::{CameraIntrinsics, ObjectModel};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const RUN_CONFIG_FILE: &str = "run_config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectConfig {
    pub id: String,
    pub shape: ParametricShape,
    /// Use the symmetric (closest point) pose score.
    pub symmetric: bool,
    /// Surface points sampled for the evaluation model.
    pub model_points: usize,
}

impl Default for ObjectConfig {
    fn default() -> Self {
        Self {
            id: "demo".into(),
            shape: ParametricShape::compound_demo(),
            symmetric: false,
            model_points: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Correctness threshold as a fraction of the object diameter.
    pub k_m: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k_m: lchf::eval::DEFAULT_KM,
        }
    }
}

/// Everything a subcommand reads, after merging the config file and flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub camera: CameraIntrinsics,
    pub object: ObjectConfig,
    pub descriptor: DescriptorParams,
    pub train: TrainConfig,
    pub infer: InferConfig,
    pub eval: EvalConfig,
    /// Inputs and outputs of the run, as given on the command line.
    pub paths: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            jobs: None,
            camera: CameraIntrinsics::qvga(),
            object: ObjectConfig::default(),
            descriptor: DescriptorParams::default(),
            train: TrainConfig::default(),
            infer: InferConfig::default(),
            eval: EvalConfig::default(),
            paths: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    /// Reads the optional config file and applies the global flags. The seed
    /// must come from one of the two.
    pub fn resolve(file: Option<&Path>, seed: Option<u64>, jobs: Option<usize>) -> Result<Self, CliError> {
        let mut cfg = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
                toml::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = Some(s);
        }
        if let Some(j) = jobs {
            cfg.jobs = Some(j);
        }
        let seed = cfg
            .seed
            .ok_or_else(|| CliError::Usage("a seed is required (--seed or `seed` in the config)".into()))?;
        cfg.train.seed = seed;
        cfg.infer.seed = seed;
        if cfg.jobs == Some(0) {
            return Err(CliError::Usage("--jobs must be positive".into()));
        }
        cfg.camera.validate()?;
        cfg.object.shape.validate()?;
        if cfg.object.model_points == 0 {
            return Err(CliError::Usage("object.model_points must be positive".into()));
        }
        if let Some(p) = file {
            cfg.paths.insert("config".into(), p.display().to_string());
        }
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("resolved config has a seed")
    }

    pub fn set_path(&mut self, key: &str, path: &Path) {
        self.paths.insert(key.into(), path.display().to_string());
    }

    pub fn object_model(&self) -> Result<ObjectModel, CliError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed());
        let o = &self.object;
        Ok(o.shape.object_model(&o.id, o.model_points, o.symmetric, &mut rng)?)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Usage(format!("cannot serialize config: {e}")))
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| lchf::Error::io(dir, e))?;
        lchf::io::write_atomic(&dir.join(RUN_CONFIG_FILE), self.to_toml()?.as_bytes())?;
        Ok(())
    }
}

pub fn require_out(out: Option<&PathBuf>) -> Result<&Path, CliError> {
    out.map(PathBuf::as_path)
        .ok_or_else(|| CliError::Usage("--out <dir> is required".into()))
}
