use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use oodens_core::data::BenchmarkConfig;
use oodens_core::model::{MlpArch, TrainConfig};
use oodens_core::theory::SweepConfig;
use oodens_core::Error as CoreError;

use crate::CliError;

/// Full experiment description. One `seed` plus this document fix every
/// output byte of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub data: BenchmarkConfig,
    pub arch: ArchSection,
    pub train: TrainSection,
    pub seeds: Vec<u64>,
    pub detectors: DetectorSection,
    pub ensemble: EnsembleSection,
    pub landscape: LandscapeSection,
    pub ablation: AblationSection,
    pub theory: SweepConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchSection {
    pub layer_widths: Vec<usize>,
    pub feature_matrix_shape: (usize, usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorSection {
    pub odin_temperature: f32,
    pub odin_eps: f32,
    pub knn_k: usize,
    pub mahalanobis_eps_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleSection {
    pub k_list: Vec<usize>,
    pub repeats: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LandscapeSection {
    pub resolution: usize,
    pub margin: f64,
    pub radius: f64,
    pub trajectory_stride: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationSection {
    pub subspace_modes: usize,
    pub r_max: f32,
    pub k: usize,
}

impl RunConfig {
    pub fn mlp_arch(&self) -> Result<MlpArch, CoreError> {
        MlpArch::new(
            self.arch.layer_widths.clone(),
            self.arch.feature_matrix_shape,
        )
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |msg: String| CliError::Core(CoreError::InvalidArgument(msg));
        if self.seeds.is_empty() {
            return Err(invalid("config needs at least one mode seed".into()));
        }
        let unique: BTreeSet<&u64> = self.seeds.iter().collect();
        if unique.len() != self.seeds.len() {
            return Err(invalid("mode seeds must be unique".into()));
        }
        let arch = self.mlp_arch().map_err(CliError::Core)?;
        if arch.input_dim() != self.data.dims {
            return Err(invalid(format!(
                "architecture input width {} does not match data dims {}",
                arch.input_dim(),
                self.data.dims
            )));
        }
        if arch.class_count() != self.data.classes {
            return Err(invalid(format!(
                "architecture class count {} does not match data classes {}",
                arch.class_count(),
                self.data.classes
            )));
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return Err(invalid(
                "train epochs and batch size must be non-zero".into(),
            ));
        }
        for &k in &self.ensemble.k_list {
            if k == 0 || k > self.seeds.len() {
                return Err(invalid(format!(
                    "ensemble size {k} outside 1..={}",
                    self.seeds.len()
                )));
            }
        }
        if self.ensemble.repeats == 0 {
            return Err(invalid("ensemble repeats must be >= 1".into()));
        }
        if self.detectors.knn_k == 0 {
            return Err(invalid("knn_k must be >= 1".into()));
        }
        if self.ablation.k == 0
            || self.ablation.k > self.seeds.len()
            || self.ablation.k > self.ablation.subspace_modes
        {
            return Err(invalid(format!(
                "ablation ensemble size {} must fit both the {} independent seeds and the {} subspace modes",
                self.ablation.k,
                self.seeds.len(),
                self.ablation.subspace_modes
            )));
        }
        if self.landscape.resolution < 2 {
            return Err(invalid("landscape resolution must be >= 2".into()));
        }
        if self.seeds.len() < 3 {
            return Err(invalid(
                "landscape plane needs at least 3 mode seeds".into(),
            ));
        }
        Ok(())
    }

    /// Reads and validates a config file. A missing file is a usage error;
    /// malformed JSON or invalid contents are data errors.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Core(CoreError::Json(e)))?;
        config.validate()?;
        Ok(config)
    }
}
