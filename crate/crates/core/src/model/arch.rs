use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Tensor;

/// Fully-connected network layout: ReLU on hidden layers, linear head.
/// `feature_matrix_shape` factorizes the penultimate width so each sample's
/// feature vector can be viewed as an (r, c) matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArch {
    pub layer_widths: Vec<usize>,
    pub feature_matrix_shape: (usize, usize),
}

impl MlpArch {
    pub fn new(layer_widths: Vec<usize>, feature_matrix_shape: (usize, usize)) -> Result<Self> {
        let arch = Self {
            layer_widths,
            feature_matrix_shape,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 3 {
            return Err(Error::InvalidArgument(
                "architecture needs at least one hidden layer".into(),
            ));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::InvalidArgument(
                "layer widths must be non-zero".into(),
            ));
        }
        let (r, c) = self.feature_matrix_shape;
        if r * c != self.penultimate_width() {
            return Err(Error::InvalidArgument(format!(
                "feature matrix shape {:?} does not factorize penultimate width {}",
                self.feature_matrix_shape,
                self.penultimate_width()
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn penultimate_width(&self) -> usize {
        self.layer_widths[self.layer_widths.len() - 2]
    }

    pub fn layer_count(&self) -> usize {
        self.layer_widths.len() - 1
    }
}

/// One linear layer: weights [out, in] row-major plus a bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Tensor,
    pub b: Tensor,
}

/// Metadata recorded by training. `final_test_accuracy` is absent when no
/// eval split was supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs: usize,
    pub initial_lr: f32,
    pub lr_schedule: String,
    pub final_train_loss: f32,
    pub final_test_accuracy: Option<f32>,
}

impl Default for TrainMeta {
    fn default() -> Self {
        Self {
            epochs: 0,
            initial_lr: 0.0,
            lr_schedule: "none".into(),
            final_train_loss: 0.0,
            final_test_accuracy: None,
        }
    }
}

/// Full parameter set of one trained mode plus its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeCheckpoint {
    pub arch: MlpArch,
    pub layers: Vec<Layer>,
    pub seed: u64,
    pub train_meta: TrainMeta,
}

impl ModeCheckpoint {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.layers.len() != self.arch.layer_count() {
            return Err(Error::ShapeMismatch {
                context: "checkpoint layers",
                expected: format!("{} layers", self.arch.layer_count()),
                got: format!("{}", self.layers.len()),
            });
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let (inp, out) = (self.arch.layer_widths[i], self.arch.layer_widths[i + 1]);
            if layer.w.shape() != [out, inp] || layer.b.shape() != [out] {
                return Err(Error::ShapeMismatch {
                    context: "checkpoint layer shapes",
                    expected: format!("W [{out}, {inp}], b [{out}]"),
                    got: format!("W {:?}, b {:?}", layer.w.shape(), layer.b.shape()),
                });
            }
            if !layer.w.all_finite() || !layer.b.all_finite() {
                return Err(Error::NonFinite("checkpoint weights"));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Concatenates all parameters (per layer: W then b) into one flat vector.
    pub fn flatten_params(&self) -> Vec<f32> {
        let mut flat = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            flat.extend_from_slice(layer.w.data());
            flat.extend_from_slice(layer.b.data());
        }
        flat
    }

    /// Rebuilds a checkpoint with the same architecture from a flat vector.
    pub fn with_flat_params(&self, flat: &[f32]) -> Result<ModeCheckpoint> {
        if flat.len() != self.param_count() {
            return Err(Error::ShapeMismatch {
                context: "flat parameters",
                expected: format!("{}", self.param_count()),
                got: format!("{}", flat.len()),
            });
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            let wlen = layer.w.len();
            let blen = layer.b.len();
            let w = Tensor::new(layer.w.shape().to_vec(), flat[off..off + wlen].to_vec())?;
            off += wlen;
            let b = Tensor::new(layer.b.shape().to_vec(), flat[off..off + blen].to_vec())?;
            off += blen;
            layers.push(Layer { w, b });
        }
        Ok(ModeCheckpoint {
            arch: self.arch.clone(),
            layers,
            seed: self.seed,
            train_meta: self.train_meta.clone(),
        })
    }
}

/// L2 distance between the flattened parameters of two checkpoints.
pub fn param_l2_distance(a: &ModeCheckpoint, b: &ModeCheckpoint) -> f64 {
    let fa = a.flatten_params();
    let fb = b.flatten_params();
    fa.iter()
        .zip(&fb)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}
