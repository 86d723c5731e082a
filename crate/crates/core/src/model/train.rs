use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::arch::{Layer, MlpArch, ModeCheckpoint, TrainMeta};
use crate::model::forward::{accuracy, forward_sample_trace};

use crate::numkit::stable::{logsumexp_slice, softmax_slice};
use crate::numkit::{Rng, Tensor};

/// SGD hyperparameters. The defaults are the recipe used by the pinned
/// benchmark: lr 0.05 with cosine decay to zero, 100 epochs, batch 64.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            lr: 0.05,
        }
    }
}

fn init_layers(arch: &MlpArch, rng: &mut Rng) -> Vec<Layer> {
    // Gaussian init with std sqrt(2/fan_in); biases zero. Every draw comes
    // from the mode's seed stream so the seed dominates initialization.
    (0..arch.layer_count())
        .map(|l| {
            let (fan_in, fan_out) = (arch.layer_widths[l], arch.layer_widths[l + 1]);
            let std = (2.0f64 / fan_in as f64).sqrt();
            let mut w = vec![0.0f32; fan_out * fan_in];
            for v in &mut w {
                *v = (std * rng.next_gaussian()) as f32;
            }
            Layer {
                w: Tensor::new(vec![fan_out, fan_in], w).expect("init shape"),
                b: Tensor::zeros(vec![fan_out]),
            }
        })
        .collect()
}

struct GradBuffers {
    dw: Vec<Vec<f64>>,
    db: Vec<Vec<f64>>,
}

impl GradBuffers {
    fn new(arch: &MlpArch) -> Self {
        let dw = (0..arch.layer_count())
            .map(|l| vec![0.0f64; arch.layer_widths[l + 1] * arch.layer_widths[l]])
            .collect();
        let db = (0..arch.layer_count())
            .map(|l| vec![0.0f64; arch.layer_widths[l + 1]])
            .collect();
        Self { dw, db }
    }

    fn clear(&mut self) {
        for g in self.dw.iter_mut().chain(self.db.iter_mut()) {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Accumulates one sample's cross-entropy gradient into the buffers and
/// returns the sample loss.
fn backprop_sample(layers: &[Layer], x: &[f32], label: usize, grads: &mut GradBuffers) -> f64 {
    let trace = forward_sample_trace(layers, x);
    let logits = trace.preacts.last().unwrap();
    let loss = logsumexp_slice(logits) - logits[label] as f64;

    let mut probs = Vec::new();
    softmax_slice(logits, &mut probs);
    let mut dz: Vec<f64> = probs.iter().map(|&p| p as f64).collect();
    dz[label] -= 1.0;

    for l in (0..layers.len()).rev() {
        let w = &layers[l].w;
        let (rows, cols) = (w.rows(), w.cols());
        let h_prev = &trace.acts[l];
        for o in 0..rows {
            let g = dz[o];
            grads.db[l][o] += g;
            let grow = &mut grads.dw[l][o * cols..(o + 1) * cols];
            for k in 0..cols {
                grow[k] += g * h_prev[k] as f64;
            }
        }
        if l > 0 {
            let mut dh = vec![0.0f64; cols];
            for o in 0..rows {
                let wrow = w.row(o);
                let g = dz[o];
                for k in 0..cols {
                    dh[k] += wrow[k] as f64 * g;
                }
            }
            let pre = &trace.preacts[l - 1];
            dz = dh
                .iter()
                .zip(pre)
                .map(|(&g, &p)| if p > 0.0 { g } else { 0.0 })
                .collect();
        }
    }
    loss
}

fn cosine_lr(lr0: f32, epoch: usize, total: usize) -> f32 {
    let t = epoch as f64 / total.max(1) as f64;
    (lr0 as f64 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())) as f32
}

/// Trains one mode deterministically: initialization, shuffling and SGD noise
/// all derive from `seed`. The optional eval split only feeds the recorded
/// `final_test_accuracy`; it never influences the parameters.
pub fn train_mode(
    arch: &MlpArch,
    train: &LabeledDataset,
    eval: Option<&LabeledDataset>,
    config: &TrainConfig,
    seed: u64,
) -> Result<ModeCheckpoint> {
    let (ckpt, _) = train_mode_with_snapshots(arch, train, eval, config, seed, None)?;
    Ok(ckpt)
}

/// Same as `train_mode` but additionally snapshots the parameters every
/// `stride` epochs when `snapshot_stride` is set (plus the final state).
pub fn train_mode_with_snapshots(
    arch: &MlpArch,
    train: &LabeledDataset,
    eval: Option<&LabeledDataset>,
    config: &TrainConfig,
    seed: u64,
    snapshot_stride: Option<usize>,
) -> Result<(ModeCheckpoint, Vec<ModeCheckpoint>)> {
    arch.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("train_mode"));
    }
    if train.dims() != arch.input_dim() {
        return Err(Error::ShapeMismatch {
            context: "train_mode input",
            expected: format!("{} dims", arch.input_dim()),
            got: format!("{}", train.dims()),
        });
    }
    let classes = arch.class_count();
    if let Some(&bad) = train.y.iter().find(|&&y| y >= classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    if let Some(stride) = snapshot_stride {
        if stride == 0 || stride > config.epochs {
            return Err(Error::InvalidArgument(format!(
                "snapshot stride {stride} outside 1..={}",
                config.epochs
            )));
        }
    }

    let mut rng = Rng::new(seed);
    let mut layers = init_layers(arch, &mut rng);
    let mut grads = GradBuffers::new(arch);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut snapshots = Vec::new();
    let mut last_epoch_loss = f64::NAN;

    let snapshot = |layers: &[Layer], seed: u64, meta: TrainMeta| ModeCheckpoint {
        arch: arch.clone(),
        layers: layers.to_vec(),
        seed,
        train_meta: meta,
    };

    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let lr = cosine_lr(config.lr, epoch, config.epochs);
        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            grads.clear();
            let mut batch_loss = 0.0f64;
            for &idx in batch {
                batch_loss += backprop_sample(&layers, train.x.row(idx), train.y[idx], &mut grads);
            }
            let scale = 1.0f64 / batch.len() as f64;
            epoch_loss += batch_loss;
            for (l, layer) in layers.iter_mut().enumerate() {
                let wdata = layer.w.data_mut();
                for (wv, gv) in wdata.iter_mut().zip(&grads.dw[l]) {
                    *wv -= lr * (gv * scale) as f32;
                }
                let bdata = layer.b.data_mut();
                for (bv, gv) in bdata.iter_mut().zip(&grads.db[l]) {
                    *bv -= lr * (gv * scale) as f32;
                }
            }
        }
        let mean_loss = epoch_loss / train.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        last_epoch_loss = mean_loss;
        if let Some(stride) = snapshot_stride {
            if (epoch + 1) % stride == 0 {
                snapshots.push(snapshot(
                    &layers,
                    seed,
                    TrainMeta {
                        epochs: epoch + 1,
                        initial_lr: config.lr,
                        lr_schedule: "cosine".into(),
                        final_train_loss: mean_loss as f32,
                        final_test_accuracy: None,
                    },
                ));
            }
        }
    }

    let mut meta = TrainMeta {
        epochs: config.epochs,
        initial_lr: config.lr,
        lr_schedule: "cosine".into(),
        final_train_loss: last_epoch_loss as f32,
        final_test_accuracy: None,
    };
    let ckpt = snapshot(&layers, seed, meta.clone());
    if let Some(eval) = eval {
        meta.final_test_accuracy = Some(accuracy(&ckpt, &eval.x, &eval.y)? as f32);
    }
    let ckpt = ModeCheckpoint {
        train_meta: meta,
        ..ckpt
    };
    Ok((ckpt, snapshots))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_benchmark, BenchmarkConfig};
    use crate::model::arch::param_l2_distance;

    fn small_setup() -> (MlpArch, LabeledDataset, LabeledDataset) {
        let config = BenchmarkConfig {
            train_n: 240,
            test_n: 120,
            ood_n: 10,
            ..Default::default()
        };
        let bench = gen_benchmark(&config, 3).unwrap();
        let arch = MlpArch::new(vec![2, 16, 16, 4], (4, 4)).unwrap();
        (arch, bench.train, bench.test)
    }

    #[test]
    fn training_is_deterministic() {
        let (arch, train, test) = small_setup();
        let config = TrainConfig {
            epochs: 8,
            ..Default::default()
        };
        let a = train_mode(&arch, &train, Some(&test), &config, 1).unwrap();
        let b = train_mode(&arch, &train, Some(&test), &config, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_seeds_give_distinct_modes() {
        let (arch, train, _) = small_setup();
        let config = TrainConfig {
            epochs: 4,
            ..Default::default()
        };
        let a = train_mode(&arch, &train, None, &config, 1).unwrap();
        let b = train_mode(&arch, &train, None, &config, 2).unwrap();
        assert!(param_l2_distance(&a, &b) > 1e-3);
    }

    #[test]
    fn small_run_learns_the_blobs() {
        let (arch, train, test) = small_setup();
        let config = TrainConfig {
            epochs: 30,
            ..Default::default()
        };
        let ckpt = train_mode(&arch, &train, Some(&test), &config, 1).unwrap();
        let acc = ckpt.train_meta.final_test_accuracy.unwrap();
        assert!(acc >= 0.9, "accuracy = {acc}");
    }

    #[test]
    fn snapshot_stride_is_validated() {
        let (arch, train, _) = small_setup();
        let config = TrainConfig {
            epochs: 4,
            ..Default::default()
        };
        assert!(train_mode_with_snapshots(&arch, &train, None, &config, 1, Some(9)).is_err());
        let (_, snaps) =
            train_mode_with_snapshots(&arch, &train, None, &config, 1, Some(2)).unwrap();
        assert_eq!(snaps.len(), 2);
    }

    #[test]
    fn out_of_range_labels_are_rejected() {
        let (arch, mut train, _) = small_setup();
        train.y[0] = 99;
        let config = TrainConfig {
            epochs: 1,
            ..Default::default()
        };
        assert!(train_mode(&arch, &train, None, &config, 1).is_err());
    }
}
