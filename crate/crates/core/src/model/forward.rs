use crate::error::{Error, Result};
use crate::model::arch::{Layer, ModeCheckpoint};
use crate::numkit::stable::{logsumexp_slice, softmax_f64_slice, softmax_slice};
use crate::numkit::Tensor;

/// Per-dataset, per-mode record of logits and penultimate features;
/// `feature_matrix` is a bit-equal reshape of `penultimate`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputDump {
    pub logits: Tensor,
    pub penultimate: Tensor,
    pub feature_matrix: Tensor,
    pub mode_id: u64,
    pub dataset_id: String,
}

impl OutputDump {
    pub fn sample_count(&self) -> usize {
        self.logits.rows()
    }

    pub fn class_count(&self) -> usize {
        self.logits.cols()
    }

    pub fn feature_width(&self) -> usize {
        self.penultimate.cols()
    }
}

/// Applies one linear layer to a batch row: out[o] = sum_k w[o,k]*x[k] + b[o].
fn layer_forward(w: &Tensor, b: &Tensor, x: &[f32], out: &mut [f32]) {
    let (rows, cols) = (w.rows(), w.cols());
    for o in 0..rows {
        let wrow = w.row(o);
        let mut acc = b.data()[o] as f64;
        for k in 0..cols {
            acc += wrow[k] as f64 * x[k] as f64;
        }
        out[o] = acc as f32;
    }
}

fn relu_inplace(v: &mut [f32]) {
    for e in v.iter_mut() {
        if *e < 0.0 {
            *e = 0.0;
        }
    }
}

/// Pre- and post-activation values of every layer for one sample.
pub(crate) struct SampleTrace {
    /// preacts[l] = W_l h_{l-1} + b_l before any activation.
    pub preacts: Vec<Vec<f32>>,
    /// acts[0] is the input; acts[l] the post-activation of layer l.
    pub acts: Vec<Vec<f32>>,
}

pub(crate) fn forward_sample_trace(layers: &[Layer], x: &[f32]) -> SampleTrace {
    let layer_count = layers.len();
    let mut acts: Vec<Vec<f32>> = Vec::with_capacity(layer_count + 1);
    let mut preacts: Vec<Vec<f32>> = Vec::with_capacity(layer_count);
    acts.push(x.to_vec());
    for (l, layer) in layers.iter().enumerate() {
        let mut pre = vec![0.0f32; layer.w.rows()];
        layer_forward(&layer.w, &layer.b, acts.last().unwrap(), &mut pre);
        preacts.push(pre.clone());
        if l + 1 < layer_count {
            relu_inplace(&mut pre);
        }
        acts.push(pre);
    }
    SampleTrace { preacts, acts }
}

/// Batched forward pass. Rows are independent: the result for a sample does
/// not depend on the rest of the batch.
pub fn forward(ckpt: &ModeCheckpoint, x: &Tensor) -> Result<OutputDump> {
    x.expect_rank(2, "forward input")?;
    if x.cols() != ckpt.arch.input_dim() {
        return Err(Error::ShapeMismatch {
            context: "forward input",
            expected: format!("{} columns", ckpt.arch.input_dim()),
            got: format!("{}", x.cols()),
        });
    }
    let n = x.rows();
    let classes = ckpt.arch.class_count();
    let feat = ckpt.arch.penultimate_width();
    let mut logits = vec![0.0f32; n * classes];
    let mut penultimate = vec![0.0f32; n * feat];

    let layer_count = ckpt.layers.len();
    let mut cur: Vec<f32> = Vec::new();
    let mut next: Vec<f32> = Vec::new();
    for i in 0..n {
        cur.clear();
        cur.extend_from_slice(x.row(i));
        for (l, layer) in ckpt.layers.iter().enumerate() {
            next.resize(layer.w.rows(), 0.0);
            layer_forward(&layer.w, &layer.b, &cur, &mut next);
            if l + 1 < layer_count {
                relu_inplace(&mut next);
            }
            if l + 1 == layer_count {
                logits[i * classes..(i + 1) * classes].copy_from_slice(&next);
            } else if l + 2 == layer_count {
                penultimate[i * feat..(i + 1) * feat].copy_from_slice(&next);
            }
            std::mem::swap(&mut cur, &mut next);
        }
    }

    let penultimate = Tensor::new(vec![n, feat], penultimate)?;
    let (r, c) = ckpt.arch.feature_matrix_shape;
    let feature_matrix = penultimate.reshape(vec![n, r, c])?;
    Ok(OutputDump {
        logits: Tensor::new(vec![n, classes], logits)?,
        penultimate,
        feature_matrix,
        mode_id: ckpt.seed,
        dataset_id: String::new(),
    })
}

/// Mean cross-entropy of the checkpoint on a labelled batch, in f64.
pub fn mean_cross_entropy(ckpt: &ModeCheckpoint, x: &Tensor, y: &[usize]) -> Result<f64> {
    let dump = forward(ckpt, x)?;
    let mut total = 0.0f64;
    for i in 0..dump.sample_count() {
        let row = dump.logits.row(i);
        let lse = logsumexp_slice(row);
        total += lse - row[y[i]] as f64;
    }
    Ok(total / dump.sample_count().max(1) as f64)
}

/// Fraction of samples whose argmax logit matches the label.
pub fn accuracy(ckpt: &ModeCheckpoint, x: &Tensor, y: &[usize]) -> Result<f64> {
    let dump = forward(ckpt, x)?;
    let mut hits = 0usize;
    for i in 0..dump.sample_count() {
        let row = dump.logits.row(i);
        let pred = argmax(row);
        if pred == y[i] {
            hits += 1;
        }
    }
    Ok(hits as f64 / dump.sample_count().max(1) as f64)
}

pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Gradient of the cross-entropy at `label` with respect to the input, for a
/// single sample, by backpropagation.
pub fn grad_input_nll(ckpt: &ModeCheckpoint, x: &[f32], label: usize) -> Result<Vec<f32>> {
    if x.len() != ckpt.arch.input_dim() {
        return Err(Error::ShapeMismatch {
            context: "grad_input_nll",
            expected: format!("{} inputs", ckpt.arch.input_dim()),
            got: format!("{}", x.len()),
        });
    }
    if label >= ckpt.arch.class_count() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            ckpt.arch.class_count()
        )));
    }
    let trace = forward_sample_trace(&ckpt.layers, x);
    let logits = trace.preacts.last().unwrap();
    let mut probs = Vec::new();
    softmax_slice(logits, &mut probs);
    // dL/dz on the head: softmax - one_hot(label).
    let mut dz: Vec<f64> = probs.iter().map(|&p| p as f64).collect();
    dz[label] -= 1.0;

    for l in (0..ckpt.layers.len()).rev() {
        let layer = &ckpt.layers[l];
        let (rows, cols) = (layer.w.rows(), layer.w.cols());
        let mut dh = vec![0.0f64; cols];
        for o in 0..rows {
            let wrow = layer.w.row(o);
            let g = dz[o];
            for k in 0..cols {
                dh[k] += wrow[k] as f64 * g;
            }
        }
        if l == 0 {
            return Ok(dh.iter().map(|&v| v as f32).collect());
        }
        // Gate by the ReLU mask of the previous hidden layer.
        let pre = &trace.preacts[l - 1];
        dz = dh
            .iter()
            .zip(pre)
            .map(|(&g, &p)| if p > 0.0 { g } else { 0.0 })
            .collect();
    }
    unreachable!("layer loop always returns at l == 0")
}

/// L1 norm of the gradient of KL(uniform || softmax(logits)) with respect to
/// the last layer's weight matrix, in the factorized closed form
/// ||p - u||_1 * ||h||_1.
pub fn grad_lastfc_kl(ckpt: &ModeCheckpoint, x: &[f32]) -> Result<f64> {
    let trace = forward_sample_trace(&ckpt.layers, x);
    let logits = trace.preacts.last().unwrap();
    let h = &trace.acts[trace.acts.len() - 2];
    Ok(kl_grad_l1_from_parts(logits, h))
}

pub(crate) fn kl_grad_l1_from_parts(logits: &[f32], h: &[f32]) -> f64 {
    let mut probs = Vec::new();
    softmax_f64_slice(logits, &mut probs);
    let u = 1.0f64 / logits.len() as f64;
    let p_l1: f64 = probs.iter().map(|&p| (p - u).abs()).sum();
    let h_l1: f64 = h.iter().map(|&v| (v as f64).abs()).sum();
    p_l1 * h_l1
}

/// Slow reference path for the same quantity: forms the full gradient matrix
/// dKL/dW[o][k] = (p_o - u) * h_k and takes its entrywise L1 norm.
pub fn grad_lastfc_kl_matrix(ckpt: &ModeCheckpoint, x: &[f32]) -> Result<f64> {
    let trace = forward_sample_trace(&ckpt.layers, x);
    let logits = trace.preacts.last().unwrap();
    let h = &trace.acts[trace.acts.len() - 2];
    let mut probs = Vec::new();
    softmax_f64_slice(logits, &mut probs);
    let u = 1.0f64 / logits.len() as f64;
    let mut total = 0.0f64;
    for &p in &probs {
        for &hv in h {
            total += ((p - u) * hv as f64).abs();
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::arch::{Layer, MlpArch, TrainMeta};

    fn zero_ckpt(widths: Vec<usize>, fmshape: (usize, usize)) -> ModeCheckpoint {
        let arch = MlpArch::new(widths, fmshape).unwrap();
        let layers = (0..arch.layer_count())
            .map(|l| Layer {
                w: Tensor::zeros(vec![arch.layer_widths[l + 1], arch.layer_widths[l]]),
                b: Tensor::zeros(vec![arch.layer_widths[l + 1]]),
            })
            .collect();
        ModeCheckpoint {
            arch,
            layers,
            seed: 0,
            train_meta: TrainMeta::default(),
        }
    }

    #[test]
    fn zero_network_outputs_final_bias() {
        let mut ckpt = zero_ckpt(vec![2, 4, 3], (2, 2));
        ckpt.layers[1].b = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, -2.0], vec![0.3, 0.9]]).unwrap();
        let dump = forward(&ckpt, &x).unwrap();
        for i in 0..2 {
            assert_eq!(dump.logits.row(i), &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn rows_are_batch_independent() {
        let mut ckpt = zero_ckpt(vec![2, 4, 3], (2, 2));
        // Give the network some structure.
        for (i, v) in ckpt.layers[0].w.data_mut().iter_mut().enumerate() {
            *v = (i as f32 * 0.37).sin();
        }
        for (i, v) in ckpt.layers[1].w.data_mut().iter_mut().enumerate() {
            *v = (i as f32 * 0.11).cos();
        }
        let rows: Vec<Vec<f32>> = (0..5)
            .map(|i| vec![(i as f32).sin(), (i as f32).cos()])
            .collect();
        let batch = Tensor::from_rows(&rows).unwrap();
        let full = forward(&ckpt, &batch).unwrap();
        for (i, row) in rows.iter().enumerate() {
            let single = forward(
                &ckpt,
                &Tensor::from_rows(std::slice::from_ref(row)).unwrap(),
            )
            .unwrap();
            assert_eq!(single.logits.row(0), full.logits.row(i));
            assert_eq!(single.penultimate.row(0), full.penultimate.row(i));
        }
    }

    #[test]
    fn feature_matrix_is_a_bit_equal_reshape() {
        let ckpt = zero_ckpt(vec![2, 4, 3], (2, 2));
        let x = Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let dump = forward(&ckpt, &x).unwrap();
        assert_eq!(dump.feature_matrix.data(), dump.penultimate.data());
        assert_eq!(dump.feature_matrix.shape(), &[1, 2, 2]);
    }

    #[test]
    fn constant_logit_network_has_zero_input_gradient() {
        let ckpt = zero_ckpt(vec![3, 4, 2], (2, 2));
        let g = grad_input_nll(&ckpt, &[0.4, -0.2, 1.0], 1).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_logits_give_zero_kl_gradient() {
        let ckpt = zero_ckpt(vec![2, 4, 3], (2, 2));
        assert_eq!(grad_lastfc_kl(&ckpt, &[1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn zero_features_give_zero_kl_gradient() {
        let mut ckpt = zero_ckpt(vec![2, 4, 3], (2, 2));
        // Negative hidden biases force the ReLU output to zero; a nonzero
        // head bias still skews the logits.
        ckpt.layers[0].b = Tensor::new(vec![4], vec![-1.0; 4]).unwrap();
        ckpt.layers[1].b = Tensor::new(vec![3], vec![3.0, 0.0, -1.0]).unwrap();
        assert_eq!(grad_lastfc_kl(&ckpt, &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let ckpt = zero_ckpt(vec![2, 4, 3], (2, 2));
        assert!(forward(&ckpt, &Tensor::zeros(vec![1, 5])).is_err());
    }
}
