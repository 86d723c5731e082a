//! The seven single-mode post-hoc scoring functions. Every detector maps
//! per-sample model outputs to a scalar where higher means more
//! in-distribution.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{argmax, forward, grad_input_nll, ModeCheckpoint, OutputDump};
use crate::numkit::linalg;
use crate::numkit::stable::{logsumexp_slice, softmax_f64_slice, softmax_slice};
use crate::numkit::{top_singular_triple, Tensor};

pub const MSP: &str = "msp";
pub const ODIN: &str = "odin";
pub const ENERGY: &str = "energy";
pub const MAHALANOBIS: &str = "mahalanobis";
pub const KNN: &str = "knn";
pub const RANKFEAT: &str = "rankfeat";
pub const GRADNORM: &str = "gradnorm";

/// All detector identifiers in report order.
pub const ALL_DETECTORS: [&str; 7] = [MSP, ODIN, ENERGY, MAHALANOBIS, KNN, RANKFEAT, GRADNORM];

/// Per-sample detector scores for one (detector, mode set, dataset) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub scores: Vec<f32>,
    pub detector_id: String,
    pub mode_ids: Vec<u64>,
    pub dataset_id: String,
}

impl ScoreVector {
    pub fn new(
        scores: Vec<f32>,
        detector_id: impl Into<String>,
        mode_ids: Vec<u64>,
        dataset_id: impl Into<String>,
    ) -> Result<Self> {
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("ScoreVector"));
        }
        Ok(Self {
            scores,
            detector_id: detector_id.into(),
            mode_ids,
            dataset_id: dataset_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

fn check_logits(logits: &Tensor, context: &'static str) -> Result<()> {
    logits.expect_rank(2, context)?;
    if logits.cols() < 2 {
        return Err(Error::InvalidArgument(format!(
            "{context}: need >= 2 classes"
        )));
    }
    if !logits.all_finite() {
        return Err(Error::NonFinite(context));
    }
    Ok(())
}

fn msp_scores(logits: &Tensor, temperature: f32) -> Vec<f32> {
    let mut probs = Vec::new();
    let mut scaled = Vec::new();
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            scaled.clear();
            scaled.extend(row.iter().map(|&z| (z as f64 / temperature as f64) as f32));
            softmax_slice(&scaled, &mut probs);
            probs.iter().copied().fold(f32::NEG_INFINITY, f32::max)
        })
        .collect()
}

/// Maximum softmax probability per sample.
pub fn score_msp(dump: &OutputDump) -> Result<ScoreVector> {
    check_logits(&dump.logits, "score_msp")?;
    ScoreVector::new(
        msp_scores(&dump.logits, 1.0),
        MSP,
        vec![dump.mode_id],
        dump.dataset_id.clone(),
    )
}

/// Temperature-scaled maximum softmax probability, optionally on inputs
/// perturbed against the cross-entropy gradient. With eps = 0 the dumped
/// logits suffice; eps > 0 needs the checkpoint and the raw inputs.
pub fn score_odin(
    dump: &OutputDump,
    temperature: f32,
    eps: f32,
    ckpt: Option<&ModeCheckpoint>,
    inputs: Option<&Tensor>,
) -> Result<ScoreVector> {
    check_logits(&dump.logits, "score_odin")?;
    if temperature <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let logits = if eps > 0.0 {
        let (ckpt, inputs) = match (ckpt, inputs) {
            (Some(c), Some(x)) => (c, x),
            _ => return Err(Error::UnsupportedPerturbation),
        };
        odin_perturbed_logits(dump, ckpt, inputs, eps)?
    } else {
        dump.logits.clone()
    };
    ScoreVector::new(
        msp_scores(&logits, temperature),
        ODIN,
        vec![dump.mode_id],
        dump.dataset_id.clone(),
    )
}

/// Logits after one signed-gradient step x - eps*sign(d loss/d x) per sample,
/// with the loss taken at the predicted label.
pub(crate) fn odin_perturbed_logits(
    dump: &OutputDump,
    ckpt: &ModeCheckpoint,
    inputs: &Tensor,
    eps: f32,
) -> Result<Tensor> {
    inputs.expect_rank(2, "odin inputs")?;
    if inputs.rows() != dump.sample_count() {
        return Err(Error::ShapeMismatch {
            context: "odin inputs",
            expected: format!("{} rows", dump.sample_count()),
            got: format!("{}", inputs.rows()),
        });
    }
    let mut perturbed = inputs.clone();
    for i in 0..inputs.rows() {
        let label = argmax(dump.logits.row(i));
        let grad = grad_input_nll(ckpt, inputs.row(i), label)?;
        let row = perturbed.row_mut(i);
        for (v, g) in row.iter_mut().zip(&grad) {
            *v -= eps * sign(*g);
        }
    }
    Ok(forward(ckpt, &perturbed)?.logits)
}

fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Energy score: log-sum-exp of the logits per sample.
pub fn score_energy(dump: &OutputDump) -> Result<ScoreVector> {
    dump.logits.expect_rank(2, "score_energy")?;
    if !dump.logits.all_finite() {
        return Err(Error::NonFinite("score_energy"));
    }
    let scores = (0..dump.logits.rows())
        .map(|i| logsumexp_slice(dump.logits.row(i)) as f32)
        .collect();
    ScoreVector::new(scores, ENERGY, vec![dump.mode_id], dump.dataset_id.clone())
}

/// Class means and shared precision fitted on training features.
#[derive(Debug, Clone)]
pub struct MahalanobisStats {
    /// [C, h] class mean features.
    pub class_means: Tensor,
    /// [h, h] inverse of the regularized pooled within-class covariance.
    pub precision: Tensor,
    /// Diagonal regularization that was added before inversion.
    pub regularization: f64,
}

/// Fits class means and the pooled within-class covariance, regularized by
/// eps*I with eps = eps_scale * trace(Sigma)/h (an absolute floor of
/// eps_scale covers the zero-spread degenerate case), then inverts via
/// Cholesky.
pub fn fit_mahalanobis(
    train_features: &Tensor,
    labels: &[usize],
    eps_scale: f64,
) -> Result<MahalanobisStats> {
    train_features.expect_rank(2, "fit_mahalanobis")?;
    let (n, h) = (train_features.rows(), train_features.cols());
    if n != labels.len() {
        return Err(Error::ShapeMismatch {
            context: "fit_mahalanobis labels",
            expected: format!("{n}"),
            got: format!("{}", labels.len()),
        });
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; classes];
    for &y in labels {
        counts[y] += 1;
    }
    for (c, &count) in counts.iter().enumerate() {
        if count < 2 {
            return Err(Error::TooFewClassSamples { class: c, count });
        }
    }

    let mut means = vec![0.0f64; classes * h];
    for (i, &y) in labels.iter().enumerate() {
        let row = train_features.row(i);
        for (j, &v) in row.iter().enumerate() {
            means[y * h + j] += v as f64;
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        for j in 0..h {
            means[c * h + j] /= count as f64;
        }
    }

    // Pooled within-class covariance, population normalization (divide by n).
    let mut cov = vec![0.0f64; h * h];
    let mut centered = vec![0.0f64; h];
    for (i, &y) in labels.iter().enumerate() {
        let row = train_features.row(i);
        for j in 0..h {
            centered[j] = row[j] as f64 - means[y * h + j];
        }
        for a in 0..h {
            let ca = centered[a];
            for b in a..h {
                cov[a * h + b] += ca * centered[b];
            }
        }
    }
    for a in 0..h {
        for b in a..h {
            let v = cov[a * h + b] / n as f64;
            cov[a * h + b] = v;
            cov[b * h + a] = v;
        }
    }

    let trace: f64 = (0..h).map(|j| cov[j * h + j]).sum();
    let eps = if trace > 0.0 {
        eps_scale * trace / h as f64
    } else {
        eps_scale
    };
    for j in 0..h {
        cov[j * h + j] += eps;
    }

    let chol = linalg::cholesky(&cov, h).ok_or(Error::CholeskyFailed { eps })?;
    let precision = linalg::spd_inverse_from_cholesky(&chol, h);
    Ok(MahalanobisStats {
        class_means: Tensor::new(vec![classes, h], means.iter().map(|&v| v as f32).collect())?,
        precision: Tensor::new(vec![h, h], precision.iter().map(|&v| v as f32).collect())?,
        regularization: eps,
    })
}

/// Negative Mahalanobis distance to the nearest class mean; always <= 0 and
/// zero exactly at a class mean.
pub fn score_mahalanobis(stats: &MahalanobisStats, dump: &OutputDump) -> Result<ScoreVector> {
    let features = &dump.penultimate;
    features.expect_rank(2, "score_mahalanobis")?;
    let h = stats.class_means.cols();
    if features.cols() != h {
        return Err(Error::ShapeMismatch {
            context: "score_mahalanobis",
            expected: format!("{h} feature columns"),
            got: format!("{}", features.cols()),
        });
    }
    let classes = stats.class_means.rows();
    let mut diff = vec![0.0f64; h];
    let scores = (0..features.rows())
        .map(|i| {
            let row = features.row(i);
            let mut best = f64::NEG_INFINITY;
            for c in 0..classes {
                let mu = stats.class_means.row(c);
                for j in 0..h {
                    diff[j] = row[j] as f64 - mu[j] as f64;
                }
                let mut quad = 0.0f64;
                for a in 0..h {
                    let prow = stats.precision.row(a);
                    let da = diff[a];
                    let mut acc = 0.0f64;
                    for b in 0..h {
                        acc += prow[b] as f64 * diff[b];
                    }
                    quad += da * acc;
                }
                best = best.max(-quad);
            }
            best.min(0.0) as f32
        })
        .collect();
    ScoreVector::new(
        scores,
        MAHALANOBIS,
        vec![dump.mode_id],
        dump.dataset_id.clone(),
    )
}

/// Bank of l2-normalized training features for exhaustive k-NN search.
#[derive(Debug, Clone)]
pub struct KnnIndex {
    bank: Tensor,
    pub k: usize,
}

fn normalize_rows(features: &Tensor) -> (Vec<f32>, usize) {
    let (n, h) = (features.rows(), features.cols());
    let mut out = Vec::with_capacity(n * h);
    let mut kept = 0usize;
    for i in 0..n {
        let row = features.row(i);
        let norm = linalg::norm2_f64(row);
        if norm <= 1e-12 {
            continue;
        }
        kept += 1;
        out.extend(row.iter().map(|&v| (v as f64 / norm) as f32));
    }
    (out, kept)
}

impl KnnIndex {
    /// Builds the bank from training features. Rows with (near-)zero norm
    /// cannot be l2-normalized and are dropped.
    pub fn fit(train_features: &Tensor, k: usize) -> Result<Self> {
        train_features.expect_rank(2, "KnnIndex::fit")?;
        if train_features.rows() == 0 {
            return Err(Error::EmptyInput("KnnIndex::fit"));
        }
        if k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        let h = train_features.cols();
        let (bank, kept) = normalize_rows(train_features);
        if kept == 0 {
            return Err(Error::EmptyInput("KnnIndex::fit (all rows had zero norm)"));
        }
        if k > kept {
            return Err(Error::InvalidArgument(format!(
                "k = {k} exceeds bank size {kept}"
            )));
        }
        Ok(Self {
            bank: Tensor::new(vec![kept, h], bank)?,
            k,
        })
    }

    pub fn bank(&self) -> &Tensor {
        &self.bank
    }

    /// Negative distance from the normalized query to its k-th nearest bank
    /// row. Zero-norm queries are searched un-normalized.
    fn score_row(&self, query: &[f32]) -> f32 {
        let h = self.bank.cols();
        let norm = linalg::norm2_f64(query);
        let q: Vec<f64> = if norm > 1e-12 {
            query.iter().map(|&v| v as f64 / norm).collect()
        } else {
            query.iter().map(|&v| v as f64).collect()
        };
        let mut dists: Vec<f64> = (0..self.bank.rows())
            .map(|i| {
                let row = self.bank.row(i);
                let mut acc = 0.0f64;
                for j in 0..h {
                    let d = q[j] - row[j] as f64;
                    acc += d * d;
                }
                acc.sqrt()
            })
            .collect();
        let kth = self.k - 1;
        dists.select_nth_unstable_by(kth, |a, b| a.total_cmp(b));
        -(dists[kth] as f32)
    }
}

/// k-NN score on l2-normalized penultimate features.
pub fn score_knn(index: &KnnIndex, dump: &OutputDump) -> Result<ScoreVector> {
    score_knn_features(
        index,
        &dump.penultimate,
        vec![dump.mode_id],
        &dump.dataset_id,
    )
}

pub(crate) fn score_knn_features(
    index: &KnnIndex,
    features: &Tensor,
    mode_ids: Vec<u64>,
    dataset_id: &str,
) -> Result<ScoreVector> {
    features.expect_rank(2, "score_knn")?;
    if features.cols() != index.bank.cols() {
        return Err(Error::ShapeMismatch {
            context: "score_knn",
            expected: format!("{} feature columns", index.bank.cols()),
            got: format!("{}", features.cols()),
        });
    }
    let scores: Vec<f32> = (0..features.rows())
        .into_par_iter()
        .map(|i| index.score_row(features.row(i)))
        .collect();
    ScoreVector::new(scores, KNN, mode_ids, dataset_id)
}

/// Removes each sample's dominant rank-1 feature component, re-runs the head
/// on the changed features and scores by energy.
pub fn score_rankfeat(dump: &OutputDump, ckpt: &ModeCheckpoint) -> Result<ScoreVector> {
    let logits = rankfeat_changed_logits(dump, ckpt)?;
    let scores = (0..logits.rows())
        .map(|i| logsumexp_slice(logits.row(i)) as f32)
        .collect();
    ScoreVector::new(
        scores,
        RANKFEAT,
        vec![dump.mode_id],
        dump.dataset_id.clone(),
    )
}

/// Per-sample logits after rank-1 removal: X' = X - s1*u1*v1^T on the feature
/// matrix, flattened back to the penultimate width and fed to the final layer.
pub(crate) fn rankfeat_changed_logits(dump: &OutputDump, ckpt: &ModeCheckpoint) -> Result<Tensor> {
    dump.feature_matrix.expect_rank(3, "score_rankfeat")?;
    let shape = dump.feature_matrix.shape();
    let (n, r, c) = (shape[0], shape[1], shape[2]);
    let h = r * c;
    let head = ckpt
        .layers
        .last()
        .ok_or(Error::EmptyInput("rankfeat head"))?;
    if head.w.cols() != h {
        return Err(Error::ShapeMismatch {
            context: "rankfeat tap point",
            expected: format!("head expecting {} features", head.w.cols()),
            got: format!("feature matrix of {h}"),
        });
    }
    let classes = head.w.rows();
    let logits: Vec<Vec<f32>> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Vec<f32>> {
            let start = i * h;
            let x = Tensor::new(
                vec![r, c],
                dump.feature_matrix.data()[start..start + h].to_vec(),
            )?;
            let (s1, u1, v1) = top_singular_triple(&x)?;
            let mut changed = x.into_data();
            for a in 0..r {
                let ua = s1 * u1.data()[a];
                for b in 0..c {
                    changed[a * c + b] -= ua * v1.data()[b];
                }
            }
            let mut row = vec![0.0f32; classes];
            for o in 0..classes {
                let wrow = head.w.row(o);
                let mut acc = head.b.data()[o] as f64;
                for j in 0..h {
                    acc += wrow[j] as f64 * changed[j] as f64;
                }
                row[o] = acc as f32;
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let mut flat = Vec::with_capacity(n * classes);
    for row in logits {
        flat.extend(row);
    }
    Tensor::new(vec![n, classes], flat)
}

/// Gradient-norm score in the factorized closed form ||p - u||_1 * ||h||_1.
/// The probability factor stays in f64 so exactly uniform logits score 0.
pub fn score_gradnorm(dump: &OutputDump) -> Result<ScoreVector> {
    check_logits(&dump.logits, "score_gradnorm")?;
    dump.penultimate.expect_rank(2, "score_gradnorm")?;
    let classes = dump.class_count();
    let u = 1.0f64 / classes as f64;
    let mut probs = Vec::new();
    let scores = (0..dump.sample_count())
        .map(|i| {
            softmax_f64_slice(dump.logits.row(i), &mut probs);
            let p_l1: f64 = probs.iter().map(|&p| (p - u).abs()).sum();
            let h_l1 = linalg::l1_norm_f64(dump.penultimate.row(i));
            (p_l1 * h_l1) as f32
        })
        .collect();
    ScoreVector::new(
        scores,
        GRADNORM,
        vec![dump.mode_id],
        dump.dataset_id.clone(),
    )
}
