//! Mode-ensemble scoring: averages logits or features across independently
//! trained modes before applying a detector, plus a min-p baseline that
//! combines per-mode scores through empirical p-values.

use crate::detectors::{self, score_knn_features, KnnIndex, MahalanobisStats, ScoreVector};
use crate::error::{Error, Result};
use crate::model::{ModeCheckpoint, OutputDump};
use crate::numkit::stable::{logsumexp_slice, softmax_f64_slice};
use crate::numkit::{linalg, Tensor};

/// Aligned per-mode outputs for one dataset. All dumps share the sample
/// order, sample count, class count and feature width; checkpoints are only
/// needed by detectors that re-run part of the network.
#[derive(Debug, Clone)]
pub struct ModeSet {
    pub dumps: Vec<OutputDump>,
    pub ckpts: Option<Vec<ModeCheckpoint>>,
    pub mode_ids: Vec<u64>,
}

impl ModeSet {
    pub fn new(dumps: Vec<OutputDump>, ckpts: Option<Vec<ModeCheckpoint>>) -> Result<Self> {
        if dumps.is_empty() {
            return Err(Error::EmptyInput("ModeSet"));
        }
        let (n, c, h) = (
            dumps[0].sample_count(),
            dumps[0].class_count(),
            dumps[0].feature_width(),
        );
        for d in &dumps {
            if d.sample_count() != n || d.class_count() != c || d.feature_width() != h {
                return Err(Error::ShapeMismatch {
                    context: "ModeSet",
                    expected: format!("n={n}, C={c}, h={h}"),
                    got: format!(
                        "n={}, C={}, h={}",
                        d.sample_count(),
                        d.class_count(),
                        d.feature_width()
                    ),
                });
            }
        }
        if let Some(ckpts) = &ckpts {
            if ckpts.len() != dumps.len() {
                return Err(Error::ShapeMismatch {
                    context: "ModeSet checkpoints",
                    expected: format!("{}", dumps.len()),
                    got: format!("{}", ckpts.len()),
                });
            }
        }
        let mode_ids = dumps.iter().map(|d| d.mode_id).collect();
        Ok(Self {
            dumps,
            ckpts,
            mode_ids,
        })
    }

    pub fn mode_count(&self) -> usize {
        self.dumps.len()
    }

    pub fn sample_count(&self) -> usize {
        self.dumps[0].sample_count()
    }

    pub fn dataset_id(&self) -> &str {
        &self.dumps[0].dataset_id
    }

    fn ckpts(&self) -> Result<&[ModeCheckpoint]> {
        self.ckpts.as_deref().ok_or(Error::UnsupportedPerturbation)
    }
}

/// Elementwise mean of a list of equally shaped tensors, in f64.
fn mean_tensors<'a>(tensors: impl Iterator<Item = &'a Tensor> + Clone) -> Result<Tensor> {
    let first = tensors
        .clone()
        .next()
        .ok_or(Error::EmptyInput("mean_tensors"))?;
    let mut acc = vec![0.0f64; first.len()];
    let mut count = 0usize;
    for t in tensors {
        if t.shape() != first.shape() {
            return Err(Error::ShapeMismatch {
                context: "mean_tensors",
                expected: format!("{:?}", first.shape()),
                got: format!("{:?}", t.shape()),
            });
        }
        for (a, &v) in acc.iter_mut().zip(t.data()) {
            *a += v as f64;
        }
        count += 1;
    }
    let inv = 1.0 / count as f64;
    Tensor::new(
        first.shape().to_vec(),
        acc.iter().map(|&v| (v * inv) as f32).collect(),
    )
}

/// Mean of the per-mode logits.
pub fn ens_logits(set: &ModeSet) -> Result<Tensor> {
    mean_tensors(set.dumps.iter().map(|d| &d.logits))
}

/// Mean of the per-mode penultimate features.
pub fn ens_features(set: &ModeSet) -> Result<Tensor> {
    mean_tensors(set.dumps.iter().map(|d| &d.penultimate))
}

fn ens_dump(set: &ModeSet) -> Result<OutputDump> {
    let logits = ens_logits(set)?;
    let penultimate = ens_features(set)?;
    let (r, c) = if let Some(ckpts) = &set.ckpts {
        ckpts[0].arch.feature_matrix_shape
    } else {
        (1, penultimate.cols())
    };
    let n = penultimate.rows();
    let feature_matrix = penultimate.reshape(vec![n, r, c])?;
    Ok(OutputDump {
        logits,
        penultimate,
        feature_matrix,
        mode_id: set.mode_ids[0],
        dataset_id: set.dataset_id().to_string(),
    })
}

fn with_ids(mut sv: ScoreVector, set: &ModeSet) -> ScoreVector {
    sv.mode_ids = set.mode_ids.clone();
    sv
}

/// MSP on the averaged logits.
pub fn ens_score_msp(set: &ModeSet) -> Result<ScoreVector> {
    Ok(with_ids(detectors::score_msp(&ens_dump(set)?)?, set))
}

/// ODIN on the averaged logits. With eps > 0 the signed-gradient attack runs
/// individually on every mode and the perturbed logits are averaged.
pub fn ens_score_odin(
    set: &ModeSet,
    temperature: f32,
    eps: f32,
    inputs: Option<&Tensor>,
) -> Result<ScoreVector> {
    if eps > 0.0 {
        let ckpts = set.ckpts()?;
        let inputs = inputs.ok_or(Error::UnsupportedPerturbation)?;
        let perturbed: Vec<Tensor> = set
            .dumps
            .iter()
            .zip(ckpts)
            .map(|(dump, ckpt)| detectors::odin_perturbed_logits(dump, ckpt, inputs, eps))
            .collect::<Result<_>>()?;
        let mean = mean_tensors(perturbed.iter())?;
        let stub = OutputDump {
            penultimate: Tensor::zeros(vec![mean.rows(), 1]),
            feature_matrix: Tensor::zeros(vec![mean.rows(), 1, 1]),
            logits: mean,
            mode_id: set.mode_ids[0],
            dataset_id: set.dataset_id().to_string(),
        };
        return Ok(with_ids(
            detectors::score_odin(&stub, temperature, 0.0, None, None)?,
            set,
        ));
    }
    Ok(with_ids(
        detectors::score_odin(&ens_dump(set)?, temperature, 0.0, None, None)?,
        set,
    ))
}

/// Energy on the averaged logits.
pub fn ens_score_energy(set: &ModeSet) -> Result<ScoreVector> {
    Ok(with_ids(detectors::score_energy(&ens_dump(set)?)?, set))
}

/// Fits Mahalanobis statistics on the mean training features across modes.
pub fn ens_fit_mahalanobis(
    train_set: &ModeSet,
    labels: &[usize],
    eps_scale: f64,
) -> Result<MahalanobisStats> {
    detectors::fit_mahalanobis(&ens_features(train_set)?, labels, eps_scale)
}

/// Mahalanobis on the mean features against ensemble-fitted statistics.
pub fn ens_score_mahalanobis(stats: &MahalanobisStats, set: &ModeSet) -> Result<ScoreVector> {
    Ok(with_ids(
        detectors::score_mahalanobis(stats, &ens_dump(set)?)?,
        set,
    ))
}

/// k-NN on the normalized mean features; the index must be built on the mean
/// training features of the same modes.
pub fn ens_score_knn(set: &ModeSet, index: &KnnIndex) -> Result<ScoreVector> {
    let mean = ens_features(set)?;
    let mut sv = score_knn_features(index, &mean, set.mode_ids.clone(), set.dataset_id())?;
    sv.mode_ids = set.mode_ids.clone();
    Ok(sv)
}

/// Rank-1 removal on each mode individually, then the energy of the averaged
/// changed logits.
pub fn ens_score_rankfeat(set: &ModeSet) -> Result<ScoreVector> {
    let ckpts = set.ckpts()?;
    let changed: Vec<Tensor> = set
        .dumps
        .iter()
        .zip(ckpts)
        .map(|(dump, ckpt)| detectors::rankfeat_changed_logits(dump, ckpt))
        .collect::<Result<_>>()?;
    let mean = mean_tensors(changed.iter())?;
    let scores = (0..mean.rows())
        .map(|i| logsumexp_slice(mean.row(i)) as f32)
        .collect();
    ScoreVector::new(
        scores,
        detectors::RANKFEAT,
        set.mode_ids.clone(),
        set.dataset_id(),
    )
}

/// GradNorm against the ensembled softmax: the KL gradient factor uses
/// p_ens = softmax(mean logits) while the feature factor averages the
/// per-mode penultimate L1 norms.
pub fn ens_score_gradnorm(set: &ModeSet) -> Result<ScoreVector> {
    let logits = ens_logits(set)?;
    if logits.cols() < 2 {
        return Err(Error::InvalidArgument(
            "ens_score_gradnorm: need >= 2 classes".into(),
        ));
    }
    if !logits.all_finite() {
        return Err(Error::NonFinite("ens_score_gradnorm"));
    }
    let n = logits.rows();
    let u = 1.0f64 / logits.cols() as f64;
    let inv_modes = 1.0f64 / set.mode_count() as f64;
    let mut probs = Vec::new();
    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        softmax_f64_slice(logits.row(i), &mut probs);
        let p_l1: f64 = probs.iter().map(|&p| (p - u).abs()).sum();
        let h_l1_mean: f64 = set
            .dumps
            .iter()
            .map(|d| linalg::l1_norm_f64(d.penultimate.row(i)))
            .sum::<f64>()
            * inv_modes;
        scores.push((p_l1 * h_l1_mean) as f32);
    }
    ScoreVector::new(
        scores,
        detectors::GRADNORM,
        set.mode_ids.clone(),
        set.dataset_id(),
    )
}

/// Combines per-mode scores through empirical p-values against per-mode
/// calibration scores from held-out in-distribution data. The p-value of a
/// test score is the fraction of calibration scores at or below it (high
/// score means in-distribution, so high p means in-distribution); the
/// ensemble takes the minimum p across modes.
pub fn ens_score_pvalue(
    per_mode_scores: &[ScoreVector],
    ind_calibration: &[ScoreVector],
) -> Result<ScoreVector> {
    if per_mode_scores.is_empty() {
        return Err(Error::EmptyInput("ens_score_pvalue"));
    }
    if per_mode_scores.len() != ind_calibration.len() {
        return Err(Error::ShapeMismatch {
            context: "ens_score_pvalue",
            expected: format!("{} calibration vectors", per_mode_scores.len()),
            got: format!("{}", ind_calibration.len()),
        });
    }
    let n = per_mode_scores[0].len();
    for sv in per_mode_scores {
        if sv.len() != n {
            return Err(Error::ShapeMismatch {
                context: "ens_score_pvalue",
                expected: format!("{n} scores"),
                got: format!("{}", sv.len()),
            });
        }
    }
    let sorted_calibrations: Vec<Vec<f32>> = ind_calibration
        .iter()
        .map(|sv| {
            if sv.is_empty() {
                return Err(Error::EmptyInput("ens_score_pvalue calibration"));
            }
            let mut v = sv.scores.clone();
            v.sort_by(f32::total_cmp);
            Ok(v)
        })
        .collect::<Result<_>>()?;

    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        let mut min_p = f64::INFINITY;
        for (j, calib) in sorted_calibrations.iter().enumerate() {
            let s = per_mode_scores[j].scores[i];
            let below = calib.partition_point(|&c| c <= s);
            let p = below as f64 / calib.len() as f64;
            min_p = min_p.min(p);
        }
        scores.push(min_p as f32);
    }
    let mode_ids = per_mode_scores
        .iter()
        .flat_map(|sv| sv.mode_ids.iter().copied())
        .collect();
    ScoreVector::new(
        scores,
        format!("{}_pmin", per_mode_scores[0].detector_id),
        mode_ids,
        per_mode_scores[0].dataset_id.clone(),
    )
}
