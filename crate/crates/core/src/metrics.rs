//! FPR at 95% TPR and AUROC, the mode-subset evaluation protocol, and
//! mean/std aggregation into report tables.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::detectors::ScoreVector;
use crate::error::{Error, Result};
use crate::numkit::Rng;

/// One evaluated (detector, mode set, dataset) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub fpr95: f64,
    pub auroc: f64,
    pub threshold_used: f32,
    pub n_ind: usize,
    pub n_ood: usize,
    pub detector_id: String,
    pub mode_ids: Vec<u64>,
    pub dataset_id: String,
}

/// Threshold at the requested in-distribution true-positive rate and the
/// false-positive rate of the out-distribution scores against it.
///
/// The decision rule is strict: a sample counts as in-distribution iff its
/// score exceeds the threshold. The threshold is realized as the
/// ceil((1 - tpr) * n_ind)-th smallest in-distribution score, with no
/// interpolation, so the metric is exactly reproducible. When every score is
/// tied the false-positive rate degenerates to 0 under the strict rule.
pub fn fpr_at_tpr(ind_scores: &[f32], ood_scores: &[f32], tpr_target: f64) -> Result<(f64, f32)> {
    if ind_scores.is_empty() || ood_scores.is_empty() {
        return Err(Error::EmptyInput("fpr_at_tpr"));
    }
    if !(0.0..=1.0).contains(&tpr_target) {
        return Err(Error::InvalidArgument(format!(
            "tpr target {tpr_target} outside [0, 1]"
        )));
    }
    let mut sorted = ind_scores.to_vec();
    sorted.sort_by(f32::total_cmp);
    let n = sorted.len();
    // ceil((1 - tpr) * n) with a guard against float noise in (1 - tpr):
    // e.g. (1 - 0.95) * 100 lands just above 5 and must not round up to 6.
    let idx = ((((1.0 - tpr_target) * n as f64) - 1e-9).ceil() as usize).clamp(1, n);
    let threshold = sorted[idx - 1];
    let false_positives = ood_scores.iter().filter(|&&s| s > threshold).count();
    Ok((false_positives as f64 / ood_scores.len() as f64, threshold))
}

/// AUROC as the Mann-Whitney statistic (ties half-credited), computed by
/// rank-sum in O(n log n).
pub fn auroc(ind_scores: &[f32], ood_scores: &[f32]) -> Result<f64> {
    if ind_scores.is_empty() || ood_scores.is_empty() {
        return Err(Error::EmptyInput("auroc"));
    }
    let n_ind = ind_scores.len();
    let n_ood = ood_scores.len();
    let mut all: Vec<(f32, bool)> = ind_scores
        .iter()
        .map(|&s| (s, true))
        .chain(ood_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Average ranks over tie groups, then sum the in-distribution ranks.
    let mut rank_sum_ind = 0.0f64;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share the average rank.
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for item in &all[i..=j] {
            if item.1 {
                rank_sum_ind += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_ind - (n_ind as f64 * (n_ind as f64 + 1.0)) / 2.0;
    Ok(u / (n_ind as f64 * n_ood as f64))
}

/// Builds a report from aligned in-distribution and out-of-distribution
/// score vectors of the same detector and mode set.
pub fn evaluate_detection(
    ind: &ScoreVector,
    ood: &ScoreVector,
    tpr_target: f64,
) -> Result<DetectionReport> {
    if ind.detector_id != ood.detector_id || ind.mode_ids != ood.mode_ids {
        return Err(Error::InvalidArgument(format!(
            "mismatched score vectors: {}/{:?} vs {}/{:?}",
            ind.detector_id, ind.mode_ids, ood.detector_id, ood.mode_ids
        )));
    }
    let (fpr95, threshold_used) = fpr_at_tpr(&ind.scores, &ood.scores, tpr_target)?;
    let auroc = auroc(&ind.scores, &ood.scores)?;
    Ok(DetectionReport {
        fpr95,
        auroc,
        threshold_used,
        n_ind: ind.len(),
        n_ood: ood.len(),
        detector_id: ind.detector_id.clone(),
        mode_ids: ind.mode_ids.clone(),
        dataset_id: ood.dataset_id.clone(),
    })
}

/// Mode-id subsets for ensemble evaluation: `repeats` distinct random
/// k-subsets drawn without replacement. k = 1 enumerates every singleton
/// (the per-mode convention) and k = N collapses to the single full set.
pub fn subset_protocol(
    all_mode_ids: &[u64],
    k: usize,
    repeats: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<u64>>> {
    let n = all_mode_ids.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "subset size {k} outside 1..={n}"
        )));
    }
    if k == n {
        return Ok(vec![all_mode_ids.to_vec()]);
    }
    if k == 1 {
        return Ok(all_mode_ids.iter().map(|&id| vec![id]).collect());
    }
    let mut seen: BTreeSet<Vec<u64>> = BTreeSet::new();
    let mut subsets = Vec::with_capacity(repeats);
    let mut pool = all_mode_ids.to_vec();
    let mut attempts = 0usize;
    let max_attempts = repeats.saturating_mul(1000).max(1000);
    while subsets.len() < repeats && attempts < max_attempts {
        attempts += 1;
        // Partial Fisher-Yates: the first k entries become the draw.
        for i in 0..k {
            let j = i + rng.next_below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        let mut subset = pool[..k].to_vec();
        subset.sort_unstable();
        if seen.insert(subset.clone()) {
            subsets.push(subset);
        }
    }
    if subsets.len() < repeats {
        return Err(Error::InvalidArgument(format!(
            "could not draw {repeats} distinct {k}-subsets from {n} modes"
        )));
    }
    Ok(subsets)
}

/// One run row of the per-run report CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub report: DetectionReport,
    pub subset_id: usize,
}

/// Aggregated mean/std cell. Std is the population standard deviation, which
/// matches the +-std presentation for very small repeat counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub detector_id: String,
    pub dataset_id: String,
    pub k: usize,
    pub fpr95_mean: f64,
    pub fpr95_std: f64,
    pub auroc_mean: f64,
    pub auroc_std: f64,
    pub count: usize,
}

fn mean_and_population_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Groups run records by (detector, dataset, k) and reduces to mean/std rows,
/// sorted by key.
pub fn aggregate(records: &[RunRecord]) -> Vec<AggregateRow> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(String, String, usize), Vec<&DetectionReport>> = BTreeMap::new();
    for rec in records {
        let key = (
            rec.report.detector_id.clone(),
            rec.report.dataset_id.clone(),
            rec.report.mode_ids.len(),
        );
        groups.entry(key).or_default().push(&rec.report);
    }
    groups
        .into_iter()
        .map(|((detector_id, dataset_id, k), reports)| {
            let fprs: Vec<f64> = reports.iter().map(|r| r.fpr95).collect();
            let aurocs: Vec<f64> = reports.iter().map(|r| r.auroc).collect();
            let (fpr95_mean, fpr95_std) = mean_and_population_std(&fprs);
            let (auroc_mean, auroc_std) = mean_and_population_std(&aurocs);
            AggregateRow {
                detector_id,
                dataset_id,
                k,
                fpr95_mean,
                fpr95_std,
                auroc_mean,
                auroc_std,
                count: reports.len(),
            }
        })
        .collect()
}

pub fn mode_ids_field(mode_ids: &[u64]) -> String {
    mode_ids
        .iter()
        .map(u64::to_string)
        .collect::<Vec<_>>()
        .join("+")
}

pub const RUNS_CSV_HEADER: &str = "detector,dataset,k,subset_id,mode_ids,fpr95,auroc,threshold";
pub const AGGREGATE_CSV_HEADER: &str =
    "detector,dataset,k,fpr95_mean,fpr95_std,auroc_mean,auroc_std";

pub fn runs_to_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(RUNS_CSV_HEADER);
    out.push('\n');
    for rec in records {
        let r = &rec.report;
        out.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6}\n",
            r.detector_id,
            r.dataset_id,
            r.mode_ids.len(),
            rec.subset_id,
            mode_ids_field(&r.mode_ids),
            r.fpr95,
            r.auroc,
            r.threshold_used,
        ));
    }
    out
}

pub fn aggregate_to_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(AGGREGATE_CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6}\n",
            row.detector_id,
            row.dataset_id,
            row.k,
            row.fpr95_mean,
            row.fpr95_std,
            row.auroc_mean,
            row.auroc_std,
        ));
    }
    out
}
