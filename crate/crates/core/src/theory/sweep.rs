use serde::{Deserialize, Serialize};

use crate::data::{GaussianSpec, LabeledDataset};
use crate::error::{Error, Result};
use crate::numkit::{Rng, Tensor};
use crate::theory::gap::{check_gap_inequality, GapResult, LinearMode};

/// Trial generator settings for the ensemble-gap inequality sweep. Modes are
/// drawn inside the proof's assumption regime: norms within `norm_spread` of
/// each other and pairwise angles at most `max_angle_deg`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub dims: usize,
    pub modes: usize,
    pub trials: usize,
    pub norm_spread: f64,
    pub max_angle_deg: f64,
    pub mu_scale: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            dims: 16,
            modes: 5,
            trials: 1000,
            norm_spread: 0.01,
            max_angle_deg: 5.0,
            mu_scale: 1.0,
            sigma: 1.0,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTrial {
    pub gap_avg: f64,
    pub gap_ens: f64,
    pub ratio: f64,
    pub holds: bool,
}

/// Sweep outcome plus a coarse histogram of gap_avg / gap_ens ratios.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: SweepConfig,
    pub trials: Vec<SweepTrial>,
    pub holds_count: usize,
    pub min_ratio: f64,
    pub ratio_histogram: Vec<(String, usize)>,
}

fn random_unit(dims: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dims).map(|_| rng.next_gaussian()).collect();
        let n = v.iter().map(|e| e * e).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.iter().map(|e| e / n).collect();
        }
    }
}

/// Unit vector at angle `angle` from `base`, in the plane spanned by `base`
/// and a random draw.
fn tilted_unit(base: &[f64], angle: f64, rng: &mut Rng) -> Vec<f64> {
    loop {
        let g = random_unit(base.len(), rng);
        let dot: f64 = g.iter().zip(base).map(|(a, b)| a * b).sum();
        let perp: Vec<f64> = g.iter().zip(base).map(|(a, b)| a - dot * b).collect();
        let pn = perp.iter().map(|e| e * e).sum::<f64>().sqrt();
        if pn > 1e-9 {
            return base
                .iter()
                .zip(&perp)
                .map(|(&b, &p)| angle.cos() * b + angle.sin() * p / pn)
                .collect();
        }
    }
}

fn f32_tensor(v: &[f64]) -> Result<Tensor> {
    Tensor::new(vec![v.len()], v.iter().map(|&e| e as f32).collect())
}

/// Draws one trial's modes inside the assumption regime and checks the
/// ensemble-gap inequality against a fresh random shift direction.
pub fn assumption_regime_trial(config: &SweepConfig, rng: &mut Rng) -> Result<GapResult> {
    let base = random_unit(config.dims, rng);
    let half_angle = config.max_angle_deg.to_radians() / 2.0;
    let mut modes = Vec::with_capacity(config.modes);
    for _ in 0..config.modes {
        let angle = half_angle * rng.next_f64();
        let dir = tilted_unit(&base, angle, rng);
        let scale = 1.0 + config.norm_spread * (rng.next_f64() - 0.5);
        let theta: Vec<f64> = dir.iter().map(|&d| d * scale).collect();
        modes.push(LinearMode::new(f32_tensor(&theta)?)?);
    }
    let mu: Vec<f64> = random_unit(config.dims, rng)
        .iter()
        .map(|&v| v * config.mu_scale)
        .collect();
    let delta = random_unit(config.dims, rng);
    let spec = GaussianSpec::new(
        f32_tensor(&mu)?,
        config.sigma as f32,
        config.alpha as f32,
        config.beta as f32,
        config.gamma as f32,
        f32_tensor(&delta)?,
    )?;
    check_gap_inequality(&modes, &spec)
}

const HISTOGRAM_EDGES: [f64; 7] = [0.0, 1.0, 1.001, 1.01, 1.1, 2.0, 10.0];

/// Runs the full sweep; deterministic in the rng seed.
pub fn assumption_regime_sweep(config: &SweepConfig, rng: &mut Rng) -> Result<SweepReport> {
    if config.trials == 0 || config.modes < 2 {
        return Err(Error::InvalidArgument(
            "sweep needs trials >= 1 and modes >= 2".into(),
        ));
    }
    let mut trials = Vec::with_capacity(config.trials);
    let mut holds_count = 0usize;
    let mut min_ratio = f64::INFINITY;
    let mut buckets = vec![0usize; HISTOGRAM_EDGES.len()];
    for _ in 0..config.trials {
        let result = assumption_regime_trial(config, rng)?;
        if result.holds {
            holds_count += 1;
        }
        min_ratio = min_ratio.min(result.ratio);
        let slot = HISTOGRAM_EDGES
            .iter()
            .rposition(|&edge| result.ratio >= edge)
            .unwrap_or(0);
        buckets[slot] += 1;
        trials.push(SweepTrial {
            gap_avg: result.gap_avg,
            gap_ens: result.gap_ens,
            ratio: result.ratio,
            holds: result.holds,
        });
    }
    let ratio_histogram = HISTOGRAM_EDGES
        .iter()
        .enumerate()
        .map(|(i, &lo)| {
            let label = if i + 1 < HISTOGRAM_EDGES.len() {
                format!("[{lo}, {})", HISTOGRAM_EDGES[i + 1])
            } else {
                format!("[{lo}, inf)")
            };
            (label, buckets[i])
        })
        .collect();
    Ok(SweepReport {
        config: config.clone(),
        trials,
        holds_count,
        min_ratio,
        ratio_histogram,
    })
}

/// Logistic-regression fit of a linear mode on a binary dataset (labels
/// {0,1} read as {-1,+1}), by full-batch gradient descent. This is the
/// "learned w.r.t. a seed" generator: the finite sample drawn per seed is
/// what differentiates the modes.
pub fn fit_logistic_theta(data: &LabeledDataset, steps: usize, lr: f64) -> Result<LinearMode> {
    if data.is_empty() {
        return Err(Error::EmptyInput("fit_logistic_theta"));
    }
    let d = data.dims();
    let mut theta = vec![0.0f64; d];
    let n = data.len();
    for _ in 0..steps {
        let mut grad = vec![0.0f64; d];
        for i in 0..n {
            let row = data.x.row(i);
            let y = if data.y[i] == 1 { 1.0 } else { -1.0 };
            let margin: f64 = theta
                .iter()
                .zip(row)
                .map(|(&t, &v)| t * v as f64)
                .sum::<f64>()
                * y;
            // d/dtheta log(1 + exp(-y theta^T x)) = -sigmoid(-margin) y x
            let coeff = -y / (1.0 + margin.exp());
            for (g, &v) in grad.iter_mut().zip(row) {
                *g += coeff * v as f64;
            }
        }
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= lr * g / n as f64;
        }
    }
    LinearMode::new(f32_tensor(&theta)?)
}
