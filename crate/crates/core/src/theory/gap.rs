use serde::{Deserialize, Serialize};

use crate::data::GaussianSpec;
use crate::error::{Error, Result};
use crate::numkit::Tensor;
use crate::theory::normal::{phi, probit};

/// A linear classifier x -> sign(theta^T x).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMode {
    pub theta: Tensor,
}

impl LinearMode {
    pub fn new(theta: Tensor) -> Result<Self> {
        theta.expect_rank(1, "LinearMode")?;
        if norm(theta.data()) == 0.0 {
            return Err(Error::InvalidArgument(
                "LinearMode: zero weight vector".into(),
            ));
        }
        Ok(Self { theta })
    }

    pub fn decide(&self, x: &[f32]) -> i8 {
        let s: f64 = self
            .theta
            .data()
            .iter()
            .zip(x)
            .map(|(&t, &v)| t as f64 * v as f64)
            .sum();
        if s >= 0.0 {
            1
        } else {
            -1
        }
    }
}

fn norm(v: &[f32]) -> f64 {
    v.iter()
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Closed-form accuracy of sign(theta^T x) on N(mean*y, sigma^2 I):
/// Phi(theta^T mean / (||theta|| sigma)).
pub fn acc_closed_form(theta: &Tensor, mean_vec: &Tensor, sigma: f64) -> Result<f64> {
    theta.expect_rank(1, "acc_closed_form")?;
    mean_vec.expect_rank(1, "acc_closed_form")?;
    if sigma <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let n = norm(theta.data());
    if n == 0.0 {
        return Err(Error::InvalidArgument("acc_closed_form: zero theta".into()));
    }
    Ok(phi(dot(theta.data(), mean_vec.data()) / (n * sigma)))
}

/// Sum of the classifier weights; the ensemble decides by the sign of the
/// summed dot products, which equals sign(theta_ens^T x).
pub fn ens_linear(thetas: &[LinearMode]) -> Result<LinearMode> {
    if thetas.is_empty() {
        return Err(Error::EmptyInput("ens_linear"));
    }
    let d = thetas[0].theta.len();
    let mut sum = vec![0.0f64; d];
    let mut max_norm = 0.0f64;
    for mode in thetas {
        if mode.theta.len() != d {
            return Err(Error::ShapeMismatch {
                context: "ens_linear",
                expected: format!("{d} dims"),
                got: format!("{}", mode.theta.len()),
            });
        }
        max_norm = max_norm.max(norm(mode.theta.data()));
        for (s, &t) in sum.iter_mut().zip(mode.theta.data()) {
            *s += t as f64;
        }
    }
    let sum_norm = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
    if sum_norm <= 1e-9 * max_norm {
        return Err(Error::DegenerateEnsemble("linear ensemble weights cancel"));
    }
    LinearMode::new(Tensor::new(
        vec![d],
        sum.iter().map(|&v| v as f32).collect(),
    )?)
}

const ACC_DOMAIN: f64 = 1e-7;

fn checked_probit(acc: f64) -> Result<f64> {
    if !(ACC_DOMAIN..=1.0 - ACC_DOMAIN).contains(&acc) {
        return Err(Error::ProbitDomain(acc));
    }
    Ok(probit(acc))
}

/// In- and out-distribution accuracies of one linear mode under the spec.
pub fn accuracies(theta: &Tensor, spec: &GaussianSpec) -> Result<(f64, f64)> {
    let n = norm(theta.data());
    if n == 0.0 {
        return Err(Error::InvalidArgument("gap: zero theta".into()));
    }
    let sigma = spec.sigma as f64;
    let in_arg = dot(theta.data(), spec.mu.data()) / (n * sigma);
    let alpha = spec.alpha as f64;
    let beta = spec.beta as f64;
    let gamma = spec.gamma as f64;
    let out_arg =
        alpha / gamma * in_arg + beta / (gamma * sigma) * dot(theta.data(), spec.delta.data()) / n;
    Ok((phi(in_arg), phi(out_arg)))
}

/// Probit accuracy gap |probit(ACC_out) - (alpha/gamma) probit(ACC_in)|.
/// Accuracies pinned at 0 or 1 make the probit infinite and raise a domain
/// error; shrink |mu|/sigma to keep the task imperfect.
pub fn gap(theta: &Tensor, spec: &GaussianSpec) -> Result<f64> {
    let (acc_in, acc_out) = accuracies(theta, spec)?;
    let alpha = spec.alpha as f64;
    let gamma = spec.gamma as f64;
    Ok((checked_probit(acc_out)? - alpha / gamma * checked_probit(acc_in)?).abs())
}

/// The same gap in its reduced form (beta / (gamma sigma)) |theta^T delta| / ||theta||,
/// used as the independent cross-check of the probit route.
pub fn gap_direct(theta: &Tensor, spec: &GaussianSpec) -> Result<f64> {
    let n = norm(theta.data());
    if n == 0.0 {
        return Err(Error::InvalidArgument("gap_direct: zero theta".into()));
    }
    let beta = spec.beta as f64;
    let gamma = spec.gamma as f64;
    let sigma = spec.sigma as f64;
    Ok(beta / (gamma * sigma) * dot(theta.data(), spec.delta.data()).abs() / n)
}

/// Outcome of one ensemble-vs-average gap comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapResult {
    pub gap_each: Vec<f64>,
    pub gap_avg: f64,
    pub gap_ens: f64,
    pub acc_in: Vec<f64>,
    pub acc_out: Vec<f64>,
    pub acc_in_ens: f64,
    pub acc_out_ens: f64,
    /// gap_ens <= gap_avg (up to rounding slack).
    pub holds: bool,
    /// gap_avg / gap_ens; infinite when the ensemble gap vanishes.
    pub ratio: f64,
}

/// Computes the per-mode gaps, their average and the ensemble gap, and
/// reports whether the ensemble achieves the smaller gap.
pub fn check_gap_inequality(thetas: &[LinearMode], spec: &GaussianSpec) -> Result<GapResult> {
    if thetas.len() < 2 {
        return Err(Error::InvalidArgument(
            "check_gap_inequality needs at least 2 classifiers".into(),
        ));
    }
    let mut gap_each = Vec::with_capacity(thetas.len());
    let mut acc_in = Vec::with_capacity(thetas.len());
    let mut acc_out = Vec::with_capacity(thetas.len());
    for mode in thetas {
        let (ai, ao) = accuracies(&mode.theta, spec)?;
        acc_in.push(ai);
        acc_out.push(ao);
        gap_each.push(gap(&mode.theta, spec)?);
    }
    let gap_avg = gap_each.iter().sum::<f64>() / gap_each.len() as f64;
    let ens = ens_linear(thetas)?;
    let (acc_in_ens, acc_out_ens) = accuracies(&ens.theta, spec)?;
    let gap_ens = gap(&ens.theta, spec)?;
    // Slack covers only the f32 rounding of the summed ensemble weights
    // (one f32 ulp per component), not any modeling tolerance.
    let holds = gap_ens <= gap_avg + 1e-6 * gap_avg.abs().max(1e-12);
    let ratio = if gap_ens > 0.0 {
        gap_avg / gap_ens
    } else {
        f64::INFINITY
    };
    Ok(GapResult {
        gap_each,
        gap_avg,
        gap_ens,
        acc_in,
        acc_out,
        acc_in_ens,
        acc_out_ens,
        holds,
        ratio,
    })
}
