use crate::error::{Error, Result};
use crate::numkit::{Rng, Tensor};

/// Binary Gaussian task description: the in-distribution is N(mu*y, sigma^2 I)
/// with y in {-1,+1}; the out-distribution shifts the mean to
/// alpha*mu + beta*delta and scales the std by gamma.
#[derive(Debug, Clone)]
pub struct GaussianSpec {
    pub mu: Tensor,
    pub sigma: f32,
    pub alpha: f32,
    pub beta: f32,
    pub gamma: f32,
    pub delta: Tensor,
}

impl GaussianSpec {
    pub fn new(
        mu: Tensor,
        sigma: f32,
        alpha: f32,
        beta: f32,
        gamma: f32,
        delta: Tensor,
    ) -> Result<Self> {
        mu.expect_rank(1, "GaussianSpec mu")?;
        delta.expect_rank(1, "GaussianSpec delta")?;
        if mu.len() != delta.len() {
            return Err(Error::ShapeMismatch {
                context: "GaussianSpec",
                expected: format!("delta of length {}", mu.len()),
                got: format!("length {}", delta.len()),
            });
        }
        if sigma <= 0.0 || gamma <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "sigma and gamma must be positive (sigma = {sigma}, gamma = {gamma})"
            )));
        }
        Ok(Self {
            mu,
            sigma,
            alpha,
            beta,
            gamma,
            delta,
        })
    }

    pub fn dims(&self) -> usize {
        self.mu.len()
    }

    /// Shifted mean direction of the out-distribution.
    pub fn out_mu(&self) -> Vec<f32> {
        self.mu
            .data()
            .iter()
            .zip(self.delta.data())
            .map(|(&m, &d)| self.alpha * m + self.beta * d)
            .collect()
    }

    pub fn out_sigma(&self) -> f32 {
        self.gamma * self.sigma
    }
}

/// Feature matrix with integer labels in {0, ..., C-1}.
///
/// Binary tasks store {-1,+1} as {0,1}.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub name: String,
}

impl LabeledDataset {
    pub fn new(x: Tensor, y: Vec<usize>, name: impl Into<String>) -> Result<Self> {
        x.expect_rank(2, "LabeledDataset x")?;
        if x.rows() != y.len() {
            return Err(Error::ShapeMismatch {
                context: "LabeledDataset",
                expected: format!("{} labels", x.rows()),
                got: format!("{}", y.len()),
            });
        }
        Ok(Self {
            x,
            y,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.x.cols()
    }

    pub fn class_count(&self) -> usize {
        self.y.iter().copied().max().map_or(0, |m| m + 1)
    }
}

fn sample_binary(
    mu: &[f32],
    sigma: f32,
    n: usize,
    rng: &mut Rng,
    name: &str,
) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    let d = mu.len();
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let label = rng.next_below(2) as usize;
        let sign = if label == 1 { 1.0f32 } else { -1.0f32 };
        for &m in mu {
            data.push(m * sign + sigma * rng.next_gaussian() as f32);
        }
        labels.push(label);
    }
    LabeledDataset::new(Tensor::new(vec![n, d], data)?, labels, name)
}

/// Draws n samples from the in-distribution N(mu*y, sigma^2 I), labels
/// uniform over {-1,+1} stored as {0,1}.
pub fn sample_ind(spec: &GaussianSpec, n: usize, rng: &mut Rng) -> Result<LabeledDataset> {
    sample_binary(spec.mu.data(), spec.sigma, n, rng, "ind")
}

/// Draws n samples from the shifted out-distribution. With
/// (alpha, beta, gamma) = (1, 0, 1) this consumes the stream exactly like
/// `sample_ind`, so a shared seed reproduces the same samples.
pub fn sample_ood(spec: &GaussianSpec, n: usize, rng: &mut Rng) -> Result<LabeledDataset> {
    sample_binary(&spec.out_mu(), spec.out_sigma(), n, rng, "ood")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec2d(sigma: f32, alpha: f32, beta: f32, gamma: f32) -> GaussianSpec {
        GaussianSpec::new(
            Tensor::new(vec![2], vec![1.0, 0.0]).unwrap(),
            sigma,
            alpha,
            beta,
            gamma,
            Tensor::new(vec![2], vec![0.0, 1.0]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn degenerate_sigma_pins_samples_to_means() {
        let spec = spec2d(1e-6, 1.0, 0.0, 1.0);
        let mut rng = Rng::new(1);
        let ds = sample_ind(&spec, 100, &mut rng).unwrap();
        for i in 0..ds.len() {
            let sign = if ds.y[i] == 1 { 1.0 } else { -1.0 };
            assert!((ds.x.row(i)[0] - sign).abs() < 1e-4);
            assert!(ds.x.row(i)[1].abs() < 1e-4);
        }
    }

    #[test]
    fn class_conditional_means_converge() {
        let spec = spec2d(1.0, 1.0, 0.0, 1.0);
        let mut rng = Rng::new(5);
        let ds = sample_ind(&spec, 10_000, &mut rng).unwrap();
        let mut sums = [[0.0f64; 2]; 2];
        let mut counts = [0usize; 2];
        for i in 0..ds.len() {
            let y = ds.y[i];
            counts[y] += 1;
            sums[y][0] += ds.x.row(i)[0] as f64;
            sums[y][1] += ds.x.row(i)[1] as f64;
        }
        for y in 0..2 {
            let sign = if y == 1 { 1.0 } else { -1.0 };
            let m0 = sums[y][0] / counts[y] as f64;
            let m1 = sums[y][1] / counts[y] as f64;
            assert!((m0 - sign).abs() < 0.05, "class {y}: {m0}");
            assert!(m1.abs() < 0.05, "class {y}: {m1}");
        }
    }

    #[test]
    fn sampling_is_deterministic_in_seed() {
        let spec = spec2d(1.0, 1.0, 0.0, 1.0);
        let a = sample_ind(&spec, 50, &mut Rng::new(7)).unwrap();
        let b = sample_ind(&spec, 50, &mut Rng::new(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_shift_matches_ind_elementwise() {
        let spec = spec2d(1.0, 1.0, 0.0, 1.0);
        let ind = sample_ind(&spec, 200, &mut Rng::new(9)).unwrap();
        let ood = sample_ood(&spec, 200, &mut Rng::new(9)).unwrap();
        assert_eq!(ind.x.data(), ood.x.data());
        assert_eq!(ind.y, ood.y);
    }

    #[test]
    fn large_beta_shifts_the_mean() {
        let spec = spec2d(0.5, 1.0, 20.0, 1.0);
        let ds = sample_ood(&spec, 10_000, &mut Rng::new(3)).unwrap();
        // Second coordinate is mu2*y + 20*delta2 = +-0 + 20; the shift term
        // dominates and appears in every sample regardless of label.
        let mean1: f64 =
            (0..ds.len()).map(|i| ds.x.row(i)[1] as f64).sum::<f64>() / ds.len() as f64;
        // Labels flip the sign of the whole shifted mean; fold by label.
        let folded: f64 = (0..ds.len())
            .map(|i| {
                let sign = if ds.y[i] == 1 { 1.0 } else { -1.0 };
                ds.x.row(i)[1] as f64 * sign
            })
            .sum::<f64>()
            / ds.len() as f64;
        assert!(
            (folded - 20.0).abs() < 0.5,
            "folded mean {folded}, raw {mean1}"
        );
    }

    #[test]
    fn gamma_scales_the_std() {
        let spec = spec2d(1.0, 1.0, 0.0, 2.0);
        let ds = sample_ood(&spec, 10_000, &mut Rng::new(11)).unwrap();
        // Center each sample at its class mean and measure per-coordinate std.
        let mut sq = [0.0f64; 2];
        for i in 0..ds.len() {
            let sign = if ds.y[i] == 1 { 1.0 } else { -1.0 };
            let cx = ds.x.row(i)[0] as f64 - sign;
            let cy = ds.x.row(i)[1] as f64;
            sq[0] += cx * cx;
            sq[1] += cy * cy;
        }
        for s in sq {
            let std = (s / ds.len() as f64).sqrt();
            assert!((std - 2.0).abs() < 0.1, "std = {std}");
        }
    }
}
