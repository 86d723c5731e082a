use crate::error::{Error, Result};
use crate::model::arch::ModeCheckpoint;
use crate::numkit::Rng;

/// Draws one dependent mode from the subspace around `ckpt`: parameters move
/// to omega + r * u/||u|| with u standard normal over the full flattened
/// parameter vector and r uniform in (0, r_max]. Returns the checkpoint and
/// the step radius actually used.
pub fn sample_subspace_mode_with_step(
    ckpt: &ModeCheckpoint,
    r_max: f32,
    rng: &mut Rng,
) -> Result<(ModeCheckpoint, f32)> {
    if r_max <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "r_max must be positive, got {r_max}"
        )));
    }
    let flat = ckpt.flatten_params();
    // next_f64 is in [0, 1); 1 - it is in (0, 1], so r lands in (0, r_max].
    let r = (r_max as f64) * (1.0 - rng.next_f64());

    let direction: Vec<f64> = (0..flat.len()).map(|_| rng.next_gaussian()).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::DegenerateEnsemble("zero perturbation direction"));
    }
    let scale = r / norm;
    let perturbed: Vec<f32> = flat
        .iter()
        .zip(&direction)
        .map(|(&w, &d)| (w as f64 + scale * d) as f32)
        .collect();
    Ok((ckpt.with_flat_params(&perturbed)?, r as f32))
}

/// Samples `count` dependent modes concentrated around `ckpt`.
pub fn sample_subspace_modes(
    ckpt: &ModeCheckpoint,
    count: usize,
    r_max: f32,
    rng: &mut Rng,
) -> Result<Vec<ModeCheckpoint>> {
    if count == 0 {
        return Err(Error::InvalidArgument(
            "subspace sample count must be >= 1".into(),
        ));
    }
    (0..count)
        .map(|_| sample_subspace_mode_with_step(ckpt, r_max, rng).map(|(c, _)| c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::arch::{param_l2_distance, Layer, MlpArch, TrainMeta};
    use crate::numkit::Tensor;

    fn base_ckpt() -> ModeCheckpoint {
        let arch = MlpArch::new(vec![2, 4, 3], (2, 2)).unwrap();
        let layers = vec![
            Layer {
                w: Tensor::new(vec![4, 2], (0..8).map(|v| v as f32 * 0.1).collect()).unwrap(),
                b: Tensor::zeros(vec![4]),
            },
            Layer {
                w: Tensor::new(vec![3, 4], (0..12).map(|v| v as f32 * 0.05).collect()).unwrap(),
                b: Tensor::zeros(vec![3]),
            },
        ];
        ModeCheckpoint {
            arch,
            layers,
            seed: 42,
            train_meta: TrainMeta::default(),
        }
    }

    #[test]
    fn tiny_radius_keeps_the_mode_in_place() {
        let base = base_ckpt();
        let modes = sample_subspace_modes(&base, 3, 1e-9, &mut Rng::new(1)).unwrap();
        for m in modes {
            assert!(param_l2_distance(&base, &m) < 1e-8);
        }
    }

    #[test]
    fn step_radius_matches_distance() {
        let base = base_ckpt();
        let mut rng = Rng::new(5);
        for _ in 0..5 {
            let (mode, r) = sample_subspace_mode_with_step(&base, 0.5, &mut rng).unwrap();
            let d = param_l2_distance(&base, &mode);
            assert!((d - r as f64).abs() < 1e-5, "d = {d}, r = {r}");
            assert!(r > 0.0 && r <= 0.5);
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let base = base_ckpt();
        let a = sample_subspace_modes(&base, 5, 0.3, &mut Rng::new(9)).unwrap();
        let b = sample_subspace_modes(&base, 5, 0.3, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_radius_is_rejected() {
        let base = base_ckpt();
        assert!(sample_subspace_modes(&base, 1, 0.0, &mut Rng::new(1)).is_err());
    }
}
