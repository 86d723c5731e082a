//! Shared test oracles, deliberately independent of the library's own
//! implementation paths: a Jacobi eigensolver for singular values, naive
//! summation references, pairwise AUROC counting and finite differences.
#![allow(dead_code)]

use oodens_core::model::{Layer, MlpArch, ModeCheckpoint, TrainMeta};
use oodens_core::{Rng, Tensor};

/// All singular values of a rank-2 tensor, descending, via cyclic Jacobi
/// diagonalization of X^T X in f64.
pub fn jacobi_singular_values(x: &Tensor) -> Vec<f64> {
    let (rows, cols) = (x.shape()[0], x.shape()[1]);
    let n = cols;
    let mut a = vec![0.0f64; n * n];
    for i in 0..rows {
        let row = x.row(i);
        for p in 0..n {
            for q in 0..n {
                a[p * n + q] += row[p] as f64 * row[q] as f64;
            }
        }
    }
    let scale: f64 = (0..n).map(|i| a[i * n + i].abs()).sum::<f64>().max(1e-300);
    for _sweep in 0..200 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i * n + i].max(0.0).sqrt()).collect();
    eig.sort_by(|x, y| y.partial_cmp(x).unwrap());
    eig
}

/// log(sum(exp(z))) by direct f64 summation, valid for small magnitudes.
pub fn naive_logsumexp(values: &[f32]) -> f64 {
    values.iter().map(|&v| (v as f64).exp()).sum::<f64>().ln()
}

/// AUROC by O(n^2) pair counting with half credit for ties.
pub fn auroc_bruteforce(ind: &[f32], ood: &[f32]) -> f64 {
    let mut wins = 0.0f64;
    for &i in ind {
        for &o in ood {
            if i > o {
                wins += 1.0;
            } else if i == o {
                wins += 0.5;
            }
        }
    }
    wins / (ind.len() as f64 * ood.len() as f64)
}

/// Central finite difference of a scalar function of one vector argument.
pub fn finite_difference(f: &mut dyn FnMut(&[f32]) -> f64, x: &[f32], step: f32) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut plus = x.to_vec();
            let mut minus = x.to_vec();
            plus[j] += step;
            minus[j] -= step;
            (f(&plus) - f(&minus)) / (2.0 * step as f64)
        })
        .collect()
}

/// Random tensor with entries from the given seed stream.
pub fn random_tensor(shape: Vec<usize>, scale: f32, rng: &mut Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = scale * rng.next_gaussian() as f32;
    }
    t
}

/// Random fully-connected checkpoint for oracle tests that do not need a
/// trained network.
pub fn random_ckpt(widths: Vec<usize>, fmshape: (usize, usize), seed: u64) -> ModeCheckpoint {
    let arch = MlpArch::new(widths, fmshape).unwrap();
    let mut rng = Rng::new(seed);
    let layers = (0..arch.layer_count())
        .map(|l| {
            let (inp, out) = (arch.layer_widths[l], arch.layer_widths[l + 1]);
            let std = (2.0 / inp as f64).sqrt() as f32;
            Layer {
                w: random_tensor(vec![out, inp], std, &mut rng),
                b: random_tensor(vec![out], 0.1, &mut rng),
            }
        })
        .collect();
    ModeCheckpoint {
        arch,
        layers,
        seed,
        train_meta: TrainMeta::default(),
    }
}
