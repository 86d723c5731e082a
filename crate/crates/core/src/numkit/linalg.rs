use crate::error::{Error, Result};
use crate::numkit::Tensor;

/// Matrix product of two rank-2 tensors with f64 accumulation.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.expect_rank(2, "matmul lhs")?;
    b.expect_rank(2, "matmul rhs")?;
    if a.cols() != b.rows() {
        return Err(Error::ShapeMismatch {
            context: "matmul",
            expected: format!("inner dimension {}", a.cols()),
            got: format!("{}", b.rows()),
        });
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let arow = a.row(i);
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate().take(k) {
            let brow = b.row(p);
            let av = av as f64;
            for j in 0..n {
                orow[j] = (orow[j] as f64 + av * brow[j] as f64) as f32;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// y = M x for a rank-2 tensor and a slice, accumulated in f64.
pub fn matvec(m: &Tensor, x: &[f32], out: &mut Vec<f64>) {
    let cols = m.cols();
    debug_assert_eq!(cols, x.len());
    out.clear();
    for i in 0..m.rows() {
        let row = m.row(i);
        let mut acc = 0.0f64;
        for j in 0..cols {
            acc += row[j] as f64 * x[j] as f64;
        }
        out.push(acc);
    }
}

pub fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum::<f64>()
}

pub fn norm2_f64(v: &[f32]) -> f64 {
    v.iter()
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt()
}

pub fn l1_norm_f64(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64).abs()).sum::<f64>()
}

/// Cholesky factor L of a symmetric positive-definite matrix (row-major, n*n).
/// Returns `None` if a non-positive pivot appears.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Inverse of a symmetric positive-definite matrix from its Cholesky factor.
pub fn spd_inverse_from_cholesky(l: &[f64], n: usize) -> Vec<f64> {
    // Solve L L^T X = I column by column.
    let mut inv = vec![0.0f64; n * n];
    let mut y = vec![0.0f64; n];
    for col in 0..n {
        // Forward: L y = e_col
        for i in 0..n {
            let mut sum = if i == col { 1.0 } else { 0.0 };
            for k in 0..i {
                sum -= l[i * n + k] * y[k];
            }
            y[i] = sum / l[i * n + i];
        }
        // Backward: L^T x = y
        for i in (0..n).rev() {
            let mut sum = y[i];
            for k in (i + 1)..n {
                sum -= l[k * n + i] * inv[k * n + col];
            }
            inv[i * n + col] = sum / l[i * n + i];
        }
    }
    // Symmetrize against rounding drift.
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (inv[i * n + j] + inv[j * n + i]);
            inv[i * n + j] = m;
            inv[j * n + i] = m;
        }
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_shape_check() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 3]);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn cholesky_identity() {
        let eye = vec![1.0, 0.0, 0.0, 1.0];
        let l = cholesky(&eye, 2).unwrap();
        assert_eq!(l, vec![1.0, 0.0, 0.0, 1.0]);
        let inv = spd_inverse_from_cholesky(&l, 2);
        assert_eq!(inv, eye);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = vec![1.0, 2.0, 2.0, 1.0];
        assert!(cholesky(&a, 2).is_none());
    }

    #[test]
    fn spd_inverse_roundtrip() {
        // A = [[4,1],[1,3]]
        let a = vec![4.0, 1.0, 1.0, 3.0];
        let l = cholesky(&a, 2).unwrap();
        let inv = spd_inverse_from_cholesky(&l, 2);
        // A * inv should be the identity.
        for i in 0..2 {
            for j in 0..2 {
                let mut s = 0.0;
                for k in 0..2 {
                    s += a[i * 2 + k] * inv[k * 2 + j];
                }
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((s - want).abs() < 1e-12);
            }
        }
    }
}
