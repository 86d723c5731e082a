use crate::error::{Error, Result};
use crate::numkit::rng::Rng;
use crate::numkit::Tensor;

const MAX_ITERATIONS: usize = 200;
const REL_TOLERANCE: f64 = 1e-9;
// Fixed seed for the start vector so extraction is a pure function of X.
const START_SEED: u64 = 0x05EE_D0FD_u64;

/// Dominant singular triple (s1, u1, v1) of a rank-2 tensor.
///
/// Power iteration runs on the smaller Gram matrix (X^T X or X X^T) with a
/// fixed iteration cap and a relative-change stopping rule. Ties in the
/// spectrum are accepted: the returned triple satisfies the residual bound
/// ||X v1 - s1 u1|| <= tol * ||X||_F without a uniqueness claim. An all-zero
/// matrix yields s1 = 0 with arbitrary unit vectors.
pub fn top_singular_triple(x: &Tensor) -> Result<(f32, Tensor, Tensor)> {
    x.expect_rank(2, "top_singular_triple")?;
    let (r, c) = (x.rows(), x.cols());
    if r == 0 || c == 0 {
        return Err(Error::EmptyInput("top_singular_triple"));
    }
    if !x.all_finite() {
        return Err(Error::NonFinite("top_singular_triple"));
    }

    let frob_sq: f64 = x.data().iter().map(|&v| (v as f64) * (v as f64)).sum();
    if frob_sq == 0.0 {
        let mut u = vec![0.0f32; r];
        let mut v = vec![0.0f32; c];
        u[0] = 1.0;
        v[0] = 1.0;
        return Ok((0.0, Tensor::new(vec![r], u)?, Tensor::new(vec![c], v)?));
    }

    // Iterate on the smaller side; recover the other factor from X.
    let iterate_right = c <= r;
    let dim = if iterate_right { c } else { r };

    let mut rng = Rng::new(START_SEED);
    let mut vec_cur: Vec<f64> = (0..dim).map(|_| rng.next_gaussian()).collect();
    normalize(&mut vec_cur);

    let mut eigen_prev = f64::INFINITY;
    let mut buf = vec![0.0f64; dim];
    for _ in 0..MAX_ITERATIONS {
        gram_apply(x, &vec_cur, &mut buf, iterate_right);
        let eigen = dot(&vec_cur, &buf);
        let norm = normalize(&mut buf);
        if norm == 0.0 {
            // Start vector fell in the null space; restart from a fresh draw.
            for v in vec_cur.iter_mut() {
                *v = rng.next_gaussian();
            }
            normalize(&mut vec_cur);
            eigen_prev = f64::INFINITY;
            continue;
        }
        std::mem::swap(&mut vec_cur, &mut buf);
        if (eigen - eigen_prev).abs() <= REL_TOLERANCE * eigen.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        eigen_prev = eigen;
    }

    // Map the converged Gram eigenvector back to a right-singular vector,
    // then derive u and s1 from it so ||X v - s1 u|| vanishes by
    // construction even for tied or slowly separating spectra.
    let v: Vec<f64> = if iterate_right {
        vec_cur
    } else {
        let mut xtu = vec![0.0f64; c];
        apply(x, &vec_cur, &mut xtu, true);
        if normalize(&mut xtu) == 0.0 {
            let mut u = vec![0.0f32; r];
            u[0] = 1.0;
            return Ok((
                0.0,
                Tensor::new(vec![r], u)?,
                Tensor::new(vec![c], unit_vec(c))?,
            ));
        }
        xtu
    };
    let mut xv = vec![0.0f64; r];
    apply(x, &v, &mut xv, false);
    let s1 = norm_of(&xv);
    let u: Vec<f32> = if s1 > 0.0 {
        xv.iter().map(|&e| (e / s1) as f32).collect()
    } else {
        unit_vec(r)
    };

    Ok((
        s1 as f32,
        Tensor::new(vec![r], u)?,
        Tensor::new(vec![c], v.iter().map(|&e| e as f32).collect())?,
    ))
}

fn unit_vec(n: usize) -> Vec<f32> {
    let mut v = vec![0.0f32; n];
    v[0] = 1.0;
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_of(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = norm_of(v);
    if n > 0.0 {
        for e in v.iter_mut() {
            *e /= n;
        }
    }
    n
}

/// out = X v (transpose = false) or X^T v (transpose = true).
fn apply(x: &Tensor, v: &[f64], out: &mut [f64], transpose: bool) {
    let (r, c) = (x.rows(), x.cols());
    if !transpose {
        for (i, o) in out.iter_mut().enumerate().take(r) {
            let row = x.row(i);
            let mut acc = 0.0;
            for j in 0..c {
                acc += row[j] as f64 * v[j];
            }
            *o = acc;
        }
    } else {
        for o in out.iter_mut() {
            *o = 0.0;
        }
        for i in 0..r {
            let row = x.row(i);
            let vi = v[i];
            for j in 0..c {
                out[j] += row[j] as f64 * vi;
            }
        }
    }
}

/// out = (X^T X) v when `right`, else (X X^T) v, without forming the Gram matrix.
fn gram_apply(x: &Tensor, v: &[f64], out: &mut [f64], right: bool) {
    let (r, c) = (x.rows(), x.cols());
    if right {
        let mut tmp = vec![0.0f64; r];
        apply(x, v, &mut tmp, false);
        for o in out.iter_mut() {
            *o = 0.0;
        }
        for i in 0..r {
            let row = x.row(i);
            let ti = tmp[i];
            for j in 0..c {
                out[j] += row[j] as f64 * ti;
            }
        }
    } else {
        let mut tmp = vec![0.0f64; c];
        apply(x, v, &mut tmp, true);
        for (i, o) in out.iter_mut().enumerate().take(r) {
            let row = x.row(i);
            let mut acc = 0.0;
            for j in 0..c {
                acc += row[j] as f64 * tmp[j];
            }
            *o = acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outer(scale: f32, u: &[f32], v: &[f32]) -> Tensor {
        let mut data = Vec::with_capacity(u.len() * v.len());
        for &a in u {
            for &b in v {
                data.push(scale * a * b);
            }
        }
        Tensor::new(vec![u.len(), v.len()], data).unwrap()
    }

    #[test]
    fn rank_one_input_recovers_factors() {
        let u = [0.6f32, 0.8, 0.0];
        let v = [0.0f32, 1.0];
        let x = outer(5.0, &u, &v);
        let (s1, u1, v1) = top_singular_triple(&x).unwrap();
        assert!((s1 - 5.0).abs() < 1e-4, "s1 = {s1}");
        let du: f32 = u1.data().iter().zip(&u).map(|(a, b)| a * b).sum();
        let dv: f32 = v1.data().iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!((du.abs() - 1.0).abs() < 1e-4);
        assert!((dv.abs() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn identity_has_unit_singular_value() {
        let x = Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let (s1, u1, v1) = top_singular_triple(&x).unwrap();
        assert!((s1 - 1.0).abs() < 1e-5);
        let un: f32 = u1.data().iter().map(|a| a * a).sum();
        let vn: f32 = v1.data().iter().map(|a| a * a).sum();
        assert!((un - 1.0).abs() < 1e-5);
        assert!((vn - 1.0).abs() < 1e-5);
    }

    #[test]
    fn zero_matrix_returns_zero_with_unit_vectors() {
        let x = Tensor::zeros(vec![2, 4]);
        let (s1, u1, v1) = top_singular_triple(&x).unwrap();
        assert_eq!(s1, 0.0);
        assert_eq!(u1.data()[0], 1.0);
        assert_eq!(v1.data()[0], 1.0);
    }

    #[test]
    fn empty_matrix_is_rejected() {
        assert!(top_singular_triple(&Tensor::zeros(vec![0, 3])).is_err());
    }
}
