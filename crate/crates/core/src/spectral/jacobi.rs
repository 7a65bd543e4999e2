use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAX_SWEEPS: usize = 100;

/// Eigenpairs of a symmetric matrix by cyclic Jacobi rotations.
///
/// `a` is `n x n` row-major and is consumed. Returns the eigenvalues (in
/// diagonal order, unsorted) and the eigenvectors as the columns of an
/// `n x n` row-major matrix. Converges when the off-diagonal Frobenius norm
/// drops below `T::EIG_TOL` times the norm of the input.
pub fn symmetric_eigen<T: Scalar>(mut a: Vec<T>, n: usize) -> Result<(Vec<T>, Vec<T>)> {
    assert_eq!(a.len(), n * n);
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let scale = a.iter().map(|&x| x * x).sum::<T>().sqrt();
    if scale == T::zero() {
        return Ok((vec![T::zero(); n], v));
    }
    let threshold = T::EIG_TOL * scale;
    let two = T::lit(2.0);

    for _ in 0..MAX_SWEEPS {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += two * a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() <= threshold {
            let eig = (0..n).map(|i| a[i * n + i]).collect();
            return Ok((eig, v));
        }

        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;

                // A <- J^T A J, touching rows/cols p and q only.
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
                a[p * n + q] = T::zero();
                a[q * n + p] = T::zero();

                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    Err(Error::Numeric(format!(
        "Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps (n = {n})"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(a: &[f64], n: usize, eig: &[f64], v: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                let av: f64 = (0..n).map(|k| a[i * n + k] * v[k * n + j]).sum();
                worst = worst.max((av - eig[j] * v[i * n + j]).abs());
            }
        }
        worst
    }

    #[test]
    fn two_by_two_closed_form() {
        let a = vec![2.0, 1.0, 1.0, 1.0];
        let (mut eig, _) = symmetric_eigen(a, 2).unwrap();
        eig.sort_by(|x, y| y.partial_cmp(x).unwrap());
        let s5 = 5.0f64.sqrt();
        assert!((eig[0] - (3.0 + s5) / 2.0).abs() < 1e-14);
        assert!((eig[1] - (3.0 - s5) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn random_symmetric_residual() {
        let n = 7;
        let mut a = vec![0.0; n * n];
        let mut x = 0.3f64;
        for i in 0..n {
            for j in i..n {
                x = (x * 3.7 + 0.11).fract();
                a[i * n + j] = x - 0.5;
                a[j * n + i] = x - 0.5;
            }
        }
        let (eig, v) = symmetric_eigen(a.clone(), n).unwrap();
        assert!(residual(&a, n, &eig, &v) < 1e-12);
        for i in 0..n {
            for j in 0..n {
                let d: f64 = (0..n).map(|k| v[k * n + i] * v[k * n + j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn zero_matrix() {
        let (eig, v) = symmetric_eigen(vec![0.0f64; 9], 3).unwrap();
        assert_eq!(eig, vec![0.0; 3]);
        assert_eq!(v[0], 1.0);
    }
}
