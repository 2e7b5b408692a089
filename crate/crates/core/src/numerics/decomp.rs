//! Factorizations: Householder QR, QR-based least squares, cyclic Jacobi
//! symmetric eigensolver, and the truncated Gaussian second moment.

use super::{dot, Matrix};
use crate::error::{Error, Result};

/// Relative singular-value floor below which a matrix counts as rank
/// deficient for QR purposes.
const RANK_TOL: f64 = 1e-12;

/// Singular values of `m` via the Jacobi eigensolver on the smaller Gram
/// matrix, sorted descending. Used for rank preconditions; the matrices
/// involved are r x r with small r, so this is cheap.
pub(crate) fn singular_values(m: &Matrix) -> Vec<f64> {
    let gram = if m.rows() >= m.cols() { m.t_mul(m) } else { m.mul(&m.transpose()) };
    let (eigs, _) = jacobi_eig(&gram);
    eigs.into_iter().map(|l| l.max(0.0).sqrt()).collect()
}

/// Thin QR factorization `m = q * r` with `q` n x r orthonormal and `r`
/// upper triangular with strictly positive diagonal (the sign convention
/// makes the factorization unique, so every node computes the same basis).
///
/// Fails with `RankDeficient` when `sigma_min(m) <= 1e-12 * sigma_max(m)`.
pub fn thin_qr(m: &Matrix) -> Result<(Matrix, Matrix)> {
    let (n, r) = (m.rows(), m.cols());
    if n < r {
        return Err(Error::RankDeficient);
    }
    let sv = singular_values(m);
    let smax = sv[0];
    let smin = sv[sv.len() - 1];
    if smax <= 0.0 || smin <= RANK_TOL * smax {
        return Err(Error::RankDeficient);
    }

    // Householder reflectors stored column by column.
    let mut work = m.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(r);
    for j in 0..r {
        let mut v: Vec<f64> = (j..n).map(|i| work.get(i, j)).collect();
        let alpha = super::vec_norm(&v);
        // Reflect onto -sign(v0) * alpha * e1 for stability.
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vnorm = super::vec_norm(&v);
        if vnorm > 0.0 {
            for x in v.iter_mut() {
                *x /= vnorm;
            }
            apply_reflector_left(&mut work, &v, j, j);
        }
        reflectors.push(v);
    }

    let mut rfac = Matrix::zeros(r, r);
    for i in 0..r {
        for j in i..r {
            rfac.set(i, j, work.get(i, j));
        }
    }

    // Thin Q: apply the reflectors in reverse order to the first r columns
    // of the identity.
    let mut q = Matrix::zeros(n, r);
    for j in 0..r {
        q.set(j, j, 1.0);
    }
    for (j, v) in reflectors.iter().enumerate().rev() {
        if super::vec_norm(v) > 0.0 {
            apply_reflector_left(&mut q, v, j, 0);
        }
    }

    // Sign fix: force diag(R) > 0.
    for j in 0..r {
        if rfac.get(j, j) < 0.0 {
            for c in 0..r {
                let x = rfac.get(j, c);
                rfac.set(j, c, -x);
            }
            for i in 0..n {
                let x = q.get(i, j);
                q.set(i, j, -x);
            }
        }
    }
    Ok((q, rfac))
}

/// Apply `(I - 2vvᵀ)` to rows `row0..` of columns `col0..` of `m`, where
/// `v` is a unit vector over rows `row0..`.
fn apply_reflector_left(m: &mut Matrix, v: &[f64], row0: usize, col0: usize) {
    let n = m.rows();
    let cols = m.cols();
    for j in col0..cols {
        let mut s = 0.0;
        for i in row0..n {
            s += v[i - row0] * m.get(i, j);
        }
        let s2 = 2.0 * s;
        for i in row0..n {
            let x = m.get(i, j) - s2 * v[i - row0];
            m.set(i, j, x);
        }
    }
}

/// Minimum-residual solution of `a * b = y` (`a` is m x r, m >= r) via
/// Householder QR of `a`.
///
/// Fails with `SingularSystem` when the smallest eigenvalue of `aᵀa` is
/// not larger than `1e-12` times the largest.
pub fn least_squares(a: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    let (m, r) = (a.rows(), a.cols());
    if m < r {
        return Err(Error::SingularSystem { column: None });
    }
    if y.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "rhs length {} does not match {} rows",
            y.len(),
            m
        )));
    }
    let gram = a.t_mul(a);
    let (eigs, _) = jacobi_eig(&gram);
    let lmax = eigs[0].max(0.0);
    let lmin = eigs[r - 1];
    if lmax <= 0.0 || lmin <= RANK_TOL * lmax {
        return Err(Error::SingularSystem { column: None });
    }

    // Factor a copy of `a` and apply the reflectors to `y` as we go.
    let mut work = a.clone();
    let mut rhs = y.to_vec();
    for j in 0..r {
        let mut v: Vec<f64> = (j..m).map(|i| work.get(i, j)).collect();
        let alpha = super::vec_norm(&v);
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vnorm = super::vec_norm(&v);
        if vnorm == 0.0 {
            continue;
        }
        for x in v.iter_mut() {
            *x /= vnorm;
        }
        apply_reflector_left(&mut work, &v, j, j);
        let mut s = 0.0;
        for i in j..m {
            s += v[i - j] * rhs[i];
        }
        let s2 = 2.0 * s;
        for i in j..m {
            rhs[i] -= s2 * v[i - j];
        }
    }
    // Back-substitute R b = (Qᵀ y)[0..r].
    let mut b = vec![0.0; r];
    for i in (0..r).rev() {
        let mut s = rhs[i];
        for j in i + 1..r {
            s -= work.get(i, j) * b[j];
        }
        b[i] = s / work.get(i, i);
    }
    Ok(b)
}

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
///
/// Returns eigenvalues sorted descending and the matching eigenvectors as
/// the columns of the second output. The off-diagonal Frobenius mass is
/// driven below `1e-12 * ||s||_F` (at most 100 sweeps).
pub fn sym_eig(s: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if s.rows() != s.cols() {
        return Err(Error::ShapeMismatch(format!("{}x{} is not square", s.rows(), s.cols())));
    }
    let norm = s.frobenius_norm();
    let mut asym = 0.0;
    for i in 0..s.rows() {
        for j in 0..s.cols() {
            let d = s.get(i, j) - s.get(j, i);
            asym += d * d;
        }
    }
    if asym.sqrt() > 1e-10 * norm.max(f64::MIN_POSITIVE) && norm > 0.0 {
        return Err(Error::NotSymmetric);
    }
    Ok(jacobi_eig(s))
}

/// Cyclic Jacobi on a (assumed symmetric) matrix. Always succeeds; the
/// symmetry check lives in `sym_eig`.
fn jacobi_eig(s: &Matrix) -> (Vec<f64>, Matrix) {
    let n = s.rows();
    let mut a = s.clone();
    // Symmetrize exactly so rounding asymmetry cannot accumulate.
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (a.get(i, j) + a.get(j, i));
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
    let mut v = Matrix::identity(n);
    let norm = a.frobenius_norm();
    let threshold = 1e-12 * norm;
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += 2.0 * a.get(i, j) * a.get(i, j);
            }
        }
        if off.sqrt() <= threshold {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                // tan of the rotation angle, smaller root for stability
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s_ = t * c;
                let tau = s_ / (1.0 + c);

                a.set(p, p, app - t * apq);
                a.set(q, q, aqq + t * apq);
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for k in 0..n {
                    if k != p && k != q {
                        let akp = a.get(k, p);
                        let akq = a.get(k, q);
                        let new_kp = akp - s_ * (akq + tau * akp);
                        let new_kq = akq + s_ * (akp - tau * akq);
                        a.set(k, p, new_kp);
                        a.set(p, k, new_kp);
                        a.set(k, q, new_kq);
                        a.set(q, k, new_kq);
                    }
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, vkp - s_ * (vkq + tau * vkp));
                    v.set(k, q, vkq + s_ * (vkp - tau * vkq));
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).partial_cmp(&a.get(i, i)).unwrap());
    let eigs: Vec<f64> = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vecs = Matrix::zeros(n, n);
    for (newj, &oldj) in order.iter().enumerate() {
        for i in 0..n {
            vecs.set(i, newj, v.get(i, oldj));
        }
    }
    (eigs, vecs)
}

/// Operator (spectral) norm of `m`: the square root of the largest
/// eigenvalue of the smaller Gram matrix, computed with `sym_eig`.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.rows() == 0 || m.cols() == 0 {
        return 0.0;
    }
    singular_values(m)[0]
}

/// `E[zeta^2 * 1{|zeta| <= c}]` for standard Gaussian `zeta`, via the
/// closed form `(2 Phi(c) - 1) - 2 c phi(c)`.
pub fn truncated_gauss_second_moment(c: f64) -> f64 {
    assert!(c >= 0.0, "threshold must be nonnegative");
    let phi = (-0.5 * c * c).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let v = erf(c / std::f64::consts::SQRT_2) - 2.0 * c * phi;
    v.clamp(0.0, 1.0)
}

/// Error function accurate to ~1e-14 absolute: positive Maclaurin-type
/// series for |x| < 6 (no cancellation), saturation beyond (erfc < 1e-16).
fn erf(x: f64) -> f64 {
    if x < 0.0 {
        return -erf(-x);
    }
    if x >= 6.0 {
        return 1.0;
    }
    // erf(x) = 2x e^{-x^2}/sqrt(pi) * sum_n (2x^2)^n / (2n+1)!!
    let x2 = 2.0 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut n = 0u32;
    loop {
        n += 1;
        term *= x2 / (2.0 * f64::from(n) + 1.0);
        sum += term;
        if term < sum * 1e-18 || n > 400 {
            break;
        }
    }
    let front = 2.0 * x * (-x * x).exp() / std::f64::consts::PI.sqrt();
    (front * sum).min(1.0)
}
