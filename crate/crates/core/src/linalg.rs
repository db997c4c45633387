//! Small dense helpers on top of `nalgebra`.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::jet::Real;
use crate::Error;

/// Row-major slice to matrix.
pub fn mat(n: usize, m: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, m, data)
}

/// Matrix to row-major vector.
pub fn rows(a: &DMatrix<f64>) -> Vec<f64> {
    a.transpose().iter().copied().collect()
}

/// Inverse of a square row-major matrix over any [`Real`], by Gauss-Jordan
/// with partial pivoting on the values.
pub fn invert<T: Real>(n: usize, a: &[T]) -> Result<Vec<T>, Error> {
    let mut m: Vec<T> = a.to_vec();
    let mut inv: Vec<T> = (0..n * n)
        .map(|k| T::cst(if k / n == k % n { 1.0 } else { 0.0 }))
        .collect();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| {
                m[i * n + c].value().abs().partial_cmp(&m[j * n + c].value().abs()).unwrap()
            })
            .unwrap();
        if m[p * n + c].value() == 0.0 {
            return Err(Error::Degenerate("singular matrix".into()));
        }
        if p != c {
            for k in 0..n {
                m.swap(p * n + k, c * n + k);
                inv.swap(p * n + k, c * n + k);
            }
        }
        let piv = m[c * n + c];
        for k in 0..n {
            m[c * n + k] = m[c * n + k] / piv;
            inv[c * n + k] = inv[c * n + k] / piv;
        }
        for i in 0..n {
            if i == c {
                continue;
            }
            let f = m[i * n + c];
            if f.is_zero() {
                continue;
            }
            for k in 0..n {
                m[i * n + k] = m[i * n + k] - f * m[c * n + k];
                inv[i * n + k] = inv[i * n + k] - f * inv[c * n + k];
            }
        }
    }
    Ok(inv)
}

/// Row-major product of `n×k` and `k×m` matrices over any [`Real`].
pub fn matmul<T: Real>(n: usize, k: usize, m: usize, a: &[T], b: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            let mut s = T::cst(0.0);
            for l in 0..k {
                if a[i * k + l].is_zero() || b[l * m + j].is_zero() {
                    continue;
                }
                s = s + a[i * k + l] * b[l * m + j];
            }
            out.push(s);
        }
    }
    out
}

/// Eigenvalues (ascending) and eigenvectors of a symmetric matrix.
pub fn sym_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let s = nalgebra::SymmetricEigen::new(a.clone());
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s.eigenvalues[i].partial_cmp(&s.eigenvalues[j]).unwrap());
    let vals = order.iter().map(|&i| s.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| s.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Eigen-decomposition of an endomorphism `a` that is self-adjoint for the
/// inner product `g`. Eigenvectors are returned `g`-orthonormal.
pub fn self_adjoint_eigen(g: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>), Error> {
    let l = g
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("eigen problem".into()))?
        .unpack();
    let lt = l.transpose();
    let ltinv = lt.clone().try_inverse().ok_or_else(|| Error::Degenerate("eigen problem".into()))?;
    let m = &lt * a * &ltinv;
    let sym = (&m + m.transpose()) * 0.5;
    let (vals, vecs) = sym_eigen(&sym);
    Ok((vals, ltinv * vecs))
}

/// `g`-norm of a vector.
pub fn norm_vec(g: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    libm::sqrt((v.transpose() * g * v)[(0, 0)].max(0.0))
}

/// `g`-norm of a covector.
pub fn norm_cov(ginv: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    libm::sqrt((w.transpose() * ginv * w)[(0, 0)].max(0.0))
}

/// `g`-norm of an endomorphism `a` (components `a[i][j] = a^i_j`).
pub fn norm_endo(g: &DMatrix<f64>, ginv: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    libm::sqrt((a.transpose() * g * a * ginv).trace().max(0.0))
}

/// `g`-norm of a covariant 2-tensor.
pub fn norm_bilinear(ginv: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    libm::sqrt((ginv * b * ginv * b.transpose()).trace().max(0.0))
}

/// Modified Gram-Schmidt of `seeds` against an inner product, starting from
/// already-orthonormal `fixed` vectors. Seeds whose remainder falls below
/// `tol` are skipped. Stops after `want` new vectors.
pub fn gram_schmidt(
    ip: &DMatrix<f64>,
    fixed: &[DVector<f64>],
    seeds: &[DVector<f64>],
    want: usize,
    tol: f64,
) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = fixed.to_vec();
    let mut out = Vec::new();
    for s in seeds {
        if out.len() == want {
            break;
        }
        let mut v = s.clone();
        let n0 = norm_vec(ip, &v);
        for b in &basis {
            let c = (b.transpose() * ip * &v)[(0, 0)];
            v -= b * c;
        }
        let nv = norm_vec(ip, &v);
        if nv <= tol * n0.max(1e-300) {
            continue;
        }
        v /= nv;
        basis.push(v.clone());
        out.push(v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::Dual;

    #[test]
    fn invert_keeps_derivatives_of_zero_entries() {
        // [[1, t], [0, 1]]⁻¹ = [[1, −t], [0, 1]] at t = 0, so d/dt of entry 01 is −1
        let t = Dual::<1>::var(0.0, 0);
        let one = Dual::<1>::cst(1.0);
        let zero = Dual::<1>::cst(0.0);
        let inv = invert(2, &[one, t, zero, one]).unwrap();
        assert_eq!(inv[1].g[0], -1.0);
    }

    #[test]
    fn invert_round_trip() {
        let a = [2.0, 1.0, 0.5, 0.0, 3.0, -1.0, 1.0, 0.0, 4.0];
        let inv = invert(3, &a).unwrap();
        let p = matmul(3, 3, 3, &a, &inv);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((p[i * 3 + j] - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn self_adjoint_eigenvalues() {
        let g = mat(2, 2, &[2.0, 0.0, 0.0, 8.0]);
        let a = mat(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        let (vals, vecs) = self_adjoint_eigen(&g, &a).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-14 && (vals[1] - 3.0).abs() < 1e-14);
        let gram = vecs.transpose() * &g * &vecs;
        assert!((gram - DMatrix::identity(2, 2)).norm() < 1e-14);
    }
}
