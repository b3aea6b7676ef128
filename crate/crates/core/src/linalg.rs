//! Small dense kernels: Householder QR, triangular solves, Cholesky.
//!
//! The QR here is written out by hand rather than taken from nalgebra so that
//! negating any subset of rows of the input yields bit-identical solutions:
//! every reflector inherits the row signs exactly, and every inner product
//! pairs two values that flip together.

use nalgebra::{DMatrix, DVector};

use crate::error::{MrError, Result};

/// Result of reducing `[A | b]` with Householder reflections.
#[derive(Debug, Clone)]
pub struct QrReduction {
    /// Upper-triangular `p x p` factor.
    pub r: DMatrix<f64>,
    /// `Q^T b`, length `n`. The tail past `p` holds the residual components.
    pub qtb: DVector<f64>,
}

/// Householder QR of an `n x p` matrix (`n >= p`) applied jointly to `b`.
pub fn householder_qr(mut a: DMatrix<f64>, mut b: DVector<f64>) -> QrReduction {
    let (n, p) = a.shape();
    assert!(n >= p, "householder_qr needs at least as many rows as columns");
    assert_eq!(b.len(), n);
    let mut v = vec![0.0; n];
    for k in 0..p {
        let mut norm_sq = 0.0;
        for i in k..n {
            norm_sq += a[(i, k)] * a[(i, k)];
        }
        let norm = norm_sq.sqrt();
        if norm == 0.0 {
            continue;
        }
        let pivot = a[(k, k)];
        let alpha = if pivot >= 0.0 { -norm } else { norm };
        v[k] = pivot - alpha;
        for i in k + 1..n {
            v[i] = a[(i, k)];
        }
        let mut v_norm_sq = 0.0;
        for vi in &v[k..n] {
            v_norm_sq += vi * vi;
        }
        if v_norm_sq == 0.0 {
            continue;
        }
        a[(k, k)] = alpha;
        for i in k + 1..n {
            a[(i, k)] = 0.0;
        }
        for j in k + 1..p {
            let mut s = 0.0;
            for i in k..n {
                s += v[i] * a[(i, j)];
            }
            let f = 2.0 * s / v_norm_sq;
            for i in k..n {
                a[(i, j)] -= f * v[i];
            }
        }
        let mut s = 0.0;
        for i in k..n {
            s += v[i] * b[i];
        }
        let f = 2.0 * s / v_norm_sq;
        for i in k..n {
            b[i] -= f * v[i];
        }
    }
    let r = DMatrix::from_fn(p, p, |i, j| if i <= j { a[(i, j)] } else { 0.0 });
    QrReduction { r, qtb: b }
}

/// Solves `R x = b` for upper-triangular `R`.
pub fn solve_upper(r: &DMatrix<f64>, b: &[f64]) -> DVector<f64> {
    let p = r.nrows();
    let mut x = DVector::zeros(p);
    for i in (0..p).rev() {
        let mut s = b[i];
        for k in i + 1..p {
            s -= r[(i, k)] * x[k];
        }
        x[i] = s / r[(i, i)];
    }
    x
}

/// `R^{-1}` for upper-triangular `R`, column by column.
pub fn upper_inverse(r: &DMatrix<f64>) -> DMatrix<f64> {
    let p = r.nrows();
    let mut inv = DMatrix::zeros(p, p);
    let mut e = vec![0.0; p];
    for j in 0..p {
        e.iter_mut().for_each(|x| *x = 0.0);
        e[j] = 1.0;
        let col = solve_upper(r, &e);
        inv.set_column(j, &col);
    }
    inv
}

/// Singular values of a small square matrix, largest first.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    sv
}

/// How `cholesky` treats small or negative pivots.
#[derive(Debug, Clone, Copy)]
pub enum PivotPolicy {
    /// Fail unless every pivot exceeds `rel_tol` times the largest diagonal entry.
    PositiveDefinite { rel_tol: f64 },
    /// Accept pivots down to `-neg_tol`; anything at or below `neg_tol` is clamped to zero.
    Semidefinite { neg_tol: f64 },
}

/// Lower-triangular Cholesky factor `L` with `A = L L^T`.
pub fn cholesky(a: &DMatrix<f64>, policy: PivotPolicy) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(MrError::LengthMismatch(format!(
            "cholesky needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let mut d = a[(k, k)];
        for m in 0..k {
            d -= l[(k, m)] * l[(k, m)];
        }
        match policy {
            PivotPolicy::PositiveDefinite { rel_tol } => {
                if !(d > rel_tol * max_diag) {
                    return Err(MrError::NotPositiveDefinite { pivot: k, value: d });
                }
            }
            PivotPolicy::Semidefinite { neg_tol } => {
                if d < -neg_tol || d.is_nan() {
                    return Err(MrError::NotPositiveDefinite { pivot: k, value: d });
                }
                if d <= neg_tol {
                    // zero pivot: the column below carries nothing
                    continue;
                }
            }
        }
        let lkk = d.sqrt();
        l[(k, k)] = lkk;
        for i in k + 1..n {
            let mut s = a[(i, k)];
            for m in 0..k {
                s -= l[(i, m)] * l[(k, m)];
            }
            l[(i, k)] = s / lkk;
        }
    }
    Ok(l)
}

/// Solves `L X = B` for lower-triangular `L` with nonzero diagonal.
pub fn forward_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for c in 0..b.ncols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qr_solves_square_system() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![3.0, 5.0]);
        let red = householder_qr(a, b);
        let x = solve_upper(&red.r, red.qtb.as_slice());
        assert!((x[0] - 0.8).abs() < 1e-14);
        assert!((x[1] - 1.4).abs() < 1e-14);
    }

    #[test]
    fn qr_is_sign_equivariant_bitwise() {
        let a = DMatrix::from_row_slice(4, 2, &[0.3, -1.2, 0.7, 0.1, -0.4, 2.2, 1.9, 0.05]);
        let b = DVector::from_vec(vec![1.0, -0.3, 0.25, 0.8]);
        let mut a2 = a.clone();
        let mut b2 = b.clone();
        for &row in &[1usize, 2] {
            for j in 0..2 {
                a2[(row, j)] = -a2[(row, j)];
            }
            b2[row] = -b2[row];
        }
        let x1 = {
            let r = householder_qr(a, b);
            solve_upper(&r.r, r.qtb.as_slice())
        };
        let x2 = {
            let r = householder_qr(a2, b2);
            solve_upper(&r.r, r.qtb.as_slice())
        };
        assert_eq!(x1[0].to_bits(), x2[0].to_bits());
        assert_eq!(x1[1].to_bits(), x2[1].to_bits());
    }

    #[test]
    fn cholesky_policies() {
        let pd = DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0]);
        let l = cholesky(&pd, PivotPolicy::PositiveDefinite { rel_tol: 1e-12 }).unwrap();
        assert!(((&l * l.transpose()) - &pd).abs().max() < 1e-15);

        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(cholesky(&singular, PivotPolicy::PositiveDefinite { rel_tol: 1e-12 }).is_err());
        assert!(cholesky(&singular, PivotPolicy::Semidefinite { neg_tol: 1e-10 }).is_ok());

        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(cholesky(&indefinite, PivotPolicy::Semidefinite { neg_tol: 1e-10 }).is_err());
    }

    #[test]
    fn upper_inverse_is_inverse() {
        let r = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, -1.0, 0.0, 3.0, 0.5, 0.0, 0.0, 4.0]);
        let inv = upper_inverse(&r);
        let id = &r * &inv;
        assert!((id - DMatrix::identity(3, 3)).abs().max() < 1e-15);
    }
}
