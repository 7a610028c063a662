//! Small dense linear-algebra helpers on top of nalgebra.
//!
//! Everything here works on `DMatrix<f64>`. Symmetric eigendecompositions are
//! returned sorted in descending order with sign-canonicalized eigenvectors so
//! that repeated runs produce identical bases.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SdrError};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Largest condition number accepted before inverting a sample covariance.
pub const COND_LIMIT: f64 = 1e12;

/// Flip column signs so the largest-magnitude entry of each column is positive.
pub fn canonicalize_signs(mut m: Mat) -> Mat {
    for mut col in m.column_iter_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &v in col.iter() {
            // strict comparison keeps the first maximal entry
            if v.abs() > best + 1e-14 {
                best = v.abs();
                sign = v.signum();
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
    }
    m
}

pub fn symmetrize(a: &Mat) -> Mat {
    (a + a.transpose()) * 0.5
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending.
pub fn sym_eigen_desc(a: &Mat) -> (Vector, Mat) {
    let n = a.nrows();
    let eig = symmetrize(a).symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals = Vector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = Mat::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, canonicalize_signs(vecs))
}

/// Apply `f` to the spectrum of a symmetric matrix.
pub fn sym_apply(a: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    let (vals, vecs) = sym_eigen_desc(a);
    let d = Vector::from_iterator(vals.len(), vals.iter().map(|&l| f(l)));
    &vecs * Mat::from_diagonal(&d) * vecs.transpose()
}

pub fn cond_sym(a: &Mat) -> f64 {
    let (vals, _) = sym_eigen_desc(a);
    let hi = vals[0];
    let lo = vals[vals.len() - 1];
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Guard used before inverting a sample covariance.
pub fn check_conditioning(a: &Mat, what: &str) -> Result<()> {
    let c = cond_sym(a);
    if !(c < COND_LIMIT) {
        return Err(SdrError::ill(format!(
            "{what} is numerically singular (condition number {c:.3e})"
        )));
    }
    Ok(())
}

/// Symmetric square root of a PSD matrix; tiny negative eigenvalues are clipped.
pub fn sym_sqrt(a: &Mat) -> Mat {
    sym_apply(a, |l| l.max(0.0).sqrt())
}

/// Inverse symmetric square root of a PD matrix.
pub fn sym_inv_sqrt(a: &Mat) -> Result<Mat> {
    check_conditioning(a, "matrix")?;
    Ok(sym_apply(a, |l| 1.0 / l.sqrt()))
}

/// Moore–Penrose inverse of a symmetric PSD matrix, cutoff 1e-10·λ_max.
pub fn pinv_sym(a: &Mat) -> Mat {
    let (vals, vecs) = sym_eigen_desc(a);
    let cut = 1e-10 * vals[0].max(0.0);
    let d = Vector::from_iterator(
        vals.len(),
        vals.iter().map(|&l| if l > cut && l > 0.0 { 1.0 / l } else { 0.0 }),
    );
    &vecs * Mat::from_diagonal(&d) * vecs.transpose()
}

/// Inverse and log-determinant of a symmetric PD matrix via Cholesky.
pub fn spd_inv_logdet(a: &Mat) -> Result<(Mat, f64)> {
    let chol = symmetrize(a)
        .cholesky()
        .ok_or_else(|| SdrError::domain("matrix is not positive definite"))?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok((chol.inverse(), logdet))
}

pub fn spd_inverse(a: &Mat) -> Result<Mat> {
    spd_inv_logdet(a).map(|(inv, _)| inv)
}

/// Orthonormal basis of the column span (thin QR, canonical signs).
pub fn orthonormalize(b: &Mat) -> Mat {
    let q = b.clone().qr().q();
    canonicalize_signs(q.columns(0, b.ncols()).into_owned())
}

/// Orthogonal projector P(B) = B(BᵀB)⁻¹Bᵀ.
pub fn projector(b: &Mat) -> Result<Mat> {
    let btb = b.transpose() * b;
    let inv = spd_inverse(&btb)
        .map_err(|_| SdrError::domain("projector basis is rank deficient"))?;
    Ok(b * inv * b.transpose())
}

/// Sample covariance n⁻¹ Σ (a_j − ā)(b_j − b̄)ᵀ for row-observation matrices.
pub fn cross_cov(a: &Mat, b: &Mat) -> Mat {
    let n = a.nrows() as f64;
    let ac = center_columns(a);
    let bc = center_columns(b);
    ac.transpose() * bc / n
}

pub fn center_columns(a: &Mat) -> Mat {
    let mut out = a.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}

/// Frobenius inner product ⟨A, B⟩ = tr(AᵀB).
pub fn frob_dot(a: &Mat, b: &Mat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// `log Σ exp(x)` computed with max shifting.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd3() -> Mat {
        Mat::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0])
    }

    #[test]
    fn eigen_sorted_and_reconstructs() {
        let a = spd3();
        let (vals, vecs) = sym_eigen_desc(&a);
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        let back = &vecs * Mat::from_diagonal(&vals) * vecs.transpose();
        assert!((back - a).abs().max() < 1e-12);
    }

    #[test]
    fn sqrt_and_inverse_sqrt() {
        let a = spd3();
        let s = sym_sqrt(&a);
        assert!((&s * &s - &a).abs().max() < 1e-12);
        let is = sym_inv_sqrt(&a).unwrap();
        assert!((&is * &a * &is - Mat::identity(3, 3)).abs().max() < 1e-12);
    }

    #[test]
    fn pinv_of_rank_deficient() {
        let u = Mat::from_column_slice(3, 1, &[1.0, 2.0, 2.0]) / 3.0;
        let a = &u * u.transpose() * 5.0;
        let p = pinv_sym(&a);
        assert!((&a * &p * &a - &a).abs().max() < 1e-12);
        assert!((&p * &a * &p - &p).abs().max() < 1e-12);
    }

    #[test]
    fn logdet_matches_eigenvalues() {
        let a = spd3();
        let (_, ld) = spd_inv_logdet(&a).unwrap();
        let (vals, _) = sym_eigen_desc(&a);
        let want: f64 = vals.iter().map(|v| v.ln()).sum();
        assert!((ld - want).abs() < 1e-12);
    }

    #[test]
    fn projector_is_idempotent() {
        let b = Mat::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 2.0]);
        let p = projector(&b).unwrap();
        assert!((&p * &p - &p).abs().max() < 1e-12);
        assert!((p.trace() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn canonical_signs() {
        let m = Mat::from_row_slice(2, 2, &[0.1, -3.0, -0.9, 1.0]);
        let c = canonicalize_signs(m);
        assert!(c[(1, 0)] > 0.0 && c[(0, 1)] > 0.0);
    }

    #[test]
    fn lse_shift() {
        let x = [1000.0, 1000.0];
        assert!((log_sum_exp(&x) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
