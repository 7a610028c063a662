//! Geometry of the Grassmann manifold Gr(p, d).
//!
//! A point is stored as a p×d semi-orthogonal basis. Tangent vectors at `[U]`
//! are p×d matrices `V` with `UᵀV = 0`. The exponential map follows the
//! geodesic through `[U]` with initial velocity `V`; the logarithm inverts it
//! inside the injectivity radius (all principal angles below π/2).
//!
//! ```
//! use nalgebra::DMatrix;
//! use resdr::grassmann::{exp_map, log_map, riemann_distance, Subspace, TangentVector};
//!
//! let base = Subspace::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
//! let v = TangentVector::new(&base, DMatrix::from_column_slice(2, 1, &[0.0, 0.3])).unwrap();
//! let moved = exp_map(&base, &v).unwrap();
//! assert!((riemann_distance(&base, &moved).unwrap() - 0.3).abs() < 1e-12);
//! let back = log_map(&base, &moved).unwrap();
//! assert!((back.mat() - v.mat()).norm() < 1e-12);
//! ```

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Result, SdrError};
use crate::linalg::{canonicalize_signs, projector, sym_eigen_desc, Mat};

const ORTHO_TOL: f64 = 1e-10;
const TANGENT_TOL: f64 = 1e-8;

/// A d-dimensional linear subspace of ℝᵖ.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: Mat,
}

impl Subspace {
    /// Wrap an already semi-orthogonal basis.
    pub fn new(basis: Mat) -> Result<Self> {
        let (p, d) = basis.shape();
        if d == 0 || d >= p {
            return Err(SdrError::domain(format!("need 1 <= d < p, got p={p}, d={d}")));
        }
        let gram = basis.transpose() * &basis - Mat::identity(d, d);
        if gram.abs().max() > ORTHO_TOL {
            return Err(SdrError::domain("basis is not semi-orthogonal"));
        }
        Ok(Subspace { basis })
    }

    /// Span of the columns of an arbitrary full-column-rank matrix.
    pub fn from_span(a: &Mat) -> Result<Self> {
        let (p, d) = a.shape();
        if d == 0 || d >= p {
            return Err(SdrError::domain(format!("need 1 <= d < p, got p={p}, d={d}")));
        }
        let svd = a.clone().svd(true, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > 1e-12 * smax.max(1e-300)) {
            return Err(SdrError::domain("spanning matrix is rank deficient"));
        }
        let q = a.clone().qr().q().columns(0, d).into_owned();
        Self::new(canonicalize_signs(q))
    }

    pub fn basis(&self) -> &Mat {
        &self.basis
    }

    pub fn p(&self) -> usize {
        self.basis.nrows()
    }

    pub fn d(&self) -> usize {
        self.basis.ncols()
    }

    /// Orthogonal projector UUᵀ.
    pub fn projector(&self) -> Mat {
        &self.basis * self.basis.transpose()
    }

    /// Projector onto the orthogonal complement, I − UUᵀ.
    pub fn complement_projector(&self) -> Mat {
        Mat::identity(self.p(), self.p()) - self.projector()
    }

    /// Same subspace with basis `U·R` for an orthogonal `R`.
    pub fn rotated(&self, r: &Mat) -> Result<Self> {
        Self::new(&self.basis * r)
    }
}

/// A p×d matrix tangent to the Grassmannian at `base`.
#[derive(Debug, Clone)]
pub struct TangentVector {
    mat: Mat,
    base: Subspace,
}

impl TangentVector {
    pub fn new(base: &Subspace, mat: Mat) -> Result<Self> {
        if mat.shape() != base.basis.shape() {
            return Err(SdrError::domain("tangent matrix shape does not match base"));
        }
        let off = (base.basis.transpose() * &mat).abs().max();
        if off > TANGENT_TOL * (1.0 + mat.abs().max()) {
            return Err(SdrError::domain(format!(
                "matrix is not tangent at base (|UᵀV| = {off:.3e})"
            )));
        }
        Ok(TangentVector { mat, base: base.clone() })
    }

    pub fn zero(base: &Subspace) -> Self {
        TangentVector {
            mat: Mat::zeros(base.p(), base.d()),
            base: base.clone(),
        }
    }

    pub(crate) fn new_unchecked(base: &Subspace, mat: Mat) -> Self {
        TangentVector { mat, base: base.clone() }
    }

    pub fn mat(&self) -> &Mat {
        &self.mat
    }

    pub fn base(&self) -> &Subspace {
        &self.base
    }

    pub fn into_mat(self) -> Mat {
        self.mat
    }
}

/// Span of a p×d matrix with i.i.d. Uniform(−1, 1) entries.
pub fn random_semi_orthogonal<R: Rng + ?Sized>(p: usize, d: usize, rng: &mut R) -> Result<Subspace> {
    if d == 0 || d >= p {
        return Err(SdrError::domain(format!("need 1 <= d < p, got p={p}, d={d}")));
    }
    let a = Mat::from_fn(p, d, |_, _| rng.random_range(-1.0..1.0));
    Subspace::from_span(&a)
}

/// (I − UUᵀ)A.
pub fn tangent_project(base: &Subspace, a: &Mat) -> Result<TangentVector> {
    if a.shape() != base.basis.shape() {
        return Err(SdrError::domain("shape mismatch in tangent projection"));
    }
    let u = &base.basis;
    let mat = a - u * (u.transpose() * a);
    Ok(TangentVector { mat, base: base.clone() })
}

/// Exponential map: U₂ = U·D·cos(Θ)·Dᵀ + Q·Φ·sin(Θ)·Dᵀ with V = QR, R = ΦΘDᵀ.
///
/// The returned basis is the geodesic basis itself (no sign canonicalization),
/// so it varies continuously with `V`.
pub fn exp_map(base: &Subspace, v: &TangentVector) -> Result<Subspace> {
    if v.mat.shape() != base.basis.shape() {
        return Err(SdrError::domain("tangent vector shape does not match base"));
    }
    let off = (base.basis.transpose() * &v.mat).abs().max();
    if off > TANGENT_TOL * (1.0 + v.mat.abs().max()) {
        return Err(SdrError::domain(format!(
            "velocity is not tangent at base (|UᵀV| = {off:.3e})"
        )));
    }
    Ok(Subspace { basis: exp_basis(&base.basis, &v.mat) })
}

pub(crate) fn exp_basis(u: &Mat, v: &Mat) -> Mat {
    // With V = QR and R = ΦΘDᵀ, the term QΦ·sin(Θ)·Dᵀ equals V·D·diag(sin θ/θ)·Dᵀ,
    // and D, Θ² come from the symmetric eigenproblem of VᵀV. This avoids the
    // ill-conditioned singular vectors of a rank-deficient R.
    let (theta2, dmat) = sym_eigen_desc(&(v.transpose() * v));
    let theta = theta2.map(|t| t.max(0.0).sqrt());
    let cos = Mat::from_diagonal(&theta.map(f64::cos));
    let sinc = Mat::from_diagonal(&theta.map(sinc));
    let dt = dmat.transpose();
    u * (&dmat * cos * &dt) + v * (&dmat * sinc * &dt)
}

fn sinc(t: f64) -> f64 {
    if t < 1e-8 {
        1.0 - t * t / 6.0
    } else {
        t.sin() / t
    }
}

fn atan_ratio(s: f64) -> f64 {
    if s < 1e-8 {
        1.0 - s * s / 3.0
    } else {
        s.atan() / s
    }
}

/// Inverse exponential map: V = Q*·arctan(Σ*)·Dᵀ where
/// Q*Σ*Dᵀ is the SVD of (I − UUᵀ)·U₂·(UᵀU₂)⁻¹.
pub fn log_map(base: &Subspace, target: &Subspace) -> Result<TangentVector> {
    same_shape(base, target)?;
    let u = &base.basis;
    let u2 = &target.basis;
    let a = u.transpose() * u2;
    let smin = a.clone().svd(false, false).singular_values.min();
    if !(smin > 1e-10) {
        return Err(SdrError::domain(
            "target lies outside the injectivity neighbourhood of the base (UᵀU₂ singular)",
        ));
    }
    let a_inv = a
        .try_inverse()
        .ok_or_else(|| SdrError::domain("UᵀU₂ is singular"))?;
    let m = (u2 - u * (u.transpose() * u2)) * a_inv;
    // Q*·arctan(Σ*)·Dᵀ = M·D·diag(arctan σ/σ)·Dᵀ with D, Σ*² from MᵀM
    let (s2, dmat) = sym_eigen_desc(&(m.transpose() * &m));
    let ratio = Mat::from_diagonal(&s2.map(|t| atan_ratio(t.max(0.0).sqrt())));
    let mut mat = &m * (&dmat * ratio * dmat.transpose());
    // remove round-off along the base
    mat -= u * (u.transpose() * &mat);
    Ok(TangentVector { mat, base: base.clone() })
}

/// Principal angles θᵢ = arccos σᵢ(aᵀb), ascending.
pub fn principal_angles(a: &Subspace, b: &Subspace) -> Result<Vec<f64>> {
    same_shape(a, b)?;
    let d = a.d();
    let mut cos: Vec<f64> = (a.basis.transpose() * &b.basis)
        .svd(false, false)
        .singular_values
        .iter()
        .map(|&x| x.clamp(0.0, 1.0))
        .collect();
    cos.sort_by(|x, y| y.partial_cmp(x).unwrap());
    // arccos loses half the digits near 0, so small angles come from the sines
    let resid = &b.basis - &a.basis * (a.basis.transpose() * &b.basis);
    let mut sin: Vec<f64> = resid.svd(false, false).singular_values.iter().map(|&x| x.clamp(0.0, 1.0)).collect();
    sin.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sin.resize(d, 0.0);
    Ok((0..d)
        .map(|i| {
            if sin[i] < std::f64::consts::FRAC_1_SQRT_2 {
                sin[i].asin()
            } else {
                cos[i].acos()
            }
        })
        .collect())
}

/// Geodesic distance (Σ θᵢ²)^{1/2}.
pub fn riemann_distance(a: &Subspace, b: &Subspace) -> Result<f64> {
    Ok(principal_angles(a, b)?.iter().map(|t| t * t).sum::<f64>().sqrt())
}

/// Frobenius distance between the orthogonal projectors of two subspaces.
pub fn projection_distance(a: &Mat, b: &Mat) -> Result<f64> {
    Ok((projector(a)? - projector(b)?).norm())
}

fn same_shape(a: &Subspace, b: &Subspace) -> Result<()> {
    if a.basis.shape() != b.basis.shape() {
        return Err(SdrError::domain(format!(
            "subspaces live on different Grassmannians: {:?} vs {:?}",
            a.basis.shape(),
            b.basis.shape()
        )));
    }
    Ok(())
}

/// Result of [`frechet_mean`].
#[derive(Debug, Clone)]
pub struct FrechetSummary {
    /// Karcher mean (minimizer of the mean squared geodesic distance).
    pub mean: Subspace,
    /// Sample Fréchet variance n⁻¹ Σ dist(Γᵢ, mean); bounded by √d·π/2.
    pub variance: f64,
    /// n⁻¹ Σ dist²(Γᵢ, mean); bounded by d·π²/4.
    pub mean_sq_distance: f64,
    pub iterations: usize,
}

/// Karcher mean by tangent-space averaging, initialized at the first sample.
///
/// Returns the mean together with both spread statistics (mean distance and
/// mean squared distance to the mean).
pub fn frechet_mean(samples: &[Subspace], tol: f64, max_iter: usize) -> Result<FrechetSummary> {
    let first = samples
        .first()
        .ok_or_else(|| SdrError::domain("Fréchet mean of an empty sample"))?;
    for s in samples {
        same_shape(first, s)?;
    }
    let n = samples.len() as f64;
    let mut mean = first.clone();
    let mut trace = Vec::new();
    for it in 0..max_iter {
        let mut avg = Mat::zeros(first.p(), first.d());
        for s in samples {
            avg += log_map(&mean, s)?.mat;
        }
        avg /= n;
        let step = avg.norm();
        trace.push(step);
        if step < tol {
            return summarize(samples, mean, it);
        }
        mean = Subspace { basis: exp_basis(&mean.basis, &avg) };
        // keep the basis orthonormal to machine precision across iterations
        mean = Subspace::from_span(&mean.basis)?;
    }
    Err(SdrError::Convergence {
        iterations: max_iter,
        message: "Karcher mean iteration did not reach tolerance".into(),
        trace,
    })
}

fn summarize(samples: &[Subspace], mean: Subspace, iterations: usize) -> Result<FrechetSummary> {
    let n = samples.len() as f64;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for s in samples {
        let dist = riemann_distance(&mean, s)?;
        s1 += dist;
        s2 += dist * dist;
    }
    Ok(FrechetSummary {
        mean,
        variance: s1 / n,
        mean_sq_distance: s2 / n,
        iterations,
    })
}

/// Random d×d orthogonal matrix (QR of a Gaussian matrix).
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Mat {
    use rand_distr::StandardNormal;
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    a.qr().q()
}
