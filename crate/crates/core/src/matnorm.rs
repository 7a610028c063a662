//! Matrix-normal laws.
//!
//! The random effect `V` is a p×d matrix tangent to the Grassmannian at `[Γ₀]`.
//! Its law is a zero-mean matrix normal with column covariance `I_d` and a
//! rank-deficient row covariance `Σ = KΣ̃K`, `K = I − Γ₀Γ₀ᵀ`. The density is
//! taken with respect to Lebesgue measure on the support `range(Σ)ᵈ`, so the
//! normalizing constant uses the support dimension `rank(Σ)·d` and the
//! pseudo-determinant `|Λ|` (product of nonzero eigenvalues of `Σ`).
//!
//! ```
//! use nalgebra::DMatrix;
//! use resdr::grassmann::{Subspace, TangentVector};
//! use resdr::matnorm::{build_row_covariance, logpdf_singular_mn, CovStructure, SingularMatrixNormal};
//!
//! let base = Subspace::new(DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0])).unwrap();
//! let sigma = build_row_covariance(&CovStructure::Isotropic(1.0), &base).unwrap();
//! let law = SingularMatrixNormal::new(&base, sigma).unwrap();
//! let lp = logpdf_singular_mn(&law, &TangentVector::zero(&base)).unwrap();
//! assert!((lp + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
//! ```

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SdrError};
use crate::grassmann::{Subspace, TangentVector};
use crate::linalg::{spd_inv_logdet, sym_eigen_desc, symmetrize, Mat, Vector};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Parametric family for the unprojected row covariance Σ̃.
#[derive(Debug, Clone, PartialEq)]
pub enum CovStructure {
    /// diag(v₁, …, v_p).
    Diagonal(Vec<f64>),
    /// σ²·I.
    Isotropic(f64),
    /// variance·ρ^|j−k|.
    Ar1 { variance: f64, rho: f64 },
    /// variance on the diagonal, `cov` elsewhere.
    Exchangeable { variance: f64, cov: f64 },
    Unstructured(Mat),
}

impl CovStructure {
    /// Σ̃ as a p×p matrix; errors when the parameters do not give a PSD matrix.
    pub fn realize(&self, p: usize) -> Result<Mat> {
        let m = match self {
            CovStructure::Diagonal(v) => {
                if v.len() != p {
                    return Err(SdrError::domain(format!(
                        "diagonal structure has {} entries, expected {p}",
                        v.len()
                    )));
                }
                Mat::from_diagonal(&Vector::from_column_slice(v))
            }
            CovStructure::Isotropic(s2) => {
                if !(*s2 >= 0.0) {
                    return Err(SdrError::domain("isotropic variance must be nonnegative"));
                }
                Mat::identity(p, p) * *s2
            }
            CovStructure::Ar1 { variance, rho } => {
                if rho.abs() >= 1.0 {
                    return Err(SdrError::domain("AR(1) autocorrelation must lie in (-1, 1)"));
                }
                Mat::from_fn(p, p, |j, k| variance * rho.powi((j as i32 - k as i32).abs()))
            }
            CovStructure::Exchangeable { variance, cov } => {
                Mat::from_fn(p, p, |j, k| if j == k { *variance } else { *cov })
            }
            CovStructure::Unstructured(m) => {
                if m.shape() != (p, p) {
                    return Err(SdrError::domain("unstructured covariance has the wrong shape"));
                }
                m.clone()
            }
        };
        check_psd(&m, "row covariance")?;
        Ok(m)
    }

    pub fn name(&self) -> &'static str {
        match self {
            CovStructure::Diagonal(_) => "diagonal",
            CovStructure::Isotropic(_) => "isotropic",
            CovStructure::Ar1 { .. } => "ar1",
            CovStructure::Exchangeable { .. } => "exchangeable",
            CovStructure::Unstructured(_) => "unstructured",
        }
    }
}

fn check_psd(m: &Mat, what: &str) -> Result<()> {
    if (m - m.transpose()).abs().max() > 1e-10 * (1.0 + m.abs().max()) {
        return Err(SdrError::domain(format!("{what} is not symmetric")));
    }
    let (vals, _) = sym_eigen_desc(m);
    if vals[vals.len() - 1] < -1e-10 * (1.0 + vals[0].abs()) {
        return Err(SdrError::domain(format!("{what} is not positive semidefinite")));
    }
    Ok(())
}

/// Σ = K·Σ̃·K with K = I − Γ₀Γ₀ᵀ.
pub fn build_row_covariance(structure: &CovStructure, base: &Subspace) -> Result<Mat> {
    let tilde = structure.realize(base.p())?;
    let k = base.complement_projector();
    Ok(symmetrize(&(&k * tilde * &k)))
}

/// Zero-mean matrix normal on the tangent space at `base`, column covariance I_d.
#[derive(Debug, Clone)]
pub struct SingularMatrixNormal {
    base: Subspace,
    sigma: Mat,
    pinv: Mat,
    root: Mat,
    range: Mat,
    log_pdet: f64,
    rank: usize,
}

impl SingularMatrixNormal {
    pub fn new(base: &Subspace, sigma: Mat) -> Result<Self> {
        let p = base.p();
        if sigma.shape() != (p, p) {
            return Err(SdrError::domain("row covariance has the wrong shape"));
        }
        if (&sigma * base.basis()).norm() > 1e-8 {
            return Err(SdrError::domain("row covariance does not annihilate the base subspace"));
        }
        check_psd(&sigma, "row covariance")?;
        let (vals, vecs) = sym_eigen_desc(&sigma);
        let lmax = vals[0].max(0.0);
        let cut = (1e-10 * lmax).max(1e-10);
        let rank = vals.iter().filter(|&&l| l > cut).count();
        if rank > p - base.d() {
            return Err(SdrError::domain("row covariance rank exceeds p - d"));
        }
        let mut pinv = Mat::zeros(p, p);
        let mut root = Mat::zeros(p, p);
        let mut range = Mat::zeros(p, rank);
        let mut log_pdet = 0.0;
        for i in 0..rank {
            let e = vecs.column(i);
            let outer = &e * e.transpose();
            pinv += &outer / vals[i];
            root += &outer * vals[i].sqrt();
            range.set_column(i, &e);
            log_pdet += vals[i].ln();
        }
        let sigma = symmetrize(&sigma);
        Ok(SingularMatrixNormal { base: base.clone(), sigma, pinv, root, range, log_pdet, rank })
    }

    pub fn base(&self) -> &Subspace {
        &self.base
    }

    pub fn sigma(&self) -> &Mat {
        &self.sigma
    }

    /// Moore–Penrose inverse Σ⁻.
    pub fn pinv(&self) -> &Mat {
        &self.pinv
    }

    /// log of the product of nonzero eigenvalues.
    pub fn log_pdet(&self) -> f64 {
        self.log_pdet
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Map a p×d standard-normal matrix to a draw: V = K·Σ^{1/2}·Z.
    pub fn transform(&self, z: &Mat) -> TangentVector {
        let u = self.base.basis();
        let mut v = &self.root * z;
        v -= u * (u.transpose() * &v);
        TangentVector::new_unchecked(&self.base, v)
    }
}

/// One draw from the singular matrix-normal law.
pub fn sample_singular_mn<R: Rng + ?Sized>(dist: &SingularMatrixNormal, rng: &mut R) -> TangentVector {
    let z = standard_normal_matrix(dist.base.p(), dist.base.d(), rng);
    dist.transform(&z)
}

pub fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Log-density of the singular matrix normal with Ω = I_d.
pub fn logpdf_singular_mn(dist: &SingularMatrixNormal, v: &TangentVector) -> Result<f64> {
    let d = dist.base.d();
    logpdf_singular_general(dist, &Mat::identity(d, d), v.mat())
}

/// Density with a general column covariance Ω; used to check scale confounding.
pub(crate) fn logpdf_singular_general(dist: &SingularMatrixNormal, omega: &Mat, v: &Mat) -> Result<f64> {
    let d = dist.base.d();
    if v.shape() != (dist.base.p(), d) || omega.shape() != (d, d) {
        return Err(SdrError::domain("shape mismatch in singular matrix-normal density"));
    }
    let scale = 1.0 + v.abs().max();
    if (dist.base.basis().transpose() * v).abs().max() > 1e-8 * scale {
        return Err(SdrError::domain("argument has a component along the base subspace"));
    }
    let off_support = v - &dist.range * (dist.range.transpose() * v);
    if off_support.abs().max() > 1e-8 * scale {
        return Err(SdrError::domain("argument lies outside the support of the row covariance"));
    }
    let (omega_inv, omega_logdet) = spd_inv_logdet(omega)?;
    let r = dist.rank as f64;
    let quad = (omega_inv * v.transpose() * &dist.pinv * v).trace();
    Ok(-0.5 * r * d as f64 * LN_2PI - 0.5 * d as f64 * dist.log_pdet - 0.5 * r * omega_logdet - 0.5 * quad)
}

/// Mean, row and column covariance of an ordinary matrix normal.
#[derive(Debug, Clone)]
pub struct MatrixNormalParams {
    pub mean: Mat,
    pub row_cov: Mat,
    pub col_cov: Mat,
}

/// −(pm/2)log 2π − (m/2)log|Δ| − (p/2)log|L| − ½tr(L⁻¹(Z−M)ᵀΔ⁻¹(Z−M)).
pub fn logpdf_matrix_normal(params: &MatrixNormalParams, z: &Mat) -> Result<f64> {
    let (p, m) = z.shape();
    if params.mean.shape() != (p, m)
        || params.row_cov.shape() != (p, p)
        || params.col_cov.shape() != (m, m)
    {
        return Err(SdrError::domain("shape mismatch in matrix-normal density"));
    }
    let (row_inv, row_ld) = spd_inv_logdet(&params.row_cov)?;
    let (col_inv, col_ld) = spd_inv_logdet(&params.col_cov)?;
    let r = z - &params.mean;
    let quad = (col_inv * r.transpose() * row_inv * &r).trace();
    Ok(-0.5 * (p * m) as f64 * (2.0 * PI).ln() - 0.5 * m as f64 * row_ld - 0.5 * p as f64 * col_ld - 0.5 * quad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grassmann::{random_orthogonal, random_semi_orthogonal, tangent_project};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn e1() -> Subspace {
        Subspace::new(Mat::from_column_slice(3, 1, &[1.0, 0.0, 0.0])).unwrap()
    }

    /// Gaussian log-density on eigen-coordinates of Σ's range, column by column.
    fn eigen_oracle(sigma: &Mat, v: &Mat) -> f64 {
        let eig = sigma.clone().symmetric_eigen();
        let mut total = 0.0;
        for col in v.column_iter() {
            for (k, lam) in eig.eigenvalues.iter().enumerate() {
                if *lam > 1e-9 {
                    let c = eig.eigenvectors.column(k).dot(&col);
                    total += -0.5 * (2.0 * PI * lam).ln() - 0.5 * c * c / lam;
                }
            }
        }
        total
    }

    #[test]
    fn projected_covariances() {
        let base = e1();
        let zero = build_row_covariance(&CovStructure::Isotropic(0.0), &base).unwrap();
        assert!(zero.abs().max() == 0.0);
        let s = build_row_covariance(&CovStructure::Isotropic(0.3), &base).unwrap();
        let want = Mat::from_diagonal(&Vector::from_column_slice(&[0.0, 0.3, 0.3]));
        assert!((s - want).abs().max() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_semi_orthogonal(3, 1, &mut rng).unwrap();
        let ex = build_row_covariance(&CovStructure::Exchangeable { variance: 0.5, cov: 0.2 }, &g).unwrap();
        assert!((&ex * g.basis()).norm() < 1e-12);
    }

    #[test]
    fn rejects_non_psd() {
        let bad = CovStructure::Exchangeable { variance: 0.1, cov: 0.5 };
        assert!(build_row_covariance(&bad, &e1()).is_err());
        assert!(CovStructure::Ar1 { variance: 1.0, rho: 1.2 }.realize(3).is_err());
    }

    #[test]
    fn structures_realize_expected_entries() {
        let a = CovStructure::Ar1 { variance: 0.3, rho: 0.5 }.realize(4).unwrap();
        assert!((a[(0, 3)] - 0.3 * 0.125).abs() < 1e-15);
        let e = CovStructure::Exchangeable { variance: 0.5, cov: 0.1 }.realize(3).unwrap();
        assert_eq!(e[(1, 2)], 0.1);
        assert_eq!(e[(2, 2)], 0.5);
    }

    #[test]
    fn zero_covariance_gives_zero_draws() {
        let base = e1();
        let law = SingularMatrixNormal::new(&base, Mat::zeros(3, 3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(sample_singular_mn(&law, &mut rng).mat().abs().max() == 0.0);
    }

    #[test]
    fn sample_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = random_semi_orthogonal(3, 1, &mut rng).unwrap();
        let sigma = build_row_covariance(&CovStructure::Ar1 { variance: 0.3, rho: 0.5 }, &base).unwrap();
        let law = SingularMatrixNormal::new(&base, sigma.clone()).unwrap();
        let n = 100_000;
        let mut second = Mat::zeros(3, 3);
        let mut mean = Mat::zeros(3, 1);
        for _ in 0..n {
            let v = sample_singular_mn(&law, &mut rng);
            assert!((base.basis().transpose() * v.mat()).abs().max() < 1e-10);
            second += v.mat() * v.mat().transpose();
            mean += v.mat();
        }
        second /= n as f64;
        mean /= n as f64;
        assert!((second - &sigma).norm() / sigma.norm() < 0.05);
        assert!(mean.norm() < 4.0 * (sigma.trace() / n as f64).sqrt());
    }

    #[test]
    fn zero_argument_density() {
        let law = SingularMatrixNormal::new(&e1(), build_row_covariance(&CovStructure::Isotropic(1.0), &e1()).unwrap()).unwrap();
        let lp = logpdf_singular_mn(&law, &TangentVector::zero(&e1())).unwrap();
        assert!((lp - (-(2.0 / 2.0) * (2.0 * PI).ln())).abs() < 1e-12);
    }

    #[test]
    fn density_matches_eigen_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = random_semi_orthogonal(5, 2, &mut rng).unwrap();
        let sigma = build_row_covariance(&CovStructure::Ar1 { variance: 0.7, rho: 0.4 }, &base).unwrap();
        let law = SingularMatrixNormal::new(&base, sigma.clone()).unwrap();
        for _ in 0..100 {
            let v = sample_singular_mn(&law, &mut rng);
            let v = TangentVector::new(&base, v.mat() * 1.7).unwrap();
            let lp = logpdf_singular_mn(&law, &v).unwrap();
            assert!((lp - eigen_oracle(&sigma, v.mat())).abs() < 1e-10);
        }
    }

    #[test]
    fn density_rejects_off_support() {
        let base = e1();
        let sigma = Mat::from_diagonal(&Vector::from_column_slice(&[0.0, 1.0, 0.0]));
        let law = SingularMatrixNormal::new(&base, sigma).unwrap();
        let off = TangentVector::new(&base, Mat::from_column_slice(3, 1, &[0.0, 0.0, 1.0])).unwrap();
        assert!(logpdf_singular_mn(&law, &off).is_err());
    }

    #[test]
    fn normalizes_over_support() {
        // importance sampling from a wider isotropic Gaussian on range(Σ)
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = random_semi_orthogonal(3, 1, &mut rng).unwrap();
        let sigma = build_row_covariance(&CovStructure::Exchangeable { variance: 0.5, cov: 0.2 }, &base).unwrap();
        let law = SingularMatrixNormal::new(&base, sigma).unwrap();
        let e = law.range.clone();
        let s = 1.5;
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let c = standard_normal_matrix(2, 1, &mut rng) * s;
            let logq = -(2.0 * PI * s * s).ln() - 0.5 * c.norm_squared() / (s * s);
            let v = TangentVector::new(&base, &e * &c).unwrap();
            acc += (logpdf_singular_mn(&law, &v).unwrap() - logq).exp();
        }
        let integral = acc / n as f64;
        assert!((integral - 1.0).abs() < 0.02, "{integral}");
    }

    #[test]
    fn scale_confounding() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let base = random_semi_orthogonal(4, 2, &mut rng).unwrap();
        let sigma = build_row_covariance(&CovStructure::Isotropic(0.4), &base).unwrap();
        let law = SingularMatrixNormal::new(&base, sigma.clone()).unwrap();
        let scaled = SingularMatrixNormal::new(&base, sigma * 2.0).unwrap();
        let omega = Mat::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let v = sample_singular_mn(&law, &mut rng);
        let a = logpdf_singular_general(&law, &omega, v.mat()).unwrap();
        let b = logpdf_singular_general(&scaled, &(&omega / 2.0), v.mat()).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn matrix_normal_standard_case() {
        let params = MatrixNormalParams {
            mean: Mat::zeros(1, 1),
            row_cov: Mat::identity(1, 1),
            col_cov: Mat::identity(1, 1),
        };
        let lp = logpdf_matrix_normal(&params, &Mat::zeros(1, 1)).unwrap();
        assert!((lp + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn matrix_normal_equals_kronecker_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = standard_normal_matrix(3, 3, &mut rng);
        let b = standard_normal_matrix(2, 2, &mut rng);
        let delta = &a * a.transpose() + Mat::identity(3, 3);
        let l = &b * b.transpose() + Mat::identity(2, 2);
        let mean = standard_normal_matrix(3, 2, &mut rng);
        let z = standard_normal_matrix(3, 2, &mut rng);
        let params = MatrixNormalParams { mean: mean.clone(), row_cov: delta.clone(), col_cov: l.clone() };
        let lp = logpdf_matrix_normal(&params, &z).unwrap();

        let cov = l.kronecker(&delta);
        let r = Vector::from_column_slice((&z - &mean).as_slice());
        let inv = cov.clone().try_inverse().unwrap();
        let want = -0.5 * 6.0 * (2.0 * PI).ln() - 0.5 * cov.determinant().ln() - 0.5 * (r.transpose() * inv * &r)[(0, 0)];
        assert!((lp - want).abs() < 1e-10);

        let shifted = MatrixNormalParams { mean: Mat::zeros(3, 2), row_cov: delta, col_cov: l };
        let lp0 = logpdf_matrix_normal(&shifted, &(&z - &mean)).unwrap();
        assert!((lp - lp0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn density_rotation_invariant(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base = random_semi_orthogonal(6, 2, &mut rng).unwrap();
            let sigma = build_row_covariance(&CovStructure::Exchangeable { variance: 0.5, cov: 0.1 }, &base).unwrap();
            let law = SingularMatrixNormal::new(&base, sigma).unwrap();
            let v = sample_singular_mn(&law, &mut rng);
            let r = random_orthogonal(2, &mut rng);
            let rotated = tangent_project(&base, &(v.mat() * r)).unwrap();
            let a = logpdf_singular_mn(&law, &v).unwrap();
            let b = logpdf_singular_mn(&law, &rotated).unwrap();
            prop_assert!((a - b).abs() < 1e-10);
        }
    }
}
