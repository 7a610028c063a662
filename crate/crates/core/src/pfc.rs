//! Principal fitted components with fixed effects.
//!
//! The inverse model is `X = μ + ΓCf(y) + β(W − μ_W) + ε`, `ε ~ N(0, Δ)`, with
//! `Γ` semi-orthogonal p×d, `C` d×r and `f` a centered basis of the response.
//! The maximum-likelihood estimate is a reduced-rank regression of X on f
//! after partialling out W, solved by an eigendecomposition: with sample
//! covariances `S_xx`, `S_xf`, `S_ff` (partial covariances when W is present)
//! the span of Γ is `S_xx^{1/2}·V_d`, where `V_d` holds the top-d eigenvectors
//! of `S_xx^{-1/2} S_xf S_ff⁻¹ S_fx S_xx^{-1/2}`.
//!
//! The global fit (GPFC) pools every observation; the separate fit (SPFC)
//! repeats it within each cluster.

use rayon::prelude::*;

use crate::data::{build_bases, BasisConfig, Bases, ClusteredDataset};
use crate::error::{Result, SdrError};
use crate::grassmann::{frechet_mean, log_map, Subspace};
use crate::linalg::{
    check_conditioning, spd_inv_logdet, spd_inverse, sym_eigen_desc, sym_inv_sqrt, sym_sqrt, symmetrize, Mat,
    Vector,
};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone)]
pub struct PfcFit {
    /// Intercept μ (p-vector).
    pub mu: Vector,
    pub gamma: Subspace,
    /// d×r coefficient matrix.
    pub c: Mat,
    pub delta: Mat,
    /// p×q coefficients of the centered binary covariates.
    pub beta: Option<Mat>,
    pub mu_w: Option<Vector>,
    pub loglik: f64,
    /// Eigenvalues of the standardized fitted covariance, descending.
    pub eigenvalues: Vector,
    pub n_obs: usize,
}

impl PfcFit {
    /// Basis of the central subspace Δ⁻¹[Γ].
    pub fn theta(&self) -> Result<Subspace> {
        let inv = spd_inverse(&self.delta)?;
        Subspace::from_span(&(inv * self.gamma.basis()))
    }

    pub fn d(&self) -> usize {
        self.gamma.d()
    }
}

/// Reduced-rank regression of rows of `x` on rows of `f` with optional
/// full-rank nuisance regressors `w` (all N-row matrices).
pub(crate) fn fit_reduced_rank(x: &Mat, f: &Mat, w: Option<&Mat>, d: usize) -> Result<PfcFit> {
    let (n, p) = x.shape();
    let r = f.ncols();
    let q = w.map_or(0, |w| w.ncols());
    if d == 0 || d > p.min(r) || d >= p {
        return Err(SdrError::domain(format!(
            "structural dimension d={d} must satisfy 1 <= d <= min(p, r) and d < p (p={p}, r={r})"
        )));
    }
    if n < p.max(r) + q + 2 {
        return Err(SdrError::domain(format!("too few observations for a PFC fit (N={n})")));
    }
    let nf = n as f64;
    let mu = col_means(x);
    let xc = center_by(x, &mu);
    let fc = center_by(f, &col_means(f));
    let (xr, fr, wc, mu_w) = match w {
        Some(w) => {
            let mu_w = col_means(w);
            let wc = center_by(w, &mu_w);
            let sww = wc.transpose() * &wc / nf;
            check_conditioning(&sww, "covariance of W")?;
            let sww_inv = spd_inverse(&sww)?;
            let hat = |a: &Mat| a - &wc * (&sww_inv * (wc.transpose() * a / nf));
            (hat(&xc), hat(&fc), Some(wc), Some(mu_w))
        }
        None => (xc.clone(), fc.clone(), None, None),
    };
    let sxx = symmetrize(&(xr.transpose() * &xr / nf));
    let sff = symmetrize(&(fr.transpose() * &fr / nf));
    let sxf = xr.transpose() * &fr / nf;
    check_conditioning(&sxx, "covariance of X")?;
    check_conditioning(&sff, "covariance of the basis f(y)")?;
    let sff_inv = spd_inverse(&sff)?;
    let sxx_ih = sym_inv_sqrt(&sxx)?;
    let sxx_h = sym_sqrt(&sxx);
    let fitted = &sxx_ih * &sxf * &sff_inv * sxf.transpose() * &sxx_ih;
    let (vals, vecs) = sym_eigen_desc(&fitted);
    let vd = vecs.columns(0, d).into_owned();
    let gamma = Subspace::from_span(&(&sxx_h * &vd))?;
    // coefficient of the rank-d fit, B = ΓC
    let b = &sxx_h * &vd * vd.transpose() * &sxx_ih * &sxf * &sff_inv;
    let c = gamma.basis().transpose() * &b;
    let resid = &xr - &fr * b.transpose();
    let delta = symmetrize(&(resid.transpose() * &resid / nf));
    let beta = wc.as_ref().map(|wc| {
        let target = &xc - &fc * b.transpose();
        let sww = wc.transpose() * wc;
        (target.transpose() * wc) * spd_inverse(&sww).expect("checked above")
    });
    let mut fit = PfcFit {
        mu,
        gamma,
        c,
        delta,
        beta,
        mu_w,
        loglik: 0.0,
        eigenvalues: vals,
        n_obs: n,
    };
    fit.loglik = loglik_rows(&fit, x, f, w)?;
    Ok(fit)
}

/// Global PFC on the pooled data (W, when present, enters as fixed covariates).
pub fn fit_gpfc(data: &ClusteredDataset, d: usize, cfg: &BasisConfig) -> Result<PfcFit> {
    let bases = build_bases(data, cfg)?;
    fit_gpfc_with_bases(data, &bases, d)
}

pub(crate) fn fit_gpfc_with_bases(data: &ClusteredDataset, bases: &Bases, d: usize) -> Result<PfcFit> {
    let x = data.stacked_x();
    let f = bases.stacked();
    let w = data.stacked_w();
    let (n, p, r, q) = (x.nrows(), x.ncols(), f.ncols(), w.as_ref().map_or(0, |w| w.ncols()));
    if n <= p + r + q {
        return Err(SdrError::domain(format!("need N > p + r + q, got N={n}")));
    }
    fit_reduced_rank(&x, &f, w.as_ref(), d)
}

/// Gaussian PFC log-likelihood of `fit` on `data`, constants included.
pub fn loglik_pfc(fit: &PfcFit, data: &ClusteredDataset, cfg: &BasisConfig) -> Result<f64> {
    let bases = build_bases(data, cfg)?;
    let w = if fit.beta.is_some() { data.stacked_w() } else { None };
    loglik_rows(fit, &data.stacked_x(), &bases.stacked(), w.as_ref())
}

pub(crate) fn loglik_rows(fit: &PfcFit, x: &Mat, f: &Mat, w: Option<&Mat>) -> Result<f64> {
    let (n, p) = x.shape();
    if f.nrows() != n || f.ncols() != fit.c.ncols() || p != fit.gamma.p() {
        return Err(SdrError::domain("shape mismatch in PFC log-likelihood"));
    }
    let (dinv, logdet) = spd_inv_logdet(&fit.delta)
        .map_err(|_| SdrError::domain("Δ is not positive definite"))?;
    let b = fit.gamma.basis() * &fit.c;
    let mut resid = center_by(x, &fit.mu) - f * b.transpose();
    if let (Some(beta), Some(w), Some(mu_w)) = (&fit.beta, w, &fit.mu_w) {
        resid -= center_by(w, mu_w) * beta.transpose();
    }
    let quad = (&resid * &dinv).component_mul(&resid).sum();
    Ok(-0.5 * (n * p) as f64 * LN_2PI - 0.5 * n as f64 * logdet - 0.5 * quad)
}

/// Separate per-cluster PFC fits and their manifold summaries.
#[derive(Debug, Clone)]
pub struct SpfcFit {
    /// One entry per cluster; `None` for clusters too small to fit.
    pub fits: Vec<Option<PfcFit>>,
    pub unusable: Vec<String>,
    /// Fréchet mean of the per-cluster reductions Δ̂ᵢ⁻¹[Γ̂ᵢ].
    pub theta_mean: Subspace,
    /// n⁻¹ Σ ṼᵢṼᵢᵀ with Ṽᵢ the log-map of Δ̂ᵢ⁻¹[Γ̂ᵢ] at the mean.
    pub sigma: Mat,
    /// Clusters left out of `sigma` because they fall outside the injectivity radius.
    pub dropped_from_sigma: usize,
}

impl SpfcFit {
    pub fn usable_fits(&self) -> impl Iterator<Item = &PfcFit> {
        self.fits.iter().flatten()
    }
}

/// Smallest cluster size accepted by the separate fits.
///
/// Centered X and f(y) span subspaces of an (m−1)-dimensional space; once
/// m − 1 ≤ p + r they intersect, a canonical correlation equals one and the
/// residual covariance is singular.
pub fn spfc_min_size(p: usize, r: usize) -> usize {
    p + r + 2
}

pub fn fit_spfc(data: &ClusteredDataset, d: usize, cfg: &BasisConfig) -> Result<SpfcFit> {
    let bases = build_bases(data, cfg)?;
    fit_spfc_with_bases(data, &bases, d)
}

pub(crate) fn fit_spfc_with_bases(data: &ClusteredDataset, bases: &Bases, d: usize) -> Result<SpfcFit> {
    let p = data.p();
    let r = bases.f[0].ncols();
    if d == 0 || d > p.min(r) || d >= p {
        return Err(SdrError::domain(format!("structural dimension d={d} is infeasible")));
    }
    let min_m = spfc_min_size(p, r);
    let fits: Vec<Option<PfcFit>> = data
        .clusters
        .par_iter()
        .zip(bases.f.par_iter())
        .map(|(c, f)| {
            if c.m() < min_m {
                return None;
            }
            fit_cluster(&c.x, f, d).ok()
        })
        .collect();
    let unusable: Vec<String> = data
        .clusters
        .iter()
        .zip(&fits)
        .filter(|(_, f)| f.is_none())
        .map(|(c, _)| c.id.clone())
        .collect();
    let thetas: Vec<Subspace> = fits.iter().flatten().map(|f| f.theta()).collect::<Result<_>>()?;
    if thetas.is_empty() {
        return Err(SdrError::domain("no cluster is large enough for a separate PFC fit"));
    }
    let mean = frechet_mean(&thetas, 1e-9, 200)?.mean;
    let mut sigma = Mat::zeros(p, p);
    let mut used = 0usize;
    for t in &thetas {
        if let Ok(v) = log_map(&mean, t) {
            sigma += v.mat() * v.mat().transpose();
            used += 1;
        }
    }
    if used > 0 {
        sigma /= used as f64;
    }
    Ok(SpfcFit {
        fits,
        unusable,
        theta_mean: mean,
        sigma,
        dropped_from_sigma: thetas.len() - used,
    })
}

/// PFC within one cluster: the cluster mean is the intercept.
pub(crate) fn fit_cluster(x: &Mat, f: &Mat, d: usize) -> Result<PfcFit> {
    let fit = fit_reduced_rank(x, f, None, d)?;
    // a PD Δ̂ can still be too ill-conditioned to be usable
    check_conditioning(&fit.delta, "cluster residual covariance")?;
    Ok(fit)
}

pub(crate) fn col_means(a: &Mat) -> Vector {
    let n = a.nrows() as f64;
    Vector::from_iterator(a.ncols(), a.column_iter().map(|c| c.sum() / n))
}

pub(crate) fn center_by(a: &Mat, mean: &Vector) -> Mat {
    let mut out = a.clone();
    for (k, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[k]);
    }
    out
}
