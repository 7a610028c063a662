//! Random-effects inverse regression with continuous and binary predictors.
//!
//! Continuous predictors follow the RPFC model with the binary covariates
//! entering as fixed full-rank regressors,
//! `X_ij = μ + Γ_i C₁ f_ij + β(W − μ_W) + ε_ij`. The binary part is either
//! a quadratic exponential (Ising) model for covariates constant within a
//! cluster, or one logistic mixed model per covariate when they vary over time.
//!
//! Cluster-specific reductions in compact form:
//!
//! * time-invariant: `Θ_i = [Δ⁻¹Γ_i; −βᵀΔ⁻¹Γ_i]`, together with the common `[B]`
//!   acting on `vech(W_iW_iᵀ)`;
//! * time-varying: `Θ_i = [Δ⁻¹Γ_iC₁; −βᵀΔ⁻¹Γ_iC₁ + B_i]`.

pub mod ising;
pub mod logistic;

use rayon::prelude::*;

use crate::data::{build_bases, BasisConfig, Centering, ClusteredDataset, WKind};
use crate::error::{Result, SdrError};
use crate::linalg::{projector, spd_inverse, Mat, Vector};
use crate::pfc::{fit_cluster, fit_gpfc_with_bases, spfc_min_size, PfcFit};
use crate::rpfc::{fit_rpfc_stage2, McemConfig, RpfcFit, SigmaModel};

pub use ising::{exact_loglik as ising_exact_loglik, fit_ising_pseudo, IsingFit, IsingParams};
pub use logistic::{fit_logistic, fit_logistic_mixed, LogisticFit, LogisticMixedParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmirConfig {
    pub d: usize,
    /// Structural dimension of the binary part (time-invariant case).
    pub d_prime: usize,
    pub basis: BasisConfig,
    /// Degree of the cluster-level basis g(ȳ_i).
    pub g_degree: usize,
    pub mcem: McemConfig,
    pub sigma_model: SigmaModel,
}

impl RmirConfig {
    pub fn new(d: usize) -> Self {
        RmirConfig {
            d,
            d_prime: 1,
            basis: BasisConfig::default(),
            g_degree: 1,
            mcem: McemConfig::default(),
            sigma_model: SigmaModel::Unstructured,
        }
    }
}

#[derive(Debug, Clone)]
pub enum BinaryFit {
    Ising(IsingFit),
    /// One fit per binary covariate.
    Logistic(Vec<LogisticMixedParams>),
}

#[derive(Debug, Clone)]
pub struct RmirFit {
    pub continuous: RpfcFit,
    /// p×q fixed effects of the binary covariates.
    pub beta: Mat,
    pub mu_w: Vector,
    pub kind: WKind,
    pub binary: BinaryFit,
    /// Compact Θ̂_i per retained cluster, aligned with `continuous.cluster_ids`.
    pub theta_hat: Vec<Mat>,
    /// Compact reduction at Γ̂₀ (population-average).
    pub theta0: Mat,
}

/// g(ȳ_i) = (ȳ_i, ȳ_i², …) centered across clusters, one row per cluster.
pub fn cluster_g_basis(data: &ClusteredDataset, degree: usize) -> Result<Mat> {
    if degree == 0 {
        return Err(SdrError::domain("g basis degree must be at least 1"));
    }
    let n = data.n();
    let mut g = Mat::from_fn(n, degree, |i, k| {
        let c = &data.clusters[i];
        let ybar = c.y.iter().sum::<f64>() / c.m() as f64;
        ybar.powi(k as i32 + 1)
    });
    for mut col in g.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    Ok(g)
}

/// `[Δ⁻¹Γ; −βᵀΔ⁻¹Γ]` for a given `Δ⁻¹Γ` (p×d) and β (p×q).
pub fn compact_invariant(dinv_gamma: &Mat, beta: &Mat) -> Mat {
    let (p, d) = dinv_gamma.shape();
    let q = beta.ncols();
    let mut out = Mat::zeros(p + q, d);
    out.rows_mut(0, p).copy_from(dinv_gamma);
    out.rows_mut(p, q).copy_from(&(-beta.transpose() * dinv_gamma));
    out
}

/// `[Δ⁻¹ΓC₁; −βᵀΔ⁻¹ΓC₁ + B_i]` with `B_i` q×r.
pub fn compact_varying(dinv_gamma_c: &Mat, beta: &Mat, b_i: &Mat) -> Mat {
    let (p, r) = dinv_gamma_c.shape();
    let q = beta.ncols();
    let mut out = Mat::zeros(p + q, r);
    out.rows_mut(0, p).copy_from(dinv_gamma_c);
    out.rows_mut(p, q).copy_from(&(-beta.transpose() * dinv_gamma_c + b_i));
    out
}

/// Full block reduction acting on `(vec(X_iᵀ), W_i, vech(W_iW_iᵀ))`:
/// `[[I_m ⊗ Δ⁻¹Γ, 0], [−1_mᵀ ⊗ βᵀΔ⁻¹Γ, 0], [0, B]]`.
pub fn block_reduction_invariant(dinv_gamma: &Mat, beta: &Mat, b: &Mat, m: usize) -> Mat {
    let (p, d) = dinv_gamma.shape();
    let q = beta.ncols();
    let np = b.nrows();
    let dp = b.ncols();
    let mut out = Mat::zeros(m * p + q + np, m * d + dp);
    let lower = -beta.transpose() * dinv_gamma;
    for j in 0..m {
        out.view_mut((j * p, j * d), (p, d)).copy_from(dinv_gamma);
        out.view_mut((m * p, j * d), (q, d)).copy_from(&lower);
    }
    out.view_mut((m * p + q, m * d), (np, dp)).copy_from(b);
    out
}

/// Diagonal of the projector onto the column space of `theta`.
pub fn variable_importance(theta: &Mat) -> Result<Vector> {
    let rank = theta.clone().svd(false, false).rank(1e-10 * theta.amax().max(f64::MIN_POSITIVE));
    if rank < theta.ncols() {
        return Err(SdrError::domain("reduction basis is rank deficient"));
    }
    Ok(projector(theta)?.diagonal())
}

fn binary_series(data: &ClusteredDataset, k: usize) -> Vec<Vec<f64>> {
    data.clusters
        .iter()
        .map(|c| c.w_matrix().expect("binary covariates present").column(k).iter().cloned().collect())
        .collect()
}

fn invariant_w(data: &ClusteredDataset) -> Mat {
    let q = data.q();
    Mat::from_fn(data.n(), q, |i, k| data.clusters[i].w_matrix().unwrap()[(0, k)])
}

fn logistic_bases(data: &ClusteredDataset, cfg: &BasisConfig) -> Result<Vec<Mat>> {
    let global = BasisConfig { centering: Centering::Global, ..*cfg };
    Ok(build_bases(data, &global)?.f)
}

/// Two-stage RMIR fit.
pub fn fit_rmir(data: &ClusteredDataset, cfg: &RmirConfig) -> Result<RmirFit> {
    let kind = data
        .w_kind()
        .ok_or_else(|| SdrError::domain("RMIR needs binary covariates"))?;
    let q = data.q();
    let bases = build_bases(data, &cfg.basis)?;
    let stage1 = fit_gpfc_with_bases(data, &bases, cfg.d)?;
    let beta = stage1.beta.clone().expect("stage 1 includes W");
    let mu_w = stage1.mu_w.clone().expect("stage 1 includes W");
    let shift: Option<Vec<Mat>> = match kind {
        WKind::TimeVarying => Some(
            data.clusters
                .iter()
                .map(|c| c.w_matrix().unwrap() * beta.transpose())
                .collect(),
        ),
        // constant within clusters, removed by centering
        WKind::TimeInvariant => None,
    };
    let continuous = fit_rpfc_stage2(data, &bases, stage1, &cfg.basis, &cfg.mcem, cfg.sigma_model, shift.as_deref())?;
    let dinv = spd_inverse(&continuous.delta)?;
    let (binary, theta_hat, theta0) = match kind {
        WKind::TimeInvariant => {
            let g = cluster_g_basis(data, cfg.g_degree)?;
            let fit = fit_ising_pseudo(&invariant_w(data), &g, cfg.d_prime)?;
            let theta_hat = continuous
                .gamma_hat
                .iter()
                .map(|gi| compact_invariant(&(&dinv * gi.basis()), &beta))
                .collect();
            let theta0 = compact_invariant(&(&dinv * continuous.gamma0.basis()), &beta);
            (BinaryFit::Ising(fit), theta_hat, theta0)
        }
        WKind::TimeVarying => {
            let f = logistic_bases(data, &cfg.basis)?;
            let fits: Vec<LogisticMixedParams> = (0..q)
                .into_par_iter()
                .map(|k| fit_logistic_mixed(&binary_series(data, k), &f, &cfg.mcem))
                .collect::<Result<_>>()?;
            let r = f[0].ncols();
            let theta_hat = continuous
                .gamma_hat
                .iter()
                .zip(&continuous.cluster_index)
                .map(|(gi, &idx)| {
                    let b_i = Mat::from_fn(q, r, |k, l| fits[k].b_hat[idx][l]);
                    compact_varying(&(&dinv * gi.basis() * &continuous.c), &beta, &b_i)
                })
                .collect();
            let b0 = Mat::from_fn(q, r, |k, l| fits[k].b0[l]);
            let theta0 = compact_varying(&(&dinv * continuous.gamma0.basis() * &continuous.c), &beta, &b0);
            (BinaryFit::Logistic(fits), theta_hat, theta0)
        }
    };
    Ok(RmirFit { continuous, beta, mu_w, kind, binary, theta_hat, theta0 })
}

/// Pooled fixed-effects counterpart (GMIR): one reduction for all clusters.
#[derive(Debug, Clone)]
pub struct GmirFit {
    pub pfc: PfcFit,
    pub beta: Mat,
    /// q×r pooled logistic slopes (time-varying case).
    pub b_pooled: Option<Mat>,
    pub theta0: Mat,
}

pub fn fit_gmir(data: &ClusteredDataset, cfg: &RmirConfig) -> Result<GmirFit> {
    let kind = data
        .w_kind()
        .ok_or_else(|| SdrError::domain("GMIR needs binary covariates"))?;
    let bases = build_bases(data, &cfg.basis)?;
    let pfc = fit_gpfc_with_bases(data, &bases, cfg.d)?;
    let beta = pfc.beta.clone().expect("W present");
    let dinv = spd_inverse(&pfc.delta)?;
    let dg = &dinv * pfc.gamma.basis();
    match kind {
        WKind::TimeInvariant => {
            let theta0 = compact_invariant(&dg, &beta);
            Ok(GmirFit { pfc, beta, b_pooled: None, theta0 })
        }
        WKind::TimeVarying => {
            let f = logistic_bases(data, &cfg.basis)?;
            let b = pooled_slopes(data, &f)?;
            let theta0 = compact_varying(&(dg * &pfc.c), &beta, &b);
            Ok(GmirFit { pfc, beta, b_pooled: Some(b), theta0 })
        }
    }
}

fn pooled_slopes(data: &ClusteredDataset, f: &[Mat]) -> Result<Mat> {
    let q = data.q();
    let x = crate::data::stack_rows(f.to_vec());
    let rows: Vec<Vector> = (0..q)
        .into_par_iter()
        .map(|k| {
            let y: Vec<f64> = binary_series(data, k).into_iter().flatten().collect();
            fit_logistic(&x, &y, None, None, 500)
                .map(|fit| fit.coef)
                .map_err(|e| match e {
                    SdrError::Separation { .. } => SdrError::Separation { node: k },
                    other => other,
                })
        })
        .collect::<Result<_>>()?;
    Ok(Mat::from_fn(q, f[0].ncols(), |k, l| rows[k][l]))
}

/// Separate per-cluster fits (SMIR) using the pooled β̂.
#[derive(Debug, Clone)]
pub struct SmirFit {
    /// `None` for clusters too small to fit.
    pub theta_hat: Vec<Option<Mat>>,
    pub unusable: Vec<String>,
}

pub fn fit_smir(data: &ClusteredDataset, gmir: &GmirFit, cfg: &RmirConfig) -> Result<SmirFit> {
    let kind = data
        .w_kind()
        .ok_or_else(|| SdrError::domain("SMIR needs binary covariates"))?;
    let bases = build_bases(data, &cfg.basis)?;
    let p = data.p();
    let r = bases.f[0].ncols();
    let min_m = spfc_min_size(p, r);
    let lf = match kind {
        WKind::TimeVarying => Some(logistic_bases(data, &cfg.basis)?),
        WKind::TimeInvariant => None,
    };
    let beta = &gmir.beta;
    let theta_hat: Vec<Option<Mat>> = data
        .clusters
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            if c.m() < min_m {
                return None;
            }
            match kind {
                WKind::TimeInvariant => {
                    let fit = fit_cluster(&c.x, &bases.f[i], cfg.d).ok()?;
                    let dinv = spd_inverse(&fit.delta).ok()?;
                    Some(compact_invariant(&(dinv * fit.gamma.basis()), beta))
                }
                WKind::TimeVarying => {
                    let w = c.w_matrix().unwrap();
                    let x = &c.x - &w * beta.transpose();
                    let fit = fit_cluster(&x, &bases.f[i], cfg.d).ok()?;
                    let dinv = spd_inverse(&fit.delta).ok()?;
                    let f = &lf.as_ref().unwrap()[i];
                    let pooled = gmir.b_pooled.as_ref().unwrap();
                    // per-cluster slopes, falling back to pooled ones under separation
                    let b_i = Mat::from_fn(w.ncols(), f.ncols(), |k, l| {
                        let y: Vec<f64> = w.column(k).iter().cloned().collect();
                        match fit_logistic(f, &y, None, None, 200) {
                            Ok(fit) => fit.coef[l],
                            Err(_) => pooled[(k, l)],
                        }
                    });
                    Some(compact_varying(&(dinv * fit.gamma.basis() * &fit.c), beta, &b_i))
                }
            }
        })
        .collect();
    let unusable = data
        .clusters
        .iter()
        .zip(&theta_hat)
        .filter(|(_, t)| t.is_none())
        .map(|(c, _)| c.id.clone())
        .collect();
    Ok(SmirFit { theta_hat, unusable })
}
