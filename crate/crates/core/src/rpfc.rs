//! Random-effects principal fitted components.
//!
//! Each cluster has its own basis `Γᵢ = Exp(Γ₀, Vᵢ)` with `Vᵢ ~ MN(0, Σ, I_d)`
//! tangent at `[Γ₀]`. Estimation runs in two stages: the pooled fit supplies
//! `Γ̂₀`, then a Monte-Carlo EM on cluster-centered data estimates `C`, `Δ`
//! and `Σ` and predicts every `Vᵢ` by its posterior mean.
//!
//! Centering cluster i removes its intercept; dropping the last centered row
//! leaves `Zᵢ ~ MN(ΓᵢCHᵢ, Δ, Lᵢ)` with `Lᵢ = I − J/mᵢ` of order mᵢ − 1, whose
//! inverse is `I + J` and whose determinant is `1/mᵢ`.
//!
//! The E-step draws T tangent vectors from the current prior and shares them
//! across clusters. The standard-normal draws behind them are fixed for the
//! whole run and only rescaled by the current `Σ`, so successive iterations
//! see coupled samples and the Monte-Carlo log-likelihood settles.

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::data::{build_bases, BasisConfig, Bases, Cluster, ClusteredDataset};
use crate::error::{Result, SdrError};
use crate::grassmann::{exp_basis, Subspace, TangentVector};
use crate::linalg::{check_conditioning, frob_dot, log_sum_exp, spd_inv_logdet, spd_inverse, sym_eigen_desc, sym_sqrt, symmetrize, Mat};
use crate::matnorm::{standard_normal_matrix, CovStructure};
use crate::pfc::{fit_gpfc_with_bases, PfcFit};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// One cluster after within-cluster centering, last observation dropped.
#[derive(Debug, Clone)]
pub struct CenteredCluster {
    /// Position of the cluster in the source dataset.
    pub index: usize,
    pub id: String,
    pub m: usize,
    /// p×(m−1).
    pub z: Mat,
    /// r×(m−1).
    pub h: Mat,
    /// Z L⁻¹ Zᵀ.
    s: Mat,
    /// Z L⁻¹ Hᵀ.
    g: Mat,
    /// H L⁻¹ Hᵀ.
    f: Mat,
}

impl CenteredCluster {
    fn new(index: usize, id: String, x: &Mat, f: &Mat) -> Self {
        let m = x.nrows();
        let center = |a: &Mat| {
            let mut out = a.clone();
            for mut col in out.column_iter_mut() {
                let mean = col.mean();
                col.add_scalar_mut(-mean);
            }
            out.rows(0, m - 1).transpose()
        };
        let z = center(x);
        let h = center(f);
        let zl = l_inv_right(&z);
        let hl = l_inv_right(&h);
        CenteredCluster {
            index,
            id,
            m,
            s: symmetrize(&(&zl * z.transpose())),
            g: &zl * h.transpose(),
            f: symmetrize(&(&hl * h.transpose())),
            z,
            h,
        }
    }

    /// L⁻¹ = I + J of order m − 1.
    pub fn l_inv(&self) -> Mat {
        let k = self.m - 1;
        Mat::identity(k, k) + Mat::from_element(k, k, 1.0)
    }

    /// log|L| = −log m.
    pub fn log_det_l(&self) -> f64 {
        -(self.m as f64).ln()
    }

    /// Centered covariance L = I − J/m of order m − 1.
    pub fn l(&self) -> Mat {
        let k = self.m - 1;
        Mat::identity(k, k) - Mat::from_element(k, k, 1.0 / self.m as f64)
    }
}

/// A·L⁻¹ = A + (A·1)1ᵀ.
fn l_inv_right(a: &Mat) -> Mat {
    let mut out = a.clone();
    let sums: Vec<f64> = a.row_iter().map(|r| r.sum()).collect();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row.add_scalar_mut(sums[i]);
    }
    out
}

#[derive(Debug, Clone)]
pub struct Centered {
    pub clusters: Vec<CenteredCluster>,
    /// Ids of singleton clusters, which carry no within-cluster information.
    pub excluded: Vec<String>,
}

/// Centers every cluster of size ≥ 2; singletons are reported and skipped.
pub fn center_clusters(data: &ClusteredDataset, cfg: &BasisConfig) -> Result<Centered> {
    let bases = build_bases(data, cfg)?;
    center_with_bases(data, &bases, None)
}

/// `x_shift` holds per-observation offsets subtracted from X before centering.
pub(crate) fn center_with_bases(data: &ClusteredDataset, bases: &Bases, x_shift: Option<&[Mat]>) -> Result<Centered> {
    let mut clusters = Vec::new();
    let mut excluded = Vec::new();
    for (i, (c, f)) in data.clusters.iter().zip(&bases.f).enumerate() {
        if c.m() < 2 {
            excluded.push(c.id.clone());
            continue;
        }
        let x = match x_shift {
            Some(shift) => &c.x - &shift[i],
            None => c.x.clone(),
        };
        clusters.push(CenteredCluster::new(i, c.id.clone(), &x, f));
    }
    if clusters.is_empty() {
        return Err(SdrError::domain("every cluster is a singleton"));
    }
    Ok(Centered { clusters, excluded })
}

/// Monte-Carlo EM settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McemConfig {
    /// Samples per E-step.
    pub samples: usize,
    pub max_iter: usize,
    /// Relative change of the Monte-Carlo log-likelihood that stops the run.
    pub tol: f64,
    pub seed: u64,
    /// Reuse the same standard-normal draws in every E-step.
    pub common_random_numbers: bool,
}

impl Default for McemConfig {
    fn default() -> Self {
        McemConfig { samples: 400, max_iter: 100, tol: 1e-4, seed: 0, common_random_numbers: true }
    }
}

impl McemConfig {
    fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(SdrError::domain("need at least two Monte-Carlo samples"));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(SdrError::domain("tolerance and iteration limit must be positive"));
        }
        Ok(())
    }
}

/// Model for the random-effect row covariance Σ = KΣ̃K.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaModel {
    Unstructured,
    Isotropic,
    Diagonal,
    Ar1,
    Exchangeable,
}

impl SigmaModel {
    pub fn name(&self) -> &'static str {
        match self {
            SigmaModel::Unstructured => "unstructured",
            SigmaModel::Isotropic => "isotropic",
            SigmaModel::Diagonal => "diagonal",
            SigmaModel::Ar1 => "ar1",
            SigmaModel::Exchangeable => "exchangeable",
        }
    }

    /// Unconstrained parameter vector → Σ̃.
    fn structure(&self, theta: &[f64], p: usize) -> CovStructure {
        match self {
            SigmaModel::Diagonal => CovStructure::Diagonal(theta.iter().map(|t| t.exp()).collect()),
            SigmaModel::Ar1 => CovStructure::Ar1 { variance: theta[0].exp(), rho: theta[1].tanh() },
            SigmaModel::Exchangeable => {
                let v = theta[0].exp();
                let lo = -1.0 / (p as f64 - 1.0);
                let rho = lo + (1.0 - lo) / (1.0 + (-theta[1]).exp());
                CovStructure::Exchangeable { variance: v, cov: v * rho }
            }
            SigmaModel::Isotropic => CovStructure::Isotropic(theta[0].exp()),
            SigmaModel::Unstructured => unreachable!("unstructured Σ has a closed-form update"),
        }
    }

    /// Parameters of Σ̃ = s·I in this model's coordinates.
    fn initial(&self, p: usize, s: f64) -> Vec<f64> {
        match self {
            SigmaModel::Diagonal => vec![s.ln(); p],
            SigmaModel::Ar1 => vec![s.ln(), 0.0],
            SigmaModel::Exchangeable => {
                // ρ = 0 in the logistic parameterization
                let lo = -1.0 / (p as f64 - 1.0);
                let u: f64 = -lo / (1.0 - lo);
                vec![s.ln(), (u / (1.0 - u)).ln()]
            }
            _ => vec![s.ln()],
        }
    }
}

/// Current parameter values of the second stage.
#[derive(Debug, Clone)]
pub struct McemState {
    pub c: Mat,
    pub delta: Mat,
    pub sigma: Mat,
    /// Unconstrained parameters of structured Σ̃ models.
    pub sigma_params: Vec<f64>,
}

/// Monte-Carlo draws shared by all clusters.
#[derive(Debug, Clone)]
pub struct McSamples {
    pub v: Vec<Mat>,
    pub gamma: Vec<Mat>,
}

/// Draws V = K·Σ^{1/2}·Z for the given standard normals and maps them to Γ.
pub fn transform_samples(gamma0: &Subspace, sigma: &Mat, normals: &[Mat]) -> McSamples {
    let root = sym_sqrt(sigma);
    let u = gamma0.basis();
    let v: Vec<Mat> = normals
        .par_iter()
        .map(|z| {
            let mut v = &root * z;
            v -= u * (u.transpose() * &v);
            v
        })
        .collect();
    let gamma = v.par_iter().map(|v| exp_basis(u, v)).collect();
    McSamples { v, gamma }
}

fn draw_normals(p: usize, d: usize, t: usize, seed: u64, stream: u64) -> Vec<Mat> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..t).map(|_| standard_normal_matrix(p, d, &mut rng)).collect()
}

/// Output of one E-step.
#[derive(Debug, Clone)]
pub struct EStep {
    pub samples: McSamples,
    /// n×T normalized weights, one row per centered cluster.
    pub weights: Vec<Vec<f64>>,
    /// log T⁻¹ Σₜ w̃ᵢₜ per cluster.
    pub log_mean_weight: Vec<f64>,
    /// Effective sample size 1/Σₜ wᵢₜ² per cluster.
    pub ess: Vec<f64>,
    /// Delta-method standard error of each cluster's log-mean weight.
    pub se: Vec<f64>,
}

impl EStep {
    pub fn loglik(&self) -> f64 {
        self.log_mean_weight.iter().sum()
    }

    pub fn loglik_se(&self) -> f64 {
        self.se.iter().map(|s| s * s).sum::<f64>().sqrt()
    }
}

/// Importance weights with the prior as proposal.
pub fn e_step_weights<R: rand::Rng + ?Sized>(
    state: &McemState,
    gamma0: &Subspace,
    clusters: &[CenteredCluster],
    t: usize,
    rng: &mut R,
) -> Result<EStep> {
    let normals: Vec<Mat> = (0..t).map(|_| standard_normal_matrix(gamma0.p(), gamma0.d(), rng)).collect();
    let samples = transform_samples(gamma0, &state.sigma, &normals);
    weights_for(state, clusters, samples)
}

/// Weights for given samples.
pub fn weights_for(state: &McemState, clusters: &[CenteredCluster], samples: McSamples) -> Result<EStep> {
    let p = state.delta.nrows();
    let (dinv, logdet) = spd_inv_logdet(&state.delta)?;
    // per-sample Γᵗᵀ Δ⁻¹ Γᵗ
    let mt: Vec<Mat> = samples.gamma.par_iter().map(|g| g.transpose() * &dinv * g).collect();
    let rows: Vec<Result<(Vec<f64>, f64, f64, f64)>> = clusters
        .par_iter()
        .enumerate()
        .map(|(ci, cl)| {
            let k = (cl.m - 1) as f64;
            let a = (&dinv * &cl.s).trace();
            let b = &dinv * &cl.g * state.c.transpose();
            let q = &state.c * &cl.f * state.c.transpose();
            let constant = -0.5 * p as f64 * k * LN_2PI - 0.5 * k * logdet - 0.5 * p as f64 * cl.log_det_l();
            let logw: Vec<f64> = samples
                .gamma
                .iter()
                .zip(&mt)
                .map(|(g, m)| constant - 0.5 * (a - 2.0 * frob_dot(g, &b) + frob_dot(m, &q)))
                .collect();
            let lse = log_sum_exp(&logw);
            if !lse.is_finite() {
                return Err(SdrError::McDegeneracy { cluster: ci });
            }
            let w: Vec<f64> = logw.iter().map(|l| (l - lse).exp()).collect();
            let sum_sq: f64 = w.iter().map(|x| x * x).sum();
            let tt = w.len() as f64;
            let se = ((tt * sum_sq - 1.0).max(0.0) / tt).sqrt();
            Ok((w, lse - tt.ln(), 1.0 / sum_sq, se))
        })
        .collect();
    let mut weights = Vec::with_capacity(clusters.len());
    let mut log_mean_weight = Vec::with_capacity(clusters.len());
    let mut ess = Vec::with_capacity(clusters.len());
    let mut se = Vec::with_capacity(clusters.len());
    for r in rows {
        let (w, l, e, s) = r?;
        weights.push(w);
        log_mean_weight.push(l);
        ess.push(e);
        se.push(s);
    }
    Ok(EStep { samples, weights, log_mean_weight, ess, se })
}

const WEIGHT_FLOOR: f64 = 1e-300;

/// Closed-form updates of Δ and C, then Σ under the chosen model.
pub fn m_step_update(
    estep: &EStep,
    clusters: &[CenteredCluster],
    state: &McemState,
    gamma0: &Subspace,
    model: SigmaModel,
) -> Result<McemState> {
    let p = gamma0.p();
    let d = gamma0.d();
    let r = state.c.ncols();
    let n = clusters.len();
    let total: usize = clusters.iter().map(|c| c.m).sum();
    if total <= n {
        return Err(SdrError::domain("no within-cluster replication"));
    }
    let samples = &estep.samples;
    let c0 = &state.c;

    // Δ with the current C
    let parts: Vec<(Mat, Mat)> = clusters
        .par_iter()
        .zip(&estep.weights)
        .map(|(cl, w)| {
            let mut gbar = Mat::zeros(p, d);
            let q = c0 * &cl.f * c0.transpose();
            let mut quad = Mat::zeros(p, p);
            for (t, &wt) in w.iter().enumerate() {
                if wt < WEIGHT_FLOOR {
                    continue;
                }
                let g = &samples.gamma[t];
                gbar += g * wt;
                quad += (g * &q * g.transpose()) * wt;
            }
            let cross = &gbar * c0 * cl.g.transpose();
            (&cl.s - &cross - cross.transpose() + quad, gbar)
        })
        .collect();
    let mut delta = Mat::zeros(p, p);
    for (part, _) in &parts {
        delta += part;
    }
    delta = symmetrize(&(delta / (total - n) as f64));
    let dinv = spd_inverse(&delta).map_err(|_| SdrError::ill("updated Δ is not positive definite"))?;

    // C with the updated Δ
    let mt: Vec<Mat> = samples.gamma.par_iter().map(|g| g.transpose() * &dinv * g).collect();
    let blocks: Vec<(Mat, Mat)> = clusters
        .par_iter()
        .zip(&estep.weights)
        .zip(&parts)
        .map(|((cl, w), (_, gbar))| {
            let mut mbar = Mat::zeros(d, d);
            for (t, &wt) in w.iter().enumerate() {
                if wt >= WEIGHT_FLOOR {
                    mbar += &mt[t] * wt;
                }
            }
            (cl.f.kronecker(&mbar), gbar.transpose() * &dinv * &cl.g)
        })
        .collect();
    let mut xi = Mat::zeros(d * r, d * r);
    let mut e = Mat::zeros(d, r);
    for (x, ei) in &blocks {
        xi += x;
        e += ei;
    }
    let xi = symmetrize(&xi);
    check_conditioning(&xi, "C-update system Ξ")?;
    let vec_c = spd_inverse(&xi)? * crate::linalg::Vector::from_column_slice(e.as_slice());
    let c = Mat::from_column_slice(d, r, vec_c.as_slice());

    // Σ from the pooled weights
    let mut omega = vec![0.0; samples.v.len()];
    for w in &estep.weights {
        for (o, x) in omega.iter_mut().zip(w) {
            *o += x;
        }
    }
    let mut second = Mat::zeros(p, p);
    for (v, &o) in samples.v.iter().zip(&omega) {
        if o >= WEIGHT_FLOOR {
            second += (v * v.transpose()) * o;
        }
    }
    second = symmetrize(&(second / n as f64));
    let k = gamma0.complement_projector();
    let (sigma, sigma_params) = match model {
        SigmaModel::Unstructured => (symmetrize(&(&k * &second * &k)), Vec::new()),
        SigmaModel::Isotropic => {
            let s2 = (&k * &second).trace() / (d * (p - d)) as f64;
            (&k * s2, vec![s2.max(1e-300).ln()])
        }
        _ => fit_structured(model, &second, gamma0, &state.sigma_params)?,
    };
    Ok(McemState { c, delta, sigma, sigma_params })
}

struct StructuredCost<'a> {
    model: SigmaModel,
    second: &'a Mat,
    k: Mat,
    p: usize,
    d: usize,
}

impl CostFunction for StructuredCost<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, theta: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let tilde = match self.model.structure(theta, self.p).realize(self.p) {
            Ok(m) => m,
            Err(_) => return Ok(f64::INFINITY),
        };
        let sigma = symmetrize(&(&self.k * tilde * &self.k));
        let (vals, vecs) = sym_eigen_desc(&sigma);
        let rank = self.p - self.d;
        let mut cost = 0.0;
        for i in 0..rank {
            if !(vals[i] > 1e-12) {
                return Ok(f64::INFINITY);
            }
            let e = vecs.column(i);
            cost += 0.5 * self.d as f64 * vals[i].ln() + 0.5 * (e.transpose() * self.second * e)[(0, 0)] / vals[i];
        }
        Ok(cost)
    }
}

fn fit_structured(model: SigmaModel, second: &Mat, gamma0: &Subspace, start: &[f64]) -> Result<(Mat, Vec<f64>)> {
    let p = gamma0.p();
    let cost = StructuredCost { model, second, k: gamma0.complement_projector(), p, d: gamma0.d() };
    let x0 = start.to_vec();
    let mut simplex = vec![x0.clone()];
    for i in 0..x0.len() {
        let mut x = x0.clone();
        x[i] += 0.5;
        simplex.push(x);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-10)
        .map_err(|e| SdrError::ill(format!("structured Σ update: {e}")))?;
    let res = Executor::new(cost, solver)
        .configure(|s| s.max_iters(2000))
        .run()
        .map_err(|e| SdrError::ill(format!("structured Σ update: {e}")))?;
    let theta = res.state.best_param.unwrap_or(x0);
    let tilde = model.structure(&theta, p).realize(p)?;
    let k = gamma0.complement_projector();
    Ok((symmetrize(&(&k * tilde * &k)), theta))
}

/// Second-stage estimates and per-cluster predictions.
#[derive(Debug, Clone)]
pub struct RpfcFit {
    pub gamma0: Subspace,
    pub c: Mat,
    pub delta: Mat,
    pub sigma: Mat,
    pub sigma_model: SigmaModel,
    /// Σ̃ parameters for structured models (unconstrained coordinates).
    pub sigma_params: Vec<f64>,
    /// Dataset index of every retained cluster.
    pub cluster_index: Vec<usize>,
    pub cluster_ids: Vec<String>,
    pub excluded: Vec<String>,
    pub vhat: Vec<TangentVector>,
    pub gamma_hat: Vec<Subspace>,
    pub theta_hat: Vec<Subspace>,
    pub loglik_trace: Vec<f64>,
    pub loglik_se: Vec<f64>,
    /// Effective sample sizes of the final E-step.
    pub ess: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub stage1: PfcFit,
    pub basis: BasisConfig,
    pub mcem: McemConfig,
}

impl RpfcFit {
    /// Basis of the fixed-effect central subspace Δ̂⁻¹[Γ̂₀].
    pub fn theta0(&self) -> Result<Subspace> {
        Subspace::from_span(&(spd_inverse(&self.delta)? * self.gamma0.basis()))
    }
}

/// Two-stage RPFC fit.
pub fn fit_rpfc(
    data: &ClusteredDataset,
    d: usize,
    cfg: &BasisConfig,
    mcem: &McemConfig,
    model: SigmaModel,
) -> Result<RpfcFit> {
    let bases = build_bases(data, cfg)?;
    let stage1 = fit_gpfc_with_bases(data, &bases, d)?;
    fit_rpfc_stage2(data, &bases, stage1, cfg, mcem, model, None)
}

/// Second stage given a first-stage fit (shared with GPFC in benchmarks).
pub fn fit_rpfc_with_stage1(
    data: &ClusteredDataset,
    stage1: PfcFit,
    cfg: &BasisConfig,
    mcem: &McemConfig,
    model: SigmaModel,
) -> Result<RpfcFit> {
    let bases = build_bases(data, cfg)?;
    fit_rpfc_stage2(data, &bases, stage1, cfg, mcem, model, None)
}

pub(crate) fn fit_rpfc_stage2(
    data: &ClusteredDataset,
    bases: &Bases,
    stage1: PfcFit,
    cfg: &BasisConfig,
    mcem: &McemConfig,
    model: SigmaModel,
    x_shift: Option<&[Mat]>,
) -> Result<RpfcFit> {
    mcem.validate()?;
    let d = stage1.d();
    let p = data.p();
    let r = bases.f[0].ncols();
    if d > p.min(r) {
        return Err(SdrError::domain("d exceeds min(p, r)"));
    }
    let centered = center_with_bases(data, bases, x_shift)?;
    let clusters = &centered.clusters;
    let gamma0 = stage1.gamma.clone();
    let k = gamma0.complement_projector();
    let init = 0.1;
    let mut state = McemState {
        c: stage1.c.clone(),
        delta: stage1.delta.clone(),
        sigma: &k * init,
        sigma_params: match model {
            SigmaModel::Unstructured => Vec::new(),
            m => m.initial(p, init),
        },
    };
    let mut trace = Vec::new();
    let mut trace_se = Vec::new();
    let mut converged = false;
    let mut estep;
    let mut iter = 0;
    let fixed_normals = draw_normals(p, d, mcem.samples, mcem.seed, 0);
    loop {
        let normals = if mcem.common_random_numbers {
            fixed_normals.clone()
        } else {
            draw_normals(p, d, mcem.samples, mcem.seed, iter as u64)
        };
        let samples = transform_samples(&gamma0, &state.sigma, &normals);
        estep = weights_for(&state, clusters, samples)?;
        let ll = estep.loglik();
        log::debug!("mcem iteration {iter}: loglik {ll:.6} (se {:.3e})", estep.loglik_se());
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            if ((ll - prev) / ll.abs().max(1e-300)).abs() < mcem.tol {
                trace.push(ll);
                trace_se.push(estep.loglik_se());
                converged = true;
                break;
            }
        }
        trace.push(ll);
        trace_se.push(estep.loglik_se());
        if iter == mcem.max_iter {
            break;
        }
        state = m_step_update(&estep, clusters, &state, &gamma0, model)?;
        iter += 1;
    }
    if !converged {
        return Err(SdrError::Convergence {
            iterations: iter,
            message: "Monte-Carlo EM log-likelihood did not stabilise".into(),
            trace,
        });
    }
    let dinv = spd_inverse(&state.delta)?;
    let mut vhat = Vec::with_capacity(clusters.len());
    let mut gamma_hat = Vec::with_capacity(clusters.len());
    let mut theta_hat = Vec::with_capacity(clusters.len());
    for w in &estep.weights {
        let (v, g, t) = posterior_mean(&gamma0, &estep.samples, w, &dinv)?;
        vhat.push(v);
        gamma_hat.push(g);
        theta_hat.push(t);
    }
    Ok(RpfcFit {
        gamma0,
        c: state.c,
        delta: state.delta,
        sigma: state.sigma,
        sigma_model: model,
        sigma_params: state.sigma_params,
        cluster_index: clusters.iter().map(|c| c.index).collect(),
        cluster_ids: clusters.iter().map(|c| c.id.clone()).collect(),
        excluded: centered.excluded,
        vhat,
        gamma_hat,
        theta_hat,
        loglik_trace: trace,
        loglik_se: trace_se,
        ess: estep.ess,
        iterations: iter,
        converged,
        stage1,
        basis: *cfg,
        mcem: *mcem,
    })
}

fn posterior_mean(gamma0: &Subspace, samples: &McSamples, w: &[f64], dinv: &Mat) -> Result<(TangentVector, Subspace, Subspace)> {
    let mut v = Mat::zeros(gamma0.p(), gamma0.d());
    for (vt, &wt) in samples.v.iter().zip(w) {
        v += vt * wt;
    }
    let u = gamma0.basis();
    v -= u * (u.transpose() * &v);
    let g = Subspace::new(exp_basis(u, &v)).or_else(|_| Subspace::from_span(&exp_basis(u, &v)))?;
    let theta = Subspace::from_span(&(dinv * g.basis()))?;
    Ok((TangentVector::new(gamma0, v)?, g, theta))
}

/// Posterior-mean prediction for one cluster.
#[derive(Debug, Clone)]
pub struct ClusterPrediction {
    pub vhat: TangentVector,
    pub gamma_hat: Subspace,
    pub theta_hat: Subspace,
    pub ess: f64,
}

/// Predicts the subspaces of a (possibly new) cluster at the fitted parameters.
pub fn predict_cluster_subspace(fit: &RpfcFit, cluster: &Cluster) -> Result<ClusterPrediction> {
    predict_from_params(&fit.gamma0, &fit.c, &fit.delta, &fit.sigma, &fit.basis, &fit.mcem, cluster)
}

/// Same as [`predict_cluster_subspace`] from stored parameters. The Monte-Carlo
/// draws are regenerated from `mcem.seed`, so a training cluster gets back its
/// fitted prediction.
pub fn predict_from_params(
    gamma0: &Subspace,
    c: &Mat,
    delta: &Mat,
    sigma: &Mat,
    basis: &BasisConfig,
    mcem: &McemConfig,
    cluster: &Cluster,
) -> Result<ClusterPrediction> {
    let (p, d) = (gamma0.p(), gamma0.d());
    if cluster.m() < 2 {
        return Err(SdrError::domain("prediction needs at least two observations"));
    }
    if cluster.x.ncols() != p {
        return Err(SdrError::domain("cluster dimension does not match the fit"));
    }
    if c.shape() != (d, basis.degree) || delta.shape() != (p, p) || sigma.shape() != (p, p) {
        return Err(SdrError::domain("stored parameters have inconsistent shapes"));
    }
    let data = ClusteredDataset::new(vec![Cluster { w: None, ..cluster.clone() }])?;
    let bases = build_bases(&data, basis)?;
    let cc = CenteredCluster::new(0, cluster.id.clone(), &cluster.x, &bases.f[0]);
    let normals = draw_normals(p, d, mcem.samples, mcem.seed, 0);
    let samples = transform_samples(gamma0, sigma, &normals);
    let state = McemState { c: c.clone(), delta: delta.clone(), sigma: sigma.clone(), sigma_params: Vec::new() };
    let estep = weights_for(&state, std::slice::from_ref(&cc), samples)?;
    let dinv = spd_inverse(delta)?;
    let (vhat, gamma_hat, theta_hat) = posterior_mean(gamma0, &estep.samples, &estep.weights[0], &dinv)?;
    Ok(ClusterPrediction { vhat, gamma_hat, theta_hat, ess: estep.ess[0] })
}
