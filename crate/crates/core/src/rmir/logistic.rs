//! Logistic regression by iteratively reweighted least squares, and the
//! logistic mixed model `logit P(W_ijk = 1) = B_ikᵀ f_ij`, `B_ik ~ N(b₀ₖ, Σ_bk)`.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::error::{Result, SdrError};
use crate::linalg::{check_conditioning, log_sum_exp, spd_inverse, sym_sqrt, symmetrize, Mat, Vector};
use crate::matnorm::standard_normal_matrix;
use crate::rpfc::McemConfig;

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub coef: Vector,
    pub loglik: f64,
    pub iterations: usize,
}

/// Largest coefficient magnitude before the fit is declared separated.
const SEPARATION_BOUND: f64 = 30.0;

pub(crate) fn log1pexp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn bernoulli_loglik(y: &[f64], eta: &[f64]) -> f64 {
    y.iter().zip(eta).map(|(&yi, &z)| yi * z - log1pexp(z)).sum()
}

/// Maximizes Σ yᵢηᵢ − log(1 + e^{ηᵢ}) with η = Xβ + offset.
///
/// Newton steps are halved until the objective does not decrease. Coefficients
/// that run past a large bound indicate separation and yield an error.
pub fn fit_logistic(x: &Mat, y: &[f64], offset: Option<&[f64]>, start: Option<&Vector>, max_iter: usize) -> Result<LogisticFit> {
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(SdrError::domain("response length does not match design"));
    }
    let off = |i: usize| offset.map_or(0.0, |o| o[i]);
    let eta_of = |b: &Vector| -> Vec<f64> { (x * b).iter().enumerate().map(|(i, v)| v + off(i)).collect() };
    let mut beta = start.cloned().unwrap_or_else(|| Vector::zeros(k));
    let mut eta = eta_of(&beta);
    let mut ll = bernoulli_loglik(y, &eta);
    for it in 0..max_iter {
        let mut grad = Vector::zeros(k);
        let mut info = Mat::zeros(k, k);
        for i in 0..n {
            let pi = sigmoid(eta[i]);
            let row = x.row(i);
            grad += row.transpose() * (y[i] - pi);
            let w = pi * (1.0 - pi);
            if w > 0.0 {
                info += row.transpose() * row * w;
            }
        }
        info = symmetrize(&info) + Mat::identity(k, k) * 1e-12;
        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => return Err(SdrError::Separation { node: 0 }),
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &beta + &step * scale;
            let cand_eta = eta_of(&cand);
            let cand_ll = bernoulli_loglik(y, &cand_eta);
            if cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                let gain = cand_ll - ll;
                beta = cand;
                eta = cand_eta;
                ll = cand_ll;
                accepted = true;
                if beta.amax() > SEPARATION_BOUND {
                    return Err(SdrError::Separation { node: 0 });
                }
                if gain.abs() < 1e-10 * ll.abs().max(1.0) && step.amax() * scale < 1e-8 {
                    return Ok(LogisticFit { coef: beta, loglik: ll, iterations: it + 1 });
                }
                break;
            }
            scale *= 0.5;
        }
        if !accepted || step.amax() < 1e-10 {
            return Ok(LogisticFit { coef: beta, loglik: ll, iterations: it + 1 });
        }
    }
    Err(SdrError::Convergence {
        iterations: max_iter,
        message: "logistic IRLS did not converge".into(),
        trace: vec![ll],
    })
}

/// Fixed and random slopes of one binary component.
#[derive(Debug, Clone)]
pub struct LogisticMixedParams {
    pub b0: Vector,
    pub sigma_b: Mat,
    /// Posterior mean of B_ik per cluster.
    pub b_hat: Vec<Vector>,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Marginal maximum likelihood by Monte-Carlo EM with the prior as proposal.
///
/// `w[i]` holds the binary series of cluster i and `f[i]` its m_i×r basis.
pub fn fit_logistic_mixed(w: &[Vec<f64>], f: &[Mat], mcem: &McemConfig) -> Result<LogisticMixedParams> {
    if w.is_empty() || w.len() != f.len() {
        return Err(SdrError::domain("need one basis matrix per cluster"));
    }
    let r = f[0].ncols();
    for (wi, fi) in w.iter().zip(f) {
        if wi.len() != fi.nrows() || fi.ncols() != r {
            return Err(SdrError::domain("binary series and basis disagree in shape"));
        }
    }
    // pooled fit for the starting value and as the no-random-effect limit
    let pooled_x = crate::data::stack_rows(f.to_vec());
    let pooled_y: Vec<f64> = w.iter().flatten().cloned().collect();
    let pooled = fit_logistic(&pooled_x, &pooled_y, None, None, 500)?;
    let mut b0 = pooled.coef.clone();
    let mut sigma_b = Mat::identity(r, r) * 0.25;
    let t = mcem.samples;
    let mut rng = ChaCha20Rng::seed_from_u64(mcem.seed);
    rng.set_stream(1);
    let fixed: Vec<Vector> = (0..t)
        .map(|_| standard_normal_matrix(r, 1, &mut rng).column(0).into_owned())
        .collect();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iter = 0;
    let mut weights;
    let mut draws;
    loop {
        let normals = if mcem.common_random_numbers {
            fixed.clone()
        } else {
            let mut rng = ChaCha20Rng::seed_from_u64(mcem.seed);
            rng.set_stream(2 + iter as u64);
            (0..t).map(|_| standard_normal_matrix(r, 1, &mut rng).column(0).into_owned()).collect()
        };
        let root = sym_sqrt(&sigma_b);
        draws = normals.iter().map(|z| &b0 + &root * z).collect::<Vec<Vector>>();
        let per: Vec<(Vec<f64>, f64)> = w
            .par_iter()
            .zip(f.par_iter())
            .map(|(wi, fi)| {
                let logw: Vec<f64> = draws
                    .iter()
                    .map(|b| {
                        let eta: Vec<f64> = (fi * b).iter().cloned().collect();
                        bernoulli_loglik(wi, &eta)
                    })
                    .collect();
                let lse = log_sum_exp(&logw);
                (logw.iter().map(|l| (l - lse).exp()).collect(), lse - (t as f64).ln())
            })
            .collect();
        let ll: f64 = per.iter().map(|(_, l)| l).sum();
        weights = per.into_iter().map(|(w, _)| w).collect::<Vec<Vec<f64>>>();
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            if ((ll - prev) / ll.abs().max(1e-300)).abs() < mcem.tol {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        if iter == mcem.max_iter {
            break;
        }
        let n = w.len() as f64;
        let mut new_b0 = Vector::zeros(r);
        for wi in &weights {
            for (b, &x) in draws.iter().zip(wi) {
                new_b0 += b * x;
            }
        }
        new_b0 /= n;
        let mut s = Mat::zeros(r, r);
        for wi in &weights {
            for (b, &x) in draws.iter().zip(wi) {
                let dv = b - &new_b0;
                s += &dv * dv.transpose() * x;
            }
        }
        b0 = new_b0;
        sigma_b = symmetrize(&(s / n));
        iter += 1;
    }
    let b_hat = weights
        .iter()
        .map(|wi| {
            let mut m = Vector::zeros(r);
            for (b, &x) in draws.iter().zip(wi) {
                m += b * x;
            }
            m
        })
        .collect();
    Ok(LogisticMixedParams { b0, sigma_b, b_hat, loglik_trace: trace, iterations: iter, converged })
}

/// Standard errors of a logistic fit from the observed information.
#[allow(dead_code)]
pub(crate) fn logistic_information(x: &Mat, coef: &Vector) -> Result<Mat> {
    let k = x.ncols();
    let mut info = Mat::zeros(k, k);
    for i in 0..x.nrows() {
        let row = x.row(i);
        let pi = sigmoid((row * coef)[(0, 0)]);
        info += row.transpose() * row * (pi * (1.0 - pi));
    }
    check_conditioning(&info, "logistic information")?;
    spd_inverse(&info)
}
