//! Quadratic exponential family for q binary variables.
//!
//! The sufficient statistic is T(w) = vech(wwᵀ) laid out as the q diagonal
//! terms w_k followed by the products w_k w_l, k < l, in lexicographic order.
//! Natural parameters depend on the response through θ_i = τ₀ + B C₂ g_i.

use rand::Rng;

use super::logistic::{fit_logistic, log1pexp, sigmoid};
use crate::error::{Result, SdrError};
use crate::linalg::{canonicalize_signs, log_sum_exp, Mat, Vector};

/// Largest q handled by exact enumeration.
pub const MAX_EXACT_Q: usize = 12;

/// Index pairs of the sufficient statistic.
pub fn vech_pairs(q: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..q).map(|k| (k, k)).collect();
    for k in 0..q {
        for l in k + 1..q {
            out.push((k, l));
        }
    }
    out
}

pub fn sufficient_stat(w: &[f64]) -> Vector {
    let q = w.len();
    Vector::from_iterator(q * (q + 1) / 2, vech_pairs(q).into_iter().map(|(k, l)| w[k] * w[l]))
}

/// Index of the (k, l) pair in the statistic.
pub fn pair_index(q: usize, k: usize, l: usize) -> usize {
    let (k, l) = if k <= l { (k, l) } else { (l, k) };
    if k == l {
        return k;
    }
    // offset of row k among the off-diagonal pairs
    let before: usize = (0..k).map(|a| q - a - 1).sum();
    q + before + (l - k - 1)
}

fn all_states(q: usize) -> Vec<Vec<f64>> {
    (0..1usize << q)
        .map(|s| (0..q).map(|k| ((s >> k) & 1) as f64).collect())
        .collect()
}

/// Log normalizing constant by enumeration.
pub fn log_partition(theta: &Vector, q: usize) -> Result<f64> {
    if q > MAX_EXACT_Q {
        return Err(SdrError::domain(format!("exact enumeration limited to q <= {MAX_EXACT_Q}")));
    }
    let terms: Vec<f64> = all_states(q).iter().map(|w| theta.dot(&sufficient_stat(w))).collect();
    Ok(log_sum_exp(&terms))
}

/// Exact draw from the distribution with natural parameter θ.
pub fn sample_ising<R: Rng + ?Sized>(theta: &Vector, q: usize, rng: &mut R) -> Result<Vec<u8>> {
    let states = all_states(q);
    let logz = log_partition(theta, q)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for w in &states {
        acc += (theta.dot(&sufficient_stat(w)) - logz).exp();
        if u < acc {
            return Ok(w.iter().map(|&v| v as u8).collect());
        }
    }
    Ok(states.last().unwrap().iter().map(|&v| v as u8).collect())
}

#[derive(Debug, Clone)]
pub struct IsingParams {
    pub tau0: Vector,
    /// P×d′ with P = q(q+1)/2.
    pub b: Mat,
    /// d′×r₂.
    pub c2: Mat,
}

impl IsingParams {
    pub fn q(&self) -> usize {
        let p = self.tau0.len();
        ((((8 * p + 1) as f64).sqrt() as usize) - 1) / 2
    }

    pub fn natural(&self, g: &Vector) -> Vector {
        &self.tau0 + &self.b * (&self.c2 * g)
    }
}

/// Exact log-likelihood Σ_i θ_iᵀT(W_i) − log Z(θ_i).
pub fn exact_loglik(params: &IsingParams, w: &Mat, g: &Mat) -> Result<f64> {
    let q = w.ncols();
    let mut ll = 0.0;
    for i in 0..w.nrows() {
        let theta = params.natural(&g.row(i).transpose());
        let wi: Vec<f64> = w.row(i).iter().cloned().collect();
        ll += theta.dot(&sufficient_stat(&wi)) - log_partition(&theta, q)?;
    }
    Ok(ll)
}

/// Conditional logit of node k given the other nodes.
fn node_logit(theta: &Vector, w: &[f64], k: usize) -> f64 {
    let q = w.len();
    let mut z = theta[k];
    for l in 0..q {
        if l != k {
            z += theta[pair_index(q, k, l)] * w[l];
        }
    }
    z
}

/// Σ_i Σ_k log P(W_ik | W_i,−k).
pub fn pseudo_loglik(params: &IsingParams, w: &Mat, g: &Mat) -> f64 {
    let q = w.ncols();
    let mut ll = 0.0;
    for i in 0..w.nrows() {
        let theta = params.natural(&g.row(i).transpose());
        let wi: Vec<f64> = w.row(i).iter().cloned().collect();
        for k in 0..q {
            let z = node_logit(&theta, &wi, k);
            ll += wi[k] * z - log1pexp(z);
        }
    }
    ll
}

/// Gradient of the per-row pseudo log-likelihood in the natural parameter.
pub(crate) fn pseudo_grad_theta(theta: &Vector, w: &[f64]) -> Vector {
    let q = w.len();
    let resid: Vec<f64> = (0..q).map(|k| w[k] - sigmoid(node_logit(theta, w, k))).collect();
    let mut g = Vector::zeros(theta.len());
    for k in 0..q {
        g[k] += resid[k];
        for l in k + 1..q {
            g[pair_index(q, k, l)] += resid[k] * w[l] + resid[l] * w[k];
        }
    }
    g
}

/// Gradient of the pseudo log-likelihood in (τ₀, B, C₂), column-major for matrices.
pub fn pseudo_loglik_grad(params: &IsingParams, w: &Mat, g: &Mat) -> (Vector, Mat, Mat) {
    let mut gt = Vector::zeros(params.tau0.len());
    let mut gb = Mat::zeros(params.b.nrows(), params.b.ncols());
    let mut gc = Mat::zeros(params.c2.nrows(), params.c2.ncols());
    for i in 0..w.nrows() {
        let gi = g.row(i).transpose();
        let theta = params.natural(&gi);
        let wi: Vec<f64> = w.row(i).iter().cloned().collect();
        let dt = pseudo_grad_theta(&theta, &wi);
        let u = &params.c2 * &gi;
        gb += &dt * u.transpose();
        gc += params.b.transpose() * &dt * gi.transpose();
        gt += dt;
    }
    (gt, gb, gc)
}

#[derive(Debug, Clone)]
pub struct IsingFit {
    pub params: IsingParams,
    pub pseudo_loglik: f64,
    pub iterations: usize,
}

/// Stacks the node-wise logistic regressions: one row per (i, k) with the
/// natural-parameter design x_{ik} such that the node logit is x_{ik}ᵀθ_i.
fn node_design(w: &Mat) -> (Vec<Vector>, Vec<f64>) {
    let (n, q) = w.shape();
    let np = q * (q + 1) / 2;
    let mut rows = Vec::with_capacity(n * q);
    let mut resp = Vec::with_capacity(n * q);
    for i in 0..n {
        for k in 0..q {
            let mut x = Vector::zeros(np);
            x[k] = 1.0;
            for l in 0..q {
                if l != k {
                    x[pair_index(q, k, l)] = w[(i, l)];
                }
            }
            rows.push(x);
            resp.push(w[(i, k)]);
        }
    }
    (rows, resp)
}

fn separation_node(w: &Mat) -> Option<usize> {
    (0..w.ncols()).find(|&k| {
        let col = w.column(k);
        col.iter().all(|&v| v == 0.0) || col.iter().all(|&v| v == 1.0)
    })
}

/// Maximum pseudo-likelihood with rank-d′ coefficient B C₂, by alternating
/// logistic fits in (τ₀, B) and (τ₀, C₂).
pub fn fit_ising_pseudo(w: &Mat, g: &Mat, d_prime: usize) -> Result<IsingFit> {
    let (n, q) = w.shape();
    let r2 = g.ncols();
    if g.nrows() != n {
        return Err(SdrError::domain("W and g have different numbers of rows"));
    }
    if q < 2 || q > MAX_EXACT_Q {
        return Err(SdrError::domain(format!("q must lie in 2..={MAX_EXACT_Q}")));
    }
    let np = q * (q + 1) / 2;
    if d_prime == 0 || d_prime > np.min(r2) {
        return Err(SdrError::domain("binary reduction dimension out of range"));
    }
    if let Some(node) = separation_node(w) {
        return Err(SdrError::Separation { node });
    }
    let (xs, resp) = node_design(w);
    let gi = |row: usize| g.row(row / q).transpose();
    let tag = |e: SdrError| match e {
        SdrError::Separation { .. } => SdrError::Separation { node: separation_guess(w) },
        other => other,
    };

    // unrestricted fit θ_i = τ₀ + Φ g_i, then rank-d′ truncation
    let design = Mat::from_fn(n * q, np * (1 + r2), |row, c| {
        let x = &xs[row];
        if c < np {
            x[c]
        } else {
            let c = c - np;
            x[c % np] * gi(row)[c / np]
        }
    });
    let full = fit_logistic(&design, &resp, None, None, 500).map_err(tag)?;
    let tau0 = full.coef.rows(0, np).into_owned();
    let phi = Mat::from_column_slice(np, r2, full.coef.rows(np, np * r2).as_slice());
    let svd = phi.clone().svd(true, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let b = Mat::from_fn(np, d_prime, |i, j| u[(i, order[j])]);
    let c2 = Mat::from_fn(d_prime, r2, |i, j| svd.singular_values[order[i]] * vt[(order[i], j)]);
    let mut params = IsingParams { tau0, b, c2 };
    let mut ll = pseudo_loglik(&params, w, g);
    let mut iterations = 0;
    if d_prime < np.min(r2) {
        for it in 0..200 {
            iterations = it + 1;
            // (τ₀, B) given C₂
            let u: Vec<Vector> = (0..n).map(|i| &params.c2 * g.row(i).transpose()).collect();
            let design = Mat::from_fn(n * q, np * (1 + d_prime), |row, c| {
                let x = &xs[row];
                if c < np {
                    x[c]
                } else {
                    let c = c - np;
                    x[c % np] * u[row / q][c / np]
                }
            });
            let fit = fit_logistic(&design, &resp, None, None, 500).map_err(tag)?;
            params.tau0 = fit.coef.rows(0, np).into_owned();
            params.b = Mat::from_column_slice(np, d_prime, fit.coef.rows(np, np * d_prime).as_slice());
            // (τ₀, C₂) given B
            let bx: Vec<Vector> = xs.iter().map(|x| params.b.transpose() * x).collect();
            let design = Mat::from_fn(n * q, np + d_prime * r2, |row, c| {
                if c < np {
                    xs[row][c]
                } else {
                    let c = c - np;
                    bx[row][c % d_prime] * gi(row)[c / d_prime]
                }
            });
            let fit = fit_logistic(&design, &resp, None, None, 500).map_err(tag)?;
            params.tau0 = fit.coef.rows(0, np).into_owned();
            params.c2 = Mat::from_column_slice(d_prime, r2, fit.coef.rows(np, d_prime * r2).as_slice());
            let new = pseudo_loglik(&params, w, g);
            let done = (new - ll).abs() < 1e-10 * ll.abs().max(1.0);
            ll = new;
            if done {
                break;
            }
        }
    }
    params = normalize(params);
    Ok(IsingFit { pseudo_loglik: pseudo_loglik(&params, w, g), params, iterations })
}

/// B with orthonormal columns and canonical signs; C₂ absorbs the rest.
fn normalize(p: IsingParams) -> IsingParams {
    let qr = p.b.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let c2 = &r * &p.c2;
    let qs = canonicalize_signs(q.clone());
    let mut c2 = c2;
    for j in 0..qs.ncols() {
        if qs.column(j).dot(&q.column(j)) < 0.0 {
            let mut row = c2.row_mut(j);
            row *= -1.0;
        }
    }
    IsingParams { tau0: p.tau0, b: qs, c2 }
}

fn separation_guess(w: &Mat) -> usize {
    // node whose marginal is most extreme
    (0..w.ncols())
        .map(|k| (k, (w.column(k).mean() - 0.5).abs()))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map_or(0, |(k, _)| k)
}
