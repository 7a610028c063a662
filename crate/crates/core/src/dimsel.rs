//! Choosing the structural dimension by information criteria.
//!
//! For a candidate dimension w the PFC model has
//! `h(w) = p(p+3)/2 + r·w + w(p−w)` free parameters. The global criteria
//! penalize the pooled fit, `−2ℓ(w) + ρ·h(w)` with ρ = 2 (GAIC) or log N
//! (GBIC). The separate criteria add the per-cluster versions,
//! `Σᵢ {−2ℓᵢ(w) + ρᵢ·h(w)}` with ρᵢ = 2 (SAIC) or log mᵢ (SBIC).
//!
//! Binary covariates are ignored: selection concerns the continuous part.

use rayon::prelude::*;

use crate::data::{build_bases, BasisConfig, ClusteredDataset};
use crate::error::{Result, SdrError};
use crate::pfc::{fit_gpfc_with_bases, fit_spfc_with_bases};

/// Number of free parameters of a PFC model of dimension w.
pub fn param_count(p: usize, r: usize, w: usize) -> usize {
    p * (p + 3) / 2 + r * w + w * (p - w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Gaic,
    Gbic,
    Saic,
    Sbic,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [Criterion::Gaic, Criterion::Gbic, Criterion::Saic, Criterion::Sbic];

    pub fn name(&self) -> &'static str {
        match self {
            Criterion::Gaic => "GAIC",
            Criterion::Gbic => "GBIC",
            Criterion::Saic => "SAIC",
            Criterion::Sbic => "SBIC",
        }
    }

    fn index(&self) -> usize {
        *self as usize
    }
}

/// Everything computed for one candidate dimension.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub w: usize,
    pub h: usize,
    /// Pooled log-likelihood, `None` if the fit failed.
    pub global_loglik: Option<f64>,
    /// Sum of the usable per-cluster log-likelihoods.
    pub separate_loglik: Option<f64>,
    /// Σᵢ log mᵢ over the usable clusters (the SBIC penalty multiplier).
    pub separate_log_m: f64,
    pub usable_clusters: usize,
    /// GAIC, GBIC, SAIC, SBIC in that order; `None` where a fit failed.
    pub values: [Option<f64>; 4],
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct DimSelReport {
    pub p: usize,
    pub r: usize,
    /// Total number of observations.
    pub n_obs: usize,
    pub candidates: Vec<Candidate>,
    /// Selected w per criterion, in the order of [`Criterion::ALL`].
    pub chosen: [Option<usize>; 4],
    /// Clusters left out of the separate criteria (too small or failed) for
    /// at least one candidate.
    pub unusable_clusters: usize,
    /// Candidates w at which the pooled log-likelihood drops below the
    /// previous candidate by more than 1e-6.
    pub monotonicity_violations: Vec<usize>,
}

impl DimSelReport {
    pub fn chosen(&self, c: Criterion) -> Option<usize> {
        self.chosen[c.index()]
    }
}

/// `{1, …, min(p − 1, r, 5)}`.
pub fn default_candidates(p: usize, r: usize) -> Vec<usize> {
    (1..=(p - 1).min(r).min(5)).collect()
}

pub fn select_dimension(data: &ClusteredDataset, candidates: &[usize], cfg: &BasisConfig) -> Result<DimSelReport> {
    let data = data.without_w();
    let p = data.p();
    let r = cfg.degree;
    if candidates.is_empty() {
        return Err(SdrError::domain("no candidate dimensions"));
    }
    let mut cands = candidates.to_vec();
    cands.sort_unstable();
    cands.dedup();
    if cands[0] == 0 {
        return Err(SdrError::domain("candidate dimensions start at 1"));
    }
    let bases = build_bases(&data, cfg)?;
    let n_obs = data.total();
    let log_n = (n_obs as f64).ln();

    let results: Vec<(Candidate, usize)> = cands
        .par_iter()
        .map(|&w| {
            let h = param_count(p, r, w);
            let hf = h as f64;
            let mut errors = Vec::new();
            let global = match fit_gpfc_with_bases(&data, &bases, w) {
                Ok(f) => Some(f.loglik),
                Err(e) => {
                    errors.push(format!("global fit: {e}"));
                    None
                }
            };
            let (separate, log_m, usable, missing) = match fit_spfc_with_bases(&data, &bases, w) {
                Ok(s) => {
                    let mut ll = 0.0;
                    let mut log_m = 0.0;
                    let mut usable = 0;
                    for fit in s.usable_fits() {
                        ll += fit.loglik;
                        log_m += (fit.n_obs as f64).ln();
                        usable += 1;
                    }
                    (Some(ll), log_m, usable, s.unusable.len())
                }
                Err(e) => {
                    errors.push(format!("separate fits: {e}"));
                    (None, 0.0, 0, data.n())
                }
            };
            let values = [
                global.map(|l| -2.0 * l + 2.0 * hf),
                global.map(|l| -2.0 * l + log_n * hf),
                separate.map(|l| -2.0 * l + 2.0 * hf * usable as f64),
                separate.map(|l| -2.0 * l + hf * log_m),
            ];
            let cand = Candidate {
                w,
                h,
                global_loglik: global,
                separate_loglik: separate,
                separate_log_m: log_m,
                usable_clusters: usable,
                values,
                error: (!errors.is_empty()).then(|| errors.join("; ")),
            };
            (cand, missing)
        })
        .collect();

    if results.iter().all(|(c, _)| c.values.iter().all(Option::is_none)) {
        return Err(SdrError::domain("no candidate dimension could be fitted"));
    }
    let unusable_clusters = results.iter().map(|(_, m)| *m).max().unwrap_or(0);
    let candidates: Vec<Candidate> = results.into_iter().map(|(c, _)| c).collect();
    for c in &candidates {
        if let Some(e) = &c.error {
            log::warn!("dimension w={} not usable: {e}", c.w);
        }
    }
    let mut chosen = [None; 4];
    for (k, slot) in chosen.iter_mut().enumerate() {
        // strict < keeps the smallest w among ties
        let mut best: Option<(usize, f64)> = None;
        for c in &candidates {
            if let Some(v) = c.values[k] {
                if best.is_none_or(|(_, b)| v < b) {
                    best = Some((c.w, v));
                }
            }
        }
        *slot = best.map(|(w, _)| w);
    }
    let mut monotonicity_violations = Vec::new();
    let global: Vec<(usize, f64)> = candidates.iter().filter_map(|c| c.global_loglik.map(|l| (c.w, l))).collect();
    for pair in global.windows(2) {
        if pair[1].1 < pair[0].1 - 1e-6 {
            log::warn!("pooled log-likelihood decreased from w={} to w={}", pair[0].0, pair[1].0);
            monotonicity_violations.push(pair[1].0);
        }
    }
    Ok(DimSelReport { p, r, n_obs, candidates, chosen, unusable_clusters, monotonicity_violations })
}
