//! Seeded, rep-parallel benchmark runner.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use super::design::{generate_dataset, SigmaDesign, SimDesign, Truth};
use super::metrics::{mean_cluster_error, projection_error, sigma_error, subspace_error};
use crate::data::{BasisConfig, ClusteredDataset};
use crate::error::{Result, SdrError};
use crate::grassmann::{frechet_mean, Subspace};
use crate::linalg::Mat;
use crate::pfc::{fit_gpfc, fit_spfc};
use crate::rmir::{fit_gmir, fit_rmir, fit_smir, RmirConfig};
use crate::rpfc::{fit_rpfc_with_stage1, McemConfig, SigmaModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Rpfc,
    Gpfc,
    Spfc,
    Rmir,
    Gmir,
    Smir,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Rpfc => "rpfc",
            Method::Gpfc => "gpfc",
            Method::Spfc => "spfc",
            Method::Rmir => "rmir",
            Method::Gmir => "gmir",
            Method::Smir => "smir",
        }
    }

    pub fn for_mixed(&self) -> bool {
        matches!(self, Method::Rmir | Method::Gmir | Method::Smir)
    }

    /// Methods compared on a design.
    pub fn defaults(design: &SimDesign) -> Vec<Method> {
        if design.model.is_mixed() {
            vec![Method::Rmir, Method::Gmir, Method::Smir]
        } else {
            vec![Method::Rpfc, Method::Gpfc, Method::Spfc]
        }
    }
}

impl FromStr for Method {
    type Err = SdrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rpfc" => Ok(Method::Rpfc),
            "gpfc" => Ok(Method::Gpfc),
            "spfc" => Ok(Method::Spfc),
            "rmir" => Ok(Method::Rmir),
            "gmir" => Ok(Method::Gmir),
            "smir" => Ok(Method::Smir),
            other => Err(SdrError::domain(format!("unknown method '{other}'"))),
        }
    }
}

/// Scores of one method on one replicate; `None` where a method has no estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub fixed_effect: Option<f64>,
    pub sigma: Option<f64>,
    pub cluster: Option<f64>,
}

pub const METRICS: [&str; 3] = ["fixed_effect", "sigma", "cluster"];

impl Scores {
    fn get(&self, metric: usize) -> Option<f64> {
        [self.fixed_effect, self.sigma, self.cluster][metric]
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub designs: Vec<SimDesign>,
    /// Methods to run; empty means the defaults for each design.
    pub methods: Vec<Method>,
    pub reps: usize,
    pub seed: u64,
    /// MCEM settings; the seed is replaced per replicate.
    pub mcem: McemConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub design: String,
    pub method: String,
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
    pub reps: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// (design, method, failed replicates).
    pub failures: Vec<(String, String, usize)>,
}

impl BenchReport {
    /// CSV with columns design, method, metric, mean, sd, reps, seconds.
    /// Timings are wall-clock and vary between runs, so they are written as
    /// `NA` unless requested.
    pub fn to_csv(&self, timings: bool) -> String {
        let mut out = String::from("design,method,metric,mean,sd,reps,seconds\n");
        for r in &self.rows {
            let secs = if timings { format!("{:.3}", r.seconds) } else { "NA".into() };
            let _ = writeln!(out, "{},{},{},{:.6},{:.6},{},{}", r.design, r.method, r.metric, r.mean, r.sd, r.reps, secs);
        }
        out
    }

    pub fn get(&self, design: &str, method: &str, metric: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.design == design && r.method == method && r.metric == metric)
    }
}

/// Label of a design including its number of clusters.
pub fn design_label(design: &SimDesign) -> String {
    format!("{design}-n{}", design.n)
}

/// Independent generator for replicate `rep` of design `index`.
pub fn rep_rng(seed: u64, index: usize, rep: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(((index as u64) << 32) | rep as u64);
    rng
}

fn sigma_model(design: &SimDesign) -> SigmaModel {
    match design.sigma {
        SigmaDesign::Isotropic(_) => SigmaModel::Isotropic,
        _ => SigmaModel::Unstructured,
    }
}

/// Scores one method on one simulated dataset.
pub fn score_method(method: Method, design: &SimDesign, data: &ClusteredDataset, truth: &Truth, mcem: &McemConfig) -> Result<Scores> {
    let d = design.d();
    let basis = BasisConfig::polynomial(design.model.fit_degree());
    if method.for_mixed() != design.model.is_mixed() {
        return Err(SdrError::domain(format!("method {} does not apply to design {design}", method.name())));
    }
    let rcfg = RmirConfig { basis, mcem: *mcem, sigma_model: sigma_model(design), ..RmirConfig::new(d) };
    match method {
        Method::Gpfc => {
            let fit = fit_gpfc(data, d, &basis)?;
            let theta = fit.theta()?;
            let est = vec![theta.basis().clone(); truth.theta.len()];
            Ok(Scores {
                fixed_effect: Some(subspace_error(&fit.delta, fit.gamma.basis(), &truth.delta, truth.gamma0.basis())?),
                sigma: None,
                cluster: Some(mean_cluster_error(&est, &truth.theta)?),
            })
        }
        Method::Rpfc => {
            let stage1 = fit_gpfc(data, d, &basis)?;
            let fit = fit_rpfc_with_stage1(data, stage1, &basis, mcem, sigma_model(design))?;
            let est: Vec<Mat> = fit.theta_hat.iter().map(|t| t.basis().clone()).collect();
            let tru: Vec<Mat> = fit.cluster_index.iter().map(|&i| truth.theta[i].clone()).collect();
            Ok(Scores {
                fixed_effect: Some(subspace_error(&fit.delta, fit.gamma0.basis(), &truth.delta, truth.gamma0.basis())?),
                sigma: Some(sigma_error(&fit.sigma, &truth.sigma)?),
                cluster: Some(mean_cluster_error(&est, &tru)?),
            })
        }
        Method::Spfc => {
            let fit = fit_spfc(data, d, &basis)?;
            let usable: Vec<usize> = (0..fit.fits.len()).filter(|&i| fit.fits[i].is_some()).collect();
            let gammas: Vec<Subspace> = usable.iter().map(|&i| fit.fits[i].as_ref().unwrap().gamma.clone()).collect();
            let gbar = frechet_mean(&gammas, 1e-9, 200)?.mean;
            let mut dbar = Mat::zeros(design.p, design.p);
            for &i in &usable {
                dbar += &fit.fits[i].as_ref().unwrap().delta;
            }
            dbar /= usable.len() as f64;
            let est: Vec<Mat> = usable.iter().map(|&i| fit.fits[i].as_ref().unwrap().theta().map(|t| t.basis().clone())).collect::<Result<_>>()?;
            let tru: Vec<Mat> = usable.iter().map(|&i| truth.theta[i].clone()).collect();
            Ok(Scores {
                fixed_effect: Some(subspace_error(&dbar, gbar.basis(), &truth.delta, truth.gamma0.basis())?),
                sigma: Some(sigma_error(&fit.sigma, &truth.sigma)?),
                cluster: Some(mean_cluster_error(&est, &tru)?),
            })
        }
        Method::Rmir => {
            let fit = fit_rmir(data, &rcfg)?;
            let c = &fit.continuous;
            let tru: Vec<Mat> = c.cluster_index.iter().map(|&i| truth.theta[i].clone()).collect();
            Ok(Scores {
                fixed_effect: Some(subspace_error(&c.delta, c.gamma0.basis(), &truth.delta, truth.gamma0.basis())?),
                sigma: Some(sigma_error(&c.sigma, &truth.sigma)?),
                cluster: Some(mean_cluster_error(&fit.theta_hat, &tru)?),
            })
        }
        Method::Gmir => {
            let fit = fit_gmir(data, &rcfg)?;
            let mut total = 0.0;
            for t in &truth.theta {
                total += projection_error(&fit.theta0, t)?;
            }
            Ok(Scores {
                fixed_effect: Some(subspace_error(&fit.pfc.delta, fit.pfc.gamma.basis(), &truth.delta, truth.gamma0.basis())?),
                sigma: None,
                cluster: Some(total / truth.theta.len() as f64),
            })
        }
        Method::Smir => {
            let gmir = fit_gmir(data, &rcfg)?;
            let fit = fit_smir(data, &gmir, &rcfg)?;
            let (est, tru): (Vec<Mat>, Vec<Mat>) = fit
                .theta_hat
                .iter()
                .zip(&truth.theta)
                .filter_map(|(e, t)| e.as_ref().map(|e| (e.clone(), t.clone())))
                .unzip();
            if est.is_empty() {
                return Err(SdrError::domain("no cluster large enough for separate fits"));
            }
            Ok(Scores { fixed_effect: None, sigma: None, cluster: Some(mean_cluster_error(&est, &tru)?) })
        }
    }
}

type RepResult = Vec<(Method, std::result::Result<Scores, String>, f64)>;

/// Runs every (design, method) pair over `reps` seeded replicates.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.reps == 0 || cfg.designs.is_empty() {
        return Err(SdrError::domain("benchmark needs at least one design and one replicate"));
    }
    let plans: Vec<Vec<Method>> = cfg
        .designs
        .iter()
        .map(|d| {
            let methods = if cfg.methods.is_empty() { Method::defaults(d) } else { cfg.methods.clone() };
            for m in &methods {
                if m.for_mixed() != d.model.is_mixed() {
                    return Err(SdrError::domain(format!("method {} does not apply to design {d}", m.name())));
                }
            }
            d.validate()?;
            Ok(methods)
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.designs.len()).flat_map(|i| (0..cfg.reps).map(move |r| (i, r))).collect();
    let results: Vec<RepResult> = jobs
        .par_iter()
        .map(|&(di, rep)| {
            let design = &cfg.designs[di];
            let mut rng = rep_rng(cfg.seed, di, rep);
            let generated = generate_dataset(design, &mut rng);
            let mcem = McemConfig { seed: rng.random(), ..cfg.mcem };
            plans[di]
                .iter()
                .map(|&m| {
                    let start = Instant::now();
                    let res = match &generated {
                        Ok((data, truth)) => score_method(m, design, data, truth, &mcem).map_err(|e| e.to_string()),
                        Err(e) => Err(e.to_string()),
                    };
                    if let Err(e) = &res {
                        log::warn!("{} rep {rep} {}: {e}", design_label(design), m.name());
                    }
                    (m, res, start.elapsed().as_secs_f64())
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (di, design) in cfg.designs.iter().enumerate() {
        let label = design_label(design);
        let reps = &results[di * cfg.reps..(di + 1) * cfg.reps];
        for (mi, method) in plans[di].iter().enumerate() {
            let outcomes: Vec<&(Method, std::result::Result<Scores, String>, f64)> = reps.iter().map(|r| &r[mi]).collect();
            let failed = outcomes.iter().filter(|o| o.1.is_err()).count();
            if failed * 10 > cfg.reps {
                return Err(SdrError::TooManyFailures { what: format!("{label} {}", method.name()), failures: failed, reps: cfg.reps });
            }
            if failed > 0 {
                failures.push((label.clone(), method.name().to_string(), failed));
            }
            let seconds: f64 = outcomes.iter().map(|o| o.2).sum();
            for (k, metric) in METRICS.iter().enumerate() {
                let vals: Vec<f64> = outcomes.iter().filter_map(|o| o.1.as_ref().ok().and_then(|s| s.get(k))).collect();
                if vals.is_empty() {
                    continue;
                }
                let (mean, sd) = mean_sd(&vals);
                rows.push(BenchRow {
                    design: label.clone(),
                    method: method.name().to_string(),
                    metric: metric.to_string(),
                    mean,
                    sd,
                    reps: vals.len(),
                    seconds,
                });
            }
        }
    }
    Ok(BenchReport { rows, failures })
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simbench::design::Model;

    #[test]
    fn mean_and_sd() {
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_sd(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn incompatible_pairs_rejected() {
        let cfg = BenchConfig {
            designs: vec![SimDesign::new(Model::M1, SigmaDesign::Diagonal, 20)],
            methods: vec![Method::Rmir],
            reps: 1,
            seed: 0,
            mcem: McemConfig::default(),
        };
        assert!(run_benchmark(&cfg).is_err());
    }

    #[test]
    fn single_rep_is_reproducible() {
        let cfg = BenchConfig {
            designs: vec![SimDesign::new(Model::M1, SigmaDesign::Diagonal, 30)],
            methods: vec![Method::Gpfc, Method::Spfc],
            reps: 1,
            seed: 11,
            mcem: McemConfig::default(),
        };
        let a = run_benchmark(&cfg).unwrap().to_csv(false);
        let b = run_benchmark(&cfg).unwrap().to_csv(false);
        assert_eq!(a, b);
        assert!(a.starts_with("design,method,metric,mean,sd,reps,seconds\n"));
    }

    #[test]
    fn streams_differ_between_reps() {
        let a: u64 = rep_rng(5, 0, 0).random();
        let b: u64 = rep_rng(5, 0, 1).random();
        let c: u64 = rep_rng(5, 1, 0).random();
        assert!(a != b && a != c && b != c);
    }
}
