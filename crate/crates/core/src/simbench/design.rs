//! Data-generating designs with known ground truth.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{BinaryCovariates, Cluster, ClusteredDataset};
use crate::error::{Result, SdrError};
use crate::grassmann::{exp_map, random_semi_orthogonal, Subspace, TangentVector};
use crate::linalg::{spd_inverse, Mat, Vector};
use crate::matnorm::{build_row_covariance, sample_singular_mn, CovStructure, SingularMatrixNormal};
use crate::rmir::ising::{sample_ising, vech_pairs};
use crate::rmir::{compact_invariant, compact_varying};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Model {
    /// `v = y + y²/2 + y³/3`, d = 1.
    M1,
    /// `v = (y + y²/2 + y³/3, y)`, d = 2.
    M2,
    /// `f = y`, C₁ = 3, time-invariant W from an Ising model.
    MixedInvariant,
    /// `f = y`, C₁ = 3, time-varying W from logistic random slopes.
    MixedVarying,
}

impl Model {
    pub fn d(&self) -> usize {
        match self {
            Model::M2 => 2,
            _ => 1,
        }
    }

    pub fn is_mixed(&self) -> bool {
        matches!(self, Model::MixedInvariant | Model::MixedVarying)
    }

    /// Degree of the polynomial basis used when fitting.
    pub fn fit_degree(&self) -> usize {
        if self.is_mixed() {
            1
        } else {
            4
        }
    }

    fn tag(&self) -> &'static str {
        match self {
            Model::M1 => "m1",
            Model::M2 => "m2",
            Model::MixedInvariant => "mixed-invariant",
            Model::MixedVarying => "mixed-varying",
        }
    }
}

/// Structure of Σ̃ in the designs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaDesign {
    /// 0.5·I.
    Diagonal,
    /// Variance 0.3, autocorrelation 0.5.
    Ar1,
    /// Variance 0.5, covariance 0.1.
    Exchangeable,
    /// σ²·I, fitted with the isotropic model.
    Isotropic(f64),
}

impl SigmaDesign {
    pub fn structure(&self, p: usize) -> CovStructure {
        match *self {
            SigmaDesign::Diagonal => CovStructure::Diagonal(vec![0.5; p]),
            SigmaDesign::Ar1 => CovStructure::Ar1 { variance: 0.3, rho: 0.5 },
            SigmaDesign::Exchangeable => CovStructure::Exchangeable { variance: 0.5, cov: 0.1 },
            SigmaDesign::Isotropic(s2) => CovStructure::Isotropic(s2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimDesign {
    pub model: Model,
    pub sigma: SigmaDesign,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub m_min: usize,
    pub m_max: usize,
    /// AR(1) correlation of Δ.
    pub delta_rho: f64,
}

impl SimDesign {
    pub fn new(model: Model, sigma: SigmaDesign, n: usize) -> Self {
        SimDesign { model, sigma, n, p: 7, q: 4, m_min: 10, m_max: 15, delta_rho: 0.5 }
    }

    pub fn d(&self) -> usize {
        self.model.d()
    }

    pub fn delta(&self) -> Mat {
        let p = self.p;
        Mat::from_fn(p, p, |j, k| self.delta_rho.powi((j as i32 - k as i32).abs()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m_min < 2 || self.m_min > self.m_max {
            return Err(SdrError::domain("design needs n ≥ 1 and 2 ≤ m_min ≤ m_max"));
        }
        if self.p <= self.d() {
            return Err(SdrError::domain("design needs p > d"));
        }
        if self.model.is_mixed() && !(2..=12).contains(&self.q) {
            return Err(SdrError::domain("mixed designs need 2 ≤ q ≤ 12"));
        }
        Ok(())
    }
}

impl fmt::Display for SimDesign {
    /// Design name without n, e.g. `m1-diagonal` or `m1-isotropic-0.04`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.sigma {
            SigmaDesign::Diagonal => "diagonal".to_string(),
            SigmaDesign::Ar1 => "ar1".to_string(),
            SigmaDesign::Exchangeable => "exchangeable".to_string(),
            SigmaDesign::Isotropic(v) => format!("isotropic-{v}"),
        };
        write!(f, "{}-{}", self.model.tag(), s)
    }
}

impl FromStr for SimDesign {
    type Err = SdrError;

    /// Parses names such as `m2-ar1` or `mixed-invariant-isotropic-0.04` (n = 100).
    fn from_str(s: &str) -> Result<Self> {
        let (model, rest) = [
            ("mixed-invariant-", Model::MixedInvariant),
            ("mixed-varying-", Model::MixedVarying),
            ("m1-", Model::M1),
            ("m2-", Model::M2),
        ]
        .iter()
        .find_map(|(pre, m)| s.strip_prefix(pre).map(|r| (*m, r)))
        .ok_or_else(|| SdrError::domain(format!("unknown design '{s}'")))?;
        let sigma = match rest {
            "diagonal" => SigmaDesign::Diagonal,
            "ar1" => SigmaDesign::Ar1,
            "exchangeable" => SigmaDesign::Exchangeable,
            other => {
                let v = other
                    .strip_prefix("isotropic-")
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| *v >= 0.0)
                    .ok_or_else(|| SdrError::domain(format!("unknown Σ̃ structure '{other}'")))?;
                SigmaDesign::Isotropic(v)
            }
        };
        Ok(SimDesign::new(model, sigma, 100))
    }
}

/// Parameters that generated a dataset.
#[derive(Debug, Clone)]
pub struct Truth {
    pub gamma0: Subspace,
    pub gamma: Vec<Subspace>,
    pub v: Vec<Mat>,
    pub sigma: Mat,
    pub delta: Mat,
    /// p×q fixed effects of W (mixed designs).
    pub beta: Option<Mat>,
    /// Cluster reductions: `Δ⁻¹Γ_i` for continuous designs, compact mixed forms otherwise.
    pub theta: Vec<Mat>,
    pub theta0: Mat,
    /// Ising coefficient B (time-invariant design).
    pub ising_b: Option<Mat>,
    /// q×r random slopes per cluster (time-varying design).
    pub slopes: Option<Vec<Mat>>,
}

const C1: f64 = 3.0;
const C2: f64 = 6.0;
const SLOPE_MEAN: f64 = 0.5;
const SLOPE_SD: f64 = 0.6;

fn cubic(y: f64) -> f64 {
    y + 0.5 * y * y + y * y * y / 3.0
}

/// B ∝ (1, …, 1, 10, 10) over the q(q+1)/2 statistics, unit norm.
pub fn ising_direction(q: usize) -> Mat {
    let np = q * (q + 1) / 2;
    let mut b = Mat::from_element(np, 1, 1.0);
    b[(np - 2, 0)] = 10.0;
    b[(np - 1, 0)] = 10.0;
    let norm = b.norm();
    b / norm
}

/// Conditional mean of X given y and Γ_i under the design's inverse model (W excluded).
pub fn conditional_mean(model: Model, gamma_i: &Subspace, y: f64) -> Vector {
    let g = gamma_i.basis();
    match model {
        Model::M1 => g.column(0) * cubic(y),
        Model::M2 => g.column(0) * cubic(y) + g.column(1) * y,
        _ => g.column(0) * (C1 * y),
    }
}

/// One draw of X given y and Γ_i; `delta_chol` is the Cholesky factor of Δ.
pub fn draw_x_row<R: Rng + ?Sized>(model: Model, gamma_i: &Subspace, y: f64, delta_chol: &Mat, rng: &mut R) -> Vector {
    let p = delta_chol.nrows();
    conditional_mean(model, gamma_i, y) + delta_chol * Vector::from_fn(p, |_, _| rng.sample(StandardNormal))
}

/// Simulates one dataset of the design together with its truth.
pub fn generate_dataset<R: Rng + ?Sized>(design: &SimDesign, rng: &mut R) -> Result<(ClusteredDataset, Truth)> {
    design.validate()?;
    let (p, d, q, n) = (design.p, design.d(), design.q, design.n);
    let gamma0 = random_semi_orthogonal(p, d, rng)?;
    let delta = design.delta();
    let delta_chol = delta.clone().cholesky().expect("AR(1) correlation is positive definite").l();
    let dinv = spd_inverse(&delta)?;
    let sigma = build_row_covariance(&design.sigma.structure(p), &gamma0)?;
    let dist = if sigma.amax() > 0.0 { Some(SingularMatrixNormal::new(&gamma0, sigma.clone())?) } else { None };
    let beta = if design.model.is_mixed() {
        Some(Mat::from_fn(p, q, |_, _| rng.random_range(-1.0..1.0)))
    } else {
        None
    };
    let ising_b = (design.model == Model::MixedInvariant).then(|| ising_direction(q));
    let mut clusters = Vec::with_capacity(n);
    let mut gammas = Vec::with_capacity(n);
    let mut vs = Vec::with_capacity(n);
    let mut slopes = Vec::new();
    for i in 0..n {
        let m = rng.random_range(design.m_min..=design.m_max);
        let v = match &dist {
            Some(dist) => sample_singular_mn(dist, rng),
            None => TangentVector::zero(&gamma0),
        };
        let gi = exp_map(&gamma0, &v)?;
        let y: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        let mut x = Mat::zeros(m, p);
        for (j, &yj) in y.iter().enumerate() {
            x.row_mut(j).copy_from(&draw_x_row(design.model, &gi, yj, &delta_chol, rng).transpose());
        }
        let w = match design.model {
            Model::M1 | Model::M2 => None,
            Model::MixedInvariant => {
                let ybar = y.iter().sum::<f64>() / m as f64;
                // τ₀ = 0, g = ȳ
                let theta = ising_b.as_ref().unwrap().column(0) * (C2 * ybar);
                Some(BinaryCovariates::TimeInvariant(sample_ising(&theta, q, rng)?))
            }
            Model::MixedVarying => {
                let b: Vec<f64> = (0..q).map(|_| SLOPE_MEAN + SLOPE_SD * rng.sample::<f64, _>(StandardNormal)).collect();
                let rows: Vec<Vec<u8>> = y
                    .iter()
                    .map(|&yj| {
                        b.iter()
                            .map(|&bk| {
                                let pr = 1.0 / (1.0 + (-bk * yj).exp());
                                u8::from(rng.random::<f64>() < pr)
                            })
                            .collect()
                    })
                    .collect();
                slopes.push(Mat::from_column_slice(q, 1, &b));
                Some(BinaryCovariates::TimeVarying(rows))
            }
        };
        if let (Some(beta), Some(w)) = (&beta, &w) {
            let cl = Cluster { id: String::new(), y: y.clone(), x: Mat::zeros(m, p), w: Some(w.clone()) };
            x += cl.w_matrix().unwrap() * beta.transpose();
        }
        clusters.push(Cluster { id: format!("c{:04}", i + 1), y, x, w });
        gammas.push(gi);
        vs.push(v.into_mat());
    }
    let theta_of = |g: &Mat, idx: Option<usize>| -> Mat {
        match design.model {
            Model::M1 | Model::M2 => &dinv * g,
            Model::MixedInvariant => compact_invariant(&(&dinv * g), beta.as_ref().unwrap()),
            Model::MixedVarying => {
                let b = match idx {
                    Some(i) => slopes[i].clone(),
                    None => Mat::from_element(q, 1, SLOPE_MEAN),
                };
                compact_varying(&(&dinv * g * C1), beta.as_ref().unwrap(), &b)
            }
        }
    };
    let theta = gammas.iter().enumerate().map(|(i, g)| theta_of(g.basis(), Some(i))).collect();
    let theta0 = theta_of(gamma0.basis(), None);
    let data = ClusteredDataset::new(clusters)?;
    Ok((
        data,
        Truth {
            gamma0,
            gamma: gammas,
            v: vs,
            sigma,
            delta,
            beta,
            theta,
            theta0,
            ising_b,
            slopes: (design.model == Model::MixedVarying).then_some(slopes),
        },
    ))
}

/// Ising natural parameter layout used by the time-invariant design.
pub fn ising_pairs(q: usize) -> Vec<(usize, usize)> {
    vech_pairs(q)
}
