//! Clustered observations and polynomial basis functions of the response.

use crate::error::{Result, SdrError};
use crate::linalg::Mat;

/// Binary covariates of one cluster.
#[derive(Debug, Clone, PartialEq)]
pub enum BinaryCovariates {
    /// One q-vector shared by all observations of the cluster.
    TimeInvariant(Vec<u8>),
    /// An m×q matrix, one row per observation.
    TimeVarying(Vec<Vec<u8>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: String,
    pub y: Vec<f64>,
    /// m×p, one row per observation.
    pub x: Mat,
    pub w: Option<BinaryCovariates>,
}

impl Cluster {
    pub fn m(&self) -> usize {
        self.y.len()
    }

    /// Binary covariates expanded to an m×q matrix.
    pub fn w_matrix(&self) -> Option<Mat> {
        let m = self.m();
        match &self.w {
            None => None,
            Some(BinaryCovariates::TimeInvariant(v)) => {
                Some(Mat::from_fn(m, v.len(), |_, k| v[k] as f64))
            }
            Some(BinaryCovariates::TimeVarying(rows)) => {
                let q = rows.first().map_or(0, |r| r.len());
                Some(Mat::from_fn(m, q, |j, k| rows[j][k] as f64))
            }
        }
    }
}

/// Whether the binary covariates are constant within clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WKind {
    TimeInvariant,
    TimeVarying,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredDataset {
    pub clusters: Vec<Cluster>,
}

impl ClusteredDataset {
    /// Validates shapes and binary entries.
    pub fn new(clusters: Vec<Cluster>) -> Result<Self> {
        let first = clusters
            .first()
            .ok_or_else(|| SdrError::domain("dataset has no clusters"))?;
        let p = first.x.ncols();
        let q = first.w_matrix().map(|w| w.ncols());
        let kind = match &first.w {
            Some(BinaryCovariates::TimeInvariant(_)) => Some(WKind::TimeInvariant),
            Some(BinaryCovariates::TimeVarying(_)) => Some(WKind::TimeVarying),
            None => None,
        };
        for c in &clusters {
            if c.m() == 0 {
                return Err(SdrError::domain(format!("cluster {} is empty", c.id)));
            }
            if c.x.nrows() != c.m() || c.x.ncols() != p {
                return Err(SdrError::domain(format!("cluster {} has inconsistent X shape", c.id)));
            }
            if c.y.iter().chain(c.x.iter()).any(|v| !v.is_finite()) {
                return Err(SdrError::domain(format!("cluster {} has non-finite values", c.id)));
            }
            let this_kind = match &c.w {
                Some(BinaryCovariates::TimeInvariant(_)) => Some(WKind::TimeInvariant),
                Some(BinaryCovariates::TimeVarying(_)) => Some(WKind::TimeVarying),
                None => None,
            };
            if this_kind != kind {
                return Err(SdrError::domain("clusters disagree on binary covariate layout"));
            }
            if let Some(BinaryCovariates::TimeVarying(rows)) = &c.w {
                if rows.len() != c.m() {
                    return Err(SdrError::domain(format!("cluster {} has {} W rows", c.id, rows.len())));
                }
            }
            if let Some(w) = c.w_matrix() {
                if Some(w.ncols()) != q {
                    return Err(SdrError::domain(format!("cluster {} has inconsistent q", c.id)));
                }
                if w.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(SdrError::domain(format!("cluster {} has non-binary W", c.id)));
                }
            }
        }
        Ok(ClusteredDataset { clusters })
    }

    pub fn n(&self) -> usize {
        self.clusters.len()
    }

    pub fn p(&self) -> usize {
        self.clusters[0].x.ncols()
    }

    pub fn q(&self) -> usize {
        self.clusters[0].w_matrix().map_or(0, |w| w.ncols())
    }

    /// Total number of observations N.
    pub fn total(&self) -> usize {
        self.clusters.iter().map(|c| c.m()).sum()
    }

    pub fn w_kind(&self) -> Option<WKind> {
        match &self.clusters[0].w {
            Some(BinaryCovariates::TimeInvariant(_)) => Some(WKind::TimeInvariant),
            Some(BinaryCovariates::TimeVarying(_)) => Some(WKind::TimeVarying),
            None => None,
        }
    }

    /// All X rows stacked, N×p.
    pub fn stacked_x(&self) -> Mat {
        stack_rows(self.clusters.iter().map(|c| c.x.clone()).collect())
    }

    /// All W rows stacked, N×q (time-invariant vectors repeated per observation).
    pub fn stacked_w(&self) -> Option<Mat> {
        let parts: Option<Vec<Mat>> = self.clusters.iter().map(|c| c.w_matrix()).collect();
        parts.map(stack_rows)
    }

    /// Same data without binary covariates.
    pub fn without_w(&self) -> Self {
        ClusteredDataset {
            clusters: self
                .clusters
                .iter()
                .map(|c| Cluster { w: None, ..c.clone() })
                .collect(),
        }
    }
}

pub(crate) fn stack_rows(parts: Vec<Mat>) -> Mat {
    let cols = parts.first().map_or(0, |m| m.ncols());
    let rows: usize = parts.iter().map(|m| m.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut at = 0;
    for m in parts {
        out.rows_mut(at, m.nrows()).copy_from(&m);
        at += m.nrows();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Centering {
    WithinCluster,
    Global,
}

/// Polynomial basis f(y) = (y, y², …, y^r), centered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisConfig {
    pub degree: usize,
    pub centering: Centering,
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig { degree: 4, centering: Centering::WithinCluster }
    }
}

impl BasisConfig {
    pub fn polynomial(degree: usize) -> Self {
        BasisConfig { degree, ..Default::default() }
    }
}

/// Per-cluster m_i×r basis matrices plus the ids of clusters with constant y.
#[derive(Debug, Clone)]
pub struct Bases {
    pub f: Vec<Mat>,
    pub degenerate: Vec<String>,
}

impl Bases {
    pub fn stacked(&self) -> Mat {
        stack_rows(self.f.clone())
    }
}

pub fn build_bases(data: &ClusteredDataset, cfg: &BasisConfig) -> Result<Bases> {
    let r = cfg.degree;
    if r == 0 {
        return Err(SdrError::domain("basis degree must be at least 1"));
    }
    let mut f: Vec<Mat> = data
        .clusters
        .iter()
        .map(|c| Mat::from_fn(c.m(), r, |j, k| c.y[j].powi(k as i32 + 1)))
        .collect();
    let mut degenerate = Vec::new();
    for c in &data.clusters {
        if c.m() > 1 && c.y.iter().all(|&v| v == c.y[0]) {
            degenerate.push(c.id.clone());
        }
    }
    match cfg.centering {
        Centering::WithinCluster => {
            for fi in f.iter_mut() {
                center_in_place(fi);
            }
        }
        Centering::Global => {
            let total: usize = f.iter().map(|m| m.nrows()).sum();
            for k in 0..r {
                let mean = f.iter().map(|m| m.column(k).sum()).sum::<f64>() / total as f64;
                for fi in f.iter_mut() {
                    fi.column_mut(k).add_scalar_mut(-mean);
                }
            }
        }
    }
    if !degenerate.is_empty() {
        log::warn!("constant response in {} cluster(s); basis is degenerate there", degenerate.len());
    }
    Ok(Bases { f, degenerate })
}

fn center_in_place(m: &mut Mat) {
    for mut col in m.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
}
