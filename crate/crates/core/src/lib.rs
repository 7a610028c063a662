//! Random-effects sufficient dimension reduction for independent clustered data.
//!
//! The crate is organised bottom-up:
//!
//! - [`grassmann`]: subspaces, exponential/logarithm maps, distances, Fréchet means.
//! - [`matnorm`]: the tangent-space singular matrix-normal law and the ordinary
//!   matrix-normal density.
//! - [`data`] and [`pfc`]: clustered datasets, polynomial bases, global and
//!   separate principal fitted components.
//! - [`rpfc`]: the two-stage random-effects PFC estimator (Monte-Carlo EM).
//! - [`rmir`]: mixed continuous/binary predictors, Ising pseudo-likelihood,
//!   logistic mixed models and variable importance.
//! - [`dimsel`]: information-criterion selection of the structural dimension.
//! - [`simbench`]: simulation designs, error metrics and the benchmark runner.

pub mod data;
pub mod dimsel;
pub mod error;
pub mod grassmann;
pub mod linalg;
pub mod matnorm;
pub mod pfc;
pub mod rmir;
pub mod rpfc;
pub mod simbench;

pub use error::{Result, SdrError};
