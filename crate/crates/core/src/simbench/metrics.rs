//! Frobenius error measures used to score estimates against the truth.

use crate::error::{Result, SdrError};
use crate::linalg::{projector, spd_inverse, Mat};

/// ‖Δ̂⁻¹P(Γ̂) − Δ⁻¹P(Γ)‖_F.
pub fn subspace_error(delta_hat: &Mat, gamma_hat: &Mat, delta: &Mat, gamma: &Mat) -> Result<f64> {
    if delta_hat.shape() != delta.shape() || gamma_hat.nrows() != gamma.nrows() {
        return Err(SdrError::domain("estimate and truth have different shapes"));
    }
    let a = spd_inverse(delta_hat)? * projector(gamma_hat)?;
    let b = spd_inverse(delta)? * projector(gamma)?;
    Ok((a - b).norm())
}

/// ‖Σ̂ − Σ‖_F.
pub fn sigma_error(sigma_hat: &Mat, sigma: &Mat) -> Result<f64> {
    if sigma_hat.shape() != sigma.shape() {
        return Err(SdrError::domain("Σ estimate and truth have different shapes"));
    }
    Ok((sigma_hat - sigma).norm())
}

/// ‖P(A) − P(B)‖_F.
pub fn projection_error(est: &Mat, truth: &Mat) -> Result<f64> {
    if est.nrows() != truth.nrows() {
        return Err(SdrError::domain("bases live in different spaces"));
    }
    Ok((projector(est)? - projector(truth)?).norm())
}

/// n⁻¹ Σᵢ ‖P(Θ̂ᵢ) − P(Θᵢ)‖_F.
pub fn mean_cluster_error(est: &[Mat], truth: &[Mat]) -> Result<f64> {
    if est.len() != truth.len() || est.is_empty() {
        return Err(SdrError::domain("need one estimate per true reduction"));
    }
    let mut total = 0.0;
    for (e, t) in est.iter().zip(truth) {
        total += projection_error(e, t)?;
    }
    Ok(total / est.len() as f64)
}
