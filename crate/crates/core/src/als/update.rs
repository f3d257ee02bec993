use nalgebra::{DMatrix, DVector};

use super::model::GaussianComponent;
use crate::error::{Error, Result};
use crate::linalg::{pinv, SpdFactor};

fn check_noise(noise_var: f64) -> Result<()> {
    if !(noise_var > 0.0 && noise_var.is_finite()) {
        return Err(Error::Parameter(format!("noise variance must be positive, got {noise_var}")));
    }
    Ok(())
}

/// Gaussian posterior of one component given `y = U g + ε`, `ε ~ N(0, σ² I)`.
///
/// `P⁺ = [(P⁰)⁻¹ + UᵀU/σ²]⁻¹`, `m⁺ = P⁺[Uᵀy/σ² + (P⁰)⁻¹ m⁰]`.
pub fn posterior_update(
    prior: &GaussianComponent,
    u: &DMatrix<f64>,
    y: &DVector<f64>,
    noise_var: f64,
) -> Result<GaussianComponent> {
    if u.nrows() != y.len() || u.ncols() != prior.dim() {
        return Err(Error::dim(format!(
            "design matrix {}x{} incompatible with y of length {} and component of size {}",
            u.nrows(),
            u.ncols(),
            y.len(),
            prior.dim()
        )));
    }
    posterior_update_normal(prior, &(u.transpose() * u), &(u.transpose() * y), noise_var)
}

/// [`posterior_update`] from the normal-equation pieces `UᵀU` and `Uᵀy`.
/// The result holds the posterior precision; the covariance is formed on
/// demand.
pub fn posterior_update_normal(
    prior: &GaussianComponent,
    gram: &DMatrix<f64>,
    proj: &DVector<f64>,
    noise_var: f64,
) -> Result<GaussianComponent> {
    check_noise(noise_var)?;
    let k = prior.dim();
    if gram.shape() != (k, k) || proj.len() != k {
        return Err(Error::dim(format!(
            "normal equations of size {}x{} / {} for a component of size {k}",
            gram.nrows(),
            gram.ncols(),
            proj.len()
        )));
    }
    let prior_prec = prior.precision().map_err(|e| annotate(e, "prior covariance"))?;
    let precision = prior_prec + gram / noise_var;
    let rhs = proj / noise_var + prior_prec * prior.mean();
    let factor = SpdFactor::new(&precision).map_err(|e| annotate(e, "posterior precision"))?;
    let mean = factor.solve_vec(&rhs);
    GaussianComponent::from_precision(mean, precision)
}

fn annotate(e: Error, what: &str) -> Error {
    match e {
        Error::Numerical(msg) => Error::Numerical(format!("{what}: {msg}")),
        other => other,
    }
}

/// Least-squares `argmin ‖y − U g‖`. The flag reports that `UᵀU` was
/// singular and the pseudo-inverse was used.
pub fn conventional_als_update(u: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
    if u.nrows() != y.len() {
        return Err(Error::dim(format!(
            "design matrix has {} rows, y has length {}",
            u.nrows(),
            y.len()
        )));
    }
    conventional_als_normal(&(u.transpose() * u), &(u.transpose() * y))
}

pub(crate) fn conventional_als_normal(gram: &DMatrix<f64>, proj: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
    if let Ok(f) = SpdFactor::new(gram) {
        if f.jitter == 0.0 {
            return Ok((f.solve_vec(proj), false));
        }
    }
    log::warn!("singular normal equations; falling back to the pseudo-inverse");
    let (p, _) = pinv(gram)?;
    Ok((p * proj, true))
}
