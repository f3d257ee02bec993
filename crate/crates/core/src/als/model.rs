use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{is_psd, symmetrize, SpdFactor};
use crate::tensor::DenseTensor;
use crate::tt::TensorTrain;

/// Gaussian over one vectorized model component.
///
/// Either the covariance or the precision (or both) is held; the other is
/// derived on first use and cached.
#[derive(Clone, Debug)]
pub struct GaussianComponent {
    mean: DVector<f64>,
    cov: OnceLock<DMatrix<f64>>,
    precision: OnceLock<DMatrix<f64>>,
}

impl GaussianComponent {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_square(mean.len(), &cov, "covariance")?;
        let c = Self::empty(mean);
        let _ = c.cov.set(cov);
        Ok(c)
    }

    pub fn from_precision(mean: DVector<f64>, precision: DMatrix<f64>) -> Result<Self> {
        check_square(mean.len(), &precision, "precision")?;
        let c = Self::empty(mean);
        let _ = c.precision.set(precision);
        Ok(c)
    }

    /// `N(mean, var·I)`; `var` must be positive.
    pub fn isotropic(mean: DVector<f64>, var: f64) -> Result<Self> {
        if !(var > 0.0 && var.is_finite()) {
            return Err(Error::Parameter(format!("isotropic variance must be positive, got {var}")));
        }
        let k = mean.len();
        let c = Self::empty(mean);
        let _ = c.cov.set(DMatrix::identity(k, k) * var);
        let _ = c.precision.set(DMatrix::identity(k, k) / var);
        Ok(c)
    }

    pub(crate) fn with_both(mean: DVector<f64>, cov: DMatrix<f64>, precision: DMatrix<f64>) -> Self {
        let c = Self::empty(mean);
        let _ = c.cov.set(cov);
        let _ = c.precision.set(precision);
        c
    }

    fn empty(mean: DVector<f64>) -> Self {
        Self { mean, cov: OnceLock::new(), precision: OnceLock::new() }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Replaces the mean, keeping the second moment.
    pub fn with_mean(mut self, mean: DVector<f64>) -> Result<Self> {
        if mean.len() != self.mean.len() {
            return Err(Error::dim(format!(
                "mean of length {} for a component of size {}",
                mean.len(),
                self.mean.len()
            )));
        }
        self.mean = mean;
        Ok(self)
    }

    pub fn cov(&self) -> Result<&DMatrix<f64>> {
        if let Some(c) = self.cov.get() {
            return Ok(c);
        }
        let p = self.precision.get().expect("component holds covariance or precision");
        let cov = SpdFactor::new(p)?.inverse();
        Ok(self.cov.get_or_init(|| cov))
    }

    pub fn precision(&self) -> Result<&DMatrix<f64>> {
        if let Some(p) = self.precision.get() {
            return Ok(p);
        }
        let c = self.cov.get().expect("component holds covariance or precision");
        let prec = SpdFactor::new(c)?.inverse();
        Ok(self.precision.get_or_init(|| prec))
    }

    pub fn has_cov(&self) -> bool {
        self.cov.get().is_some()
    }

    pub fn has_precision(&self) -> bool {
        self.precision.get().is_some()
    }

    pub fn cov_trace(&self) -> Result<f64> {
        Ok(self.cov()?.trace())
    }

    pub fn cov_frobenius(&self) -> Result<f64> {
        Ok(self.cov()?.norm())
    }

    /// Symmetry within `1e-10` absolute and `min eig ≥ −rel_tol·max eig`.
    pub fn check_psd(&self, rel_tol: f64) -> Result<bool> {
        let c = self.cov()?;
        let asym = (c - c.transpose()).amax();
        Ok(asym <= 1e-10 && is_psd(c, rel_tol)?)
    }

    /// Applies `x ↦ T x`: the mean maps through `t`, the covariance by
    /// `T P Tᵀ` and the precision by `T⁻ᵀ Λ T⁻¹` (`t_inv_t` applies `T⁻ᵀ`).
    /// Only the representations already held are transformed.
    pub(crate) fn transformed(
        &self,
        t: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
        t_inv_t: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
    ) -> Self {
        let m = DMatrix::from_column_slice(self.dim(), 1, self.mean.as_slice());
        let out = Self::empty(DVector::from_column_slice(t(&m).as_slice()));
        if let Some(c) = self.cov.get() {
            let half = t(c);
            let _ = out.cov.set(symmetrize(t(&half.transpose())));
        }
        if let Some(p) = self.precision.get() {
            let half = t_inv_t(p);
            let _ = out.precision.set(symmetrize(t_inv_t(&half.transpose())));
        }
        out
    }
}

fn check_square(k: usize, m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != k || m.ncols() != k {
        return Err(Error::dim(format!(
            "{what} is {}x{}, mean has length {k}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Decomposition family of a model.
#[derive(Clone, Debug, PartialEq)]
pub enum TDKind {
    /// Rank-`R` CP; factor columns are kept at unit norm with weights in `lambda`.
    CP { rank: usize, lambda: Vec<f64> },
    /// Tucker with a deterministic core of dims `ranks`.
    Tucker { ranks: Vec<usize>, core: DenseTensor },
    /// Tensor train with rank chain `R_1..R_{N+1}`.
    TT { ranks: Vec<usize> },
}

impl TDKind {
    pub fn name(&self) -> &'static str {
        match self {
            TDKind::CP { .. } => "CP",
            TDKind::Tucker { .. } => "Tucker",
            TDKind::TT { .. } => "TT",
        }
    }
}

/// Full inference state: priors, current posteriors and the noise variance.
#[derive(Clone, Debug)]
pub struct BayesTDModel {
    pub kind: TDKind,
    pub dims: Vec<usize>,
    pub noise_var: f64,
    /// Priors `N(m⁰, P⁰)` in the coordinates of `components`.
    pub priors: Vec<GaussianComponent>,
    /// Current posteriors; their means define the point estimate.
    pub components: Vec<GaussianComponent>,
}

impl BayesTDModel {
    /// Starts from the priors: posterior means and covariances equal the prior.
    pub fn new(kind: TDKind, dims: Vec<usize>, noise_var: f64, priors: Vec<GaussianComponent>) -> Result<Self> {
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(Error::Parameter(format!("noise variance must be positive, got {noise_var}")));
        }
        if priors.len() != dims.len() {
            return Err(Error::Structure(format!(
                "{} components for a {}-way tensor",
                priors.len(),
                dims.len()
            )));
        }
        let sizes = component_sizes(&kind, &dims)?;
        for (n, (p, &k)) in priors.iter().zip(&sizes).enumerate() {
            if p.dim() != k {
                return Err(Error::dim(format!(
                    "component {} has length {}, {} model needs {k}",
                    n + 1,
                    p.dim(),
                    kind.name()
                )));
            }
        }
        let mut model = Self { kind, dims, noise_var, components: priors.clone(), priors };
        if let TDKind::CP { .. } = model.kind {
            for n in 0..model.order() {
                super::design::normalize_cp_component(&mut model, n);
            }
        }
        Ok(model)
    }

    /// TT model with isotropic priors centred on the cores of `mean`.
    pub fn tt_isotropic(mean: &TensorTrain, prior_var: f64, noise_var: f64) -> Result<Self> {
        let priors = mean
            .cores()
            .iter()
            .map(|c| GaussianComponent::isotropic(DVector::from_column_slice(c.data()), prior_var))
            .collect::<Result<Vec<_>>>()?;
        Self::new(TDKind::TT { ranks: mean.ranks() }, mean.dims(), noise_var, priors)
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    /// Sizes `K_n` of the vectorized components.
    pub fn component_sizes(&self) -> Vec<usize> {
        component_sizes(&self.kind, &self.dims).expect("validated at construction")
    }

    pub(crate) fn expect_tt(&self) -> Result<&[usize]> {
        match &self.kind {
            TDKind::TT { ranks } => Ok(ranks),
            other => Err(Error::Kind { expected: "TT", found: other.name() }),
        }
    }

    /// The posterior means of a TT model as a tensor train.
    pub fn mean_tt(&self) -> Result<TensorTrain> {
        let ranks = self.expect_tt()?;
        let data = self.components.iter().map(|c| c.mean().as_slice().to_vec()).collect();
        TensorTrain::from_parts(&self.dims, ranks, data)
    }

    /// Factor matrix `n` (0-based) of a CP or Tucker model, `I_n x R`.
    pub fn factor(&self, n: usize) -> DMatrix<f64> {
        let k = self.components[n].dim();
        let rows = self.dims[n];
        DMatrix::from_column_slice(rows, k / rows, self.components[n].mean().as_slice())
    }

    /// Dense tensor of the current point estimate.
    pub fn mean_tensor(&self) -> Result<DenseTensor> {
        super::design::model_tensor(self)
    }

    /// Replaces the priors by the current posteriors.
    pub fn posterior_as_prior(mut self) -> Self {
        self.priors = self.components.clone();
        self
    }
}

fn component_sizes(kind: &TDKind, dims: &[usize]) -> Result<Vec<usize>> {
    match kind {
        TDKind::CP { rank, lambda } => {
            if *rank == 0 || lambda.len() != *rank {
                return Err(Error::Structure(format!(
                    "CP rank {rank} with {} weights",
                    lambda.len()
                )));
            }
            Ok(dims.iter().map(|d| d * rank).collect())
        }
        TDKind::Tucker { ranks, core } => {
            if ranks.len() != dims.len() || core.dims() != ranks.as_slice() {
                return Err(Error::Structure(format!(
                    "Tucker ranks {ranks:?} and core dims {:?} must match a {}-way tensor",
                    core.dims(),
                    dims.len()
                )));
            }
            Ok(dims.iter().zip(ranks).map(|(d, r)| d * r).collect())
        }
        TDKind::TT { ranks } => {
            if ranks.len() != dims.len() + 1 || ranks[0] != 1 || ranks[dims.len()] != 1 {
                return Err(Error::Structure(format!("invalid TT rank chain {ranks:?}")));
            }
            Ok((0..dims.len()).map(|n| ranks[n] * dims[n] * ranks[n + 1]).collect())
        }
    }
}
