//! Bayesian TT-ALS with the train kept in site-`n` mixed-canonical form.
//!
//! Every norm shift is a linear change of coordinates on two neighbouring
//! cores. Means, covariances (or precisions) and the priors follow it, so
//! the design matrix at the active site stays orthonormal and each update
//! only needs `Uᵀy`.

use nalgebra::{DMatrix, DVector};

use crate::als::{
    left_interface, ortho_sweep_sites, posterior_update_normal, record, right_interface,
    tt_projection, AlsOptions, BayesTDModel, ConvergenceTrace, Direction, GaussianComponent,
};
use crate::error::{Error, Result};
use crate::linalg::thin_qr;
use crate::tensor::{DenseMatrix, DenseTensor};
use crate::tt::{left_unfold, orthogonality_residual, right_unfold, Orthogonality, TensorTrain};

/// Tolerance for the orthonormality of `U` at the active site.
pub const ORTHONORMAL_TOL: f64 = 1e-6;
/// Relative diagonal jitter for a singular triangular factor.
pub const R_JITTER: f64 = 1e-12;

/// Left multiplication by a triangular-derived factor.
#[derive(Clone, Copy)]
enum Op<'a> {
    Mul(&'a DenseMatrix),
    /// `R⁻ᵀ x` for upper-triangular `R`.
    SolveUpperT(&'a DenseMatrix),
}

impl Op<'_> {
    fn apply(&self, x: &DenseMatrix) -> DenseMatrix {
        match self {
            Op::Mul(m) => *m * x,
            Op::SolveUpperT(r) => r.tr_solve_upper_triangular(x).expect("jittered triangular factor"),
        }
    }

    /// The inverse transpose, which acts on precisions and inverse gauges.
    fn inv_t(self) -> Self {
        match self {
            Op::Mul(m) => Op::SolveUpperT(m),
            Op::SolveUpperT(r) => Op::Mul(r),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Side {
    /// The leading rank index `R_n`.
    Left,
    /// The trailing rank index `R_{n+1}`.
    Right,
}

/// Applies `I ⊗ I ⊗ F` (left side) or `F ⊗ I ⊗ I` (right side) to every
/// column of `x`, whose rows are indexed like `vec` of an `r x d x r2` core.
fn apply_core_op(x: &DenseMatrix, shape: (usize, usize, usize), side: Side, op: Op) -> DenseMatrix {
    let (r, d, r2) = shape;
    let cols = x.ncols();
    match side {
        Side::Left => {
            let view = DMatrix::from_column_slice(r, d * r2 * cols, x.as_slice());
            let out = op.apply(&view);
            DMatrix::from_vec(r * d * r2, cols, out.data.into())
        }
        Side::Right => {
            let rd = r * d;
            let mut z = DMatrix::zeros(r2, rd * cols);
            for c in 0..cols {
                for b in 0..r2 {
                    for ai in 0..rd {
                        z[(b, ai + rd * c)] = x[(ai + rd * b, c)];
                    }
                }
            }
            let z = op.apply(&z);
            let mut out = DMatrix::zeros(r * d * r2, cols);
            for c in 0..cols {
                for b in 0..r2 {
                    for ai in 0..rd {
                        out[(ai + rd * b, c)] = z[(b, ai + rd * c)];
                    }
                }
            }
            out
        }
    }
}

fn transform_component(c: &GaussianComponent, shape: (usize, usize, usize), side: Side, op: Op) -> GaussianComponent {
    c.transformed(
        |x| apply_core_op(x, shape, side, op),
        |x| apply_core_op(x, shape, side, op.inv_t()),
    )
}

/// Accumulated change of coordinates `B ⊗ I ⊗ A` of one core since the
/// priors were stated, with its inverse factors.
#[derive(Clone, Debug)]
struct Gauge {
    a: DenseMatrix,
    a_inv: DenseMatrix,
    b: DenseMatrix,
    b_inv: DenseMatrix,
}

impl Gauge {
    fn identity(r: usize, r2: usize) -> Self {
        Self {
            a: DMatrix::identity(r, r),
            a_inv: DMatrix::identity(r, r),
            b: DMatrix::identity(r2, r2),
            b_inv: DMatrix::identity(r2, r2),
        }
    }

    /// Composes `F` on the given side: `A ← F A`, `A⁻¹ ← A⁻¹ F⁻¹`.
    fn compose(&mut self, side: Side, op: Op) {
        let (m, inv) = match side {
            Side::Left => (&mut self.a, &mut self.a_inv),
            Side::Right => (&mut self.b, &mut self.b_inv),
        };
        *m = op.apply(m);
        *inv = op.inv_t().apply(&inv.transpose()).transpose();
    }

    fn is_identity(&self) -> bool {
        let id = |m: &DenseMatrix| m.is_identity(0.0);
        id(&self.a) && id(&self.b)
    }
}

/// Running state of the orthogonalized sweep.
#[derive(Clone, Debug)]
pub struct OrthoSweepState {
    /// Posteriors in the current coordinates; `model.priors` stay in the
    /// coordinates they were stated in.
    pub model: BayesTDModel,
    /// Core carrying the norm (1-based).
    pub site: usize,
    pub direction: Direction,
    gauges: Vec<Gauge>,
    /// Whether a triangular factor needed jitter at some point.
    pub jittered: bool,
}

impl OrthoSweepState {
    /// Wraps a TT model and moves the norm to core 1.
    pub fn new(model: BayesTDModel) -> Result<Self> {
        let ranks = model.expect_tt()?.to_vec();
        let gauges = (0..model.order()).map(|n| Gauge::identity(ranks[n], ranks[n + 1])).collect();
        let order = model.order();
        let mut state = Self { model, site: order, direction: Direction::RightToLeft, gauges, jittered: false };
        for n in (2..=order).rev() {
            state.transform_left(n)?;
        }
        state.site = 1;
        state.direction = Direction::LeftToRight;
        Ok(state)
    }

    fn shape(&self, n0: usize) -> (usize, usize, usize) {
        let d = self.model.components[n0].dim();
        let ranks = self.model.expect_tt().expect("TT state");
        debug_assert_eq!(d, ranks[n0] * self.model.dims[n0] * ranks[n0 + 1]);
        (ranks[n0], self.model.dims[n0], ranks[n0 + 1])
    }

    fn core(&self, n0: usize) -> DenseTensor {
        let (r, d, r2) = self.shape(n0);
        DenseTensor::new(vec![r, d, r2], self.model.components[n0].mean().as_slice().to_vec()).expect("core shape")
    }

    pub fn mean_tt(&self) -> TensorTrain {
        self.model.mean_tt().expect("TT state")
    }

    fn jitter(&mut self, r: DenseMatrix) -> Result<DenseMatrix> {
        let norm = r.norm();
        let min_diag = r.diagonal().iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
        if min_diag > f64::EPSILON * norm {
            return Ok(r);
        }
        let shift = R_JITTER * norm;
        let mut r = r;
        for i in 0..r.nrows() {
            r[(i, i)] += shift;
        }
        let min_diag = r.diagonal().iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
        if !(min_diag > 0.0) {
            return Err(Error::Numerical(format!("triangular factor singular after jitter {shift:e}")));
        }
        log::warn!("singular triangular factor; added {shift:e} to its diagonal");
        self.jittered = true;
        Ok(r)
    }

    fn transform(&mut self, n0: usize, side: Side, op: Op, mean: DVector<f64>) -> Result<()> {
        let shape = self.shape(n0);
        let c = transform_component(&self.model.components[n0], shape, side, op).with_mean(mean)?;
        self.model.components[n0] = c;
        self.gauges[n0].compose(side, op);
        Ok(())
    }

    /// Moves the norm from core `n` to core `n-1` (1-based, `n ≥ 2`).
    pub fn transform_left(&mut self, n: usize) -> Result<()> {
        if n < 2 || n > self.model.order() {
            return Err(Error::Boundary(format!("cannot transform left from core {n} of {}", self.model.order())));
        }
        let n0 = n - 1;
        let core = self.core(n0);
        let (r, d, r2) = self.shape(n0);
        if r > d * r2 {
            return Err(Error::Structure(format!("rank {r} exceeds {d}x{r2} at core {n}")));
        }
        let (q, rf) = thin_qr(&right_unfold(&core).transpose());
        let q_t = q.transpose();
        let prev = self.core(n0 - 1);
        let absorbed = left_unfold(&prev) * rf.transpose();
        let rj = self.jitter(rf)?;
        self.transform(n0, Side::Left, Op::SolveUpperT(&rj), DVector::from_column_slice(q_t.as_slice()))?;
        self.transform(n0 - 1, Side::Right, Op::Mul(&rj), DVector::from_column_slice(absorbed.as_slice()))?;
        self.site = n - 1;
        Ok(())
    }

    /// Moves the norm from core `n` to core `n+1` (1-based, `n ≤ N-1`).
    pub fn transform_right(&mut self, n: usize) -> Result<()> {
        if n == 0 || n >= self.model.order() {
            return Err(Error::Boundary(format!("cannot transform right from core {n} of {}", self.model.order())));
        }
        let n0 = n - 1;
        let core = self.core(n0);
        let (r, d, r2) = self.shape(n0);
        if r2 > r * d {
            return Err(Error::Structure(format!("rank {r2} exceeds {r}x{d} at core {n}")));
        }
        let (q, rf) = thin_qr(&left_unfold(&core));
        let next = self.core(n0 + 1);
        let absorbed = &rf * right_unfold(&next);
        let rj = self.jitter(rf)?;
        self.transform(n0, Side::Right, Op::SolveUpperT(&rj), DVector::from_column_slice(q.as_slice()))?;
        self.transform(n0 + 1, Side::Left, Op::Mul(&rj), DVector::from_column_slice(absorbed.as_slice()))?;
        self.site = n + 1;
        Ok(())
    }

    /// Prior of core `n` (1-based) in the current coordinates.
    pub fn transformed_prior(&self, n: usize) -> GaussianComponent {
        let n0 = n - 1;
        let prior = &self.model.priors[n0];
        let g = &self.gauges[n0];
        if g.is_identity() {
            return prior.clone();
        }
        let shape = self.shape(n0);
        let (a_it, b_it) = (g.a_inv.transpose(), g.b_inv.transpose());
        prior.transformed(
            |x| apply_core_op(&apply_core_op(x, shape, Side::Right, Op::Mul(&g.b)), shape, Side::Left, Op::Mul(&g.a)),
            |x| apply_core_op(&apply_core_op(x, shape, Side::Right, Op::Mul(&b_it)), shape, Side::Left, Op::Mul(&a_it)),
        )
    }

    pub fn transformed_priors(&self) -> Vec<GaussianComponent> {
        (1..=self.model.order()).map(|n| self.transformed_prior(n)).collect()
    }

    /// Largest orthogonality residual over the off-site cores.
    pub fn canonical_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for n0 in 0..self.model.order() {
            let side = match (n0 + 1).cmp(&self.site) {
                std::cmp::Ordering::Less => Orthogonality::Left,
                std::cmp::Ordering::Greater => Orthogonality::Right,
                std::cmp::Ordering::Equal => continue,
            };
            worst = worst.max(orthogonality_residual(&self.core(n0), side));
        }
        worst
    }

    /// Posterior update of the active core against its transformed prior.
    pub fn update(&mut self, y: &DVector<f64>) -> Result<()> {
        let n0 = self.site - 1;
        let tt = self.mean_tt();
        let l = left_interface(&tt, n0);
        let rt = right_interface(&tt, n0);
        let dev = |g: DenseMatrix| (&g - DMatrix::identity(g.nrows(), g.ncols())).norm();
        let (dl, dr) = (dev(l.transpose() * &l), dev(&rt * rt.transpose()));
        if dl > ORTHONORMAL_TOL || dr > ORTHONORMAL_TOL {
            return Err(Error::CanonicalForm(format!(
                "design matrix at core {} is not orthonormal (interface deviations {dl:.2e}, {dr:.2e})",
                self.site
            )));
        }
        let proj = tt_projection(&l, &rt, self.model.dims[n0], y);
        let prior = self.transformed_prior(self.site);
        self.model.components[n0] = ortho_posterior_update(&prior, &proj, self.model.noise_var)?;
        Ok(())
    }

    /// The model with its priors expressed in the current coordinates.
    pub fn into_model(self) -> BayesTDModel {
        let priors = self.transformed_priors();
        let mut model = self.model;
        model.priors = priors;
        model
    }
}

/// Posterior for an orthonormal design: `P⁺ = [(P⁰)⁻¹ + I/σ²]⁻¹`,
/// `m⁺ = P⁺[Uᵀy/σ² + (P⁰)⁻¹ m⁰]`, elementwise when the prior is diagonal.
pub fn ortho_posterior_update(prior: &GaussianComponent, proj: &DVector<f64>, noise_var: f64) -> Result<GaussianComponent> {
    if let Some(diag) = diagonal_precision(prior)? {
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(Error::Parameter(format!("noise variance must be positive, got {noise_var}")));
        }
        let post = diag.map(|l| l + 1.0 / noise_var);
        let mean = DVector::from_fn(proj.len(), |i, _| {
            (proj[i] / noise_var + diag[i] * prior.mean()[i]) / post[i]
        });
        let cov = DMatrix::from_diagonal(&post.map(|x| 1.0 / x));
        return Ok(GaussianComponent::with_both(mean, cov, DMatrix::from_diagonal(&post)));
    }
    let k = prior.dim();
    posterior_update_normal(prior, &DMatrix::identity(k, k), proj, noise_var)
}

fn diagonal_precision(prior: &GaussianComponent) -> Result<Option<DVector<f64>>> {
    let is_diag = |m: &DenseMatrix| (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| i == j || m[(i, j)] == 0.0));
    if prior.has_precision() {
        let p = prior.precision()?;
        return Ok(is_diag(p).then(|| p.diagonal()));
    }
    let c = prior.cov()?;
    Ok(is_diag(c).then(|| c.diagonal().map(|x| 1.0 / x)))
}

/// Orthogonalized Bayesian ALS. Sites are visited `1..N, N-1..2`; after each
/// update the norm moves to the next site, and back to core 1 at the end of
/// a sweep. One trace row is written per update.
pub fn bayes_als_ortho(model: BayesTDModel, y: &DVector<f64>, opts: &AlsOptions) -> Result<(BayesTDModel, ConvergenceTrace)> {
    crate::als::check_measurement(&model, y)?;
    let mut state = OrthoSweepState::new(model)?;
    let mut trace = ConvergenceTrace { records: vec![record(&state.model, y, opts, 0, None)?] };
    let sites = ortho_sweep_sites(state.model.order());
    for sweep in 1..=opts.stop.max_sweeps {
        let prev = trace.records.last().unwrap().clone();
        for (k, &(n0, dir)) in sites.iter().enumerate() {
            debug_assert_eq!(state.site, n0 + 1);
            state.direction = dir;
            state.update(y)?;
            trace.records.push(record(&state.model, y, opts, sweep, Some((n0 + 1, dir)))?);
            let next = sites.get(k + 1).map_or(0, |s| s.0);
            if next > n0 {
                state.transform_right(n0 + 1)?;
            } else if next < n0 {
                state.transform_left(n0 + 1)?;
            }
        }
        log::debug!("bayes_als_ortho sweep {sweep}: eps_meas {:.6e}", trace.last().unwrap().eps_meas);
        if opts.stop.converged(&prev, trace.last().unwrap()) {
            break;
        }
    }
    Ok((state.into_model(), trace))
}

/// Runs [`bayes_als_ortho`] once per sample, feeding posteriors forward.
pub fn recursive_update_ortho(
    model: BayesTDModel,
    samples: &[DVector<f64>],
    opts: &AlsOptions,
) -> Result<(BayesTDModel, Vec<ConvergenceTrace>)> {
    crate::als::recursive_with(model, samples, |m, y| bayes_als_ortho(m, y, opts))
}
