use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::design::{check_measurement, cp_absorbed_mean, normal_equations, recompute_tucker_core, split_cp_weights, tt_least_squares_core, tt_projection, left_interface, right_interface};
use super::model::{BayesTDModel, TDKind};
use super::update::posterior_update_normal;
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::tensor::vectorize;
use crate::tt::{tt_contract, TensorTrain};

/// When to stop sweeping. `max_sweeps` always applies; each optional
/// criterion stops as soon as its relative change between consecutive
/// sweeps drops below the tolerance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoppingRule {
    pub max_sweeps: usize,
    pub meas_tol: Option<f64>,
    pub cov_tol: Option<f64>,
    pub objective_tol: Option<f64>,
}

impl Default for StoppingRule {
    fn default() -> Self {
        Self { max_sweeps: 20, meas_tol: Some(1e-8), cov_tol: None, objective_tol: None }
    }
}

impl StoppingRule {
    /// Exactly `n` sweeps.
    pub fn fixed(n: usize) -> Self {
        Self { max_sweeps: n, meas_tol: None, cov_tol: None, objective_tol: None }
    }

    pub(crate) fn converged(&self, prev: &SweepRecord, cur: &SweepRecord) -> bool {
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(f64::MIN_POSITIVE);
        if let Some(tol) = self.meas_tol {
            if rel(prev.eps_meas, cur.eps_meas) < tol {
                return true;
            }
        }
        if let Some(tol) = self.cov_tol {
            if !cur.cov_fro.is_empty()
                && prev.cov_fro.iter().zip(&cur.cov_fro).all(|(&a, &b)| rel(a, b) < tol)
            {
                return true;
            }
        }
        if let (Some(tol), Some(a), Some(b)) = (self.objective_tol, prev.log_objective, cur.log_objective) {
            if rel(a, b) < tol {
                return true;
            }
        }
        false
    }
}

/// Options shared by the ALS drivers.
#[derive(Clone, Debug)]
pub struct AlsOptions {
    pub stop: StoppingRule,
    /// Noise-free reference for `ε_truth`.
    pub truth: Option<DVector<f64>>,
    /// Record covariance traces/norms and the log objective. Forming the
    /// covariances needs one inversion per core and record.
    pub detailed: bool,
}

impl Default for AlsOptions {
    fn default() -> Self {
        Self { stop: StoppingRule::default(), truth: None, detailed: true }
    }
}

impl AlsOptions {
    pub fn new(stop: StoppingRule) -> Self {
        Self { stop, ..Self::default() }
    }

    pub fn with_truth(mut self, truth: DVector<f64>) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn brief(mut self) -> Self {
        self.detailed = false;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    LeftToRight,
    RightToLeft,
}

impl Direction {
    fn label(self) -> &'static str {
        match self {
            Direction::LeftToRight => "ltr",
            Direction::RightToLeft => "rtl",
        }
    }
}

/// One row of a convergence trace. Sweep 0 is the initial state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRecord {
    pub sweep: usize,
    /// Updated core (1-based) and sweep direction, for per-update rows.
    pub site: Option<usize>,
    pub direction: Option<Direction>,
    pub eps_meas: f64,
    pub eps_truth: Option<f64>,
    pub log_objective: Option<f64>,
    pub cov_trace: Vec<f64>,
    pub cov_fro: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ConvergenceTrace {
    pub records: Vec<SweepRecord>,
}

impl ConvergenceTrace {
    /// Last record of every sweep.
    pub fn per_sweep(&self) -> Vec<&SweepRecord> {
        let mut out: Vec<&SweepRecord> = Vec::new();
        for r in &self.records {
            match out.last() {
                Some(last) if last.sweep == r.sweep => *out.last_mut().unwrap() = r,
                _ => out.push(r),
            }
        }
        out
    }

    pub fn last(&self) -> Option<&SweepRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let ncores = self.records.iter().map(|r| r.cov_trace.len()).max().unwrap_or(0);
        let with_site = self.records.iter().any(|r| r.site.is_some());
        let mut s = String::from("sweep");
        if with_site {
            s.push_str(",site,direction");
        }
        s.push_str(",eps_meas,eps_truth,log_objective");
        for n in 1..=ncores {
            let _ = write!(s, ",cov_trace_{n}");
        }
        for n in 1..=ncores {
            let _ = write!(s, ",cov_fro_{n}");
        }
        s.push('\n');
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
        for r in &self.records {
            let _ = write!(s, "{}", r.sweep);
            if with_site {
                let _ = write!(
                    s,
                    ",{},{}",
                    r.site.map(|x| x.to_string()).unwrap_or_default(),
                    r.direction.map(Direction::label).unwrap_or_default()
                );
            }
            let _ = write!(s, ",{:.17e},{},{}", r.eps_meas, opt(r.eps_truth), opt(r.log_objective));
            for n in 0..ncores {
                let _ = write!(s, ",{}", opt(r.cov_trace.get(n).copied()));
            }
            for n in 0..ncores {
                let _ = write!(s, ",{}", opt(r.cov_fro.get(n).copied()));
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// `‖reference − estimate‖ / ‖reference‖`.
pub(crate) fn relative_error(estimate: &[f64], reference: &[f64]) -> f64 {
    let num: f64 = estimate.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let den: f64 = reference.iter().map(|b| b * b).sum::<f64>().sqrt();
    num / den
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `log N(y; ŷ, σ² I) + Σ_n log N(m_n; m⁰_n, P⁰_n)` at the current means.
pub fn log_posterior_objective(model: &BayesTDModel, y: &DVector<f64>) -> Result<f64> {
    check_measurement(model, y)?;
    let fit = model.mean_tensor()?;
    let sq: f64 = fit.data().iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    let j = y.len() as f64;
    let mut total = -0.5 * j * (LN_2PI + model.noise_var.ln()) - 0.5 * sq / model.noise_var;
    for (n0, prior) in model.priors.iter().enumerate() {
        let m = match model.kind {
            TDKind::CP { .. } => cp_absorbed_mean(model, n0),
            _ => model.components[n0].mean().clone(),
        };
        total += gaussian_log_pdf(&m, prior.mean(), prior.precision()?)?;
    }
    Ok(total)
}

fn gaussian_log_pdf(x: &DVector<f64>, mean: &DVector<f64>, precision: &nalgebra::DMatrix<f64>) -> Result<f64> {
    let d = x - mean;
    let f = SpdFactor::new(precision)?;
    let k = x.len() as f64;
    Ok(-0.5 * (k * LN_2PI - f.log_det() + d.dot(&(precision * &d))))
}

pub(crate) fn record(
    model: &BayesTDModel,
    y: &DVector<f64>,
    opts: &AlsOptions,
    sweep: usize,
    update: Option<(usize, Direction)>,
) -> Result<SweepRecord> {
    let fit = vectorize(&model.mean_tensor()?);
    let eps_meas = relative_error(fit.as_slice(), y.as_slice());
    let eps_truth = opts.truth.as_ref().map(|t| relative_error(fit.as_slice(), t.as_slice()));
    let (mut cov_trace, mut cov_fro, mut log_objective) = (Vec::new(), Vec::new(), None);
    if opts.detailed {
        for c in &model.components {
            cov_trace.push(c.cov_trace()?);
            cov_fro.push(c.cov_frobenius()?);
        }
        log_objective = Some(log_posterior_objective(model, y)?);
    }
    Ok(SweepRecord {
        sweep,
        site: update.map(|u| u.0),
        direction: update.map(|u| u.1),
        eps_meas,
        eps_truth,
        log_objective,
        cov_trace,
        cov_fro,
    })
}

/// Bayesian ALS: per sweep, components `1..N` receive the posterior
/// update against their prior, with the design matrix rebuilt from the
/// latest means. CP weights are renormalized and the Tucker core is
/// recomputed after each component update.
pub fn bayes_als(model: BayesTDModel, y: &DVector<f64>, opts: &AlsOptions) -> Result<(BayesTDModel, ConvergenceTrace)> {
    check_measurement(&model, y)?;
    let mut model = model;
    let mut trace = ConvergenceTrace { records: vec![record(&model, y, opts, 0, None)?] };
    for sweep in 1..=opts.stop.max_sweeps {
        for n0 in 0..model.order() {
            let (gram, proj) = normal_equations(&model, n0, y)?;
            let post = posterior_update_normal(&model.priors[n0], &gram, &proj, model.noise_var)?;
            model.components[n0] = post;
            match model.kind {
                TDKind::CP { .. } => split_cp_weights(&mut model, n0, true),
                TDKind::Tucker { .. } => model = recompute_tucker_core(&model, y)?.0,
                TDKind::TT { .. } => {}
            }
        }
        let rec = record(&model, y, opts, sweep, None)?;
        log::debug!("bayes_als sweep {sweep}: eps_meas {:.6e}", rec.eps_meas);
        let done = opts.stop.converged(trace.records.last().unwrap(), &rec);
        trace.records.push(rec);
        if done {
            break;
        }
    }
    Ok((model, trace))
}

/// Runs `bayes_als` once per sample; each run's posterior is the next prior.
pub fn recursive_update(
    model: BayesTDModel,
    samples: &[DVector<f64>],
    opts: &AlsOptions,
) -> Result<(BayesTDModel, Vec<ConvergenceTrace>)> {
    recursive_with(model, samples, |m, y| bayes_als(m, y, opts))
}

pub(crate) fn recursive_with(
    model: BayesTDModel,
    samples: &[DVector<f64>],
    mut run: impl FnMut(BayesTDModel, &DVector<f64>) -> Result<(BayesTDModel, ConvergenceTrace)>,
) -> Result<(BayesTDModel, Vec<ConvergenceTrace>)> {
    if samples.is_empty() {
        return Err(Error::Parameter("recursive update needs at least one sample".into()));
    }
    let mut model = model;
    let mut traces = Vec::with_capacity(samples.len());
    for (k, y) in samples.iter().enumerate() {
        if k > 0 {
            model = model.posterior_as_prior();
        }
        let (m, t) = run(model, y)?;
        model = m;
        traces.push(t);
    }
    Ok((model, traces))
}

/// Site order of one orthogonalized sweep: `1..N` then `N-1..2` (0-based).
pub(crate) fn ortho_sweep_sites(order: usize) -> Vec<(usize, Direction)> {
    let mut sites: Vec<(usize, Direction)> = (0..order).map(|n| (n, Direction::LeftToRight)).collect();
    sites.extend((1..order.saturating_sub(1)).rev().map(|n| (n, Direction::RightToLeft)));
    sites
}

/// Conventional TT-ALS from `init`. The plain variant solves the normal
/// equations for cores `1..N`; the orthogonalized variant keeps the train in
/// mixed-canonical form, where each core update is `Uᵀy`.
pub fn conventional_als(
    init: &TensorTrain,
    y: &DVector<f64>,
    sweeps: usize,
    orthogonalized: bool,
    truth: Option<&DVector<f64>>,
) -> Result<(TensorTrain, ConvergenceTrace)> {
    let j: usize = init.dims().iter().product();
    if y.len() != j {
        return Err(Error::dim(format!("measurement has length {}, train needs {j}", y.len())));
    }
    let rec = |tt: &TensorTrain, sweep: usize| {
        let fit = tt_contract(tt);
        SweepRecord {
            sweep,
            site: None,
            direction: None,
            eps_meas: relative_error(fit.data(), y.as_slice()),
            eps_truth: truth.map(|t| relative_error(fit.data(), t.as_slice())),
            log_objective: None,
            cov_trace: Vec::new(),
            cov_fro: Vec::new(),
        }
    };
    let order = init.order();
    let mut tt = if orthogonalized { crate::tt::to_site_n_canonical(init, 1)? } else { init.clone() };
    let mut trace = ConvergenceTrace { records: vec![rec(&tt, 0)] };
    for sweep in 1..=sweeps {
        if orthogonalized {
            let sites = ortho_sweep_sites(order);
            for (k, &(n0, _)) in sites.iter().enumerate() {
                let l = left_interface(&tt, n0);
                let rt = right_interface(&tt, n0);
                let g = tt_projection(&l, &rt, tt.dims()[n0], y);
                let dims = tt.core(n0).dims().to_vec();
                tt.set_core(n0, crate::tensor::DenseTensor::new(dims, g.data.into())?)?;
                let next = sites.get(k + 1).map_or(0, |s| s.0);
                if next > n0 {
                    tt.shift_right_in_place(n0);
                } else if next < n0 {
                    tt.shift_left_in_place(n0);
                }
            }
        } else {
            for n0 in 0..order {
                let (g, singular) = tt_least_squares_core(&tt, n0, y)?;
                if singular {
                    log::warn!("singular normal equations at core {}; used the pseudo-inverse", n0 + 1);
                }
                let dims = tt.core(n0).dims().to_vec();
                tt.set_core(n0, crate::tensor::DenseTensor::new(dims, g.data.into())?)?;
            }
        }
        trace.records.push(rec(&tt, sweep));
    }
    Ok((tt, trace))
}
