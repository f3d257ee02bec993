//! Synthetic and image experiments: ground truths, noisy samples, priors,
//! and the convergence, covariance, comparison and image studies.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::als::{AlsOptions, BayesTDModel, ConvergenceTrace, GaussianComponent, StoppingRule};
use crate::error::{Error, Result};
use crate::tt::TensorTrain;
use crate::unscented::{UTParams, UTRounding};

mod comparison;
mod convergence;
mod covariance;
mod image;

pub use comparison::{run_comparison, ComparisonResult, ComparisonRow};
pub use convergence::{run_convergence, Band, ConvergenceResult};
pub use covariance::{run_covariance_study, ut_trace_check, CovRecord, CovarianceResult};
pub use image::{image_pipeline, read_gray_image, write_gray_image, ImageConfig, ImageResult, ImageRow};

/// SNR at or above which no noise is added.
pub const SNR_NOISELESS_DB: f64 = 300.0;
/// Floor for the prior standard deviation `b`.
pub const PRIOR_B_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Bayes,
    BayesOrtho,
    Conventional,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Bayes => "bayes",
            Algorithm::BayesOrtho => "bayes_ortho",
            Algorithm::Conventional => "conventional",
        }
    }
}

/// How the noise level follows from the SNR.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrConvention {
    /// `SNR = ‖y_truth‖² / E‖ε‖²`, i.e. `σ² = ‖y_truth‖² / (J·10^{SNR/10})`.
    #[default]
    Truth,
    /// `SNR = ‖y‖² / ‖ε‖²` with `y` the noisy sample, met exactly per draw.
    Sample,
}

/// Settings shared by the synthetic studies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dims: Vec<usize>,
    pub ranks: Vec<usize>,
    pub snr_db: f64,
    pub snr_convention: SnrConvention,
    pub n_samples: usize,
    /// Prior mean perturbation: `m⁰ = g_truth + a·N(0, I)`.
    pub prior_a: f64,
    /// Prior standard deviation: `P⁰ = b² I`.
    pub prior_b: f64,
    /// Draw the prior mean from `N(0, I)` instead of perturbing the truth.
    pub random_prior_mean: bool,
    pub stop: StoppingRule,
    pub algorithm: Algorithm,
    pub trials: usize,
    /// SNR values for the comparison study; defaults to `[snr_db]`.
    pub snr_grid: Option<Vec<f64>>,
    /// Sample counts for the comparison study; defaults to `[n_samples]`.
    pub sample_grid: Option<Vec<usize>>,
    /// Worker threads for independent trials.
    pub threads: usize,
    /// Unscented transform used by the covariance study.
    pub ut: UTParams,
    pub ut_rounding: UTRounding,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dims: vec![5, 5, 5],
            ranks: vec![1, 3, 3, 1],
            snr_db: 0.0,
            snr_convention: SnrConvention::Truth,
            n_samples: 1,
            prior_a: 0.1,
            prior_b: 0.1,
            random_prior_mean: false,
            stop: StoppingRule::fixed(20),
            algorithm: Algorithm::Bayes,
            trials: 1,
            snr_grid: None,
            sample_grid: None,
            threads: 1,
            ut: UTParams::default(),
            ut_rounding: UTRounding::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Parameter("trials must be at least 1".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::Parameter("n_samples must be at least 1".into()));
        }
        if self.ranks.len() != self.dims.len() + 1 || self.ranks[0] != 1 || *self.ranks.last().unwrap() != 1 {
            return Err(Error::Structure(format!("invalid TT rank chain {:?}", self.ranks)));
        }
        if self.dims.iter().chain(&self.ranks).any(|&d| d == 0) {
            return Err(Error::Parameter("dims and ranks must be positive".into()));
        }
        if !(self.prior_a >= 0.0 && self.prior_b >= 0.0) {
            return Err(Error::Parameter("prior_a and prior_b must be non-negative".into()));
        }
        if self.sample_grid.as_ref().is_some_and(|g| g.is_empty() || g.contains(&0)) {
            return Err(Error::Parameter("sample_grid entries must be at least 1".into()));
        }
        if self.snr_grid.as_ref().is_some_and(|g| g.is_empty()) {
            return Err(Error::Parameter("snr_grid must not be empty".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn snrs(&self) -> Vec<f64> {
        self.snr_grid.clone().unwrap_or_else(|| vec![self.snr_db])
    }

    pub fn sample_counts(&self) -> Vec<usize> {
        let mut v = self.sample_grid.clone().unwrap_or_else(|| vec![self.n_samples]);
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Random-number purposes, each with its own stream.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    Truth = 1,
    Noise = 2,
    Prior = 3,
}

/// Generator for `(seed, purpose, index)`; streams never overlap.
pub fn stream_rng(seed: u64, purpose: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 56) | (index & ((1 << 56) - 1)));
    rng
}

fn normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Train with standard-normal cores drawn from the truth stream of `seed`.
pub fn make_ground_truth(seed: u64, dims: &[usize], ranks: &[usize]) -> Result<TensorTrain> {
    if ranks.len() != dims.len() + 1 {
        return Err(Error::Structure(format!("{} ranks for {} dims", ranks.len(), dims.len())));
    }
    let mut rng = stream_rng(seed, Stream::Truth, 0);
    let data = (0..dims.len()).map(|n| normal_vec(&mut rng, ranks[n] * dims[n] * ranks[n + 1])).collect();
    TensorTrain::from_parts(dims, ranks, data)
}

/// `y = y_truth + ε` and the noise variance `σ²` used for it.
pub fn make_noisy_sample(
    y_truth: &DVector<f64>,
    snr_db: f64,
    convention: SnrConvention,
    rng: &mut impl Rng,
) -> Result<(DVector<f64>, f64)> {
    let t2 = y_truth.norm_squared();
    if !(t2 > 0.0) {
        return Err(Error::Parameter("ground truth is zero; the SNR is undefined".into()));
    }
    if snr_db.is_nan() {
        return Err(Error::Parameter("SNR is NaN".into()));
    }
    let j = y_truth.len() as f64;
    let r = 10f64.powf(snr_db.min(SNR_NOISELESS_DB) / 10.0);
    if snr_db >= SNR_NOISELESS_DB {
        return Ok((y_truth.clone(), t2 / (j * r)));
    }
    match convention {
        SnrConvention::Truth => {
            let sd = (t2 / (j * r)).sqrt();
            let y = y_truth.map(|x| x + sd * rng.sample::<f64, _>(StandardNormal));
            Ok((y, sd * sd))
        }
        SnrConvention::Sample => {
            // ‖y_t + s z‖² = r s² ‖z‖²  ⇔  (1 − r)‖z‖² s² + 2⟨y_t, z⟩ s + ‖y_t‖² = 0.
            for _ in 0..1000 {
                let mut z = DVector::from_vec(normal_vec(rng, y_truth.len()));
                let mut c = y_truth.dot(&z);
                if c > 0.0 {
                    z.neg_mut();
                    c = -c;
                }
                let e = z.norm_squared();
                let a = (1.0 - r) * e;
                let s = if a.abs() < 1e-12 * e {
                    if c == 0.0 {
                        continue;
                    }
                    -t2 / (2.0 * c)
                } else {
                    let disc = c * c - a * t2;
                    if disc < 0.0 {
                        continue;
                    }
                    let q = -(c - disc.sqrt());
                    // Positive root of a s² + 2c s + t2, computed without cancellation.
                    let roots = [q / a, t2 / q];
                    match roots.iter().copied().filter(|x| *x > 0.0 && x.is_finite()).reduce(f64::min) {
                        Some(s) => s,
                        None => continue,
                    }
                };
                let y = y_truth + &z * s;
                return Ok((y, s * s));
            }
            Err(Error::Numerical(format!("no noise scale meets SNR {snr_db} dB under the sample convention")))
        }
    }
}

/// `‖reference − estimate‖ / ‖reference‖`.
pub fn rel_error(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::dim(format!("lengths {} and {}", estimate.len(), reference.len())));
    }
    let den = reference.iter().map(|x| x * x).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::Parameter("reference is zero".into()));
    }
    let num = estimate.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(num / den)
}

/// `m⁰ = vec(core) + a·N(0, I)`, `P⁰ = b² I` (with `b` floored at
/// [`PRIOR_B_FLOOR`]).
pub fn perturbed_prior(truth: &TensorTrain, a: f64, b: f64, rng: &mut impl Rng) -> Result<Vec<GaussianComponent>> {
    if !(a >= 0.0 && b >= 0.0) {
        return Err(Error::Parameter(format!("a = {a} and b = {b} must be non-negative")));
    }
    let b = b.max(PRIOR_B_FLOOR);
    truth
        .cores()
        .iter()
        .map(|c| {
            let mean = c.data().iter().map(|&x| if a == 0.0 { x } else { x + a * rng.sample::<f64, _>(StandardNormal) });
            GaussianComponent::isotropic(DVector::from_iterator(c.len(), mean), b * b)
        })
        .collect()
}

/// Prior with an `N(0, I)` mean and `P⁰ = var·I`.
pub fn random_prior(dims: &[usize], ranks: &[usize], var: f64, rng: &mut impl Rng) -> Result<Vec<GaussianComponent>> {
    (0..dims.len())
        .map(|n| GaussianComponent::isotropic(DVector::from_vec(normal_vec(rng, ranks[n] * dims[n] * ranks[n + 1])), var))
        .collect()
}

/// Prior of trial `trial` according to the config.
pub(crate) fn trial_prior(cfg: &ExperimentConfig, truth: &TensorTrain, trial: usize) -> Result<Vec<GaussianComponent>> {
    let mut rng = stream_rng(cfg.seed, Stream::Prior, trial as u64);
    if cfg.random_prior_mean {
        random_prior(&cfg.dims, &cfg.ranks, cfg.prior_b.max(PRIOR_B_FLOOR).powi(2), &mut rng)
    } else {
        perturbed_prior(truth, cfg.prior_a, cfg.prior_b, &mut rng)
    }
}

/// Noisy samples of trial `trial`; `group` separates settings such as SNR
/// values so they use distinct noise.
pub(crate) fn trial_samples(
    cfg: &ExperimentConfig,
    y_truth: &DVector<f64>,
    snr_db: f64,
    trial: usize,
    group: usize,
    count: usize,
) -> Result<(Vec<DVector<f64>>, f64)> {
    let mut rng = stream_rng(cfg.seed, Stream::Noise, ((group as u64) << 32) | trial as u64);
    let mut out = Vec::with_capacity(count);
    let mut var = 0.0;
    for _ in 0..count {
        let (y, v) = make_noisy_sample(y_truth, snr_db, cfg.snr_convention, &mut rng)?;
        out.push(y);
        var += v;
    }
    Ok((out, var / count as f64))
}

/// Model from priors over the config's rank chain.
pub(crate) fn tt_model(cfg: &ExperimentConfig, priors: Vec<GaussianComponent>, noise_var: f64) -> Result<BayesTDModel> {
    BayesTDModel::new(crate::als::TDKind::TT { ranks: cfg.ranks.clone() }, cfg.dims.clone(), noise_var, priors)
}

/// Runs the chosen algorithm on samples in order, recursively for the
/// Bayesian variants and warm-started for conventional ALS. `observe` sees
/// the point estimate after each sample.
pub(crate) fn run_samples(
    algorithm: Algorithm,
    model: BayesTDModel,
    samples: &[DVector<f64>],
    opts: &AlsOptions,
    mut observe: impl FnMut(usize, &TensorTrain) -> Result<()>,
) -> Result<(BayesTDModel, Vec<ConvergenceTrace>)> {
    let mut traces = Vec::with_capacity(samples.len());
    match algorithm {
        Algorithm::Conventional => {
            let mut tt = model.mean_tt()?;
            for (k, y) in samples.iter().enumerate() {
                let (next, trace) = crate::als::conventional_als(&tt, y, opts.stop.max_sweeps, false, opts.truth.as_ref())?;
                tt = next;
                observe(k + 1, &tt)?;
                traces.push(trace);
            }
            let mut out = model;
            for (c, core) in out.components.iter_mut().zip(tt.cores()) {
                *c = c.clone().with_mean(DVector::from_column_slice(core.data()))?;
            }
            Ok((out, traces))
        }
        Algorithm::Bayes | Algorithm::BayesOrtho => {
            let mut model = model;
            for (k, y) in samples.iter().enumerate() {
                if k > 0 {
                    model = model.posterior_as_prior();
                }
                let (m, trace) = if algorithm == Algorithm::Bayes {
                    crate::als::bayes_als(model, y, opts)?
                } else {
                    crate::ortho::bayes_als_ortho(model, y, opts)?
                };
                model = m;
                observe(k + 1, &model.mean_tt()?)?;
                traces.push(trace);
            }
            Ok((model, traces))
        }
    }
}

/// Runs `f(0..n)` on up to `threads` scoped threads; results keep index order.
pub(crate) fn par_map<T: Send>(n: usize, threads: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(f).collect();
    }
    let parts: Vec<Vec<(usize, Result<T>)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                let f = &f;
                s.spawn(move || (w..n).step_by(threads).map(|i| (i, f(i))).collect::<Vec<_>>())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut all: Vec<(usize, Result<T>)> = parts.into_iter().flatten().collect();
    all.sort_by_key(|(i, _)| *i);
    all.into_iter().map(|(_, r)| r).collect()
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

/// Plain CSV table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.join(","));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

pub(crate) fn fmt_f(x: f64) -> String {
    format!("{x:.17e}")
}

/// Flattens a column-major image into a vector.
pub(crate) fn image_vector(img: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(img.as_slice())
}
