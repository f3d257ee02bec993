use serde::Serialize;

use super::{fmt_f, mean_std, par_map, run_samples, tt_model, trial_prior, trial_samples, ExperimentConfig, Table};
use crate::als::{AlsOptions, ConvergenceTrace};
use crate::error::Result;
use crate::tensor::vectorize;
use crate::tt::tt_contract;

/// Mean and standard deviation across trials; the plotted band is
/// `mean ± 2·std`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Band {
    pub mean: f64,
    pub std: f64,
}

impl Band {
    pub fn of(xs: &[f64]) -> Self {
        let (mean, std) = mean_std(xs);
        Self { mean, std }
    }

    pub fn lower(&self) -> f64 {
        self.mean - 2.0 * self.std
    }

    pub fn upper(&self) -> f64 {
        self.mean + 2.0 * self.std
    }

    pub fn width(&self) -> f64 {
        4.0 * self.std
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BandRow {
    pub sweep: usize,
    pub eps_meas: Band,
    pub eps_truth: Band,
    pub log_objective: Option<Band>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceResult {
    /// One trace per trial.
    pub traces: Vec<ConvergenceTrace>,
    pub bands: Vec<BandRow>,
}

impl ConvergenceResult {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&[
            "sweep",
            "eps_meas_mean",
            "eps_meas_std",
            "eps_meas_lo",
            "eps_meas_hi",
            "eps_truth_mean",
            "eps_truth_std",
            "eps_truth_lo",
            "eps_truth_hi",
            "log_objective_mean",
            "log_objective_std",
            "log_objective_lo",
            "log_objective_hi",
        ]);
        for r in &self.bands {
            let mut row = vec![r.sweep.to_string()];
            for b in [Some(r.eps_meas), Some(r.eps_truth), r.log_objective] {
                match b {
                    Some(b) => row.extend([b.mean, b.std, b.lower(), b.upper()].map(fmt_f)),
                    None => row.extend(std::iter::repeat_n(String::new(), 4)),
                }
            }
            t.rows.push(row);
        }
        t
    }
}

/// Runs the configured algorithm on one noisy sample for every trial; trials
/// share the ground truth and differ in prior and noise. Sweep rows are
/// aggregated across trials.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ConvergenceResult> {
    cfg.validate()?;
    let truth = super::make_ground_truth(cfg.seed, &cfg.dims, &cfg.ranks)?;
    let y_truth = vectorize(&tt_contract(&truth));
    let traces = par_map(cfg.trials, cfg.threads, |t| {
        let priors = trial_prior(cfg, &truth, t)?;
        let (samples, var) = trial_samples(cfg, &y_truth, cfg.snr_db, t, 0, 1)?;
        let model = tt_model(cfg, priors, var)?;
        let opts = AlsOptions::new(cfg.stop.clone()).with_truth(y_truth.clone());
        let (_, mut traces) = run_samples(cfg.algorithm, model, &samples, &opts, |_, _| Ok(()))?;
        Ok(traces.remove(0))
    })?;
    let per_trial: Vec<Vec<_>> = traces.iter().map(|t| t.per_sweep().into_iter().cloned().collect()).collect();
    let sweeps = per_trial.iter().map(Vec::len).min().unwrap_or(0);
    let bands = (0..sweeps)
        .map(|s| {
            let col = |f: &dyn Fn(&crate::als::SweepRecord) -> Option<f64>| -> Option<Vec<f64>> {
                per_trial.iter().map(|t| f(&t[s])).collect()
            };
            BandRow {
                sweep: per_trial[0][s].sweep,
                eps_meas: Band::of(&col(&|r| Some(r.eps_meas)).unwrap()),
                eps_truth: Band::of(&col(&|r| r.eps_truth).unwrap_or_default()),
                log_objective: col(&|r| r.log_objective).map(|v| Band::of(&v)),
            }
        })
        .collect();
    Ok(ConvergenceResult { traces, bands })
}
