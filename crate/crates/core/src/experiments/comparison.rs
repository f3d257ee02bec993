use serde::Serialize;

use super::{fmt_f, mean_std, median, par_map, rel_error, run_samples, trial_prior, trial_samples, tt_model, Algorithm, ExperimentConfig, Table};
use crate::als::AlsOptions;
use crate::error::Result;
use crate::tensor::vectorize;
use crate::tt::tt_contract;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub algorithm: Algorithm,
    pub snr_db: f64,
    pub n_samples: usize,
    pub trial: usize,
    pub eps_truth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonResult {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonResult {
    pub fn values(&self, algorithm: Algorithm, snr_db: f64, n_samples: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.algorithm == algorithm && r.snr_db == snr_db && r.n_samples == n_samples)
            .map(|r| r.eps_truth)
            .collect()
    }

    pub fn median(&self, algorithm: Algorithm, snr_db: f64, n_samples: usize) -> f64 {
        median(&self.values(algorithm, snr_db, n_samples))
    }

    /// Every trial's error.
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["algorithm", "snr_db", "n_samples", "trial", "eps_truth"]);
        for r in &self.rows {
            t.rows.push(vec![
                r.algorithm.name().into(),
                r.snr_db.to_string(),
                r.n_samples.to_string(),
                r.trial.to_string(),
                fmt_f(r.eps_truth),
            ]);
        }
        t
    }

    /// Median, mean and standard deviation per setting.
    pub fn summary(&self) -> Table {
        let mut t = Table::new(&["algorithm", "snr_db", "n_samples", "trials", "median", "mean", "std"]);
        let mut keys: Vec<(Algorithm, f64, usize)> = Vec::new();
        for r in &self.rows {
            let k = (r.algorithm, r.snr_db, r.n_samples);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        for (a, s, n) in keys {
            let v = self.values(a, s, n);
            let (mean, std) = mean_std(&v);
            t.rows.push(vec![
                a.name().into(),
                s.to_string(),
                n.to_string(),
                v.len().to_string(),
                fmt_f(median(&v)),
                fmt_f(mean),
                fmt_f(std),
            ]);
        }
        t
    }
}

/// Bayesian (the configured variant, `bayes` if the config names
/// conventional ALS) against conventional ALS for every SNR and sample count
/// of the grids. Both start from the same prior mean and see the same
/// samples; sample counts are prefixes of one recursive run.
pub fn run_comparison(cfg: &ExperimentConfig) -> Result<ComparisonResult> {
    cfg.validate()?;
    let bayes = match cfg.algorithm {
        Algorithm::Conventional => Algorithm::Bayes,
        a => a,
    };
    let truth = super::make_ground_truth(cfg.seed, &cfg.dims, &cfg.ranks)?;
    let y_truth = vectorize(&tt_contract(&truth));
    let snrs = cfg.snrs();
    let counts = cfg.sample_counts();
    let max_n = *counts.last().unwrap();
    let per_trial = par_map(cfg.trials, cfg.threads, |t| {
        let mut rows = Vec::new();
        for (g, &snr) in snrs.iter().enumerate() {
            let (samples, var) = trial_samples(cfg, &y_truth, snr, t, g, max_n)?;
            for alg in [bayes, Algorithm::Conventional] {
                let model = tt_model(cfg, trial_prior(cfg, &truth, t)?, var)?;
                let opts = AlsOptions::new(cfg.stop.clone()).brief();
                run_samples(alg, model, &samples, &opts, |k, tt| {
                    if counts.contains(&k) {
                        let eps = rel_error(tt_contract(tt).data(), y_truth.as_slice())?;
                        rows.push(ComparisonRow { algorithm: alg, snr_db: snr, n_samples: k, trial: t, eps_truth: eps });
                    }
                    Ok(())
                })?;
            }
        }
        Ok(rows)
    })?;
    let mut rows: Vec<ComparisonRow> = per_trial.into_iter().flatten().collect();
    rows.sort_by(|a, b| {
        (a.algorithm.name(), a.snr_db, a.n_samples, a.trial)
            .partial_cmp(&(b.algorithm.name(), b.snr_db, b.n_samples, b.trial))
            .unwrap()
    });
    Ok(ComparisonResult { rows })
}
