use serde::Serialize;

use super::{fmt_f, par_map, trial_prior, trial_samples, tt_model, Algorithm, Band, ExperimentConfig, Table};
use crate::als::{bayes_als, AlsOptions, BayesTDModel, StoppingRule};
use crate::error::{Error, Result};
use crate::ortho::OrthoSweepState;
use crate::tensor::vectorize;
use crate::tt::{tt_contract, ttm_trace};
use crate::unscented::{dense_ut_oracle, stack_gaussian, ut_tt, UTParams, UTRounding};

/// Covariance summaries of one trial after one sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CovRecord {
    pub sweep: usize,
    pub core_trace: Vec<f64>,
    pub core_fro: Vec<f64>,
    pub ut_trace: f64,
    pub ut_fro: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CovarianceResult {
    pub per_trial: Vec<Vec<CovRecord>>,
}

impl CovarianceResult {
    /// Band of one quantity per sweep.
    pub fn band(&self, f: impl Fn(&CovRecord) -> f64) -> Vec<Band> {
        let sweeps = self.per_trial.iter().map(Vec::len).min().unwrap_or(0);
        (0..sweeps)
            .map(|s| Band::of(&self.per_trial.iter().map(|t| f(&t[s])).collect::<Vec<_>>()))
            .collect()
    }

    pub fn order(&self) -> usize {
        self.per_trial.first().and_then(|t| t.first()).map_or(0, |r| r.core_trace.len())
    }

    pub fn table(&self) -> Table {
        let n = self.order();
        let mut names: Vec<String> = Vec::new();
        for k in 1..=n {
            names.push(format!("tr_p{k}"));
        }
        for k in 1..=n {
            names.push(format!("fro_p{k}"));
        }
        names.push("tr_put".into());
        names.push("fro_put".into());
        let mut header = vec!["sweep".to_string()];
        for q in &names {
            header.extend(["mean", "std", "lo", "hi"].map(|s| format!("{q}_{s}")));
        }
        let mut t = Table { header, rows: Vec::new() };
        let mut bands: Vec<Vec<Band>> = Vec::new();
        for k in 0..n {
            bands.push(self.band(|r| r.core_trace[k]));
        }
        for k in 0..n {
            bands.push(self.band(|r| r.core_fro[k]));
        }
        bands.push(self.band(|r| r.ut_trace));
        bands.push(self.band(|r| r.ut_fro));
        for s in 0..bands.first().map_or(0, Vec::len) {
            let mut row = vec![self.per_trial[0][s].sweep.to_string()];
            for b in &bands {
                row.extend([b[s].mean, b[s].std, b[s].lower(), b[s].upper()].map(fmt_f));
            }
            t.rows.push(row);
        }
        t
    }
}

fn ut_summary(model: &BayesTDModel, params: &UTParams, rounding: &UTRounding) -> Result<(f64, f64)> {
    let (_, cov) = ut_tt(model, params, rounding)?;
    Ok((ttm_trace(&cov)?, cov.frobenius_norm()))
}

/// `tr(P_UT)` from the TT path and from the dense oracle.
pub fn ut_trace_check(model: &BayesTDModel, params: &UTParams, rounding: &UTRounding) -> Result<(f64, f64)> {
    let (tt_tr, _) = ut_summary(model, params, rounding)?;
    let (m, p) = stack_gaussian(model)?;
    let (_, dense) = dense_ut_oracle(&m, &p, &model.dims, model.expect_tt()?, params)?;
    Ok((tt_tr, dense.trace()))
}

/// Per sweep: trace and Frobenius norm of every core covariance and of the
/// UT covariance of the estimate. With the orthogonalized algorithm each
/// core's values are taken when the norm has just moved to it, before its
/// update; with plain Bayesian ALS they are taken at the end of the sweep.
/// The UT settings come from the config.
pub fn run_covariance_study(cfg: &ExperimentConfig) -> Result<CovarianceResult> {
    let (ut, rounding) = (&cfg.ut, &cfg.ut_rounding);
    cfg.validate()?;
    if cfg.algorithm == Algorithm::Conventional {
        return Err(Error::Parameter("the covariance study needs a Bayesian algorithm".into()));
    }
    let truth = super::make_ground_truth(cfg.seed, &cfg.dims, &cfg.ranks)?;
    let y_truth = vectorize(&tt_contract(&truth));
    let sweeps = cfg.stop.max_sweeps;
    let per_trial = par_map(cfg.trials, cfg.threads, |t| {
        let priors = trial_prior(cfg, &truth, t)?;
        let (samples, var) = trial_samples(cfg, &y_truth, cfg.snr_db, t, 0, 1)?;
        let y = &samples[0];
        let model = tt_model(cfg, priors, var)?;
        let mut out = Vec::with_capacity(sweeps);
        match cfg.algorithm {
            Algorithm::BayesOrtho => {
                let mut state = OrthoSweepState::new(model)?;
                let sites = crate::als::ortho_sweep_sites(state.model.order());
                for sweep in 1..=sweeps {
                    let order = state.model.order();
                    let (mut tr, mut fro) = (vec![f64::NAN; order], vec![f64::NAN; order]);
                    for (k, &(n0, dir)) in sites.iter().enumerate() {
                        if tr[n0].is_nan() {
                            let c = &state.model.components[n0];
                            tr[n0] = c.cov_trace()?;
                            fro[n0] = c.cov_frobenius()?;
                        }
                        state.direction = dir;
                        state.update(y)?;
                        let next = sites.get(k + 1).map_or(0, |s| s.0);
                        if next > n0 {
                            state.transform_right(n0 + 1)?;
                        } else if next < n0 {
                            state.transform_left(n0 + 1)?;
                        }
                    }
                    let (ut_trace, ut_fro) = ut_summary(&state.model, ut, rounding)?;
                    out.push(CovRecord { sweep, core_trace: tr, core_fro: fro, ut_trace, ut_fro });
                }
            }
            _ => {
                let mut model = model;
                let opts = AlsOptions::new(StoppingRule::fixed(1)).brief();
                for sweep in 1..=sweeps {
                    model = bayes_als(model, y, &opts)?.0;
                    let mut tr = Vec::new();
                    let mut fro = Vec::new();
                    for c in &model.components {
                        tr.push(c.cov_trace()?);
                        fro.push(c.cov_frobenius()?);
                    }
                    let (ut_trace, ut_fro) = ut_summary(&model, ut, rounding)?;
                    out.push(CovRecord { sweep, core_trace: tr, core_fro: fro, ut_trace, ut_fro });
                }
            }
        }
        Ok(out)
    })?;
    Ok(CovarianceResult { per_trial })
}
