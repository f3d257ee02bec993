//! Bayesian alternating linear scheme for CP, Tucker and TT models.

mod design;
mod engine;
mod model;
mod update;

pub use design::{build_u, build_u_cp, build_u_tt, build_u_tucker, recompute_tucker_core};
pub use engine::{
    bayes_als, conventional_als, log_posterior_objective, recursive_update, AlsOptions,
    ConvergenceTrace, Direction, StoppingRule, SweepRecord,
};
pub use model::{BayesTDModel, GaussianComponent, TDKind};
pub use update::{conventional_als_update, posterior_update, posterior_update_normal};

pub(crate) use design::{check_measurement, left_interface, right_interface, tt_projection};
pub(crate) use engine::{ortho_sweep_sites, record, recursive_with};
