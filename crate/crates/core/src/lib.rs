//! Bayesian low-rank tensor approximation.
//!
//! Dense tensors, tensor trains and TT-matrices, a Bayesian alternating
//! linear scheme for CP, Tucker and TT models, an orthogonalized TT variant,
//! and an unscented transform that returns the low-rank estimate's mean and
//! covariance in TT format.
//!
//! Storage is first-index-fastest everywhere. Public mode and core indices
//! are 1-based unless a function says otherwise.
//!
//! ```
//! use ttbayes::als::{bayes_als, AlsOptions, BayesTDModel, StoppingRule};
//! use ttbayes::experiments::make_ground_truth;
//! use ttbayes::tensor::vectorize;
//! use ttbayes::tt::tt_contract;
//! use ttbayes::unscented::{ut_tt, UTParams, UTRounding};
//!
//! # fn main() -> ttbayes::Result<()> {
//! let truth = make_ground_truth(1, &[5, 5, 5], &[1, 3, 3, 1])?;
//! let y = vectorize(&tt_contract(&truth));
//! let init = make_ground_truth(2, &[5, 5, 5], &[1, 3, 3, 1])?;
//! let model = BayesTDModel::tt_isotropic(&init, 100.0, 1e-2)?;
//! let (fitted, _trace) = bayes_als(model, &y, &AlsOptions::new(StoppingRule::fixed(10)))?;
//! let (mean, _cov) = ut_tt(&fitted, &UTParams::default(), &UTRounding::default())?;
//! assert_eq!(mean.dims(), vec![5, 5, 5]);
//! # Ok(())
//! # }
//! ```

pub mod error;
pub mod linalg;
pub mod tensor;
pub mod tt;
pub mod als;
pub mod ortho;
pub mod unscented;
pub mod experiments;
pub mod io;

pub use error::{Error, Result};
pub use tensor::{DenseMatrix, DenseTensor};
pub use tt::{TTMatrix, TensorTrain};
