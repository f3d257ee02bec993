//! Tensor trains, TT-matrices, TT-SVD, addition and rounding.

mod decompose;
mod matrix;
mod train;

pub use decompose::{tt_add, tt_round, tt_svd, Truncation};
pub use matrix::{
    tt_outer, tt_vec_outer, ttm_add, ttm_contract, ttm_diagonal, ttm_round, ttm_trace,
    ttm_vec_product, TTMatrix,
};
pub use train::{
    core_from_left_unfold, left_unfold, orthogonality_check, orthogonality_residual,
    right_unfold, shift_norm_left, shift_norm_right, to_site_n_canonical, tt_contract,
    CanonicalForm, Orthogonality, TensorTrain,
};
