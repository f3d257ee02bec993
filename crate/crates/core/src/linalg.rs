//! Dense factorizations on top of `faer`, exchanged as column-major
//! `nalgebra` matrices.
//!
//! Storage and products stay in `nalgebra`; anything cubic that needs a
//! blocked kernel (Cholesky, SVD, symmetric eigenvalues, QR) goes through
//! `faer` on a borrowed view of the same buffer.

use faer::linalg::solvers::Solve;
use faer::{MatRef, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative jitter added to the diagonal when a Cholesky factorization fails.
pub const CHOLESKY_JITTER: f64 = 1e-10;

pub(crate) fn view(a: &DMatrix<f64>) -> MatRef<'_, f64> {
    MatRef::from_column_major_slice(a.as_slice(), a.nrows(), a.ncols())
}

pub(crate) fn from_faer(a: MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// Cholesky factor of a symmetric positive-definite matrix.
pub struct SpdFactor {
    llt: faer::linalg::solvers::Llt<f64>,
    dim: usize,
    /// Diagonal shift that had to be added before the factorization succeeded.
    pub jitter: f64,
}

impl SpdFactor {
    /// Factorizes `a`, retrying once with `1e-10 * trace / K` on the diagonal.
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::dim(format!(
                "cholesky of non-square {}x{} matrix",
                a.nrows(),
                a.ncols()
            )));
        }
        let dim = a.nrows();
        if let Ok(llt) = view(a).llt(Side::Lower) {
            return Ok(Self { llt, dim, jitter: 0.0 });
        }
        let trace = a.trace();
        let jitter = CHOLESKY_JITTER * trace.abs().max(f64::MIN_POSITIVE) / dim.max(1) as f64;
        let mut shifted = a.clone();
        for i in 0..dim {
            shifted[(i, i)] += jitter;
        }
        match view(&shifted).llt(Side::Lower) {
            Ok(llt) => {
                log::debug!("cholesky needed jitter {jitter:e} (dim {dim})");
                Ok(Self { llt, dim, jitter })
            }
            Err(_) => {
                let min_diag = (0..dim).map(|i| a[(i, i)]).fold(f64::INFINITY, f64::min);
                Err(Error::Numerical(format!(
                    "matrix of size {dim} is not positive definite after jitter \
                     {jitter:e} (trace {trace:e}, min diagonal {min_diag:e})"
                )))
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        from_faer(self.llt.solve(view(b)).as_ref())
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let m = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
        let x = self.llt.solve(view(&m));
        DVector::from_fn(b.len(), |i, _| x[(i, 0)])
    }

    /// The lower-triangular factor `L` with `L Lᵀ = A`.
    pub fn lower(&self) -> DMatrix<f64> {
        from_faer(self.llt.L())
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let inv = self.solve(&DMatrix::identity(self.dim, self.dim));
        symmetrize(inv)
    }

    pub fn log_det(&self) -> f64 {
        let l = self.llt.L();
        2.0 * (0..self.dim).map(|i| l[(i, i)].ln()).sum::<f64>()
    }
}

pub fn symmetrize(mut a: DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// Thin Householder QR with the diagonal of `R` made non-negative.
///
/// For an `m x n` input with `m >= n` this returns `Q` (`m x n`) and `R`
/// (`n x n`); otherwise `Q` is `m x m` and `R` is `m x n`.
pub fn thin_qr(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = view(a).qr();
    let mut q = from_faer(qr.compute_thin_Q().as_ref());
    let mut r = from_faer(qr.thin_R());
    for k in 0..r.nrows().min(r.ncols()) {
        if r[(k, k)] < 0.0 {
            r.row_mut(k).neg_mut();
            q.column_mut(k).neg_mut();
        }
    }
    (q, r)
}

pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

pub fn thin_svd(a: &DMatrix<f64>) -> Result<ThinSvd> {
    let svd = view(a)
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("svd did not converge: {e:?}")))?;
    let s = svd.S().column_vector();
    Ok(ThinSvd {
        u: from_faer(svd.U()),
        s: (0..s.nrows()).map(|i| s[i]).collect(),
        v: from_faer(svd.V()),
    })
}

/// Eigenvalues of a symmetric matrix in non-decreasing order.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    let mut ev = view(a)
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigenvalue iteration failed: {e:?}")))?;
    ev.sort_by(|x, y| x.total_cmp(y));
    Ok(ev)
}

/// Moore-Penrose pseudo-inverse; the flag reports numerical rank deficiency.
pub fn pinv(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let svd = thin_svd(a)?;
    let smax = svd.s.iter().cloned().fold(0.0, f64::max);
    let tol = smax * f64::EPSILON * a.nrows().max(a.ncols()) as f64;
    let mut out = DMatrix::zeros(a.ncols(), a.nrows());
    let mut deficient = false;
    for (k, &sk) in svd.s.iter().enumerate() {
        if sk <= tol {
            deficient = true;
            continue;
        }
        let vk = svd.v.column(k);
        let uk = svd.u.column(k);
        out += (vk * uk.transpose()) / sk;
    }
    if svd.s.len() < a.ncols() {
        deficient = true;
    }
    Ok((out, deficient))
}

/// `(A ⊗ B)` for dense matrices; row and column indices of `B` run fastest.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for j in 0..ac {
        for i in 0..ar {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            let mut block = out.view_mut((i * br, j * bc), (br, bc));
            block.copy_from(b);
            block *= s;
        }
    }
    out
}

/// Smallest eigenvalue check used for PSD assertions: `min >= -tol * max(|max|, tiny)`.
pub fn is_psd(a: &DMatrix<f64>, rel_tol: f64) -> Result<bool> {
    let ev = sym_eigenvalues(a)?;
    let (Some(&lo), Some(&hi)) = (ev.first(), ev.last()) else {
        return Ok(true);
    };
    Ok(lo >= -rel_tol * hi.abs().max(f64::MIN_POSITIVE))
}
