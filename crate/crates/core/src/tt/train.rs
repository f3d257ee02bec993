use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::thin_qr;
use crate::tensor::{DenseMatrix, DenseTensor};

/// Tensor train: cores `R_n x I_n x R_{n+1}` with `R_1 = R_{N+1} = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorTrain {
    cores: Vec<DenseTensor>,
}

impl TensorTrain {
    pub fn new(cores: Vec<DenseTensor>) -> Result<Self> {
        validate_chain(&cores)?;
        Ok(Self { cores })
    }

    /// Builds cores from flat first-index-fastest buffers and a rank chain.
    pub fn from_parts(dims: &[usize], ranks: &[usize], data: Vec<Vec<f64>>) -> Result<Self> {
        if ranks.len() != dims.len() + 1 || data.len() != dims.len() {
            return Err(Error::Structure(format!(
                "{} dims need {} ranks and {} cores, got {} and {}",
                dims.len(),
                dims.len() + 1,
                dims.len(),
                ranks.len(),
                data.len()
            )));
        }
        let cores = data
            .into_iter()
            .enumerate()
            .map(|(n, d)| DenseTensor::new(vec![ranks[n], dims[n], ranks[n + 1]], d))
            .collect::<Result<Vec<_>>>()?;
        Self::new(cores)
    }

    /// Rank-1 train holding the outer product of the given vectors.
    pub fn rank_one(vectors: &[Vec<f64>]) -> Result<Self> {
        let cores = vectors
            .iter()
            .map(|v| DenseTensor::new(vec![1, v.len(), 1], v.clone()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(cores)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let vecs: Vec<Vec<f64>> = dims.iter().map(|&d| vec![0.0; d]).collect();
        Self::rank_one(&vecs)
    }

    pub fn order(&self) -> usize {
        self.cores.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.dims()[1]).collect()
    }

    /// Rank chain `R_1..R_{N+1}`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.cores.iter().map(|c| c.dims()[0]).collect();
        r.push(self.cores.last().map_or(1, |c| c.dims()[2]));
        r
    }

    pub fn cores(&self) -> &[DenseTensor] {
        &self.cores
    }

    pub fn into_cores(self) -> Vec<DenseTensor> {
        self.cores
    }

    /// Core `n`, 0-based.
    pub fn core(&self, n: usize) -> &DenseTensor {
        &self.cores[n]
    }

    /// Replaces core `n` (0-based); the rank chain must stay consistent.
    pub fn set_core(&mut self, n: usize, core: DenseTensor) -> Result<()> {
        let old = std::mem::replace(&mut self.cores[n], core);
        if let Err(e) = validate_chain(&self.cores) {
            self.cores[n] = old;
            return Err(e);
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.cores.iter().map(|c| c.len()).sum()
    }

    /// Multiplies the represented tensor by `c` (applied to the first core).
    pub fn scaled(mut self, c: f64) -> Self {
        self.cores[0].data_mut().iter_mut().for_each(|x| *x *= c);
        self
    }

    /// Inner product of the represented tensors.
    pub fn dot(&self, other: &TensorTrain) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(Error::dim(format!(
                "inner product of trains with dims {:?} and {:?}",
                self.dims(),
                other.dims()
            )));
        }
        let mut w = DMatrix::from_element(1, 1, 1.0);
        for (a, b) in self.cores.iter().zip(&other.cores) {
            let (ra, i_n, ra2) = core_shape(a);
            let (rb, _, rb2) = core_shape(b);
            let mut next = DMatrix::zeros(ra2, rb2);
            for i in 0..i_n {
                let sa = slice(a, i, ra, ra2);
                let sb = slice(b, i, rb, rb2);
                next += sa.transpose() * &w * sb;
            }
            w = next;
        }
        Ok(w[(0, 0)])
    }

    pub fn frobenius_norm(&self) -> f64 {
        // Orthogonalize a copy so the norm is read off a single core; the
        // Gram chain loses accuracy for trains with cancelling terms.
        let n = self.order();
        if n == 1 {
            return self.cores[0].frobenius_norm();
        }
        let mut tt = self.clone();
        for k in (1..n).rev() {
            tt.shift_left_in_place(k);
        }
        tt.cores[0].frobenius_norm()
    }

    /// Moves the non-orthogonal part of core `k` (0-based) into core `k-1`.
    /// Returns the triangular factor `R` with `G^R_k = Rᵀ Qᵀ`.
    pub(crate) fn shift_left_in_place(&mut self, k: usize) -> DenseMatrix {
        let (q_t, r) = split_right(&self.cores[k]);
        let (_, i_k, r_next) = core_shape(&self.cores[k]);
        let new_rank = q_t.nrows();
        self.cores[k] = DenseTensor::new(vec![new_rank, i_k, r_next], q_t.as_slice().to_vec())
            .expect("qr shape");
        let prev = &self.cores[k - 1];
        let (r_prev, i_prev, _) = core_shape(prev);
        let absorbed = left_unfold(prev) * r.transpose();
        self.cores[k - 1] = DenseTensor::new(vec![r_prev, i_prev, new_rank], absorbed.as_slice().to_vec())
            .expect("qr shape");
        r
    }

    /// Moves the non-orthogonal part of core `k` (0-based) into core `k+1`.
    /// Returns `R` with `G^L_k = Q R`.
    pub(crate) fn shift_right_in_place(&mut self, k: usize) -> DenseMatrix {
        let (q, r) = thin_qr(&left_unfold(&self.cores[k]));
        let (r_k, i_k, _) = core_shape(&self.cores[k]);
        let new_rank = q.ncols();
        self.cores[k] =
            DenseTensor::new(vec![r_k, i_k, new_rank], q.as_slice().to_vec()).expect("qr shape");
        let next = &self.cores[k + 1];
        let (_, i_next, r_after) = core_shape(next);
        let absorbed = &r * right_unfold(next);
        self.cores[k + 1] =
            DenseTensor::new(vec![new_rank, i_next, r_after], absorbed.as_slice().to_vec())
                .expect("qr shape");
        r
    }
}

fn validate_chain(cores: &[DenseTensor]) -> Result<()> {
    if cores.is_empty() {
        return Err(Error::Structure("tensor train needs at least one core".into()));
    }
    for (n, c) in cores.iter().enumerate() {
        if c.order() != 3 {
            return Err(Error::Structure(format!(
                "core {} is {}-way, expected 3-way",
                n + 1,
                c.order()
            )));
        }
    }
    if cores[0].dims()[0] != 1 || cores[cores.len() - 1].dims()[2] != 1 {
        return Err(Error::Structure("boundary ranks must be 1".into()));
    }
    for n in 1..cores.len() {
        if cores[n - 1].dims()[2] != cores[n].dims()[0] {
            return Err(Error::Structure(format!(
                "rank mismatch between cores {} and {}: {} vs {}",
                n,
                n + 1,
                cores[n - 1].dims()[2],
                cores[n].dims()[0]
            )));
        }
    }
    Ok(())
}

pub(crate) fn core_shape(c: &DenseTensor) -> (usize, usize, usize) {
    let d = c.dims();
    (d[0], d[1], d[2])
}

/// Slice `G(:, i, :)` as an `R x R'` matrix.
pub(crate) fn slice(c: &DenseTensor, i: usize, r: usize, r2: usize) -> DenseMatrix {
    let i_n = c.dims()[1];
    let data = c.data();
    DMatrix::from_fn(r, r2, |a, b| data[a + r * (i + i_n * b)])
}

/// `QR` of the transposed right unfolding: returns `(Qᵀ, R)` with `G^R = Rᵀ Qᵀ`.
pub(crate) fn split_right(core: &DenseTensor) -> (DenseMatrix, DenseMatrix) {
    let (q, r) = thin_qr(&right_unfold(core).transpose());
    (q.transpose(), r)
}

/// Full contraction into a dense tensor of dims `I_1..I_N`.
pub fn tt_contract(tt: &TensorTrain) -> DenseTensor {
    let dims = tt.dims();
    // acc is (I_1..I_k) x R_{k+1}, first index fastest.
    let mut acc = DMatrix::from_element(1, 1, 1.0);
    for core in tt.cores() {
        let (_, i_k, r_next) = core_shape(core);
        let prod = &acc * right_unfold(core);
        let rows = acc.nrows() * i_k;
        acc = DMatrix::from_vec(rows, r_next, prod.data.into());
    }
    DenseTensor::new(dims, acc.data.into()).expect("contraction shape")
}

/// `(R_n I_n) x R_{n+1}` unfolding.
pub fn left_unfold(core: &DenseTensor) -> DenseMatrix {
    let (r, i, r2) = core_shape(core);
    DMatrix::from_column_slice(r * i, r2, core.data())
}

/// `R_n x (I_n R_{n+1})` unfolding.
pub fn right_unfold(core: &DenseTensor) -> DenseMatrix {
    let (r, i, r2) = core_shape(core);
    DMatrix::from_column_slice(r, i * r2, core.data())
}

/// Rebuilds a core from its left unfolding.
pub fn core_from_left_unfold(m: &DenseMatrix, rank_left: usize, dim: usize) -> Result<DenseTensor> {
    if m.nrows() != rank_left * dim {
        return Err(Error::dim(format!(
            "left unfolding with {} rows cannot have rank {rank_left} and dim {dim}",
            m.nrows()
        )));
    }
    DenseTensor::new(vec![rank_left, dim, m.ncols()], m.as_slice().to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orthogonality {
    Left,
    Right,
}

/// Left: `‖(G^L)ᵀ G^L − I‖_F ≤ tol`; right: `‖G^R (G^R)ᵀ − I‖_F ≤ tol`.
pub fn orthogonality_residual(core: &DenseTensor, side: Orthogonality) -> f64 {
    let gram = match side {
        Orthogonality::Left => {
            let l = left_unfold(core);
            l.transpose() * l
        }
        Orthogonality::Right => {
            let r = right_unfold(core);
            &r * r.transpose()
        }
    };
    let n = gram.nrows();
    (gram - DMatrix::identity(n, n)).norm()
}

pub fn orthogonality_check(core: &DenseTensor, side: Orthogonality, tol: f64) -> bool {
    orthogonality_residual(core, side) <= tol
}

/// Site of a mixed-canonical train, `None` when no site qualifies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CanonicalForm {
    pub site: Option<usize>,
}

impl CanonicalForm {
    /// Checks whether `tt` is in site-`n` mixed-canonical form (1-based).
    pub fn holds(tt: &TensorTrain, n: usize, tol: f64) -> bool {
        (1..n).all(|k| orthogonality_check(tt.core(k - 1), Orthogonality::Left, tol))
            && (n + 1..=tt.order())
                .all(|k| orthogonality_check(tt.core(k - 1), Orthogonality::Right, tol))
    }

    /// Lowest site at which the canonical-form invariant holds.
    pub fn detect(tt: &TensorTrain, tol: f64) -> Self {
        let site = (1..=tt.order()).find(|&n| Self::holds(tt, n, tol));
        Self { site }
    }
}

/// Moves the norm from core `n` to core `n-1` (1-based, `2 ≤ n ≤ N`).
pub fn shift_norm_left(tt: &TensorTrain, n: usize) -> Result<TensorTrain> {
    if n < 2 || n > tt.order() {
        return Err(Error::Boundary(format!(
            "cannot shift the norm left from core {n} of {}",
            tt.order()
        )));
    }
    let mut out = tt.clone();
    out.shift_left_in_place(n - 1);
    Ok(out)
}

/// Moves the norm from core `n` to core `n+1` (1-based, `1 ≤ n ≤ N-1`).
pub fn shift_norm_right(tt: &TensorTrain, n: usize) -> Result<TensorTrain> {
    if n == 0 || n >= tt.order() {
        return Err(Error::Boundary(format!(
            "cannot shift the norm right from core {n} of {}",
            tt.order()
        )));
    }
    let mut out = tt.clone();
    out.shift_right_in_place(n - 1);
    Ok(out)
}

/// Site-`n` mixed-canonical form (1-based).
pub fn to_site_n_canonical(tt: &TensorTrain, n: usize) -> Result<TensorTrain> {
    if n == 0 || n > tt.order() {
        return Err(Error::Boundary(format!("site {n} outside 1..={}", tt.order())));
    }
    let mut out = tt.clone();
    for k in 0..n - 1 {
        out.shift_right_in_place(k);
    }
    for k in (n..tt.order()).rev() {
        out.shift_left_in_place(k);
    }
    Ok(out)
}
