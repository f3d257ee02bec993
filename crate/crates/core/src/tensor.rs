//! Dense N-way tensors and the matrix/tensor primitives built on them.
//!
//! Every array in this crate is stored first-index-fastest: element
//! `(i_1, ..., i_N)` lives at `i_1 + I_1 (i_2 + I_2 (i_3 + ...))`. Unfoldings
//! and vectorization use the same ordering, so `vec(Y)` is the raw buffer.
//! Public mode indices are 1-based.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type DenseMatrix = DMatrix<f64>;

/// Tensors with more modes than this are rejected.
pub const MAX_ORDER: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        validate_dims(&dims)?;
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::dim(format!(
                "data length {} does not match dims {:?} (expected {len})",
                data.len(),
                dims
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let len = dims.iter().product();
        Self::new(dims, vec![0.0; len])
    }

    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        validate_dims(&dims)?;
        let len: usize = dims.iter().product();
        let mut idx = vec![0usize; dims.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            for (k, d) in dims.iter().enumerate() {
                idx[k] += 1;
                if idx[k] < *d {
                    break;
                }
                idx[k] = 0;
            }
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Linear offset of a 0-based multi-index.
    pub fn offset(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.dims)
            .rev()
            .fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Same data under a different shape with equal element count.
    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        Self::new(dims, self.data)
    }

    /// Splits the dims around mode `n` (0-based): (product before, I_n, product after).
    fn split(&self, n: usize) -> (usize, usize, usize) {
        let left = self.dims[..n].iter().product();
        let right = self.dims[n + 1..].iter().product();
        (left, self.dims[n], right)
    }

    fn check_mode(&self, n: usize) -> Result<usize> {
        if n == 0 || n > self.order() {
            return Err(Error::ModeIndex {
                index: n,
                order: self.order(),
            });
        }
        Ok(n - 1)
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() || dims.len() > MAX_ORDER {
        return Err(Error::dim(format!(
            "tensor order must be in 1..={MAX_ORDER}, got {}",
            dims.len()
        )));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::dim(format!("zero-length mode in dims {dims:?}")));
    }
    Ok(())
}

/// Mode-`n` unfolding: `I_n x prod_{k != n} I_k`, remaining modes ordered
/// with the lowest mode fastest.
pub fn mode_n_unfold(t: &DenseTensor, n: usize) -> Result<DenseMatrix> {
    let n0 = t.check_mode(n)?;
    let (left, rows, right) = t.split(n0);
    let mut out = DMatrix::zeros(rows, left * right);
    for r in 0..right {
        for i in 0..rows {
            let src = &t.data[left * (i + rows * r)..left * (i + rows * r) + left];
            for (l, &v) in src.iter().enumerate() {
                out[(i, l + left * r)] = v;
            }
        }
    }
    Ok(out)
}

/// Inverse of [`mode_n_unfold`] for the given target dims.
pub fn refold(m: &DenseMatrix, n: usize, dims: &[usize]) -> Result<DenseTensor> {
    let mut t = DenseTensor::zeros(dims.to_vec())?;
    let n0 = t.check_mode(n)?;
    let (left, rows, right) = t.split(n0);
    if m.nrows() != rows || m.ncols() != left * right {
        return Err(Error::dim(format!(
            "cannot refold a {}x{} matrix along mode {n} into dims {dims:?}",
            m.nrows(),
            m.ncols()
        )));
    }
    for r in 0..right {
        for i in 0..rows {
            for l in 0..left {
                t.data[l + left * (i + rows * r)] = m[(i, l + left * r)];
            }
        }
    }
    Ok(t)
}

pub fn vectorize(t: &DenseTensor) -> DVector<f64> {
    DVector::from_column_slice(&t.data)
}

/// `t ×_n a`: mode `n` of size `I_n` is replaced by `a.nrows()`.
pub fn mode_n_product(t: &DenseTensor, a: &DenseMatrix, n: usize) -> Result<DenseTensor> {
    let n0 = t.check_mode(n)?;
    let (left, inner, right) = t.split(n0);
    if a.ncols() != inner {
        return Err(Error::dim(format!(
            "mode-{n} product needs {inner} matrix columns, got {}",
            a.ncols()
        )));
    }
    let rows = a.nrows();
    let mut dims = t.dims.clone();
    dims[n0] = rows;
    let mut out = vec![0.0; left * rows * right];
    let at = a.transpose();
    for r in 0..right {
        // Each slab is a column-major `left x inner` block.
        let slab = nalgebra::DMatrixView::from_slice(
            &t.data[left * inner * r..left * inner * (r + 1)],
            left,
            inner,
        );
        let prod = slab * &at;
        out[left * rows * r..left * rows * (r + 1)].copy_from_slice(prod.as_slice());
    }
    DenseTensor::new(dims, out)
}

/// Kronecker product with the block structure `[a_ij B]`.
pub fn kronecker(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    crate::linalg::kron(a, b)
}

/// Column-wise Kronecker product; column `k` is `a_k ⊗ b_k`.
pub fn khatri_rao(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.ncols() != b.ncols() {
        return Err(Error::dim(format!(
            "khatri-rao needs equal column counts, got {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let (ar, br) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(ar * br, a.ncols());
    for k in 0..a.ncols() {
        for i in 0..ar {
            for j in 0..br {
                out[(i * br + j, k)] = a[(i, k)] * b[(j, k)];
            }
        }
    }
    Ok(out)
}
