use nalgebra::{DMatrix, DVector};

use super::decompose::{tt_add, tt_round, Truncation};
use super::train::{tt_contract, TensorTrain};
use crate::error::{Error, Result};
use crate::tensor::{DenseMatrix, DenseTensor};

/// TT-matrix: cores `R_n x I_n x J_n x R_{n+1}` representing a
/// `(∏I_n) x (∏J_n)` matrix. Row and column multi-indices are both
/// first-index-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct TTMatrix {
    cores: Vec<DenseTensor>,
}

impl TTMatrix {
    pub fn new(cores: Vec<DenseTensor>) -> Result<Self> {
        if cores.is_empty() {
            return Err(Error::Structure("TT-matrix needs at least one core".into()));
        }
        for (n, c) in cores.iter().enumerate() {
            if c.order() != 4 {
                return Err(Error::Structure(format!(
                    "TT-matrix core {} is {}-way, expected 4-way",
                    n + 1,
                    c.order()
                )));
            }
        }
        if cores[0].dims()[0] != 1 || cores[cores.len() - 1].dims()[3] != 1 {
            return Err(Error::Structure("boundary ranks must be 1".into()));
        }
        for n in 1..cores.len() {
            if cores[n - 1].dims()[3] != cores[n].dims()[0] {
                return Err(Error::Structure(format!(
                    "rank mismatch between TT-matrix cores {} and {}",
                    n,
                    n + 1
                )));
            }
        }
        Ok(Self { cores })
    }

    /// All-zero matrix with unit ranks.
    pub fn zeros(row_dims: &[usize], col_dims: &[usize]) -> Result<Self> {
        if row_dims.len() != col_dims.len() {
            return Err(Error::dim("row and column dims differ in length"));
        }
        let cores = row_dims
            .iter()
            .zip(col_dims)
            .map(|(&i, &j)| DenseTensor::zeros(vec![1, i, j, 1]))
            .collect::<Result<Vec<_>>>()?;
        Self::new(cores)
    }

    /// Identity with unit ranks.
    pub fn identity(dims: &[usize]) -> Result<Self> {
        let cores = dims
            .iter()
            .map(|&d| DenseTensor::from_fn(vec![1, d, d, 1], |ix| (ix[1] == ix[2]) as u8 as f64))
            .collect::<Result<Vec<_>>>()?;
        Self::new(cores)
    }

    pub fn order(&self) -> usize {
        self.cores.len()
    }

    pub fn row_dims(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.dims()[1]).collect()
    }

    pub fn col_dims(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.dims()[2]).collect()
    }

    pub fn ranks(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.cores.iter().map(|c| c.dims()[0]).collect();
        r.push(1);
        r
    }

    pub fn cores(&self) -> &[DenseTensor] {
        &self.cores
    }

    pub fn num_params(&self) -> usize {
        self.cores.iter().map(|c| c.len()).sum()
    }

    /// The same buffers seen as a tensor train with merged modes `I_n J_n`.
    pub fn to_merged(&self) -> TensorTrain {
        let cores = self
            .cores
            .iter()
            .map(|c| {
                let d = c.dims();
                DenseTensor::new(vec![d[0], d[1] * d[2], d[3]], c.data().to_vec()).expect("merge")
            })
            .collect();
        TensorTrain::new(cores).expect("merged chain")
    }

    /// Inverse of [`TTMatrix::to_merged`].
    pub fn from_merged(tt: TensorTrain, row_dims: &[usize], col_dims: &[usize]) -> Result<Self> {
        let merged: Vec<usize> = row_dims.iter().zip(col_dims).map(|(i, j)| i * j).collect();
        if tt.dims() != merged || row_dims.len() != col_dims.len() {
            return Err(Error::dim(format!(
                "merged dims {:?} do not factor as {:?} x {:?}",
                tt.dims(),
                row_dims,
                col_dims
            )));
        }
        let cores = tt
            .into_cores()
            .into_iter()
            .enumerate()
            .map(|(n, c)| {
                let d = c.dims().to_vec();
                DenseTensor::new(vec![d[0], row_dims[n], col_dims[n], d[2]], c.into_data())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(cores)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.to_merged().frobenius_norm()
    }

    pub fn scaled(self, c: f64) -> Self {
        let (r, cdims) = (self.row_dims(), self.col_dims());
        Self::from_merged(self.to_merged().scaled(c), &r, &cdims).expect("same dims")
    }
}

/// Dense `(∏I_n) x (∏J_n)` matrix.
pub fn ttm_contract(ttm: &TTMatrix) -> DenseMatrix {
    let (rows, cols) = (ttm.row_dims(), ttm.col_dims());
    let merged = tt_contract(&ttm.to_merged());
    let (nr, nc): (usize, usize) = (rows.iter().product(), cols.iter().product());
    let mut out = DMatrix::zeros(nr, nc);
    let order = rows.len();
    let mut idx = vec![0usize; order];
    for &v in merged.data() {
        let (mut row, mut col, mut sr, mut sc) = (0, 0, 1, 1);
        for n in 0..order {
            row += (idx[n] % rows[n]) * sr;
            col += (idx[n] / rows[n]) * sc;
            sr *= rows[n];
            sc *= cols[n];
        }
        out[(row, col)] = v;
        for n in 0..order {
            idx[n] += 1;
            if idx[n] < rows[n] * cols[n] {
                break;
            }
            idx[n] = 0;
        }
    }
    out
}

/// Matrix-vector product without forming the dense matrix.
pub fn ttm_vec_product(ttm: &TTMatrix, v: &DVector<f64>) -> Result<DVector<f64>> {
    let (rows, cols) = (ttm.row_dims(), ttm.col_dims());
    let ncols: usize = cols.iter().product();
    if v.len() != ncols {
        return Err(Error::dim(format!(
            "TT-matrix has {ncols} columns, vector has length {}",
            v.len()
        )));
    }
    // state[(i_<n, r_n, j_>=n)], i_<n fastest.
    let mut state = v.as_slice().to_vec();
    let (mut left, mut right) = (1usize, ncols);
    for (n, core) in ttm.cores().iter().enumerate() {
        let d = core.dims();
        let (r, ri, rj, r2) = (d[0], d[1], d[2], d[3]);
        debug_assert_eq!((ri, rj), (rows[n], cols[n]));
        right /= rj;
        let g = core.data();
        let mut next = vec![0.0; left * ri * r2 * right];
        for jr in 0..right {
            for b in 0..r2 {
                for j in 0..rj {
                    for i in 0..ri {
                        for a in 0..r {
                            let gv = g[a + r * (i + ri * (j + rj * b))];
                            if gv == 0.0 {
                                continue;
                            }
                            let src = left * (a + r * (j + rj * jr));
                            let dst = left * (i + ri * (b + r2 * jr));
                            for l in 0..left {
                                next[dst + l] += gv * state[src + l];
                            }
                        }
                    }
                }
            }
        }
        state = next;
        left *= ri;
    }
    Ok(DVector::from_vec(state))
}

/// `vec(A) vec(B)ᵀ` for trains `a`, `b` of the same order; rank index
/// `r_a + R_a r_b`.
pub fn tt_outer(a: &TensorTrain, b: &TensorTrain) -> Result<TTMatrix> {
    if a.order() != b.order() {
        return Err(Error::dim(format!(
            "outer product of trains with orders {} and {}",
            a.order(),
            b.order()
        )));
    }
    let cores = a
        .cores()
        .iter()
        .zip(b.cores())
        .map(|(ca, cb)| {
            let (da, db) = (ca.dims(), cb.dims());
            let (ra, ia, ra2) = (da[0], da[1], da[2]);
            let (rb, jb, rb2) = (db[0], db[1], db[2]);
            let (r, r2) = (ra * rb, ra2 * rb2);
            let mut out = vec![0.0; r * ia * jb * r2];
            let (ga, gb) = (ca.data(), cb.data());
            for p2 in 0..rb2 {
                for q2 in 0..ra2 {
                    for j in 0..jb {
                        for p in 0..rb {
                            let bv = gb[p + rb * (j + jb * p2)];
                            for i in 0..ia {
                                for q in 0..ra {
                                    let av = ga[q + ra * (i + ia * q2)];
                                    let row = q + ra * p;
                                    let col = q2 + ra2 * p2;
                                    out[row + r * (i + ia * (j + jb * col))] = av * bv;
                                }
                            }
                        }
                    }
                }
            }
            DenseTensor::new(vec![r, ia, jb, r2], out)
        })
        .collect::<Result<Vec<_>>>()?;
    TTMatrix::new(cores)
}

/// `vec(A) vᵀ`; the column dimension sits on the first core.
pub fn tt_vec_outer(a: &TensorTrain, v: &DVector<f64>) -> Result<TTMatrix> {
    if v.is_empty() {
        return Err(Error::dim("outer product with an empty vector"));
    }
    let mut cores = Vec::with_capacity(a.order());
    for (n, c) in a.cores().iter().enumerate() {
        let d = c.dims();
        if n == 0 {
            let (i_n, r2) = (d[1], d[2]);
            let mut out = vec![0.0; i_n * v.len() * r2];
            for b in 0..r2 {
                for j in 0..v.len() {
                    for i in 0..i_n {
                        out[i + i_n * (j + v.len() * b)] = c.data()[i + i_n * b] * v[j];
                    }
                }
            }
            cores.push(DenseTensor::new(vec![1, i_n, v.len(), r2], out)?);
        } else {
            cores.push(DenseTensor::new(vec![d[0], d[1], 1, d[2]], c.data().to_vec())?);
        }
    }
    TTMatrix::new(cores)
}

pub fn ttm_add(a: &TTMatrix, b: &TTMatrix) -> Result<TTMatrix> {
    if a.row_dims() != b.row_dims() || a.col_dims() != b.col_dims() {
        return Err(Error::dim(format!(
            "cannot add {:?}x{:?} and {:?}x{:?} TT-matrices",
            a.row_dims(),
            a.col_dims(),
            b.row_dims(),
            b.col_dims()
        )));
    }
    let sum = tt_add(&a.to_merged(), &b.to_merged())?;
    TTMatrix::from_merged(sum, &a.row_dims(), &a.col_dims())
}

pub fn ttm_round(ttm: &TTMatrix, trunc: &Truncation) -> Result<TTMatrix> {
    let rounded = tt_round(&ttm.to_merged(), trunc)?;
    TTMatrix::from_merged(rounded, &ttm.row_dims(), &ttm.col_dims())
}

fn check_square(ttm: &TTMatrix) -> Result<()> {
    if ttm.row_dims() != ttm.col_dims() {
        return Err(Error::dim(format!(
            "square mode structure required, got {:?}x{:?}",
            ttm.row_dims(),
            ttm.col_dims()
        )));
    }
    Ok(())
}

/// Diagonal as a tensor train over the row dims.
pub fn ttm_diagonal(ttm: &TTMatrix) -> Result<TensorTrain> {
    check_square(ttm)?;
    let cores = ttm
        .cores()
        .iter()
        .map(|c| {
            let d = c.dims();
            let (r, i_n, r2) = (d[0], d[1], d[3]);
            DenseTensor::from_fn(vec![r, i_n, r2], |ix| c.get(&[ix[0], ix[1], ix[1], ix[2]]))
        })
        .collect::<Result<Vec<_>>>()?;
    TensorTrain::new(cores)
}

pub fn ttm_trace(ttm: &TTMatrix) -> Result<f64> {
    let diag = ttm_diagonal(ttm)?;
    let ones: Vec<Vec<f64>> = diag.dims().iter().map(|&d| vec![1.0; d]).collect();
    diag.dot(&TensorTrain::rank_one(&ones)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_tt, rel_diff};
    use crate::tensor::vectorize;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn outer_of_train_with_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_tt(&mut rng, &[2, 3, 2], &[1, 2, 2, 1]);
        let va = vectorize(&tt_contract(&a));
        let m = ttm_contract(&tt_outer(&a, &a).unwrap());
        let oracle = &va * va.transpose();
        assert!(rel_diff(m.as_slice(), oracle.as_slice()) < 1e-12);
    }

    #[test]
    fn outer_of_different_trains() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_tt(&mut rng, &[2, 3], &[1, 2, 1]);
        let b = random_tt(&mut rng, &[4, 2], &[1, 3, 1]);
        let ttm = tt_outer(&a, &b).unwrap();
        assert_eq!(ttm.ranks(), vec![1, 6, 1]);
        let (va, vb) = (vectorize(&tt_contract(&a)), vectorize(&tt_contract(&b)));
        let oracle = &va * vb.transpose();
        assert!(rel_diff(ttm_contract(&ttm).as_slice(), oracle.as_slice()) < 1e-12);
        let c = random_tt(&mut rng, &[4, 2, 2], &[1, 3, 2, 1]);
        assert!(tt_outer(&a, &c).is_err());
    }

    #[test]
    fn identity_times_vector() {
        let id = TTMatrix::identity(&[2, 3, 2]).unwrap();
        let v = DVector::from_fn(12, |i, _| i as f64 - 3.5);
        assert_eq!(ttm_vec_product(&id, &v).unwrap(), v);
        assert_eq!(ttm_trace(&id).unwrap(), 12.0);
        assert!(ttm_vec_product(&id, &DVector::zeros(5)).is_err());
    }

    #[test]
    fn vec_outer_with_unit_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_tt(&mut rng, &[2, 3, 2], &[1, 2, 3, 1]);
        let mut e1 = DVector::zeros(4);
        e1[0] = 1.0;
        let m = ttm_contract(&tt_vec_outer(&a, &e1).unwrap());
        let va = vectorize(&tt_contract(&a));
        assert!(rel_diff(m.column(0).as_slice(), va.as_slice()) < 1e-14);
        assert!(m.columns(1, 3).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn product_trace_diagonal_agree_with_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_tt(&mut rng, &[2, 3, 2], &[1, 2, 2, 1]);
        let b = random_tt(&mut rng, &[2, 3, 2], &[1, 3, 2, 1]);
        let ttm = ttm_add(&tt_outer(&a, &b).unwrap(), &tt_outer(&b, &a).unwrap()).unwrap();
        let dense = ttm_contract(&ttm);
        let v = DVector::from_fn(12, |i, _| (i as f64).sin());
        let prod = ttm_vec_product(&ttm, &v).unwrap();
        assert!(rel_diff(prod.as_slice(), (&dense * &v).as_slice()) < 1e-12);
        assert!((ttm_trace(&ttm).unwrap() - dense.trace()).abs() < 1e-10 * dense.norm());
        let diag = vectorize(&tt_contract(&ttm_diagonal(&ttm).unwrap()));
        assert!(rel_diff(diag.as_slice(), dense.diagonal().as_slice()) < 1e-12);
        assert!((ttm.frobenius_norm() - dense.norm()).abs() < 1e-10 * dense.norm());

        let rounded = ttm_round(&ttm, &Truncation::Tolerance(1e-12)).unwrap();
        assert!(rel_diff(ttm_contract(&rounded).as_slice(), dense.as_slice()) < 1e-10);
        let rect = tt_outer(&a, &random_tt(&mut rng, &[3, 3, 2], &[1, 1, 1, 1])).unwrap();
        assert!(ttm_trace(&rect).is_err());
    }
}
