use nalgebra::DMatrix;

use super::train::{core_shape, left_unfold, right_unfold, TensorTrain};
use crate::error::{Error, Result};
use crate::linalg::thin_svd;
use crate::tensor::{DenseMatrix, DenseTensor};

/// How aggressively a decomposition or rounding step truncates.
#[derive(Clone, Debug, PartialEq)]
pub enum Truncation {
    /// Relative Frobenius error bound in `(0, 1]`.
    Tolerance(f64),
    /// Maximal rank chain `R_1..R_{N+1}` (boundary entries must be 1).
    Ranks(Vec<usize>),
}

impl Truncation {
    fn validate(&self, order: usize) -> Result<()> {
        match self {
            Truncation::Tolerance(eps) if !(*eps > 0.0 && *eps <= 1.0) => Err(Error::Parameter(
                format!("truncation tolerance must lie in (0, 1], got {eps}"),
            )),
            Truncation::Ranks(r) if r.len() != order + 1 || r[0] != 1 || r[order] != 1 => {
                Err(Error::Parameter(format!(
                    "rank chain {r:?} must have {} entries with unit boundaries",
                    order + 1
                )))
            }
            Truncation::Ranks(r) if r.contains(&0) => {
                Err(Error::Parameter(format!("rank chain {r:?} contains a zero")))
            }
            _ => Ok(()),
        }
    }

    /// Per-step threshold for a tensor of norm `norm` split over `order - 1` steps.
    fn step_threshold(&self, norm: f64, order: usize) -> Option<f64> {
        match self {
            Truncation::Tolerance(eps) => {
                Some(eps * norm / ((order.saturating_sub(1)).max(1) as f64).sqrt())
            }
            Truncation::Ranks(_) => None,
        }
    }
}

/// Number of singular values kept: the smallest `r ≥ 1` whose discarded tail
/// has norm strictly below `delta` (a tail exactly at the threshold is kept).
fn truncated_rank(s: &[f64], delta: Option<f64>, cap: usize) -> usize {
    let full = s.len().min(cap).max(1);
    let Some(delta) = delta else {
        return full;
    };
    let mut tail = 0.0;
    let mut r = s.len();
    let d2 = delta * delta;
    while r > 1 {
        let next = tail + s[r - 1] * s[r - 1];
        if next < d2 {
            tail = next;
            r -= 1;
        } else {
            break;
        }
    }
    r.min(full).max(1)
}

/// TT-SVD: successive truncated SVDs of the sequential unfoldings.
pub fn tt_svd(t: &DenseTensor, trunc: &Truncation) -> Result<TensorTrain> {
    let dims = t.dims().to_vec();
    let order = dims.len();
    trunc.validate(order)?;
    let norm = t.frobenius_norm();
    if norm == 0.0 {
        return TensorTrain::zeros(&dims);
    }
    if order == 1 {
        return TensorTrain::new(vec![DenseTensor::new(vec![1, dims[0], 1], t.data().to_vec())?]);
    }
    let delta = trunc.step_threshold(norm, order);
    let mut cores = Vec::with_capacity(order);
    let mut rank = 1usize;
    let mut rest = t.data().to_vec();
    let mut remaining: usize = dims.iter().product();
    for (k, &d) in dims.iter().enumerate().take(order - 1) {
        remaining /= d;
        let rows = rank * d;
        let c = DMatrix::from_vec(rows, remaining, rest);
        let svd = thin_svd(&c)?;
        let cap = match trunc {
            Truncation::Ranks(r) => r[k + 1],
            Truncation::Tolerance(_) => usize::MAX,
        };
        let r_new = truncated_rank(&svd.s, delta, cap);
        let u = svd.u.columns(0, r_new).into_owned();
        cores.push(DenseTensor::new(vec![rank, d, r_new], u.as_slice().to_vec())?);
        let mut sv = svd.v.columns(0, r_new).transpose();
        for (i, mut row) in sv.row_iter_mut().enumerate() {
            row *= svd.s[i];
        }
        rest = sv.as_slice().to_vec();
        rank = r_new;
    }
    cores.push(DenseTensor::new(vec![rank, dims[order - 1], 1], rest)?);
    TensorTrain::new(cores)
}

/// Sum of two trains by stacking cores; internal ranks add.
pub fn tt_add(a: &TensorTrain, b: &TensorTrain) -> Result<TensorTrain> {
    if a.dims() != b.dims() {
        return Err(Error::dim(format!(
            "cannot add trains with dims {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let order = a.order();
    if order == 1 {
        let data = a.core(0).data().iter().zip(b.core(0).data()).map(|(x, y)| x + y).collect();
        return TensorTrain::new(vec![DenseTensor::new(a.core(0).dims().to_vec(), data)?]);
    }
    let mut cores = Vec::with_capacity(order);
    for n in 0..order {
        let (ra, d, ra2) = core_shape(a.core(n));
        let (rb, _, rb2) = core_shape(b.core(n));
        let (r_out, r2_out) = match n {
            0 => (1, ra2 + rb2),
            _ if n == order - 1 => (ra + rb, 1),
            _ => (ra + rb, ra2 + rb2),
        };
        let (off_r, off_r2) = match n {
            0 => (0, ra2),
            _ if n == order - 1 => (ra, 0),
            _ => (ra, ra2),
        };
        let mut out = vec![0.0; r_out * d * r2_out];
        let (ad, bd) = (a.core(n).data(), b.core(n).data());
        for c in 0..ra2 {
            for i in 0..d {
                for r in 0..ra {
                    out[r + r_out * (i + d * c)] = ad[r + ra * (i + d * c)];
                }
            }
        }
        for c in 0..rb2 {
            for i in 0..d {
                for r in 0..rb {
                    out[(r + off_r) + r_out * (i + d * (c + off_r2))] = bd[r + rb * (i + d * c)];
                }
            }
        }
        cores.push(DenseTensor::new(vec![r_out, d, r2_out], out)?);
    }
    TensorTrain::new(cores)
}

/// Rounding: right-to-left QR sweep, then left-to-right truncated SVDs.
pub fn tt_round(tt: &TensorTrain, trunc: &Truncation) -> Result<TensorTrain> {
    let order = tt.order();
    trunc.validate(order)?;
    if order == 1 {
        return Ok(tt.clone());
    }
    let mut work = tt.clone();
    for k in (1..order).rev() {
        work.shift_left_in_place(k);
    }
    let norm = work.core(0).frobenius_norm();
    if norm == 0.0 {
        return TensorTrain::zeros(&tt.dims());
    }
    let delta = trunc.step_threshold(norm, order);
    let mut cores: Vec<DenseTensor> = work.into_cores();
    for k in 0..order - 1 {
        let (r, d, _) = core_shape(&cores[k]);
        let svd = thin_svd(&left_unfold(&cores[k]))?;
        let cap = match trunc {
            Truncation::Ranks(rr) => rr[k + 1],
            Truncation::Tolerance(_) => usize::MAX,
        };
        let r_new = truncated_rank(&svd.s, delta, cap);
        let u = svd.u.columns(0, r_new).into_owned();
        cores[k] = DenseTensor::new(vec![r, d, r_new], u.as_slice().to_vec())?;
        let mut sv: DenseMatrix = svd.v.columns(0, r_new).transpose();
        for (i, mut row) in sv.row_iter_mut().enumerate() {
            row *= svd.s[i];
        }
        let (_, d_next, r_after) = core_shape(&cores[k + 1]);
        let next = sv * right_unfold(&cores[k + 1]);
        cores[k + 1] = DenseTensor::new(vec![r_new, d_next, r_after], next.as_slice().to_vec())?;
    }
    TensorTrain::new(cores)
}
