//! Unscented transform through the TT contraction.
//!
//! The stacked core vector `x ~ N(m, P)` is mapped by `f_T`, the contraction
//! of the cores it encodes. Sigma points come from the Cholesky factor of
//! `P`; because `P` is block diagonal over cores, every sigma point moves a
//! single core and its offset from `f_T(m)` is itself a train of the base
//! ranks. Mean and covariance are accumulated from those offsets.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::als::BayesTDModel;
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::tt::{tt_add, tt_outer, tt_round, TTMatrix, TensorTrain, Truncation};

/// Largest stacked dimension accepted by [`dense_ut_oracle`].
pub const ORACLE_MAX_DIM: usize = 200;
/// Number of additions between two roundings of an accumulated sum.
pub const ROUND_EVERY: usize = 8;

/// Scaling parameters. `kappa = None` means `3 − M`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UTParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: Option<f64>,
}

impl Default for UTParams {
    fn default() -> Self {
        Self { alpha: 1e-3, beta: 2.0, kappa: None }
    }
}

/// Weights of the `2M+1` sigma points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UTWeights {
    pub mean0: f64,
    pub cov0: f64,
    /// Weight of every non-central point, for both the mean and the covariance.
    pub point: f64,
}

impl UTParams {
    pub fn kappa_for(&self, m: usize) -> f64 {
        self.kappa.unwrap_or(3.0 - m as f64)
    }

    /// `λ = α²(M + κ) − M`.
    pub fn lambda(&self, m: usize) -> f64 {
        self.alpha * self.alpha * (m as f64 + self.kappa_for(m)) - m as f64
    }

    /// Rejects parameters with `M + λ ≤ 0`.
    pub fn validate(&self, m: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Parameter(format!("alpha must be positive, got {}", self.alpha)));
        }
        let s = m as f64 + self.lambda(m);
        if !(s > 0.0) {
            return Err(Error::Parameter(format!(
                "M + lambda = {s:e} must be positive (M = {m}, alpha = {}, kappa = {})",
                self.alpha,
                self.kappa_for(m)
            )));
        }
        Ok(())
    }

    pub fn weights(&self, m: usize) -> Result<UTWeights> {
        self.validate(m)?;
        let lam = self.lambda(m);
        let s = m as f64 + lam;
        let mean0 = lam / s;
        Ok(UTWeights { mean0, cov0: mean0 + 1.0 - self.alpha * self.alpha + self.beta, point: 0.5 / s })
    }
}

/// Round-off tolerances for the accumulated mean and covariance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UTRounding {
    pub mean: f64,
    pub cov: f64,
}

impl Default for UTRounding {
    fn default() -> Self {
        Self { mean: 1e-10, cov: 1e-8 }
    }
}

/// Sigma points `m ± √(M+λ) [√P]_i` with their weights.
#[derive(Clone, Debug)]
pub struct SigmaPointSet {
    pub m: DVector<f64>,
    pub a_plus: DMatrix<f64>,
    pub a_minus: DMatrix<f64>,
    pub weights: UTWeights,
    /// `√(M+λ) √P`; column `i` is `x⁽ⁱ⁾ − m` exactly.
    offsets: DMatrix<f64>,
}

impl SigmaPointSet {
    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// Point `i` in `0..=2M`; point 0 is the mean.
    pub fn point(&self, i: usize) -> DVector<f64> {
        let m = self.dim();
        match i {
            0 => self.m.clone(),
            _ if i <= m => self.a_plus.column(i - 1).into_owned(),
            _ => self.a_minus.column(i - m - 1).into_owned(),
        }
    }

    pub fn offsets(&self) -> &DMatrix<f64> {
        &self.offsets
    }
}

/// Mean and block-diagonal covariance of the stacked core vector.
pub fn stack_gaussian(model: &BayesTDModel) -> Result<(DVector<f64>, DMatrix<f64>)> {
    model.expect_tt()?;
    let m_total: usize = model.components.iter().map(|c| c.dim()).sum();
    let mut m = DVector::zeros(m_total);
    let mut p = DMatrix::zeros(m_total, m_total);
    let mut off = 0;
    for c in &model.components {
        let k = c.dim();
        m.rows_mut(off, k).copy_from(c.mean());
        p.view_mut((off, off), (k, k)).copy_from(c.cov()?);
        off += k;
    }
    Ok((m, p))
}

/// Contiguous diagonal blocks of `p` with no coupling between them.
fn diagonal_blocks(p: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = p.nrows();
    let mut blocks = Vec::new();
    let (mut start, mut reach) = (0, 0);
    for i in 0..n {
        let last = (0..n).rev().find(|&j| p[(i, j)] != 0.0 || p[(j, i)] != 0.0).unwrap_or(i);
        reach = reach.max(last).max(i);
        if reach == i {
            blocks.push((start, i + 1));
            start = i + 1;
        }
    }
    blocks
}

/// Lower Cholesky factor computed per uncoupled block; all-zero blocks give
/// zero columns.
fn block_cholesky(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = p.nrows();
    let mut l = DMatrix::zeros(n, n);
    for (a, b) in diagonal_blocks(p) {
        let block = p.view((a, a), (b - a, b - a)).into_owned();
        if block.iter().all(|&x| x == 0.0) {
            continue;
        }
        let f = SpdFactor::new(&block)?;
        l.view_mut((a, a), (b - a, b - a)).copy_from(&f.lower());
    }
    Ok(l)
}

pub fn sigma_points(m: &DVector<f64>, p: &DMatrix<f64>, params: &UTParams) -> Result<SigmaPointSet> {
    let dim = m.len();
    if p.shape() != (dim, dim) {
        return Err(Error::dim(format!("covariance {}x{} for a mean of length {dim}", p.nrows(), p.ncols())));
    }
    let weights = params.weights(dim)?;
    let scale = (dim as f64 + params.lambda(dim)).sqrt();
    let offsets = block_cholesky(p)? * scale;
    let mut a_plus = offsets.clone();
    let mut a_minus = -offsets.clone();
    for j in 0..dim {
        a_plus.column_mut(j).axpy(1.0, m, 1.0);
        a_minus.column_mut(j).axpy(1.0, m, 1.0);
    }
    Ok(SigmaPointSet { m: m.clone(), a_plus, a_minus, weights, offsets })
}

/// Splits a stacked vector into cores along the rank chain.
pub fn propagate(point: &DVector<f64>, dims: &[usize], ranks: &[usize]) -> Result<TensorTrain> {
    let sizes = core_sizes(dims, ranks)?;
    let total: usize = sizes.iter().sum();
    if point.len() != total {
        return Err(Error::dim(format!("point of length {} for a chain needing {total}", point.len())));
    }
    let mut off = 0;
    let data = sizes
        .iter()
        .map(|&k| {
            let v = point.as_slice()[off..off + k].to_vec();
            off += k;
            v
        })
        .collect();
    TensorTrain::from_parts(dims, ranks, data)
}

fn core_sizes(dims: &[usize], ranks: &[usize]) -> Result<Vec<usize>> {
    if ranks.len() != dims.len() + 1 {
        return Err(Error::Structure(format!("{} ranks for {} dims", ranks.len(), dims.len())));
    }
    Ok((0..dims.len()).map(|n| ranks[n] * dims[n] * ranks[n + 1]).collect())
}

/// `f_T(m + δ) − f_T(m)` for an offset `δ`. An offset confined to one core
/// gives that core replaced by `δ`, returned with the core index; otherwise
/// the difference is formed and rounded at `tol`.
fn centered_train(base: &TensorTrain, delta: &[f64], sizes: &[usize], tol: f64) -> Result<Option<(TensorTrain, Option<usize>)>> {
    let mut touched = Vec::new();
    let mut off = 0;
    for (n, &k) in sizes.iter().enumerate() {
        if delta[off..off + k].iter().any(|&x| x != 0.0) {
            touched.push(n);
        }
        off += k;
    }
    match touched.as_slice() {
        [] => Ok(None),
        &[n] => {
            let start: usize = sizes[..n].iter().sum();
            let mut tt = base.clone();
            let dims = tt.core(n).dims().to_vec();
            tt.set_core(n, crate::tensor::DenseTensor::new(dims, delta[start..start + sizes[n]].to_vec())?)?;
            Ok(Some((tt, Some(n))))
        }
        _ => {
            let mut shifted = Vec::with_capacity(sizes.len());
            let mut off = 0;
            for (n, &k) in sizes.iter().enumerate() {
                let c = base.core(n).data().iter().zip(&delta[off..off + k]).map(|(a, b)| a + b).collect();
                shifted.push(c);
                off += k;
            }
            let moved = TensorTrain::from_parts(&base.dims(), &base.ranks(), shifted)?;
            let diff = tt_add(&moved, &base.clone().scaled(-1.0))?;
            Ok(Some((tt_round(&diff, &Truncation::Tolerance(tol))?, None)))
        }
    }
}

/// Sums trains that agree in every core but one by adding that core;
/// the rest are returned as they are.
fn merge_single_core(items: Vec<(TensorTrain, Option<usize>)>) -> Result<Vec<TensorTrain>> {
    let mut groups: Vec<(usize, TensorTrain)> = Vec::new();
    let mut out = Vec::new();
    for (tt, site) in items {
        let Some(n) = site else {
            out.push(tt);
            continue;
        };
        match groups.iter_mut().find(|(k, _)| *k == n) {
            None => groups.push((n, tt)),
            Some((_, acc)) => {
                let mut core = acc.core(n).clone();
                for (a, b) in core.data_mut().iter_mut().zip(tt.core(n).data()) {
                    *a += b;
                }
                acc.set_core(n, core)?;
            }
        }
    }
    out.extend(groups.into_iter().map(|(_, tt)| tt));
    Ok(out)
}

/// Running sum of trains, rounded after every [`ROUND_EVERY`] additions.
struct Accumulator {
    sum: Option<TensorTrain>,
    pending: usize,
    tol: f64,
}

impl Accumulator {
    fn new(tol: f64) -> Self {
        Self { sum: None, pending: 0, tol }
    }

    fn push(&mut self, tt: TensorTrain) -> Result<()> {
        self.sum = Some(match self.sum.take() {
            None => tt,
            Some(s) => tt_add(&s, &tt)?,
        });
        self.pending += 1;
        if self.pending >= ROUND_EVERY {
            self.round()?;
        }
        Ok(())
    }

    fn round(&mut self) -> Result<()> {
        if let Some(s) = self.sum.take() {
            self.sum = Some(tt_round(&s, &Truncation::Tolerance(self.tol))?);
        }
        self.pending = 0;
        Ok(())
    }

    fn finish(mut self) -> Result<Option<TensorTrain>> {
        self.round()?;
        Ok(self.sum)
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0 && tol <= 1.0) {
        return Err(Error::Parameter(format!("rounding tolerance must lie in (0, 1], got {tol}")));
    }
    Ok(())
}

/// Centered sigma trains `c_i = f_T(x⁽ⁱ⁾) − f_T(m)` for `i = 1..2M`, each
/// with the one core it differs from the base in, if any.
fn centered_trains(set: &SigmaPointSet, dims: &[usize], ranks: &[usize], tol: f64) -> Result<(TensorTrain, Vec<(TensorTrain, Option<usize>)>)> {
    let base = propagate(&set.m, dims, ranks)?;
    let sizes = core_sizes(dims, ranks)?;
    let mut out = Vec::with_capacity(2 * set.dim());
    for sign in [1.0, -1.0] {
        for j in 0..set.dim() {
            let delta: Vec<f64> = set.offsets.column(j).iter().map(|x| sign * x).collect();
            if let Some(c) = centered_train(&base, &delta, &sizes, tol)? {
                out.push(c);
            }
        }
    }
    Ok((base, out))
}

/// `Δ = m_UT − f_T(m) = w Σ c_i`, or `None` when all offsets vanish.
fn mean_shift(set: &SigmaPointSet, centered: Vec<(TensorTrain, Option<usize>)>, tol: f64) -> Result<Option<TensorTrain>> {
    let mut acc = Accumulator::new(tol);
    for c in merge_single_core(centered)? {
        acc.push(c)?;
    }
    Ok(acc.finish()?.map(|s| s.scaled(set.weights.point)))
}

/// UT mean `Σ_i w_i f_T(x⁽ⁱ⁾)` as a train.
pub fn ut_mean_tt(set: &SigmaPointSet, dims: &[usize], ranks: &[usize], round_tol: f64) -> Result<TensorTrain> {
    check_tol(round_tol)?;
    let (base, centered) = centered_trains(set, dims, ranks, round_tol)?;
    match mean_shift(set, centered, round_tol)? {
        None => Ok(base),
        Some(delta) => tt_round(&tt_add(&base, &delta)?, &Truncation::Tolerance(round_tol)),
    }
}

/// UT covariance `Σ_i w_i (f_T(x⁽ⁱ⁾) − m_UT)(…)ᵀ` as a TT-matrix.
///
/// With `Δ = m_UT − f_T(m)` and the weight identities this equals
/// `w Σ_i c_i c_iᵀ + (β − α²) Δ Δᵀ`, which is what gets accumulated.
pub fn ut_cov_ttm(set: &SigmaPointSet, m_ut: &TensorTrain, dims: &[usize], ranks: &[usize], params: &UTParams, round_tol: f64) -> Result<TTMatrix> {
    check_tol(round_tol)?;
    if m_ut.dims() != dims {
        return Err(Error::dim(format!("UT mean has dims {:?}, expected {dims:?}", m_ut.dims())));
    }
    let (base, centered) = centered_trains(set, dims, ranks, round_tol)?;
    let w = set.weights.point;
    let outers = centered
        .into_iter()
        .map(|(c, site)| Ok((tt_outer(&c.clone().scaled(w), &c)?.to_merged(), site)))
        .collect::<Result<Vec<_>>>()?;
    let mut acc = Accumulator::new(round_tol);
    for o in merge_single_core(outers)? {
        acc.push(o)?;
    }
    let delta = tt_add(m_ut, &base.scaled(-1.0))?;
    let delta = tt_round(&delta, &Truncation::Tolerance(round_tol))?;
    let coef = params.beta - params.alpha * params.alpha;
    if coef != 0.0 && delta.frobenius_norm() > 0.0 {
        acc.push(tt_outer(&delta.clone().scaled(coef), &delta)?.to_merged())?;
    }
    match acc.finish()? {
        None => TTMatrix::zeros(dims, dims),
        Some(sum) => TTMatrix::from_merged(sum, dims, dims),
    }
}

/// Mean train and covariance TT-matrix of the model's point estimate.
pub fn ut_tt(model: &BayesTDModel, params: &UTParams, rounding: &UTRounding) -> Result<(TensorTrain, TTMatrix)> {
    let ranks = model.expect_tt()?.to_vec();
    let (m, p) = stack_gaussian(model)?;
    let set = sigma_points(&m, &p, params)?;
    let mean = ut_mean_tt(&set, &model.dims, &ranks, rounding.mean)?;
    let cov = ut_cov_ttm(&set, &mean, &model.dims, &ranks, params, rounding.cov)?;
    Ok((mean, cov))
}

/// Dense contraction of a stacked core vector, one entry at a time.
fn dense_f(point: &[f64], dims: &[usize], ranks: &[usize]) -> DVector<f64> {
    let sizes: Vec<usize> = (0..dims.len()).map(|n| ranks[n] * dims[n] * ranks[n + 1]).collect();
    let offsets: Vec<usize> = sizes.iter().scan(0, |s, &k| { let o = *s; *s += k; Some(o) }).collect();
    let total: usize = dims.iter().product();
    let mut out = DVector::zeros(total);
    let mut idx = vec![0usize; dims.len()];
    for e in 0..total {
        let mut row = DMatrix::from_element(1, 1, 1.0);
        for n in 0..dims.len() {
            let (r, d, r2) = (ranks[n], dims[n], ranks[n + 1]);
            let s = DMatrix::from_fn(r, r2, |a, b| point[offsets[n] + a + r * (idx[n] + d * b)]);
            row = row * s;
        }
        out[e] = row[(0, 0)];
        for n in 0..dims.len() {
            idx[n] += 1;
            if idx[n] < dims[n] {
                break;
            }
            idx[n] = 0;
        }
    }
    out
}

/// Dense evaluation of the UT: all `2M+1` points are contracted to full
/// vectors and the weighted sums formed directly. Limited to
/// `M ≤` [`ORACLE_MAX_DIM`].
pub fn dense_ut_oracle(m: &DVector<f64>, p: &DMatrix<f64>, dims: &[usize], ranks: &[usize], params: &UTParams) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let dim = m.len();
    if dim > ORACLE_MAX_DIM {
        return Err(Error::Parameter(format!("dense oracle limited to M <= {ORACLE_MAX_DIM}, got {dim}")));
    }
    let sizes = core_sizes(dims, ranks)?;
    if sizes.iter().sum::<usize>() != dim || p.shape() != (dim, dim) {
        return Err(Error::dim("stacked mean/covariance do not match the rank chain"));
    }
    let w = params.weights(dim)?;
    let lam = params.lambda(dim);
    let sqrt = oracle_sqrt(p)? * (dim as f64 + lam).sqrt();
    let mut points = vec![(w.mean0, w.cov0, m.clone())];
    for j in 0..dim {
        points.push((w.point, w.point, m + sqrt.column(j)));
    }
    for j in 0..dim {
        points.push((w.point, w.point, m - sqrt.column(j)));
    }
    let images: Vec<(f64, f64, DVector<f64>)> =
        points.into_iter().map(|(wm, wp, x)| (wm, wp, dense_f(x.as_slice(), dims, ranks))).collect();
    let total: usize = dims.iter().product();
    let mut mean = DVector::zeros(total);
    for (wm, _, s) in &images {
        mean.axpy(*wm, s, 1.0);
    }
    let mut cov = DMatrix::zeros(total, total);
    for (_, wp, s) in &images {
        let d = s - &mean;
        cov.ger(*wp, &d, &d, 1.0);
    }
    Ok((mean, cov))
}

/// Cholesky factor through `nalgebra`, blockwise when `p` is singular.
fn oracle_sqrt(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(c) = p.clone().cholesky() {
        return Ok(c.l());
    }
    let n = p.nrows();
    let mut l = DMatrix::zeros(n, n);
    for (a, b) in diagonal_blocks(p) {
        let block = p.view((a, a), (b - a, b - a)).into_owned();
        if block.iter().all(|&x| x == 0.0) {
            continue;
        }
        let c = block
            .cholesky()
            .ok_or_else(|| Error::Numerical("oracle covariance block is not positive definite".into()))?;
        l.view_mut((a, a), (b - a, b - a)).copy_from(&c.l());
    }
    Ok(l)
}
