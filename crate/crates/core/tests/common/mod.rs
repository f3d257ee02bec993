//! Random instances and the invariant checks shared by the property tests
//! and the acceptance harness. Every check draws one instance from a `u64`
//! seed and returns a description of the first violation.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ttbayes::als::{
    bayes_als, build_u, conventional_als, conventional_als_update, posterior_update, AlsOptions, BayesTDModel,
    GaussianComponent, StoppingRule, TDKind,
};
use ttbayes::experiments::{
    make_ground_truth, make_noisy_sample, perturbed_prior, run_comparison, run_convergence, stream_rng, Algorithm,
    ExperimentConfig, SnrConvention, Stream,
};
use ttbayes::io::BinaryObject;
use ttbayes::linalg::is_psd;
use ttbayes::ortho::{bayes_als_ortho, OrthoSweepState};
use ttbayes::tensor::{kronecker, mode_n_product, mode_n_unfold, refold, vectorize};
use ttbayes::tt::{
    orthogonality_residual, shift_norm_left, shift_norm_right, to_site_n_canonical, tt_add, tt_contract, tt_outer,
    tt_round, tt_svd, ttm_contract, CanonicalForm, Orthogonality, TTMatrix, Truncation,
};
use ttbayes::unscented::{dense_ut_oracle, sigma_points, stack_gaussian, ut_tt, UTParams, UTRounding};
use ttbayes::{DenseTensor, TensorTrain};

pub type Check = fn(u64) -> Result<(), String>;

pub struct Property {
    pub module: &'static str,
    pub name: &'static str,
    pub cases: u32,
    pub check: Check,
}

pub const PROPERTIES: &[Property] = &[
    Property { module: "tensor_core", name: "unfold_refold_round_trip", cases: 64, check: unfold_refold_round_trip },
    Property { module: "tensor_core", name: "mode_product", cases: 64, check: mode_product },
    Property { module: "tensor_core", name: "kronecker_mixed_product", cases: 64, check: kronecker_mixed_product },
    Property { module: "tensor_core", name: "vectorize_order", cases: 64, check: vectorize_order },
    Property { module: "tt_format", name: "norm_shift", cases: 32, check: norm_shift },
    Property { module: "tt_format", name: "site_canonical_norm", cases: 32, check: site_canonical_norm },
    Property { module: "tt_format", name: "tt_svd_bound", cases: 32, check: tt_svd_bound },
    Property { module: "tt_format", name: "round_after_zero_add", cases: 32, check: round_after_zero_add },
    Property { module: "tt_format", name: "outer_product", cases: 32, check: outer_product },
    Property { module: "als_engine", name: "information_never_decreases", cases: 32, check: information_never_decreases },
    Property { module: "als_engine", name: "flat_prior_matches_least_squares", cases: 32, check: flat_prior_matches_least_squares },
    Property { module: "als_engine", name: "design_matrix_multilinear", cases: 32, check: design_matrix_multilinear },
    Property { module: "als_engine", name: "psd_after_sweeps", cases: 16, check: psd_after_sweeps },
    Property { module: "ortho_bayes", name: "transforms_preserve_estimate", cases: 24, check: transforms_preserve_estimate },
    Property { module: "ortho_bayes", name: "sweep_keeps_canonical_form", cases: 16, check: sweep_keeps_canonical_form },
    Property { module: "ortho_bayes", name: "flat_prior_matches_ortho_als", cases: 16, check: flat_prior_matches_ortho_als },
    Property { module: "unscented_tt", name: "covariance_symmetric", cases: 16, check: ut_covariance_symmetric },
    Property { module: "unscented_tt", name: "matches_dense_oracle", cases: 16, check: ut_matches_oracle },
    Property { module: "unscented_tt", name: "weight_identities", cases: 64, check: ut_weight_identities },
    Property { module: "unscented_tt", name: "sigma_point_symmetry", cases: 32, check: sigma_point_symmetry },
    Property { module: "experiments", name: "bit_reproducible", cases: 4, check: experiments_reproducible },
    Property { module: "experiments", name: "flat_prior_agreement", cases: 4, check: experiments_flat_prior },
    Property { module: "experiments", name: "posteriors_stay_psd", cases: 8, check: experiments_psd },
    Property { module: "cli_io", name: "binary_round_trip", cases: 32, check: io_round_trip },
];

/// Runs `p` for its number of cases; `rng` fixes the seeds when given.
pub fn run_property(p: &Property, rng: Option<TestRng>) -> Result<(), String> {
    let config = Config { cases: p.cases, failure_persistence: None, max_shrink_iters: 0, ..Config::default() };
    let mut runner = match rng {
        Some(rng) => TestRunner::new_with_rng(config, rng),
        None => TestRunner::new(config),
    };
    runner
        .run(&any::<u64>(), |seed| (p.check)(seed).map_err(TestCaseError::fail))
        .map_err(|e| format!("{}::{}: {e}", p.module, p.name))
}

pub fn fixed_rng(master: u64) -> TestRng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master.to_le_bytes());
    TestRng::from_seed(RngAlgorithm::ChaCha, &seed)
}

// ---------------------------------------------------------------- helpers

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn rand_matrix(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_vec(r, c, normals(rng, r * c))
}

/// `A Aᵀ / k + shift·I`, scaled.
pub fn rand_spd(rng: &mut impl Rng, k: usize, scale: f64) -> DMatrix<f64> {
    let a = rand_matrix(rng, k, k);
    (&a * a.transpose() / k as f64 + DMatrix::identity(k, k) * 0.1) * scale
}

pub fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

pub fn rand_dims(rng: &mut impl Rng, order: (usize, usize), max_dim: usize) -> Vec<usize> {
    let n = rng.gen_range(order.0..=order.1);
    (0..n).map(|_| rng.gen_range(1..=max_dim)).collect()
}

/// A rank chain every neighbouring pair of cores can be orthogonalized
/// against: `R_n ≤ I_n R_{n+1}` and `R_{n+1} ≤ R_n I_n`.
pub fn rand_ranks(rng: &mut impl Rng, dims: &[usize], max_rank: usize) -> Vec<usize> {
    let n = dims.len();
    let right: Vec<usize> = (0..=n).map(|k| dims[k..].iter().product::<usize>()).collect();
    let mut ranks = vec![1usize];
    for k in 0..n - 1 {
        let r = ranks[k];
        let lo = r.div_ceil(dims[k]);
        let hi = max_rank.min(r * dims[k]).min(right[k + 1]).max(lo);
        ranks.push(rng.gen_range(lo..=hi));
    }
    ranks.push(1);
    ranks
}

pub fn rand_tt(rng: &mut impl Rng, dims: &[usize], ranks: &[usize]) -> TensorTrain {
    let data = (0..dims.len()).map(|n| normals(rng, ranks[n] * dims[n] * ranks[n + 1])).collect();
    TensorTrain::from_parts(dims, ranks, data).unwrap()
}

pub fn rand_dense(rng: &mut impl Rng, dims: &[usize]) -> DenseTensor {
    DenseTensor::new(dims.to_vec(), normals(rng, dims.iter().product())).unwrap()
}

fn rand_component(rng: &mut impl Rng, k: usize, scale: f64) -> GaussianComponent {
    GaussianComponent::new(DVector::from_vec(normals(rng, k)), rand_spd(rng, k, scale)).unwrap()
}

pub fn rand_tt_model(rng: &mut impl Rng, dims: &[usize], ranks: &[usize], cov_scale: f64, noise_var: f64) -> BayesTDModel {
    let priors = (0..dims.len()).map(|n| rand_component(rng, ranks[n] * dims[n] * ranks[n + 1], cov_scale)).collect();
    BayesTDModel::new(TDKind::TT { ranks: ranks.to_vec() }, dims.to_vec(), noise_var, priors).unwrap()
}

/// CP, Tucker or TT model with random priors.
pub fn rand_model(rng: &mut impl Rng, noise_var: f64) -> BayesTDModel {
    let dims = rand_dims(rng, (2, 4), 4);
    let kind = match rng.gen_range(0..3) {
        0 => {
            let rank = rng.gen_range(1..=3);
            TDKind::CP { rank, lambda: (0..rank).map(|_| rng.gen_range(0.5..2.0)).collect() }
        }
        1 => {
            let ranks: Vec<usize> = dims.iter().map(|&d| rng.gen_range(1..=d.min(3))).collect();
            TDKind::Tucker { core: rand_dense(rng, &ranks), ranks }
        }
        _ => TDKind::TT { ranks: rand_ranks(rng, &dims, 3) },
    };
    let sizes: Vec<usize> = match &kind {
        TDKind::CP { rank, .. } => dims.iter().map(|d| d * rank).collect(),
        TDKind::Tucker { ranks, .. } => dims.iter().zip(ranks).map(|(d, r)| d * r).collect(),
        TDKind::TT { ranks } => (0..dims.len()).map(|n| ranks[n] * dims[n] * ranks[n + 1]).collect(),
    };
    let priors = sizes.iter().map(|&k| rand_component(rng, k, 1.0)).collect();
    BayesTDModel::new(kind, dims, noise_var, priors).unwrap()
}

/// Component `n0` in the coordinates its design matrix acts on.
fn design_coordinates(model: &BayesTDModel, n0: usize) -> DVector<f64> {
    match &model.kind {
        TDKind::CP { lambda, .. } => {
            let g = model.factor(n0) * DMatrix::from_diagonal(&DVector::from_column_slice(lambda));
            DVector::from_column_slice(g.as_slice())
        }
        _ => model.components[n0].mean().clone(),
    }
}

fn all_psd(model: &BayesTDModel) -> Result<(), String> {
    for (n, c) in model.components.iter().enumerate() {
        let cov = c.cov().map_err(err)?;
        ensure(cov.iter().all(|x| x.is_finite()) && c.mean().iter().all(|x| x.is_finite()), || {
            format!("component {} not finite", n + 1)
        })?;
        ensure(c.check_psd(1e-8).map_err(err)?, || format!("component {} covariance not PSD", n + 1))?;
    }
    Ok(())
}

// ------------------------------------------------------------ tensor_core

fn unfold_refold_round_trip(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let dims = rand_dims(&mut r, (1, 4), 4);
    let t = rand_dense(&mut r, &dims);
    for n in 1..=dims.len() {
        let m = mode_n_unfold(&t, n).map_err(err)?;
        ensure(m.nrows() == dims[n - 1], || format!("mode-{n} unfolding has {} rows", m.nrows()))?;
        let back = refold(&m, n, &dims).map_err(err)?;
        ensure(back == t, || format!("refold of mode {n} differs for dims {dims:?}"))?;
    }
    Ok(())
}

fn mode_product(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let dims = rand_dims(&mut r, (1, 4), 4);
    let t = rand_dense(&mut r, &dims);
    let n = r.gen_range(1..=dims.len());
    let id = DMatrix::identity(dims[n - 1], dims[n - 1]);
    ensure(mode_n_product(&t, &id, n).map_err(err)? == t, || format!("identity product along mode {n} changed the tensor"))?;
    let rows = r.gen_range(1..=4);
    let a = rand_matrix(&mut r, rows, dims[n - 1]);
    let p = mode_n_product(&t, &a, n).map_err(err)?;
    let expect = &a * mode_n_unfold(&t, n).map_err(err)?;
    let got = mode_n_unfold(&p, n).map_err(err)?;
    let e = rel(got.as_slice(), expect.as_slice());
    ensure(e <= 1e-13, || format!("mode product unfolding off by {e:e}"))
}

fn kronecker_mixed_product(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let mut d = || r.gen_range(1..=3);
    let (m, n, p, q, s, t) = (d(), d(), d(), d(), d(), d());
    let a = rand_matrix(&mut r, m, n);
    let b = rand_matrix(&mut r, p, q);
    let c = rand_matrix(&mut r, n, s);
    let dd = rand_matrix(&mut r, q, t);
    let lhs = kronecker(&a, &b) * kronecker(&c, &dd);
    let rhs = kronecker(&(&a * &c), &(&b * &dd));
    let e = rel(lhs.as_slice(), rhs.as_slice());
    ensure(e <= 1e-12, || format!("mixed-product rule off by {e:e}"))
}

fn vectorize_order(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let dims = rand_dims(&mut r, (1, 4), 4);
    let t = rand_dense(&mut r, &dims);
    let v = vectorize(&t);
    ensure(v.as_slice() == mode_n_unfold(&t, 1).map_err(err)?.as_slice(), || "vec differs from mode-1 unfolding".into())?;
    let idx: Vec<usize> = dims.iter().map(|&d| r.gen_range(0..d)).collect();
    let mut off = 0;
    let mut stride = 1;
    for (i, d) in idx.iter().zip(&dims) {
        off += i * stride;
        stride *= d;
    }
    ensure(v[off] == t.get(&idx), || format!("entry {idx:?} not at first-index-fastest offset {off}"))
}

// -------------------------------------------------------------- tt_format

fn norm_shift(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let dims = rand_dims(&mut r, (2, 5), 5);
    let ranks = rand_ranks(&mut r, &dims, 4);
    let tt = rand_tt(&mut r, &dims, &ranks);
    let n = r.gen_range(1..dims.len());
    let full = tt_contract(&tt);
    let right = shift_norm_right(&tt, n).map_err(err)?;
    let left = shift_norm_left(&tt, n + 1).map_err(err)?;
    for (name, s, core, side) in [("right", &right, n - 1, Orthogonality::Left), ("left", &left, n, Orthogonality::Right)] {
        let e = rel(tt_contract(s).data(), full.data());
        ensure(e <= 1e-12, || format!("{name} shift at {n} changed the tensor by {e:e}"))?;
        let o = orthogonality_residual(s.core(core), side);
        ensure(o <= 1e-12, || format!("{name} shift left core {} non-orthogonal ({o:e})", core + 1))?;
    }
    Ok(())
}

fn site_canonical_norm(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let dims = rand_dims(&mut r, (2, 5), 5);
    let ranks = rand_ranks(&mut r, &dims, 4);
    let tt = rand_tt(&mut r, &dims, &ranks);
    let n = r.gen_range(1..=dims.len());
    let c = to_site_n_canonical(&tt, n).map_err(err)?;
    ensure(CanonicalForm::holds(&c, n, 1e-10), || format!("site-{n} form does not hold"))?;
    let norm = tt_contract(&tt).frobenius_norm();
    let core = c.core(n - 1).frobenius_norm();
    ensure((core - norm).abs() <= 1e-10 * norm, || format!("core {n} norm {core} vs tensor norm {norm}"))
}

fn tt_svd_bound(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let dims = rand_dims(&mut r, (2, 4), 5);
    let ranks = rand_ranks(&mut r, &dims, 3);
    let low = tt_contract(&rand_tt(&mut r, &dims, &ranks));
    let noise = rand_dense(&mut r, &dims);
    let level = r.gen_range(0.0..0.3) * low.frobenius_norm() / noise.frobenius_norm().max(1e-300);
    let data: Vec<f64> = low.data().iter().zip(noise.data()).map(|(a, b)| a + level * b).collect();
    let t = DenseTensor::new(dims.clone(), data).map_err(err)?;
    let eps = r.gen_range(0.01..0.5);
    let tt = tt_svd(&t, &Truncation::Tolerance(eps)).map_err(err)?;
    let e = rel(tt_contract(&tt).data(), t.data());
    ensure(e <= eps * (1.0 + 1e-10), || format!("tt_svd error {e} above {eps} for dims {dims:?}"))
}

fn round_after_zero_add(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let dims = rand_dims(&mut r, (2, 5), 4);
    let ranks = rand_ranks(&mut r, &dims, 3);
    let x = rand_tt(&mut r, &dims, &ranks);
    let sum = tt_add(&x, &x.clone().scaled(0.0)).map_err(err)?;
    let back = tt_round(&sum, &Truncation::Tolerance(1e-12)).map_err(err)?;
    let e = rel(tt_contract(&back).data(), tt_contract(&x).data());
    ensure(e <= 1e-10, || format!("rounding x + 0x off by {e:e}"))?;
    let br = back.ranks();
    ensure(br.iter().zip(&ranks).all(|(a, b)| a <= b), || format!("rounded ranks {br:?} exceed {ranks:?}"))
}

fn outer_product(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let dims = rand_dims(&mut r, (1, 3), 3);
    let ranks = rand_ranks(&mut r, &dims, 3);
    let a = rand_tt(&mut r, &dims, &ranks);
    let b = rand_tt(&mut r, &dims, &ranks);
    let m: TTMatrix = tt_outer(&a, &b).map_err(err)?;
    let expect = vectorize(&tt_contract(&a)) * vectorize(&tt_contract(&b)).transpose();
    let e = rel(ttm_contract(&m).as_slice(), expect.as_slice());
    ensure(e <= 1e-12, || format!("outer product off by {e:e}"))
}

// ------------------------------------------------------------- als_engine

fn information_never_decreases(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let k = r.gen_range(1..=8);
    let j = r.gen_range(1..=12);
    let scale = r.gen_range(0.1..10.0);
    let prior = rand_component(&mut r, k, scale);
    let u = rand_matrix(&mut r, j, k);
    let y = DVector::from_vec(normals(&mut r, j));
    let var = r.gen_range(0.01..10.0);
    let post = posterior_update(&prior, &u, &y, var).map_err(err)?;
    let p0 = prior.cov().map_err(err)?;
    let p1 = post.cov().map_err(err)?;
    ensure(is_psd(p1, 1e-10).map_err(err)?, || "posterior covariance not PSD".into())?;
    let drop = p0 - p1;
    let ev = drop.clone().symmetric_eigenvalues();
    let lo = ev.min();
    ensure(lo >= -1e-10 * p0.norm(), || format!("P0 - P+ has eigenvalue {lo:e}"))
}

fn flat_prior_matches_least_squares(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let k = r.gen_range(1..=6);
    let j = k + r.gen_range(2..=8);
    let prior = GaussianComponent::isotropic(DVector::from_vec(normals(&mut r, k)), 1e12).map_err(err)?;
    let u = rand_matrix(&mut r, j, k);
    let y = DVector::from_vec(normals(&mut r, j));
    let post = posterior_update(&prior, &u, &y, r.gen_range(0.1..2.0)).map_err(err)?;
    let (ls, _) = conventional_als_update(&u, &y).map_err(err)?;
    let e = rel(post.mean().as_slice(), ls.as_slice());
    ensure(e <= 1e-6, || format!("flat-prior mean differs from least squares by {e:e}"))
}

fn design_matrix_multilinear(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let model = rand_model(&mut r, 1.0);
    let n = r.gen_range(1..=model.order());
    let u = build_u(&model, n).map_err(err)?;
    let v = u * design_coordinates(&model, n - 1);
    let t = model.mean_tensor().map_err(err)?;
    let e = rel(v.as_slice(), t.data());
    ensure(e <= 1e-12, || format!("{} design matrix {n}: vec(Y) off by {e:e}", model.kind.name()))
}

fn psd_after_sweeps(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let var = r.gen_range(0.05..2.0);
    let mut model = rand_model(&mut r, var);
    let j: usize = model.dims.iter().product();
    let y = DVector::from_vec(normals(&mut r, j));
    let opts = AlsOptions::new(StoppingRule::fixed(1)).brief();
    for _ in 0..3 {
        model = bayes_als(model, &y, &opts).map_err(err)?.0;
        all_psd(&model).map_err(|e| format!("{}: {e}", model.kind.name()))?;
    }
    Ok(())
}

// ------------------------------------------------------------ ortho_bayes

fn transforms_preserve_estimate(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let dims = rand_dims(&mut r, (2, 5), 4);
    let ranks = rand_ranks(&mut r, &dims, 4);
    let model = rand_tt_model(&mut r, &dims, &ranks, 1.0, 1.0);
    let reference = tt_contract(&model.mean_tt().map_err(err)?);
    let mut state = OrthoSweepState::new(model).map_err(err)?;
    let order = dims.len();
    for step in 0..2 * order {
        let site = state.site;
        let go_right = site == 1 || (site < order && r.gen_bool(0.5));
        let before = state.model.components.clone();
        let touched = if go_right {
            state.transform_right(site).map_err(err)?;
            [site - 1, site]
        } else {
            state.transform_left(site).map_err(err)?;
            [site - 2, site - 1]
        };
        let e = rel(tt_contract(&state.mean_tt()).data(), reference.data());
        ensure(e <= 1e-10, || format!("step {step}: estimate moved by {e:e}"))?;
        let res = state.canonical_residual();
        ensure(res <= 1e-8, || format!("step {step}: canonical residual {res:e}"))?;
        for (n0, (a, b)) in before.iter().zip(&state.model.components).enumerate() {
            if touched.contains(&n0) {
                ensure(b.check_psd(1e-8).map_err(err)?, || format!("step {step}: core {} not PSD", n0 + 1))?;
            } else {
                ensure(a.mean() == b.mean() && a.cov().map_err(err)? == b.cov().map_err(err)?, || {
                    format!("step {step}: untouched core {} changed", n0 + 1)
                })?;
            }
        }
    }
    Ok(())
}

/// Runs `sweeps` orthogonalized sweeps by hand and returns the largest
/// canonical residual after any update or transform and the largest change
/// of the estimate caused by a transform.
pub fn ortho_sweep_residuals(seed: u64, sweeps: usize) -> Result<(f64, f64), String> {
    let mut r = rng(seed);
    let dims = rand_dims(&mut r, (3, 5), 5);
    let ranks = rand_ranks(&mut r, &dims, 4);
    let var = r.gen_range(0.1..2.0);
    let model = rand_tt_model(&mut r, &dims, &ranks, 1.0, var);
    let j: usize = dims.iter().product();
    let y = DVector::from_vec(normals(&mut r, j));
    let mut state = OrthoSweepState::new(model).map_err(err)?;
    let order = dims.len();
    let mut sites: Vec<usize> = (1..=order).collect();
    sites.extend((2..order).rev());
    let (mut worst_res, mut worst_move) = (state.canonical_residual(), 0.0f64);
    for _ in 0..sweeps {
        for (k, &n) in sites.iter().enumerate() {
            state.update(&y).map_err(err)?;
            worst_res = worst_res.max(state.canonical_residual());
            let next = sites.get(k + 1).copied().unwrap_or(1);
            let before = tt_contract(&state.mean_tt());
            if next > n {
                state.transform_right(n).map_err(err)?;
            } else if next < n {
                state.transform_left(n).map_err(err)?;
            } else {
                continue;
            }
            worst_res = worst_res.max(state.canonical_residual());
            worst_move = worst_move.max(rel(tt_contract(&state.mean_tt()).data(), before.data()));
        }
    }
    Ok((worst_res, worst_move))
}

fn sweep_keeps_canonical_form(seed: u64) -> Result<(), String> {
    let (res, mv) = ortho_sweep_residuals(seed, 2)?;
    ensure(res <= 1e-8, || format!("canonical residual {res:e}"))?;
    ensure(mv <= 1e-10, || format!("transform moved the estimate by {mv:e}"))
}

fn flat_prior_matches_ortho_als(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let dims = rand_dims(&mut r, (2, 4), 4);
    let ranks = rand_ranks(&mut r, &dims, 3);
    let init = rand_tt(&mut r, &dims, &ranks);
    let j: usize = dims.iter().product();
    let y = DVector::from_vec(normals(&mut r, j));
    let model = BayesTDModel::tt_isotropic(&init, 1e12, r.gen_range(0.1..2.0)).map_err(err)?;
    let (post, _) = bayes_als_ortho(model, &y, &AlsOptions::new(StoppingRule::fixed(2)).brief()).map_err(err)?;
    let (conv, _) = conventional_als(&init, &y, 2, true, None).map_err(err)?;
    let e = rel(tt_contract(&post.mean_tt().map_err(err)?).data(), tt_contract(&conv).data());
    ensure(e <= 1e-6, || format!("flat-prior orthogonalized estimate differs by {e:e}"))
}

// ----------------------------------------------------------- unscented_tt

/// Small TT model with `M ≤ 50` parameters.
pub fn small_ut_model(r: &mut impl Rng) -> BayesTDModel {
    loop {
        let dims = rand_dims(r, (2, 4), 3);
        let ranks = rand_ranks(r, &dims, 2);
        let m: usize = (0..dims.len()).map(|n| ranks[n] * dims[n] * ranks[n + 1]).sum();
        if m <= 50 {
            let scale = r.gen_range(0.01..1.0);
            return rand_tt_model(r, &dims, &ranks, scale, 1.0);
        }
    }
}

fn ut_covariance_symmetric(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let model = small_ut_model(&mut r);
    let (_, cov) = ut_tt(&model, &UTParams::default(), &UTRounding::default()).map_err(err)?;
    let c = ttm_contract(&cov);
    let asym = (&c - c.transpose()).norm();
    ensure(asym <= 1e-10 * c.norm().max(f64::MIN_POSITIVE), || format!("asymmetry {asym:e} of {:e}", c.norm()))
}

/// Relative mean and covariance errors of the TT path against the dense oracle.
pub fn ut_oracle_errors(model: &BayesTDModel, params: &UTParams) -> Result<(f64, f64), String> {
    let rounding = UTRounding { mean: 1e-12, cov: 1e-12 };
    let (mean, cov) = ut_tt(model, params, &rounding).map_err(err)?;
    let (m, p) = stack_gaussian(model).map_err(err)?;
    let ranks = match &model.kind {
        TDKind::TT { ranks } => ranks.clone(),
        _ => return Err("TT model expected".into()),
    };
    let (om, op) = dense_ut_oracle(&m, &p, &model.dims, &ranks, params).map_err(err)?;
    Ok((rel(tt_contract(&mean).data(), om.as_slice()), rel(ttm_contract(&cov).as_slice(), op.as_slice())))
}

pub fn rand_ut_params(r: &mut impl Rng) -> UTParams {
    UTParams { alpha: r.gen_range(0.5..=1.0), beta: 2.0, kappa: if r.gen_bool(0.5) { Some(0.0) } else { None } }
}

fn ut_matches_oracle(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let model = small_ut_model(&mut r);
    let params = rand_ut_params(&mut r);
    let (em, ec) = ut_oracle_errors(&model, &params)?;
    ensure(em <= 1e-10 && ec <= 1e-8, || format!("{params:?}: mean error {em:e}, covariance error {ec:e}"))
}

fn ut_weight_identities(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let m = r.gen_range(1..=60);
    let params = UTParams {
        alpha: r.gen_range(1e-3..=1.0),
        beta: r.gen_range(0.0..=3.0),
        kappa: if r.gen_bool(0.5) { None } else { Some(r.gen_range(-(m as f64)..=3.0)) },
    };
    let s = m as f64 + params.lambda(m);
    match params.weights(m) {
        Err(_) => ensure(s <= 0.0, || format!("{params:?} rejected with M + lambda = {s}")),
        Ok(w) => {
            ensure(s > 0.0, || format!("{params:?} accepted with M + lambda = {s}"))?;
            let total = w.mean0 + 2.0 * m as f64 * w.point;
            ensure((total - 1.0).abs() <= 1e-12 * (1.0 + w.mean0.abs()), || format!("mean weights sum to {total}"))?;
            let d = w.cov0 - w.mean0 - (1.0 - params.alpha * params.alpha + params.beta);
            ensure(d.abs() <= 1e-12 * (1.0 + w.mean0.abs()), || format!("cov0 - mean0 off by {d:e}"))
        }
    }
}

fn sigma_point_symmetry(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let k = r.gen_range(1..=12);
    let m = DVector::from_vec(normals(&mut r, k));
    let scale = r.gen_range(0.01..10.0);
    let p = rand_spd(&mut r, k, scale);
    let params = UTParams { alpha: r.gen_range(1e-3..=1.0), ..UTParams::default() };
    let set = sigma_points(&m, &p, &params).map_err(err)?;
    let scale = m.amax() + set.offsets().amax();
    for i in 0..k {
        let plus = set.a_plus.column(i) - &m;
        let minus = set.a_minus.column(i) - &m;
        let d = (plus + minus).amax();
        ensure(d <= 4.0 * f64::EPSILON * scale, || format!("pair {i} not symmetric about the mean ({d:e})"))?;
    }
    let s = k as f64 + params.lambda(k);
    let o = set.offsets();
    let e = rel((o * o.transpose()).as_slice(), (&p * s).as_slice());
    ensure(e <= 1e-10, || format!("offsets do not factor (M+lambda)P: {e:e}"))
}

// ------------------------------------------------------------ experiments

fn small_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        dims: vec![3, 3, 3],
        ranks: vec![1, 2, 2, 1],
        random_prior_mean: true,
        prior_b: 200.0,
        stop: StoppingRule::fixed(3),
        trials: 2,
        ..Default::default()
    }
}

fn experiments_reproducible(seed: u64) -> Result<(), String> {
    let cfg = small_config(seed);
    let a = run_convergence(&cfg).map_err(err)?.table().to_csv();
    let b = run_convergence(&cfg).map_err(err)?.table().to_csv();
    let c = run_convergence(&ExperimentConfig { threads: 2, ..cfg }).map_err(err)?.table().to_csv();
    ensure(a == b && a == c, || "convergence tables differ between identical runs".into())
}

fn experiments_flat_prior(seed: u64) -> Result<(), String> {
    let cfg = ExperimentConfig { prior_b: 1e6, random_prior_mean: false, trials: 1, stop: StoppingRule::fixed(5), ..small_config(seed) };
    let res = run_comparison(&cfg).map_err(err)?;
    let b = res.median(Algorithm::Bayes, cfg.snr_db, 1);
    let c = res.median(Algorithm::Conventional, cfg.snr_db, 1);
    ensure((b - c).abs() <= 0.01 * c, || format!("flat-prior Bayes {b} vs conventional {c}"))
}

fn experiments_psd(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let truth = make_ground_truth(seed, &[4, 4, 4], &[1, 3, 3, 1]).map_err(err)?;
    let y_truth = vectorize(&tt_contract(&truth));
    let mut noise = stream_rng(seed, Stream::Noise, 0);
    let (y, var) = make_noisy_sample(&y_truth, r.gen_range(-5.0..20.0), SnrConvention::Truth, &mut noise).map_err(err)?;
    let priors = perturbed_prior(&truth, r.gen_range(0.0..1.0), r.gen_range(0.01..100.0), &mut r).map_err(err)?;
    let model = BayesTDModel::new(TDKind::TT { ranks: truth.ranks() }, truth.dims(), var, priors).map_err(err)?;
    let opts = AlsOptions::new(StoppingRule::fixed(3)).brief();
    let (plain, _) = bayes_als(model.clone(), &y, &opts).map_err(err)?;
    all_psd(&plain).map_err(|e| format!("bayes: {e}"))?;
    let (ortho, _) = bayes_als_ortho(model, &y, &opts).map_err(err)?;
    all_psd(&ortho).map_err(|e| format!("bayes_ortho: {e}"))
}

// ----------------------------------------------------------------- cli_io

fn io_round_trip(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let obj = match r.gen_range(0..4) {
        0 => {
            let dims = rand_dims(&mut r, (1, 4), 4);
            BinaryObject::Tensor(rand_dense(&mut r, &dims))
        }
        1 => {
            let dims = rand_dims(&mut r, (1, 4), 4);
            let ranks = rand_ranks(&mut r, &dims, 3);
            BinaryObject::Train(rand_tt(&mut r, &dims, &ranks))
        }
        2 => {
            let dims = rand_dims(&mut r, (1, 3), 3);
            let ranks = rand_ranks(&mut r, &dims, 3);
            let a = rand_tt(&mut r, &dims, &ranks);
            BinaryObject::Matrix(tt_outer(&a, &a).map_err(err)?)
        }
        _ => {
            let var = r.gen_range(0.1..2.0);
            BinaryObject::Model(rand_model(&mut r, var))
        }
    };
    let bytes = obj.to_bytes().map_err(err)?;
    let back = BinaryObject::from_bytes(&bytes).map_err(err)?;
    ensure(back.to_bytes().map_err(err)? == bytes, || format!("{} did not survive a round trip", obj.describe()))
}
