//! Design matrices `U_{\n}` with `vec(Y_model) = U_{\n} g_n`.

use nalgebra::{DMatrix, DVector};

use super::model::{BayesTDModel, TDKind};
use crate::error::{Error, Result};
use crate::linalg::{kron, pinv, SpdFactor};
use crate::tensor::{
    khatri_rao, mode_n_product, mode_n_unfold, refold, DenseMatrix, DenseTensor,
};
use crate::tt::{left_unfold, right_unfold, tt_contract, TensorTrain};

fn check_component(model: &BayesTDModel, n: usize) -> Result<usize> {
    if n == 0 || n > model.order() {
        return Err(Error::ModeIndex { index: n, order: model.order() });
    }
    Ok(n - 1)
}

/// Row permutation from mode-`n0` unfolding order to `vec(Y)` order.
fn unfolding_to_vec(dims: &[usize], n0: usize, unf: &DenseMatrix) -> DenseMatrix {
    let left: usize = dims[..n0].iter().product();
    let rows = dims[n0];
    let right: usize = dims[n0 + 1..].iter().product();
    let mut out = DMatrix::zeros(unf.nrows(), unf.ncols());
    for r in 0..right {
        for l in 0..left {
            for i in 0..rows {
                let src = i + rows * (l + left * r);
                let dst = l + left * (i + rows * r);
                out.row_mut(dst).copy_from(&unf.row(src));
            }
        }
    }
    out
}

/// Khatri-Rao product of all factors except `n0`, lowest mode fastest.
fn khatri_rao_others(model: &BayesTDModel, n0: usize) -> Result<DenseMatrix> {
    let mut acc: Option<DenseMatrix> = None;
    for m in (0..model.order()).filter(|&m| m != n0) {
        let f = model.factor(m);
        acc = Some(match acc {
            None => f,
            Some(a) => khatri_rao(&f, &a)?,
        });
    }
    Ok(acc.unwrap_or_else(|| DMatrix::from_element(1, model.factor(n0).ncols(), 1.0)))
}

fn kron_others(model: &BayesTDModel, n0: usize) -> DenseMatrix {
    let mut acc = DMatrix::from_element(1, 1, 1.0);
    for m in (0..model.order()).filter(|&m| m != n0) {
        acc = kron(&model.factor(m), &acc);
    }
    acc
}

/// CP design matrix for component `n` (1-based). The weights are absorbed
/// into the component: `vec(Y) = U vec(G_n diag λ)`.
pub fn build_u_cp(model: &BayesTDModel, n: usize) -> Result<DenseMatrix> {
    let TDKind::CP { .. } = &model.kind else {
        return Err(Error::Kind { expected: "CP", found: model.kind.name() });
    };
    let n0 = check_component(model, n)?;
    let k = khatri_rao_others(model, n0)?;
    let unf = kron(&k, &DMatrix::identity(model.dims[n0], model.dims[n0]));
    Ok(unfolding_to_vec(&model.dims, n0, &unf))
}

/// Tucker design matrix for component `n` (1-based).
pub fn build_u_tucker(model: &BayesTDModel, n: usize) -> Result<DenseMatrix> {
    let TDKind::Tucker { core, .. } = &model.kind else {
        return Err(Error::Kind { expected: "Tucker", found: model.kind.name() });
    };
    let n0 = check_component(model, n)?;
    let c_n = mode_n_unfold(core, n)?;
    let w = kron_others(model, n0) * c_n.transpose();
    let unf = kron(&w, &DMatrix::identity(model.dims[n0], model.dims[n0]));
    Ok(unfolding_to_vec(&model.dims, n0, &unf))
}

/// `(∏_{k<n} I_k) x R_n` contraction of the cores left of `n0` (0-based).
pub(crate) fn left_interface(tt: &TensorTrain, n0: usize) -> DenseMatrix {
    let mut acc = DMatrix::from_element(1, 1, 1.0);
    for core in &tt.cores()[..n0] {
        let d = core.dims();
        let prod = &acc * right_unfold(core);
        acc = DMatrix::from_vec(acc.nrows() * d[1], d[2], prod.data.into());
    }
    acc
}

/// `R_{n+1} x (∏_{k>n} I_k)` contraction of the cores right of `n0` (0-based).
pub(crate) fn right_interface(tt: &TensorTrain, n0: usize) -> DenseMatrix {
    let mut acc = DMatrix::from_element(1, 1, 1.0);
    for core in tt.cores()[n0 + 1..].iter().rev() {
        let d = core.dims();
        let prod = left_unfold(core) * &acc;
        acc = DMatrix::from_vec(d[0], d[1] * prod.ncols(), prod.data.into());
    }
    acc
}

/// TT design matrix `G_{>n}ᵀ ⊗ I_{I_n} ⊗ G_{<n}` for core `n` (1-based).
pub fn build_u_tt(model: &BayesTDModel, n: usize) -> Result<DenseMatrix> {
    model.expect_tt()?;
    let n0 = check_component(model, n)?;
    let tt = model.mean_tt()?;
    Ok(tt_design(&tt, n0))
}

pub(crate) fn tt_design(tt: &TensorTrain, n0: usize) -> DenseMatrix {
    let l = left_interface(tt, n0);
    let rt = right_interface(tt, n0);
    let d = tt.dims()[n0];
    kron(&rt.transpose(), &kron(&DMatrix::identity(d, d), &l))
}

/// `B ⊗ I_d ⊗ A`.
pub(crate) fn kron3(b: &DenseMatrix, d: usize, a: &DenseMatrix) -> DenseMatrix {
    kron(b, &kron(&DMatrix::identity(d, d), a))
}

/// `(UᵀU, Uᵀy)` for core `n0` (0-based) without forming `U`.
pub(crate) fn tt_normal_equations(
    tt: &TensorTrain,
    n0: usize,
    y: &DVector<f64>,
) -> (DenseMatrix, DVector<f64>) {
    let l = left_interface(tt, n0);
    let rt = right_interface(tt, n0);
    let d = tt.dims()[n0];
    let gram = kron3(&(&rt * rt.transpose()), d, &(l.transpose() * &l));
    (gram, tt_projection(&l, &rt, d, y))
}

/// Least-squares core for site `n0`. Since `UᵀU = (Rt Rtᵀ) ⊗ I ⊗ (LᵀL)`, its
/// pseudo-inverse is `(Rt Rtᵀ)⁺ ⊗ I ⊗ (LᵀL)⁺` and the solve splits into one
/// per interface. The flag reports that a factor was singular.
pub(crate) fn tt_least_squares_core(tt: &TensorTrain, n0: usize, y: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
    let l = left_interface(tt, n0);
    let rt = right_interface(tt, n0);
    let d = tt.dims()[n0];
    let proj = tt_projection(&l, &rt, d, y);
    let (r, r2) = (l.ncols(), rt.nrows());
    let (x, left_singular) = spd_or_pinv_solve(&(l.transpose() * &l), &DMatrix::from_column_slice(r, d * r2, proj.as_slice()))?;
    let x = DMatrix::from_column_slice(r * d, r2, x.as_slice());
    let (xt, right_singular) = spd_or_pinv_solve(&(&rt * rt.transpose()), &x.transpose())?;
    Ok((DVector::from_column_slice(xt.transpose().as_slice()), left_singular || right_singular))
}

fn spd_or_pinv_solve(a: &DenseMatrix, b: &DenseMatrix) -> Result<(DenseMatrix, bool)> {
    if let Ok(f) = SpdFactor::new(a) {
        if f.jitter == 0.0 {
            return Ok((f.solve(b), false));
        }
    }
    let (p, _) = pinv(a)?;
    Ok((p * b, true))
}

/// `Uᵀy` from the two interfaces.
pub(crate) fn tt_projection(l: &DenseMatrix, rt: &DenseMatrix, d: usize, y: &DVector<f64>) -> DVector<f64> {
    let left = l.nrows();
    let y1 = nalgebra::DMatrixView::from_slice(y.as_slice(), left, y.len() / left);
    let t1 = l.transpose() * y1;
    let rn = l.ncols();
    let t1 = DMatrix::from_vec(rn * d, rt.ncols(), t1.data.into());
    let out = t1 * rt.transpose();
    DVector::from_vec(out.data.into())
}

/// Design matrix of any kind for component `n` (1-based).
pub fn build_u(model: &BayesTDModel, n: usize) -> Result<DenseMatrix> {
    match model.kind {
        TDKind::CP { .. } => build_u_cp(model, n),
        TDKind::Tucker { .. } => build_u_tucker(model, n),
        TDKind::TT { .. } => build_u_tt(model, n),
    }
}

/// Normal-equation pieces for component `n0` (0-based) of any kind.
pub(crate) fn normal_equations(
    model: &BayesTDModel,
    n0: usize,
    y: &DVector<f64>,
) -> Result<(DenseMatrix, DVector<f64>)> {
    if let TDKind::TT { .. } = model.kind {
        return Ok(tt_normal_equations(&model.mean_tt()?, n0, y));
    }
    let u = build_u(model, n0 + 1)?;
    Ok((u.transpose() * &u, u.transpose() * y))
}

/// Least-squares core `vec(C) = (G_N ⊗ … ⊗ G_1)⁺ y`. The flag reports a
/// rank-deficient factor, in which case the pseudo-inverse solution is used.
pub fn recompute_tucker_core(model: &BayesTDModel, y: &DVector<f64>) -> Result<(BayesTDModel, bool)> {
    let TDKind::Tucker { ranks, .. } = &model.kind else {
        return Err(Error::Kind { expected: "Tucker", found: model.kind.name() });
    };
    check_measurement(model, y)?;
    let mut c = DenseTensor::new(model.dims.clone(), y.as_slice().to_vec())?;
    let mut deficient = false;
    for n0 in 0..model.order() {
        let (p, flag) = pinv(&model.factor(n0))?;
        deficient |= flag;
        c = mode_n_product(&c, &p, n0 + 1)?;
    }
    if deficient {
        log::warn!("rank-deficient Tucker factor; core solved with the pseudo-inverse");
    }
    let mut out = model.clone();
    out.kind = TDKind::Tucker { ranks: ranks.clone(), core: c };
    Ok((out, deficient))
}

pub(crate) fn check_measurement(model: &BayesTDModel, y: &DVector<f64>) -> Result<()> {
    let j: usize = model.dims.iter().product();
    if y.len() != j {
        return Err(Error::dim(format!(
            "measurement has length {}, model dims {:?} need {j}",
            y.len(),
            model.dims
        )));
    }
    Ok(())
}

/// Dense tensor of the current point estimate.
pub(crate) fn model_tensor(model: &BayesTDModel) -> Result<DenseTensor> {
    match &model.kind {
        TDKind::TT { .. } => Ok(tt_contract(&model.mean_tt()?)),
        TDKind::CP { lambda, .. } => {
            let k = khatri_rao_others(model, 0)?;
            let g = model.factor(0) * DMatrix::from_diagonal(&DVector::from_column_slice(lambda));
            refold(&(g * k.transpose()), 1, &model.dims)
        }
        TDKind::Tucker { core, .. } => {
            let mut t = core.clone();
            for n0 in 0..model.order() {
                t = mode_n_product(&t, &model.factor(n0), n0 + 1)?;
            }
            Ok(t)
        }
    }
}

/// The CP component `n0` with the weights absorbed, `vec(G_n diag λ)`.
pub(crate) fn cp_absorbed_mean(model: &BayesTDModel, n0: usize) -> DVector<f64> {
    let TDKind::CP { lambda, .. } = &model.kind else {
        return model.components[n0].mean().clone();
    };
    let g = model.factor(n0) * DMatrix::from_diagonal(&DVector::from_column_slice(lambda));
    DVector::from_vec(g.data.into())
}

/// Moves the column norms of CP factor `n0` into `λ`. With `replace` the
/// component already carries the weights and `λ` is overwritten; otherwise
/// the norms multiply the existing weights. The covariance follows by
/// congruence with the diagonal scaling. Zero columns are left as they are.
pub(crate) fn split_cp_weights(model: &mut BayesTDModel, n0: usize, replace: bool) {
    let rows = model.dims[n0];
    let f = model.factor(n0);
    let TDKind::CP { lambda, .. } = &mut model.kind else {
        return;
    };
    let mut scale = DVector::from_element(f.len(), 1.0);
    for (r, col) in f.column_iter().enumerate() {
        let norm = col.norm();
        if norm > 0.0 {
            scale.rows_mut(r * rows, rows).fill(1.0 / norm);
            lambda[r] = if replace { norm } else { lambda[r] * norm };
        } else if replace {
            lambda[r] = 0.0;
        }
    }
    let s = scale.clone();
    let s_inv = scale.map(|x| 1.0 / x);
    model.components[n0] = model.components[n0].transformed(
        |m| DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| s[i] * m[(i, j)]),
        |m| DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| s_inv[i] * m[(i, j)]),
    );
}

pub(crate) fn normalize_cp_component(model: &mut BayesTDModel, n0: usize) {
    split_cp_weights(model, n0, false);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::als::model::GaussianComponent;
    use crate::testutil::{random_dense, random_tt, rel_diff};
    use crate::tensor::vectorize;
    use crate::tt::to_site_n_canonical;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn rand_vec(rng: &mut ChaCha8Rng, k: usize) -> DVector<f64> {
        DVector::from_fn(k, |_, _| rng.sample(StandardNormal))
    }

    fn cp_model(rng: &mut ChaCha8Rng, dims: &[usize], rank: usize) -> BayesTDModel {
        let priors = dims
            .iter()
            .map(|&d| GaussianComponent::isotropic(rand_vec(rng, d * rank), 1.0).unwrap())
            .collect();
        let kind = TDKind::CP { rank, lambda: vec![1.0; rank] };
        BayesTDModel::new(kind, dims.to_vec(), 1.0, priors).unwrap()
    }

    fn tucker_model(rng: &mut ChaCha8Rng, dims: &[usize], ranks: &[usize]) -> BayesTDModel {
        let priors = dims
            .iter()
            .zip(ranks)
            .map(|(&d, &r)| GaussianComponent::isotropic(rand_vec(rng, d * r), 1.0).unwrap())
            .collect();
        let core = random_dense(rng, ranks);
        let kind = TDKind::Tucker { ranks: ranks.to_vec(), core };
        BayesTDModel::new(kind, dims.to_vec(), 1.0, priors).unwrap()
    }

    fn cp_oracle(model: &BayesTDModel) -> DenseTensor {
        let TDKind::CP { rank, lambda } = &model.kind else { unreachable!() };
        DenseTensor::from_fn(model.dims.clone(), |ix| {
            (0..*rank)
                .map(|r| lambda[r] * (0..ix.len()).map(|n| model.factor(n)[(ix[n], r)]).product::<f64>())
                .sum()
        })
        .unwrap()
    }

    #[test]
    fn cp_rank_one_two_way() {
        let a = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let b = DVector::from_vec(vec![2.0, -1.0]);
        let priors = vec![
            GaussianComponent::isotropic(a.clone(), 1.0).unwrap(),
            GaussianComponent::isotropic(b.clone(), 1.0).unwrap(),
        ];
        let model = BayesTDModel::new(TDKind::CP { rank: 1, lambda: vec![1.0] }, vec![3, 2], 1.0, priors).unwrap();
        let u = build_u_cp(&model, 1).unwrap();
        let outer = &a * b.transpose();
        let g = cp_absorbed_mean(&model, 0);
        assert!(rel_diff((u * g).as_slice(), outer.as_slice()) < 1e-14);
    }

    #[test]
    fn cp_unit_factors_give_unit_columns() {
        let priors = vec![
            GaussianComponent::isotropic(DVector::from_vec(vec![1.0, 0.0]), 1.0).unwrap(),
            GaussianComponent::isotropic(DVector::from_vec(vec![0.0, 1.0, 0.0]), 1.0).unwrap(),
        ];
        let model = BayesTDModel::new(TDKind::CP { rank: 1, lambda: vec![1.0] }, vec![2, 3], 1.0, priors).unwrap();
        let u = build_u_cp(&model, 1).unwrap();
        for col in u.column_iter() {
            assert_eq!(col.iter().filter(|&&x| x == 1.0).count(), 1);
            assert_eq!(col.iter().filter(|&&x| x == 0.0).count(), col.len() - 1);
        }
    }

    #[test]
    fn multilinearity_all_kinds() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cp = cp_model(&mut rng, &[3, 4, 2], 3);
        let dense = cp_oracle(&cp);
        assert!(rel_diff(model_tensor(&cp).unwrap().data(), dense.data()) < 1e-12);
        for n in 1..=3 {
            let u = build_u_cp(&cp, n).unwrap();
            let v = u * cp_absorbed_mean(&cp, n - 1);
            assert!(rel_diff(v.as_slice(), dense.data()) < 1e-12);
        }

        let tk = tucker_model(&mut rng, &[3, 4, 2], &[2, 3, 2]);
        let dense = model_tensor(&tk).unwrap();
        for n in 1..=3 {
            let u = build_u_tucker(&tk, n).unwrap();
            assert_eq!(u.shape(), (24, tk.dims[n - 1] * [2, 3, 2][n - 1]));
            let v = u * tk.components[n - 1].mean();
            assert!(rel_diff(v.as_slice(), dense.data()) < 1e-12);
        }

        let tt = random_tt(&mut rng, &[3, 4, 2], &[1, 2, 2, 1]);
        let model = BayesTDModel::tt_isotropic(&tt, 1.0, 1.0).unwrap();
        let dense = tt_contract(&tt);
        for n in 1..=3 {
            let u = build_u_tt(&model, n).unwrap();
            let v = &u * model.components[n - 1].mean();
            assert!(rel_diff(v.as_slice(), dense.data()) < 1e-12);
            let y = rand_vec(&mut rng, 24);
            let (gram, proj) = tt_normal_equations(&tt, n - 1, &y);
            assert!(rel_diff(gram.as_slice(), (u.transpose() * &u).as_slice()) < 1e-12);
            assert!(rel_diff(proj.as_slice(), (u.transpose() * &y).as_slice()) < 1e-12);
        }
    }

    #[test]
    fn factored_least_squares_matches_pseudo_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tt = random_tt(&mut rng, &[3, 4, 3], &[1, 3, 3, 1]);
        let y = rand_vec(&mut rng, 36);
        for singular in [false, true] {
            if singular {
                // Two equal slices of core 1 make the left interface of core 2 rank deficient.
                let mut c = tt.core(0).clone();
                for b in 0..3 {
                    let v = c.get(&[0, 0, b]);
                    c.data_mut()[1 + 3 * b] = v;
                    c.data_mut()[2 + 3 * b] = v;
                }
                tt.set_core(0, c).unwrap();
            }
            let (g, flag) = tt_least_squares_core(&tt, 1, &y).unwrap();
            assert_eq!(flag, singular);
            let (gram, proj) = tt_normal_equations(&tt, 1, &y);
            let expect = pinv(&gram).unwrap().0 * proj;
            assert!(rel_diff(g.as_slice(), expect.as_slice()) < 1e-8, "singular {singular}");
        }
    }

    #[test]
    fn wrong_kind_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cp = cp_model(&mut rng, &[2, 2], 1);
        assert!(matches!(build_u_tt(&cp, 1), Err(Error::Kind { .. })));
        assert!(matches!(build_u_tucker(&cp, 1), Err(Error::Kind { .. })));
        let tt = BayesTDModel::tt_isotropic(&random_tt(&mut rng, &[2, 2], &[1, 1, 1]), 1.0, 1.0).unwrap();
        assert!(matches!(build_u_cp(&tt, 1), Err(Error::Kind { .. })));
        assert!(matches!(build_u_tt(&tt, 3), Err(Error::ModeIndex { .. })));
    }

    #[test]
    fn tt_first_core_of_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tt = random_tt(&mut rng, &[3, 2], &[1, 2, 1]);
        let u = tt_design(&tt, 0);
        let g2 = right_unfold(tt.core(1));
        assert!(rel_diff(u.as_slice(), kron(&g2.transpose(), &DMatrix::identity(3, 3)).as_slice()) < 1e-15);
    }

    #[test]
    fn tt_canonical_design_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tt = random_tt(&mut rng, &[3, 4, 3], &[1, 3, 3, 1]);
        for n in 1..=3 {
            let c = to_site_n_canonical(&tt, n).unwrap();
            let u = tt_design(&c, n - 1);
            let g = u.transpose() * &u;
            assert!((g - DMatrix::identity(u.ncols(), u.ncols())).norm() < 1e-12);
        }
    }

    #[test]
    fn tt_rank_one_design_is_kron_of_vectors() {
        let tt = TensorTrain::rank_one(&[vec![1.0, 2.0], vec![1.0, -1.0, 0.5], vec![3.0, 1.0]]).unwrap();
        let u = tt_design(&tt, 1);
        assert_eq!(u.shape(), (12, 3));
        for i in 0..3 {
            let col = u.column(i);
            assert_eq!(col.iter().filter(|&&x| x != 0.0).count(), 4);
        }
    }

    #[test]
    fn tucker_orthonormal_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dims = [3, 2, 2];
        let mut model = tucker_model(&mut rng, &dims, &dims);
        for n0 in 0..3 {
            let (q, _) = crate::linalg::thin_qr(&model.factor(n0));
            model.components[n0] = model.components[n0].clone().with_mean(DVector::from_vec(q.data.into())).unwrap();
        }
        let TDKind::Tucker { core, ranks } = &model.kind else { unreachable!() };
        let unf = mode_n_unfold(core, 1).unwrap();
        let (q, _) = crate::linalg::thin_qr(&unf.transpose());
        model.kind = TDKind::Tucker { ranks: ranks.clone(), core: refold(&q.transpose(), 1, ranks).unwrap() };
        let u = build_u_tucker(&model, 1).unwrap();
        assert!((u.transpose() * &u - DMatrix::identity(9, 9)).norm() < 1e-12);

        let y = rand_vec(&mut rng, 12);
        let (out, deficient) = recompute_tucker_core(&model, &y).unwrap();
        assert!(!deficient);
        let mut big = DMatrix::from_element(1, 1, 1.0);
        for n0 in 0..3 {
            big = kron(&model.factor(n0), &big);
        }
        let expected = big.transpose() * &y;
        let TDKind::Tucker { core, .. } = &out.kind else { unreachable!() };
        assert!(rel_diff(core.data(), expected.as_slice()) < 1e-12);
    }

    #[test]
    fn tucker_core_recovered_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = tucker_model(&mut rng, &[4, 3, 3], &[2, 2, 2]);
        let y = vectorize(&model_tensor(&model).unwrap());
        let (out, _) = recompute_tucker_core(&model, &y).unwrap();
        let (TDKind::Tucker { core: a, .. }, TDKind::Tucker { core: b, .. }) = (&out.kind, &model.kind) else {
            unreachable!()
        };
        assert!(rel_diff(a.data(), b.data()) < 1e-10);
        let (zero, _) = recompute_tucker_core(&model, &DVector::zeros(36)).unwrap();
        let TDKind::Tucker { core, .. } = &zero.kind else { unreachable!() };
        assert!(core.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn tucker_rank_deficiency_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut model = tucker_model(&mut rng, &[3, 3], &[2, 2]);
        let col = rand_vec(&mut rng, 3);
        let dup = DVector::from_iterator(6, col.iter().chain(col.iter()).cloned());
        model.components[0] = model.components[0].clone().with_mean(dup).unwrap();
        let (_, deficient) = recompute_tucker_core(&model, &rand_vec(&mut rng, 9)).unwrap();
        assert!(deficient);
    }
}
