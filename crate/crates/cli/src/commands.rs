use std::path::{Path, PathBuf};

use serde_json::json;

use ttbayes::als::{bayes_als, conventional_als, AlsOptions, BayesTDModel, StoppingRule, TDKind};
use ttbayes::experiments::{
    image_pipeline, random_prior, read_gray_image, rel_error, run_comparison, run_convergence, run_covariance_study,
    stream_rng, write_gray_image, ExperimentConfig, ImageConfig, Stream, Table,
};
use ttbayes::io::{write_vector_csv, BinaryObject};
use ttbayes::ortho::bayes_als_ortho;
use ttbayes::tensor::vectorize;
use ttbayes::tt::{tt_contract, tt_svd, ttm_diagonal, Truncation};
use ttbayes::unscented::{ut_tt, UTParams, UTRounding};
use ttbayes::{DenseTensor, Error};

use crate::manifest::Run;
use crate::{Alg, Cli, CliError, Command, ExperimentKind};

pub const SEED_ENV: &str = "TTBAYES_SEED";
const FLAT_PRIOR_VAR: f64 = 1e12;
const TRAIN_PRIOR_VAR: f64 = 1.0;

pub fn name(cmd: &Command) -> &'static str {
    match cmd {
        Command::TtSvd { .. } => "tt-svd",
        Command::Decompose { .. } => "decompose",
        Command::Ut { .. } => "ut",
        Command::Experiment { .. } => "experiment",
        Command::Inspect { .. } => "inspect",
    }
}

pub fn dispatch(cli: &Cli, run: &mut Run) -> Result<(), CliError> {
    match &cli.command {
        Command::TtSvd { tensor, eps, ranks, output } => tt_svd_cmd(cli, run, tensor, *eps, ranks.clone(), output.as_deref()),
        Command::Decompose { .. } => decompose(cli, run),
        Command::Ut { model, alpha, beta, kappa, mean_tol, cov_tol, output } => {
            let params = UTParams { alpha: *alpha, beta: *beta, kappa: *kappa };
            let rounding = UTRounding { mean: *mean_tol, cov: *cov_tol };
            ut_cmd(cli, run, model, params, rounding, output.as_deref())
        }
        Command::Experiment { kind, config } => experiment(cli, run, *kind, config),
        Command::Inspect { file, rewrite } => inspect(cli, run, file, rewrite.as_deref()),
    }
}

fn seed_override() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into())
}

/// `output` without extension, else the input's stem in `--out-dir` or next
/// to the input.
fn output_stem(cli: &Cli, input: &Path, output: Option<&Path>) -> PathBuf {
    if let Some(o) = output {
        return o.with_extension("");
    }
    let dir = cli.out_dir.clone().unwrap_or_else(|| input.parent().map(Path::to_path_buf).unwrap_or_default());
    dir.join(file_stem(input))
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn read_object(path: &Path) -> Result<BinaryObject, CliError> {
    BinaryObject::read(path).map_err(|e| match e {
        Error::Io(io) => Error::Format(format!("{}: {io}", path.display())).into(),
        other => other.into(),
    })
}

fn read_tensor(path: &Path) -> Result<DenseTensor, CliError> {
    match read_object(path)? {
        BinaryObject::Tensor(t) => Ok(t),
        other => Err(Error::Format(format!("{}: expected a dense tensor, found {}", path.display(), kind_name(&other))).into()),
    }
}

fn kind_name(obj: &BinaryObject) -> &'static str {
    match obj {
        BinaryObject::Tensor(_) => "a dense tensor",
        BinaryObject::Train(_) => "a tensor train",
        BinaryObject::Matrix(_) => "a TT-matrix",
        BinaryObject::Model(_) => "a model",
    }
}

fn write_object(run: &mut Run, obj: &BinaryObject, path: &Path) -> Result<(), CliError> {
    ensure_parent(path)?;
    obj.write(path)?;
    run.output(path);
    Ok(())
}

fn write_table(run: &mut Run, table: &Table, path: &Path) -> Result<(), CliError> {
    ensure_parent(path)?;
    table.write_csv(path)?;
    run.output(path);
    Ok(())
}

fn tt_svd_cmd(
    cli: &Cli,
    run: &mut Run,
    input: &Path,
    eps: Option<f64>,
    ranks: Option<Vec<usize>>,
    output: Option<&Path>,
) -> Result<(), CliError> {
    let stem = output_stem(cli, input, output);
    let out = output.map(Path::to_path_buf).unwrap_or_else(|| with_suffix(&stem, ".ttt"));
    run.set_path(with_suffix(&stem, ".manifest.json"));
    run.set_config(&json!({ "tensor": input, "eps": eps, "ranks": ranks, "output": out }))?;
    let trunc = match (eps, ranks) {
        (Some(e), None) => Truncation::Tolerance(e),
        (None, Some(r)) => Truncation::Ranks(r),
        _ => return Err(CliError::Usage("give exactly one of --eps and --ranks".into())),
    };
    let t = run.stage("read", || read_tensor(input))?;
    let tt = run.stage("tt_svd", || Ok(tt_svd(&t, &trunc)?))?;
    let err = rel_error(tt_contract(&tt).data(), t.data())?;
    log::info!("TT ranks {:?}, relative error {err:.4e}", tt.ranks());
    let obj = BinaryObject::Train(tt);
    write_object(run, &obj, &out)
}

fn decompose(cli: &Cli, run: &mut Run) -> Result<(), CliError> {
    let Command::Decompose {
        tensor,
        alg,
        prior,
        sigma2,
        ranks,
        prior_var,
        seed,
        sweeps,
        meas_tol,
        cov_tol,
        objective_tol,
        output,
    } = &cli.command
    else {
        unreachable!()
    };
    let stem = output_stem(cli, tensor, output.as_deref());
    run.set_path(with_suffix(&stem, ".manifest.json"));
    let seed = seed_override()?.unwrap_or(*seed);
    run.manifest.seed = Some(seed);
    let stop = StoppingRule { max_sweeps: *sweeps, meas_tol: Some(*meas_tol), cov_tol: *cov_tol, objective_tol: *objective_tol };
    let flat = prior == "flat";
    let var = prior_var.unwrap_or(if flat { FLAT_PRIOR_VAR } else { TRAIN_PRIOR_VAR });
    run.set_config(&json!({
        "tensor": tensor,
        "alg": format!("{alg:?}"),
        "prior": prior,
        "sigma2": sigma2,
        "ranks": ranks,
        "prior_var": var,
        "seed": seed,
        "stop": stop,
        "output": stem,
    }))?;
    if *sweeps == 0 {
        return Err(CliError::Usage("--sweeps must be at least 1".into()));
    }

    let t = run.stage("read", || read_tensor(tensor))?;
    let dims = t.dims().to_vec();
    let y = vectorize(&t);
    // Noise variance only shapes the Bayesian updates; ALS ignores it.
    let noise = |own: Option<f64>| -> Result<f64, CliError> {
        match (sigma2.or(own), alg) {
            (Some(s), _) => Ok(s),
            (None, Alg::Als) => Ok(1.0),
            (None, _) => Err(CliError::Usage("Bayesian decomposition needs --sigma2 or a model prior".into())),
        }
    };
    let model = run.stage("prior", || {
        if flat {
            let ranks = ranks.clone().ok_or_else(|| CliError::Usage("a flat prior needs --ranks".into()))?;
            if ranks.len() != dims.len() + 1 {
                return Err(CliError::Usage(format!("--ranks needs {} entries for a {}-way tensor", dims.len() + 1, dims.len())));
            }
            let priors = random_prior(&dims, &ranks, var, &mut stream_rng(seed, Stream::Prior, 0))?;
            return Ok(BayesTDModel::new(TDKind::TT { ranks }, dims.clone(), noise(None)?, priors)?);
        }
        match read_object(Path::new(prior))? {
            BinaryObject::Train(tt) => Ok(BayesTDModel::tt_isotropic(&tt, var, noise(None)?)?),
            BinaryObject::Model(mut m) => {
                m.noise_var = noise(Some(m.noise_var))?;
                Ok(m)
            }
            other => Err(Error::Format(format!("{prior}: expected a tensor train or a model, found {}", kind_name(&other))).into()),
        }
    })?;
    if model.dims != dims {
        return Err(Error::Dimension(format!("prior has dims {:?}, tensor has {:?}", model.dims, dims)).into());
    }

    let opts = AlsOptions::new(stop);
    let trace_path = with_suffix(&stem, ".trace.csv");
    match alg {
        Alg::Als => {
            let init = model.mean_tt()?;
            let (tt, trace) = run.stage("als", || Ok(conventional_als(&init, &y, *sweeps, false, None)?))?;
            log::info!("eps_meas {:.6e} after {} sweeps", trace.last().map_or(f64::NAN, |r| r.eps_meas), *sweeps);
            write_object(run, &BinaryObject::Train(tt), &with_suffix(&stem, ".ttt"))?;
            trace.write_csv(&trace_path)?;
            run.output(&trace_path);
        }
        Alg::Bayes | Alg::BayesOrtho => {
            let (fitted, trace) = run.stage("bayes_als", || {
                Ok(if *alg == Alg::Bayes { bayes_als(model, &y, &opts)? } else { bayes_als_ortho(model, &y, &opts)? })
            })?;
            log::info!("eps_meas {:.6e} after {} sweeps", trace.last().map_or(f64::NAN, |r| r.eps_meas), trace.per_sweep().len());
            if matches!(fitted.kind, TDKind::TT { .. }) {
                write_object(run, &BinaryObject::Train(fitted.mean_tt()?), &with_suffix(&stem, ".ttt"))?;
            }
            write_object(run, &BinaryObject::Model(fitted), &with_suffix(&stem, ".tbm"))?;
            trace.write_csv(&trace_path)?;
            run.output(&trace_path);
        }
    }
    Ok(())
}

fn ut_cmd(
    cli: &Cli,
    run: &mut Run,
    input: &Path,
    params: UTParams,
    rounding: UTRounding,
    output: Option<&Path>,
) -> Result<(), CliError> {
    let stem = output_stem(cli, input, output);
    run.set_path(with_suffix(&stem, ".manifest.json"));
    run.set_config(&json!({ "model": input, "ut": params, "rounding": rounding, "output": stem }))?;
    let model = match run.stage("read", || read_object(input))? {
        BinaryObject::Model(m) => m,
        other => return Err(Error::Format(format!("{}: expected a model, found {}", input.display(), kind_name(&other))).into()),
    };
    let (mean, cov) = run.stage("ut", || Ok(ut_tt(&model, &params, &rounding)?))?;
    log::info!("UT mean ranks {:?}, covariance ranks {:?}", mean.ranks(), cov.ranks());
    let var = tt_contract(&ttm_diagonal(&cov)?);
    write_object(run, &BinaryObject::Train(mean), &with_suffix(&stem, ".ut_mean.ttt"))?;
    write_object(run, &BinaryObject::Matrix(cov), &with_suffix(&stem, ".ut_cov.ttm"))?;
    let var_path = with_suffix(&stem, ".ut_var.csv");
    write_vector_csv(&var_path, "variance", var.data())?;
    run.output(&var_path);
    Ok(())
}

fn experiment(cli: &Cli, run: &mut Run, kind: ExperimentKind, config: &Path) -> Result<(), CliError> {
    let kind_str = match kind {
        ExperimentKind::Convergence => "convergence",
        ExperimentKind::Covariance => "covariance",
        ExperimentKind::Comparison => "comparison",
        ExperimentKind::Image => "image",
    };
    let dir = out_dir(cli);
    run.set_path(dir.join(format!("{kind_str}.manifest.json")));
    let text = std::fs::read_to_string(config).map_err(|e| Error::Format(format!("{}: {e}", config.display())))?;
    let seed = seed_override()?;

    if kind == ExperimentKind::Image {
        let mut cfg = ImageConfig::from_json(&text, config.parent())?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(t) = cli.threads {
            cfg.threads = t;
        }
        run.manifest.seed = Some(cfg.seed);
        run.set_config(&cfg)?;
        let img = run.stage("read", || Ok(read_gray_image(&cfg.image)?))?;
        let res = run.stage("image", || Ok(image_pipeline(&img, &cfg)?))?;
        for &k in &cfg.report_samples {
            for &a in &cfg.algorithms {
                let e = res.errors(a, k);
                log::info!("{} after {k} samples: eps_truth {:.4}", a.name(), e.iter().sum::<f64>() / e.len() as f64);
            }
        }
        write_table(run, &res.table(), &dir.join("image_errors.csv"))?;
        let mut images = vec![("truth".to_string(), &res.truth), ("noisy".to_string(), &res.noisy)];
        images.extend(res.reconstructions.iter().map(|(a, m)| (format!("recon_{}", a.name()), m)));
        for (name, m) in images {
            let path = dir.join(format!("image_{name}.pgm"));
            ensure_parent(&path)?;
            write_gray_image(&path, m)?;
            run.output(&path);
        }
        return Ok(());
    }

    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    run.manifest.seed = Some(cfg.seed);
    run.set_config(&cfg)?;
    let csv = dir.join(format!("{kind_str}.csv"));
    match kind {
        ExperimentKind::Convergence => {
            let res = run.stage("convergence", || Ok(run_convergence(&cfg)?))?;
            write_table(run, &res.table(), &csv)?;
        }
        ExperimentKind::Covariance => {
            let res = run.stage("covariance", || Ok(run_covariance_study(&cfg)?))?;
            write_table(run, &res.table(), &csv)?;
        }
        ExperimentKind::Comparison => {
            let res = run.stage("comparison", || Ok(run_comparison(&cfg)?))?;
            write_table(run, &res.table(), &csv)?;
            write_table(run, &res.summary(), &dir.join("comparison_summary.csv"))?;
        }
        ExperimentKind::Image => unreachable!(),
    }
    Ok(())
}

fn inspect(cli: &Cli, run: &mut Run, file: &Path, rewrite: Option<&Path>) -> Result<(), CliError> {
    let stem = output_stem(cli, file, None);
    run.set_path(with_suffix(&stem, ".inspect.manifest.json"));
    run.set_config(&json!({ "file": file, "rewrite": rewrite }))?;
    let obj = run.stage("read", || read_object(file))?;
    println!("{}", obj.describe());
    if let Some(out) = rewrite {
        write_object(run, &obj, out)?;
    }
    Ok(())
}
