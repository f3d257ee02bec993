use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{fmt_f, image_vector, par_map, random_prior, rel_error, run_samples, stream_rng, Algorithm, SnrConvention, Stream, Table};
use crate::als::{AlsOptions, BayesTDModel, StoppingRule, TDKind};
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;
use crate::tt::{tt_contract, tt_svd, TensorTrain, Truncation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageConfig {
    /// Grayscale PGM, or PPM converted to luma. Relative paths resolve
    /// against the config file's directory.
    pub image: PathBuf,
    pub seed: u64,
    pub tt_eps: f64,
    pub snr_db: f64,
    pub snr_convention: SnrConvention,
    pub n_samples: usize,
    /// Sample counts at which the error is reported.
    pub report_samples: Vec<usize>,
    pub algorithms: Vec<Algorithm>,
    /// Isotropic prior variance around an `N(0, I)` prior mean.
    pub prior_var: f64,
    pub sweeps: usize,
    pub trials: usize,
    pub threads: usize,
}

impl Default for ImageConfig {
    fn default() -> Self {
        Self {
            image: PathBuf::new(),
            seed: 0,
            tt_eps: 0.1,
            snr_db: 0.0,
            snr_convention: SnrConvention::Truth,
            n_samples: 10,
            report_samples: vec![1, 10],
            algorithms: vec![Algorithm::Bayes, Algorithm::Conventional],
            prior_var: 1000.0 * 1000.0,
            sweeps: 3,
            trials: 1,
            threads: 1,
        }
    }
}

impl ImageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.n_samples == 0 || self.sweeps == 0 {
            return Err(Error::Parameter("trials, n_samples and sweeps must be at least 1".into()));
        }
        if !(self.tt_eps > 0.0 && self.tt_eps <= 1.0) {
            return Err(Error::Parameter(format!("tt_eps must lie in (0, 1], got {}", self.tt_eps)));
        }
        if !(self.prior_var > 0.0) {
            return Err(Error::Parameter("prior_var must be positive".into()));
        }
        if self.report_samples.iter().any(|&k| k == 0 || k > self.n_samples) {
            return Err(Error::Parameter("report_samples must lie in 1..=n_samples".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Parameter("no algorithm selected".into()));
        }
        Ok(())
    }

    /// Parses a config; a relative image path is taken relative to `base`.
    pub fn from_json(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text).map_err(|e| Error::Format(format!("image config: {e}")))?;
        if let Some(b) = base {
            if cfg.image.is_relative() {
                cfg.image = b.join(&cfg.image);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageRow {
    pub algorithm: Algorithm,
    pub trial: usize,
    pub n_samples: usize,
    pub eps_truth: f64,
}

#[derive(Clone, Debug)]
pub struct ImageResult {
    pub ranks: Vec<usize>,
    /// Error of the low-rank ground truth against the original image.
    pub lowrank_error: f64,
    pub rows: Vec<ImageRow>,
    pub truth: DMatrix<f64>,
    /// First noisy sample of trial 0.
    pub noisy: DMatrix<f64>,
    /// Final reconstruction of trial 0 per algorithm.
    pub reconstructions: Vec<(Algorithm, DMatrix<f64>)>,
}

impl ImageResult {
    pub fn errors(&self, algorithm: Algorithm, n_samples: usize) -> Vec<f64> {
        self.rows.iter().filter(|r| r.algorithm == algorithm && r.n_samples == n_samples).map(|r| r.eps_truth).collect()
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&["algorithm", "trial", "n_samples", "eps_truth"]);
        for r in &self.rows {
            t.rows.push(vec![r.algorithm.name().into(), r.trial.to_string(), r.n_samples.to_string(), fmt_f(r.eps_truth)]);
        }
        t
    }
}

/// Mode sizes for a `4^k × 4^k` image.
pub fn image_dims(rows: usize, cols: usize) -> Result<Vec<usize>> {
    let mut k = 0;
    let mut side = 1;
    while side < rows {
        side *= 4;
        k += 1;
    }
    if rows != cols || side != rows || k == 0 {
        return Err(Error::dim(format!("image is {rows}x{cols}; a square image with side 4^k is required")));
    }
    Ok(vec![4; 2 * k])
}

/// Reads a PGM (or PPM, converted to luma) as a matrix of pixel values.
pub fn read_gray_image(path: &Path) -> Result<DMatrix<f64>> {
    let img = image::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let g = img.to_luma8();
    let (w, h) = g.dimensions();
    Ok(DMatrix::from_fn(h as usize, w as usize, |r, c| g.get_pixel(c as u32, r as u32)[0] as f64))
}

/// Writes a matrix as an 8-bit binary PGM, clamping to `[0, 255]`.
pub fn write_gray_image(path: &Path, img: &DMatrix<f64>) -> Result<()> {
    let (h, w) = img.shape();
    let buf = image::GrayImage::from_fn(w as u32, h as u32, |c, r| {
        image::Luma([img[(r as usize, c as usize)].round().clamp(0.0, 255.0) as u8])
    });
    let file = std::fs::File::create(path)?;
    let enc = image::codecs::pnm::PnmEncoder::new(std::io::BufWriter::new(file))
        .with_subtype(image::codecs::pnm::PnmSubtype::Graymap(image::codecs::pnm::SampleEncoding::Binary));
    buf.write_with_encoder(enc).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn to_image(tt: &TensorTrain, side: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(side, side, tt_contract(tt).data())
}

/// Reshapes the image into a `2k`-way tensor of 4s, takes its TT-SVD at
/// `tt_eps` as ground truth, draws noisy samples and reconstructs them with
/// each algorithm from a random prior.
pub fn image_pipeline(img: &DMatrix<f64>, cfg: &ImageConfig) -> Result<ImageResult> {
    cfg.validate()?;
    let dims = image_dims(img.nrows(), img.ncols())?;
    let side = img.nrows();
    let tensor = DenseTensor::new(dims.clone(), img.as_slice().to_vec())?;
    let truth_tt = tt_svd(&tensor, &Truncation::Tolerance(cfg.tt_eps))?;
    let ranks = truth_tt.ranks();
    let truth = to_image(&truth_tt, side);
    let y_truth = image_vector(&truth);
    let lowrank_error = rel_error(truth.as_slice(), img.as_slice())?;
    log::info!("image {side}x{side}: TT ranks {ranks:?}, low-rank error {lowrank_error:.4}");

    let max_report = *cfg.report_samples.iter().max().unwrap_or(&cfg.n_samples);
    let per_trial = par_map(cfg.trials, cfg.threads, |t| {
        let mut noise_rng = stream_rng(cfg.seed, Stream::Noise, t as u64);
        let mut samples: Vec<DVector<f64>> = Vec::with_capacity(cfg.n_samples);
        let mut var = 0.0;
        for _ in 0..cfg.n_samples {
            let (y, v) = super::make_noisy_sample(&y_truth, cfg.snr_db, cfg.snr_convention, &mut noise_rng)?;
            samples.push(y);
            var += v;
        }
        var /= cfg.n_samples as f64;
        let mut rows = Vec::new();
        let mut recon = Vec::new();
        for &alg in &cfg.algorithms {
            let mut prior_rng = stream_rng(cfg.seed, Stream::Prior, t as u64);
            let priors = random_prior(&dims, &ranks, cfg.prior_var, &mut prior_rng)?;
            let model = BayesTDModel::new(TDKind::TT { ranks: ranks.clone() }, dims.clone(), var, priors)?;
            let opts = AlsOptions::new(StoppingRule::fixed(cfg.sweeps)).brief();
            let mut last = None;
            run_samples(alg, model, &samples[..cfg.n_samples.max(max_report)], &opts, |k, tt| {
                if cfg.report_samples.contains(&k) {
                    let eps = rel_error(tt_contract(tt).data(), y_truth.as_slice())?;
                    log::info!("trial {t} {}: {k} samples, eps_truth {eps:.4}", alg.name());
                    rows.push(ImageRow { algorithm: alg, trial: t, n_samples: k, eps_truth: eps });
                }
                if k == cfg.n_samples {
                    last = Some(to_image(tt, side));
                }
                Ok(())
            })?;
            if t == 0 {
                recon.push((alg, last.expect("at least one sample")));
            }
        }
        let noisy = (t == 0).then(|| DMatrix::from_column_slice(side, side, samples[0].as_slice()));
        Ok((rows, recon, noisy))
    })?;
    let mut rows = Vec::new();
    let mut reconstructions = Vec::new();
    let mut noisy = None;
    for (r, rec, n) in per_trial {
        rows.extend(r);
        reconstructions.extend(rec);
        if n.is_some() {
            noisy = n;
        }
    }
    Ok(ImageResult { ranks, lowrank_error, rows, truth, noisy: noisy.expect("trial 0 ran"), reconstructions })
}
