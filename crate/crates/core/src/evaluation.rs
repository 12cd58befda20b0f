//! RMSE, benchmark reports, error maps and the ablation harness.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb};

use crate::data::{denormalize, prepare_pair, write_depth_png, DatasetName, DegradationSpec, RgbdPair, ValueKind};
use crate::error::{JiifError, Result};
use crate::interpolation::bicubic_resample;
use crate::jiif_decoder::{DecoderMode, WeightStrategy};
use crate::model::{JiifModel, ModelConfig};
use crate::raster::RasterImage;
use crate::scalar::Scalar;
use crate::seed::{derive_seed, tags};
use crate::training::{train, Checkpoint, Silent, TrainConfig, TrainObserver};

/// Physical units per 16-bit step in saved prediction images.
pub const PRED_PNG_STEP: f64 = 0.1;

/// Root-mean-square difference, skipping `crop` pixels on every border.
pub fn rmse<T: Scalar>(pred: &RasterImage<T>, gt: &RasterImage<T>, crop: usize) -> Result<f64> {
    if pred.dims() != gt.dims() || pred.channels() != gt.channels() {
        return Err(JiifError::invalid(format!(
            "rmse needs equal sizes, got {:?} and {:?}",
            pred.array().dim(),
            gt.array().dim()
        )));
    }
    let (h, w) = pred.dims();
    if 2 * crop >= h || 2 * crop >= w {
        return Err(JiifError::invalid(format!("crop {crop} leaves no pixels of {h}x{w}")));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in crop..h - crop {
        for x in crop..w - crop {
            for c in 0..pred.channels() {
                let d = pred.get(y, x, c).to_f64_lossy() - gt.get(y, x, c).to_f64_lossy();
                sum += d * d;
                n += 1;
            }
        }
    }
    Ok((sum / n as f64).sqrt())
}

pub fn unit_label(kind: ValueKind) -> &'static str {
    match kind {
        ValueKind::Depth => "cm",
        ValueKind::Disparity => "disparity",
    }
}

/// What produces HR predictions from an LR input.
pub enum Predictor<'a, T> {
    Bicubic,
    Model { model: &'a JiifModel<T>, chunk: usize },
}

impl<T: Scalar> Predictor<'_, T> {
    pub fn label(&self) -> String {
        match self {
            Predictor::Bicubic => "Bicubic".into(),
            Predictor::Model { model, .. } => model_label(model.config()),
        }
    }

    /// Normalized HR prediction.
    pub fn predict(&self, lr: &RasterImage<T>, guide: &RasterImage<T>) -> Result<RasterImage<T>> {
        match self {
            Predictor::Bicubic => bicubic_resample(lr, guide.height(), guide.width()),
            Predictor::Model { model, chunk } => model.full_inference(lr, guide, *chunk),
        }
    }
}

pub fn model_label(cfg: &ModelConfig) -> String {
    match cfg.strategy {
        WeightStrategy::GraphAttention => format!(
            "{}{}",
            match cfg.mode {
                DecoderMode::Separate => "separate",
                _ => "joint",
            },
            if cfg.use_residual { "+residual" } else { "" }
        ),
        s => format!("{}{}", s.key(), if cfg.use_residual { "+residual" } else { "" }),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageResult {
    pub id: String,
    pub rmse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleResult {
    pub scale: usize,
    pub noise_sigma: f64,
    pub images: Vec<ImageResult>,
}

impl ScaleResult {
    /// Mean of the per-image values.
    pub fn average(&self) -> f64 {
        self.images.iter().map(|r| r.rmse).sum::<f64>() / self.images.len().max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkReport {
    pub method: String,
    pub dataset: String,
    pub unit: String,
    pub crop: usize,
    pub model: Option<ModelConfig>,
    pub scales: Vec<ScaleResult>,
}

impl BenchmarkReport {
    pub fn average(&self, scale: usize) -> Option<f64> {
        self.scales.iter().find(|s| s.scale == scale).map(ScaleResult::average)
    }

    /// `key=value` records, one per line.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "method={}", self.method);
        let _ = writeln!(out, "dataset={}", self.dataset);
        let _ = writeln!(out, "unit={}", self.unit);
        let _ = writeln!(out, "crop={}", self.crop);
        if let Some(m) = &self.model {
            let _ = writeln!(
                out,
                "model.feature_dim={} model.blocks={} model.mode={} model.strategy={} model.residual={}",
                m.feature_dim, m.num_residual_blocks, m.mode, m.strategy.key(), m.use_residual
            );
        }
        for s in &self.scales {
            for r in &s.images {
                let _ = writeln!(
                    out,
                    "scale={} sigma={} image={} rmse={:.6}",
                    s.scale, s.noise_sigma, r.id, r.rmse
                );
            }
            let _ = writeln!(
                out,
                "scale={} sigma={} images={} average_rmse={:.6}",
                s.scale,
                s.noise_sigma,
                s.images.len(),
                s.average()
            );
        }
        out
    }

    /// One row per method, one column per scale.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = self.scales.iter().map(|s| format!("x{}", s.scale)).collect();
        let _ = writeln!(out, "{} average RMSE ({})", self.dataset, self.unit);
        let _ = writeln!(out, "{:<24}{}", "Method", header.iter().map(|h| format!("{h:>10}")).collect::<String>());
        let _ = writeln!(
            out,
            "{:<24}{}",
            self.method,
            self.scales.iter().map(|s| format!("{:>10.2}", s.average())).collect::<String>()
        );
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| JiifError::io(dir, e))?;
        }
        let text = format!("{}\n{}", self.to_records(), prefix_lines(&self.render_table(), "# "));
        std::fs::write(path, text).map_err(|e| JiifError::io(path, e))
    }
}

fn prefix_lines(s: &str, p: &str) -> String {
    s.lines().map(|l| format!("{p}{l}\n")).collect()
}

#[derive(Clone, Debug)]
pub struct BenchmarkOptions {
    pub dataset: DatasetName,
    pub scales: Vec<usize>,
    pub noise_sigma: f64,
    pub seed: u64,
    pub crop: usize,
    /// When set, predictions and error maps are written here.
    pub save_maps: Option<PathBuf>,
}

/// Degrade, predict, denormalize and score every pair at every scale.
pub fn run_benchmark<T: Scalar>(
    predictor: &Predictor<'_, T>,
    pairs: &[RgbdPair<T>],
    opts: &BenchmarkOptions,
) -> Result<BenchmarkReport> {
    if pairs.is_empty() {
        return Err(JiifError::invalid("benchmark needs at least one pair"));
    }
    let kind = pairs[0].value_kind;
    let mut scales = Vec::with_capacity(opts.scales.len());
    for &scale in &opts.scales {
        let spec = DegradationSpec::noisy(scale, opts.noise_sigma, kind);
        let mut images = Vec::with_capacity(pairs.len());
        for (i, pair) in pairs.iter().enumerate() {
            let seed = derive_seed(opts.seed, &[tags::EVAL_NOISE, scale as u64, i as u64]);
            let prep = prepare_pair(pair, &spec, seed)?;
            let pred = predictor.predict(&prep.lr_depth, &prep.guide)?;
            if !pred.all_finite() {
                return Err(JiifError::Numeric(format!("non-finite prediction for {}", pair.id)));
            }
            let pred = denormalize(&pred, prep.min, prep.max);
            let gt = denormalize(&prep.hr_depth, prep.min, prep.max);
            let value = rmse(&pred, &gt, opts.crop)?;
            if let Some(dir) = &opts.save_maps {
                save_error_map(&pred, &gt, dir, &format!("{}_x{scale}", pair.id), PRED_PNG_STEP)?;
            }
            log::info!("{} x{scale} {}: rmse={value:.4}", predictor.label(), pair.id);
            images.push(ImageResult {
                id: pair.id.clone(),
                rmse: value,
            });
        }
        scales.push(ScaleResult {
            scale,
            noise_sigma: opts.noise_sigma,
            images,
        });
    }
    Ok(BenchmarkReport {
        method: predictor.label(),
        dataset: opts.dataset.to_string(),
        unit: unit_label(kind).into(),
        crop: opts.crop,
        model: match predictor {
            Predictor::Model { model, .. } => Some(model.config().clone()),
            Predictor::Bicubic => None,
        },
        scales,
    })
}

/// Jet colormap on `[0, 1]`.
pub fn jet(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let ch = |c: f64| ((1.5 - (4.0 * t - c).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
    [ch(3.0), ch(2.0), ch(1.0)]
}

/// False-color absolute error, scaled by the largest error in the image.
pub fn error_colors<T: Scalar>(pred: &RasterImage<T>, gt: &RasterImage<T>) -> Result<Vec<[u8; 3]>> {
    if pred.dims() != gt.dims() || pred.channels() != 1 || gt.channels() != 1 {
        return Err(JiifError::invalid("error map needs two single-channel images of equal size"));
    }
    let err: Vec<f64> = pred
        .as_slice()
        .iter()
        .zip(gt.as_slice())
        .map(|(p, g)| (p.to_f64_lossy() - g.to_f64_lossy()).abs())
        .collect();
    let max = err.iter().cloned().fold(0.0, f64::max);
    Ok(err
        .iter()
        .map(|&e| jet(if max > 0.0 { e / max } else { 0.0 }))
        .collect())
}

/// Writes `<dir>/<stem>_error.png` (false color) and `<dir>/<stem>_pred.png`
/// (16-bit, one step per `depth_step` units).
pub fn save_error_map<T: Scalar>(
    pred: &RasterImage<T>,
    gt: &RasterImage<T>,
    dir: &Path,
    stem: &str,
    depth_step: f64,
) -> Result<(PathBuf, PathBuf)> {
    let colors = error_colors(pred, gt)?;
    std::fs::create_dir_all(dir).map_err(|e| JiifError::io(dir, e))?;
    let (h, w) = pred.dims();
    let raw: Vec<u8> = colors.into_iter().flatten().collect();
    let err_path = dir.join(format!("{stem}_error.png"));
    ImageBuffer::<Rgb<u8>, _>::from_raw(w as u32, h as u32, raw)
        .expect("buffer matches dimensions")
        .save(&err_path)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => JiifError::io(&err_path, io),
            other => JiifError::data(&err_path, other.to_string()),
        })?;
    let pred_path = dir.join(format!("{stem}_pred.png"));
    write_depth_png(&pred_path, pred, depth_step)?;
    Ok((err_path, pred_path))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationTable {
    /// Decoder layout and residual learning.
    Modules,
    /// Interpolation-weight strategy.
    Weights,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationVariant {
    pub table: AblationTable,
    pub label: String,
    pub config: ModelConfig,
    pub full_method: bool,
}

/// The four module rows followed by the three weight-strategy rows.
pub fn ablation_variants(base: &ModelConfig) -> Vec<AblationVariant> {
    let module = |mode: DecoderMode, residual: bool, label: &str| AblationVariant {
        table: AblationTable::Modules,
        label: label.into(),
        config: ModelConfig {
            mode,
            strategy: WeightStrategy::GraphAttention,
            use_residual: residual,
            ..base.clone()
        },
        full_method: mode == DecoderMode::Joint && residual,
    };
    let mut rows = vec![
        module(DecoderMode::Separate, false, "Baseline"),
        module(DecoderMode::Joint, false, "Baseline + Joint Repr."),
        module(DecoderMode::Separate, true, "Baseline + Residual"),
        module(DecoderMode::Joint, true, "Baseline + Joint Repr. + Residual"),
    ];
    for s in WeightStrategy::ALL {
        rows.push(AblationVariant {
            table: AblationTable::Weights,
            label: s.label().into(),
            config: ModelConfig {
                mode: DecoderMode::Joint,
                strategy: s,
                use_residual: true,
                ..base.clone()
            },
            full_method: s == WeightStrategy::GraphAttention,
        });
    }
    rows
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub rmse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub dataset: String,
    pub unit: String,
    pub scale: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Modules ({} x{}, average RMSE in {})", self.dataset, self.scale, self.unit);
        let _ = writeln!(out, "{:<10}{:<13}{:<10}{:>10}", "Baseline", "Joint Repr.", "Residual", "RMSE");
        for r in self.rows.iter().filter(|r| r.variant.table == AblationTable::Modules) {
            let joint = r.variant.config.mode == DecoderMode::Joint;
            let mark = |b: bool| if b { "x" } else { "" };
            let _ = writeln!(
                out,
                "{:<10}{:<13}{:<10}{:>10.4}{}",
                "x",
                mark(joint),
                mark(r.variant.config.use_residual),
                r.rmse,
                if r.variant.full_method { "  (full method)" } else { "" }
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "Weight strategies ({} x{}, average RMSE in {})", self.dataset, self.scale, self.unit);
        let _ = writeln!(out, "{:<24}{:>10}", "Methods", "RMSE");
        for r in self.rows.iter().filter(|r| r.variant.table == AblationTable::Weights) {
            let _ = writeln!(out, "{:<24}{:>10.4}", r.variant.label, r.rmse);
        }
        out
    }

    pub fn to_records(&self) -> String {
        self.rows
            .iter()
            .map(|r| {
                format!(
                    "table={} label=\"{}\" mode={} strategy={} residual={} full_method={} scale={} rmse={:.6}\n",
                    match r.variant.table {
                        AblationTable::Modules => "modules",
                        AblationTable::Weights => "weights",
                    },
                    r.variant.label,
                    r.variant.config.decoder_mode(),
                    r.variant.config.strategy.key(),
                    r.variant.config.use_residual,
                    r.variant.full_method,
                    self.scale,
                    r.rmse
                )
            })
            .collect()
    }
}

/// Trains and evaluates every ablation variant in turn with the same
/// training settings and seed. `observer` sees each variant's training.
pub fn run_ablation<T: Scalar>(
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    train_pairs: &[RgbdPair<T>],
    test_pairs: &[RgbdPair<T>],
    opts: &BenchmarkOptions,
    mut observer: impl FnMut(&AblationVariant) -> Box<dyn TrainObserver<T>>,
) -> Result<AblationReport> {
    let scale = train_cfg.scale;
    let mut rows = Vec::new();
    for variant in ablation_variants(base) {
        log::info!("ablation: training `{}` ({})", variant.label, model_label(&variant.config));
        let init = Checkpoint::initial(variant.config.clone(), train_cfg.clone())?;
        let mut obs = observer(&variant);
        let trained = train(init, train_pairs, obs.as_mut())?;
        let report = run_benchmark(
            &Predictor::Model {
                model: &trained.model,
                chunk: train_cfg.query_chunk,
            },
            test_pairs,
            &BenchmarkOptions {
                scales: vec![scale],
                ..opts.clone()
            },
        )?;
        let rmse = report.average(scale).expect("scale evaluated");
        rows.push(AblationRow { variant, rmse });
    }
    Ok(AblationReport {
        dataset: opts.dataset.to_string(),
        unit: test_pairs.first().map(|p| unit_label(p.value_kind)).unwrap_or("cm").into(),
        scale,
        rows,
    })
}

/// [`run_ablation`] without progress reporting.
pub fn run_ablation_quiet<T: Scalar>(
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    train_pairs: &[RgbdPair<T>],
    test_pairs: &[RgbdPair<T>],
    opts: &BenchmarkOptions,
) -> Result<AblationReport> {
    run_ablation(base, train_cfg, train_pairs, test_pairs, opts, |_| Box::new(Silent))
}
