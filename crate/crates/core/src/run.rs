//! Run configuration and the command implementations behind the CLI.
//!
//! A run directory `<output_dir>/<name>/` receives `config.toml` (the
//! resolved configuration), `loss.log`, checkpoints `ckpt_<epoch>`, a
//! `latest` pointer and report files.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{
    generate_synthetic, load_dataset, normalize_depth, denormalize, read_depth_png, read_guide_png,
    split_dir, write_dataset, write_depth_png, DatasetName, RgbdPair, Split, SyntheticSpec, ValueKind,
};
use crate::error::{JiifError, Result};
use crate::evaluation::{
    run_ablation, run_benchmark, AblationReport, BenchmarkOptions, BenchmarkReport, Predictor,
};
use crate::jiif_decoder::{DecoderMode, WeightStrategy};
use crate::model::{zero_decoder, ModelConfig};
use crate::raster::RasterImage;
use crate::scalar::{DType, Scalar};
use crate::seed::{derive_seed, tags};
use crate::training::{train, Checkpoint, StepLog, TrainConfig, TrainObserver};

pub const CONFIG_FILE: &str = "config.toml";
pub const LOSS_LOG: &str = "loss.log";
pub const LATEST: &str = "latest";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Test dataset; defaults to the training dataset.
    pub dataset: Option<DatasetName>,
    pub scales: Vec<usize>,
    /// Defaults to the dataset's standard noise level (zero unless noisy).
    pub noise_sigma: Option<f64>,
    pub crop: usize,
    pub save_maps: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            scales: vec![4, 8, 16],
            noise_sigma: None,
            crop: 0,
            save_maps: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub output_dir: PathBuf,
    pub data_root: PathBuf,
    pub dataset: DatasetName,
    pub dtype: DType,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Used when `dataset = "synthetic"` and no files exist on disk.
    pub synthetic: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            output_dir: "runs".into(),
            data_root: "data".into(),
            dataset: DatasetName::NyuV2,
            dtype: DType::F32,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            synthetic: SyntheticSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| text[..s.start].lines().count().to_string())
                .map(|l| format!("line {l}"))
                .unwrap_or_else(|| "config".into());
            JiifError::config(field, e.message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| JiifError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            JiifError::Config { field, message } => {
                JiifError::config(format!("{}:{field}", path.display()), message)
            }
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.name)
    }

    pub fn eval_dataset(&self) -> DatasetName {
        self.eval.dataset.unwrap_or(self.dataset)
    }

    pub fn eval_noise(&self) -> f64 {
        self.eval
            .noise_sigma
            .unwrap_or_else(|| self.eval_dataset().default_noise_sigma())
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(JiifError::config("name", "must be a non-empty plain directory name"));
        }
        self.model.validate()?;
        self.train.validate()?;
        if self.eval.scales.is_empty() || self.eval.scales.contains(&0) {
            return Err(JiifError::config("eval.scales", "must list positive integer scales"));
        }
        if let Some(s) = self.eval.noise_sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(JiifError::config("eval.noise_sigma", "must be finite and non-negative"));
            }
        }
        if self.dataset == DatasetName::Synthetic && self.synthetic.count == 0 {
            return Err(JiifError::config("synthetic.count", "must be positive"));
        }
        Ok(())
    }

    fn validate_training(&self) -> Result<()> {
        self.validate()?;
        if self.dataset.test_only() {
            return Err(JiifError::config("dataset", format!("{} has no training split", self.dataset)));
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(self.name, o.name);
        set!(self.output_dir, o.output_dir);
        set!(self.data_root, o.data_root);
        set!(self.dataset, o.dataset);
        set!(self.dtype, o.dtype);
        set!(self.train.seed, o.seed);
        set!(self.train.epochs, o.epochs);
        set!(self.train.lr0, o.lr);
        set!(self.train.scale, o.scale);
        set!(self.train.noise_sigma, o.train_noise_sigma);
        set!(self.train.patch.patch_size, o.patch_size);
        set!(self.train.patch.samples, o.samples);
        set!(self.train.checkpoint_every, o.checkpoint_every);
        set!(self.model.mode, o.mode);
        set!(self.model.strategy, o.strategy);
        set!(self.model.feature_dim, o.feature_dim);
        set!(self.model.num_residual_blocks, o.num_residual_blocks);
        set!(self.model.hidden_dims, o.hidden_dims);
        if o.no_residual {
            self.model.use_residual = false;
        }
        if o.eval_dataset.is_some() {
            self.eval.dataset = o.eval_dataset;
        }
        set!(self.eval.scales, o.scales);
        if o.noise_sigma.is_some() {
            self.eval.noise_sigma = o.noise_sigma;
        }
        set!(self.eval.crop, o.crop);
        if o.save_maps {
            self.eval.save_maps = true;
        }
        set!(self.synthetic.count, o.synthetic_count);
        set!(self.synthetic.seed, o.synthetic_seed);
        set!(self.synthetic.height, o.synthetic_size);
        set!(self.synthetic.width, o.synthetic_size);
    }
}

/// Command-line overrides; `None` leaves the file or default value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub name: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub data_root: Option<PathBuf>,
    pub dataset: Option<DatasetName>,
    pub dtype: Option<DType>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub scale: Option<usize>,
    pub train_noise_sigma: Option<f64>,
    pub patch_size: Option<usize>,
    pub samples: Option<usize>,
    pub checkpoint_every: Option<usize>,
    pub mode: Option<DecoderMode>,
    pub strategy: Option<WeightStrategy>,
    pub no_residual: bool,
    pub feature_dim: Option<usize>,
    pub num_residual_blocks: Option<usize>,
    pub hidden_dims: Option<Vec<usize>>,
    pub eval_dataset: Option<DatasetName>,
    pub scales: Option<Vec<usize>>,
    pub noise_sigma: Option<f64>,
    pub crop: Option<usize>,
    pub save_maps: bool,
    pub synthetic_count: Option<usize>,
    pub synthetic_seed: Option<u64>,
    pub synthetic_size: Option<usize>,
}

/// Defaults, then the optional file, then the overrides; validated.
pub fn resolve_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(overrides);
    cfg.validate()?;
    Ok(cfg)
}

fn synthetic_split_seed(seed: u64, split: Split) -> u64 {
    match split {
        Split::Train => seed,
        Split::Test => derive_seed(seed, &[tags::SYNTHETIC, 1]),
    }
}

/// Pairs for `dataset/split`. Synthetic data is generated in memory when
/// its directory does not exist.
pub fn load_pairs<T: Scalar>(cfg: &RunConfig, dataset: DatasetName, split: Split) -> Result<Vec<RgbdPair<T>>> {
    if dataset == DatasetName::Synthetic && !split_dir(&cfg.data_root, dataset, split).is_dir() {
        let spec = SyntheticSpec {
            seed: synthetic_split_seed(cfg.synthetic.seed, split),
            ..cfg.synthetic
        };
        log::info!("generating {} synthetic {split} pairs (seed {})", spec.count, spec.seed);
        return generate_synthetic(&spec);
    }
    Ok(load_dataset(dataset, split, &cfg.data_root)?
        .iter()
        .map(RgbdPair::cast)
        .collect())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| JiifError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| JiifError::io(path, e))
}

/// Writes checkpoints, the loss log and the `latest` pointer.
struct RunWriter {
    dir: PathBuf,
    log: fs::File,
}

impl RunWriter {
    fn create(dir: &Path, append: bool) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| JiifError::io(dir, e))?;
        let path = dir.join(LOSS_LOG);
        let log = fs::OpenOptions::new()
            .create(true)
            .append(append)
            .write(true)
            .truncate(!append)
            .open(&path)
            .map_err(|e| JiifError::io(&path, e))?;
        Ok(Self { dir: dir.to_path_buf(), log })
    }
}

impl<T: Scalar> TrainObserver<T> for RunWriter {
    fn on_step(&mut self, log: &StepLog) -> Result<()> {
        writeln!(self.log, "{log}").map_err(|e| JiifError::io(self.dir.join(LOSS_LOG), e))?;
        if log.step.is_multiple_of(50) {
            log::info!("{log}");
        }
        Ok(())
    }

    fn on_checkpoint(&mut self, ckpt: &Checkpoint<T>) -> Result<()> {
        let name = format!("ckpt_{}", ckpt.epoch);
        ckpt.save(&self.dir.join(&name))?;
        write_file(&self.dir.join(LATEST), &format!("{name}\n"))?;
        log::info!("saved {}", self.dir.join(name).display());
        Ok(())
    }

    fn on_abort(&mut self, ckpt: &Checkpoint<T>) -> Result<()> {
        let path = self.dir.join("ckpt_abort");
        ckpt.save(&path)?;
        log::error!("non-finite loss; diagnostic checkpoint at {}", path.display());
        Ok(())
    }
}

/// A checkpoint file, or a run directory resolved through its `latest`.
pub fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    if path.is_dir() {
        let pointer = path.join(LATEST);
        let name = fs::read_to_string(&pointer).map_err(|e| JiifError::io(&pointer, e))?;
        return Ok(path.join(name.trim()));
    }
    if !path.is_file() {
        return Err(JiifError::data(path, "checkpoint not found"));
    }
    Ok(path.to_path_buf())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub epochs: usize,
    pub steps: u64,
    pub final_checkpoint: PathBuf,
}

/// Trains from scratch, or resumes from `resume` (a checkpoint or run dir).
pub fn run_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainSummary> {
    cfg.validate_training()?;
    match cfg.dtype {
        DType::F32 => train_typed::<f32>(cfg, resume),
        DType::F64 => train_typed::<f64>(cfg, resume),
    }
}

fn train_typed<T: Scalar>(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainSummary> {
    let dir = cfg.run_dir();
    let pairs = load_pairs::<T>(cfg, cfg.dataset, Split::Train)?;
    let state = match resume {
        Some(p) => {
            let mut ck = Checkpoint::<T>::load(&resolve_checkpoint(p)?)?;
            if ck.model_config != cfg.model {
                return Err(JiifError::config("model", "differs from the checkpoint being resumed"));
            }
            ck.train_config = cfg.train.clone();
            ck
        }
        None => Checkpoint::initial(cfg.model.clone(), cfg.train.clone())?,
    };
    write_file(&dir.join(CONFIG_FILE), &cfg.to_toml())?;
    let mut writer = RunWriter::create(&dir, resume.is_some())?;
    log::info!("training {} on {} pairs into {}", cfg.name, pairs.len(), dir.display());
    let done = train(state, &pairs, &mut writer)?;
    Ok(TrainSummary {
        final_checkpoint: dir.join(format!("ckpt_{}", done.epoch)),
        run_dir: dir,
        epochs: done.epoch,
        steps: done.step,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum EvalSource {
    Bicubic,
    Checkpoint(PathBuf),
    /// A freshly built model with a zeroed decoder (bicubic through the
    /// network's residual path).
    ZeroDecoder,
}

/// Benchmarks on the test split and writes `eval_<dataset>_<source>.txt`
/// into the run directory.
pub fn run_eval(cfg: &RunConfig, source: &EvalSource) -> Result<(BenchmarkReport, PathBuf)> {
    cfg.validate()?;
    match cfg.dtype {
        DType::F32 => eval_typed::<f32>(cfg, source),
        DType::F64 => eval_typed::<f64>(cfg, source),
    }
}

fn source_tag(source: &EvalSource) -> &'static str {
    match source {
        EvalSource::Bicubic => "bicubic",
        EvalSource::Checkpoint(_) => "model",
        EvalSource::ZeroDecoder => "zero_decoder",
    }
}

fn eval_typed<T: Scalar>(cfg: &RunConfig, source: &EvalSource) -> Result<(BenchmarkReport, PathBuf)> {
    let dataset = cfg.eval_dataset();
    let pairs = load_pairs::<T>(cfg, dataset, Split::Test)?;
    let dir = cfg.run_dir();
    let opts = BenchmarkOptions {
        dataset,
        scales: cfg.eval.scales.clone(),
        noise_sigma: cfg.eval_noise(),
        seed: cfg.train.seed,
        crop: cfg.eval.crop,
        save_maps: cfg.eval.save_maps.then(|| dir.join(format!("maps_{dataset}_{}", source_tag(source)))),
    };
    let model = match source {
        EvalSource::Bicubic => None,
        EvalSource::Checkpoint(p) => Some(Checkpoint::<T>::load(&resolve_checkpoint(p)?)?.model),
        EvalSource::ZeroDecoder => {
            let mut m = Checkpoint::<T>::initial(cfg.model.clone(), cfg.train.clone())?.model;
            zero_decoder(&mut m);
            Some(m)
        }
    };
    let predictor = match &model {
        None => Predictor::Bicubic,
        Some(m) => Predictor::Model {
            model: m,
            chunk: cfg.train.query_chunk,
        },
    };
    let report = run_benchmark(&predictor, &pairs, &opts)?;
    let path = dir.join(format!("eval_{dataset}_{}.txt", source_tag(source)));
    report.write(&path)?;
    Ok((report, path))
}

/// Trains and evaluates the seven ablation variants; writes `ablation.txt`.
pub fn run_ablate(cfg: &RunConfig) -> Result<(AblationReport, PathBuf)> {
    cfg.validate_training()?;
    match cfg.dtype {
        DType::F32 => ablate_typed::<f32>(cfg),
        DType::F64 => ablate_typed::<f64>(cfg),
    }
}

fn ablate_typed<T: Scalar>(cfg: &RunConfig) -> Result<(AblationReport, PathBuf)> {
    let dir = cfg.run_dir();
    let dataset = cfg.eval_dataset();
    let train_pairs = load_pairs::<T>(cfg, cfg.dataset, Split::Train)?;
    let test_pairs = load_pairs::<T>(cfg, dataset, Split::Test)?;
    write_file(&dir.join(CONFIG_FILE), &cfg.to_toml())?;
    let opts = BenchmarkOptions {
        dataset,
        scales: vec![cfg.train.scale],
        noise_sigma: cfg.eval_noise(),
        seed: cfg.train.seed,
        crop: cfg.eval.crop,
        save_maps: None,
    };
    let report = run_ablation(&cfg.model, &cfg.train, &train_pairs, &test_pairs, &opts, |variant| {
        let sub = dir.join(format!(
            "ablation_{}",
            variant.label.to_lowercase().replace(['.', '+'], "").split_whitespace().collect::<Vec<_>>().join("_")
        ));
        match RunWriter::create(&sub, false) {
            Ok(w) => Box::new(w),
            Err(e) => {
                log::warn!("{e}; continuing without a run log");
                Box::new(crate::training::Silent)
            }
        }
    })?;
    let path = dir.join("ablation.txt");
    write_file(&path, &format!("{}\n{}", report.to_records(), report.render()))?;
    Ok((report, path))
}

/// Super-resolves one LR depth PNG with its HR guide. The LR depth is
/// normalized with its own range and the prediction written back in the
/// same stored units.
pub fn run_infer(checkpoint: &Path, lr_depth: &Path, guide: &Path, output: &Path, chunk: usize) -> Result<(usize, usize)> {
    let ck = Checkpoint::<f32>::load(&resolve_checkpoint(checkpoint)?)?;
    let lr = read_depth_png(lr_depth, 1.0)?.cast::<f32>();
    let guide = read_guide_png(guide)?.cast::<f32>();
    let norm = normalize_depth(&lr);
    let pred = ck.model.full_inference(&norm.image, &guide, chunk.max(1))?;
    if !pred.all_finite() {
        return Err(JiifError::Numeric("non-finite prediction".into()));
    }
    let out = denormalize(&pred, norm.min, norm.max);
    if let Some(dir) = output.parent() {
        fs::create_dir_all(dir).map_err(|e| JiifError::io(dir, e))?;
    }
    write_depth_png(output, &out, 1.0)?;
    Ok(out.dims())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoSummary {
    pub bicubic: BenchmarkReport,
    pub model: BenchmarkReport,
    pub run_dir: PathBuf,
}

/// Small end-to-end run on synthetic scenes: train briefly, compare with
/// bicubic, save error maps.
pub fn run_demo(output_dir: &Path, seed: u64, epochs: usize) -> Result<DemoSummary> {
    let cfg = demo_config(output_dir, seed, epochs);
    cfg.validate()?;
    run_train(&cfg, None)?;
    let (bicubic, _) = run_eval(&cfg, &EvalSource::Bicubic)?;
    let (model, _) = run_eval(&cfg, &EvalSource::Checkpoint(cfg.run_dir()))?;
    Ok(DemoSummary {
        bicubic,
        model,
        run_dir: cfg.run_dir(),
    })
}

pub fn demo_config(output_dir: &Path, seed: u64, epochs: usize) -> RunConfig {
    let mut cfg = RunConfig {
        name: "demo".into(),
        output_dir: output_dir.to_path_buf(),
        data_root: output_dir.join("no-data"),
        dataset: DatasetName::Synthetic,
        ..RunConfig::default()
    };
    cfg.model.feature_dim = 16;
    cfg.model.num_residual_blocks = 2;
    cfg.model.hidden_dims = vec![64, 32];
    cfg.train.epochs = epochs;
    cfg.train.seed = seed;
    cfg.train.scale = 4;
    cfg.train.decay_every = epochs.max(1);
    cfg.train.checkpoint_every = epochs.max(1);
    cfg.train.patch.patch_size = 48;
    cfg.train.patch.samples = 1024;
    cfg.eval.scales = vec![4];
    cfg.eval.save_maps = true;
    cfg.synthetic = SyntheticSpec {
        count: 4,
        seed,
        height: 64,
        width: 64,
    };
    cfg
}

/// Writes `count` synthetic pairs into `<root>/synthetic/<split>`.
pub fn prepare_synthetic(root: &Path, split: Split, spec: &SyntheticSpec) -> Result<PathBuf> {
    let pairs = generate_synthetic::<f64>(spec)?;
    write_dataset(root, DatasetName::Synthetic, split, &pairs, 0.1)
}

/// Converts NumPy exports of the labeled NYU release: RGB `(N, H, W, 3)`
/// `u8` and depth `(N, H, W)` in meters (`f32` or `f64`). The first 1000
/// pairs become the training split, the rest the test split. Depth is
/// stored in millimeters (0.1 cm per step).
pub fn prepare_nyu_npy(images: &Path, depths: &Path, root: &Path) -> Result<(usize, usize)> {
    let rgb: Array4<u8> = ndarray_npy::read_npy(images).map_err(|e| JiifError::data(images, e.to_string()))?;
    let depth: Array3<f64> = match ndarray_npy::read_npy::<_, Array3<f32>>(depths) {
        Ok(d) => d.mapv(f64::from),
        Err(_) => ndarray_npy::read_npy(depths).map_err(|e| JiifError::data(depths, e.to_string()))?,
    };
    let (n, h, w, c) = rgb.dim();
    if c != 3 || depth.dim() != (n, h, w) {
        return Err(JiifError::data(
            images,
            format!("expected (N,H,W,3) images and (N,H,W) depths, got {:?} and {:?}", rgb.dim(), depth.dim()),
        ));
    }
    let mut train_pairs = Vec::new();
    let mut test_pairs = Vec::new();
    for i in 0..n {
        let guide = RasterImage::from_array(rgb.index_axis(Axis(0), i).mapv(|v| v as f64 / 255.0));
        let d = depth.index_axis(Axis(0), i).mapv(|m| m * 100.0).insert_axis(Axis(2));
        let pair = RgbdPair::new(format!("{i:04}"), guide, RasterImage::from_array(d), ValueKind::Depth)
            .map_err(|e| JiifError::data(depths, e.to_string()))?;
        if i < crate::data::NYU_TRAIN_COUNT {
            train_pairs.push(pair);
        } else {
            test_pairs.push(pair);
        }
    }
    write_dataset(root, DatasetName::NyuV2, Split::Train, &train_pairs, 0.1)?;
    if !test_pairs.is_empty() {
        write_dataset(root, DatasetName::NyuV2, Split::Test, &test_pairs, 0.1)?;
    }
    Ok((train_pairs.len(), test_pairs.len()))
}
