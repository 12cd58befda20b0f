//! RGB-D datasets: on-disk layout, synthetic scenes, LR degradation,
//! per-image normalization and training-patch sampling.
//!
//! Layout under a dataset root:
//!
//! ```text
//! <root>/<dataset>/<split>/<id>_rgb.png     8- or 16-bit RGB guide
//! <root>/<dataset>/<split>/<id>_depth.png   16-bit single-channel depth
//! <root>/<dataset>/<split>/meta.json        value kind and unit scales
//! ```
//!
//! A stored depth sample `v` decodes to `v * scale` physical units
//! (centimeters for depth datasets, raw disparity otherwise).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{ImageBuffer, Luma, Rgb};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::coordgrid::{pixel_center, Coord};
use crate::error::{JiifError, Result};
use crate::interpolation::{bicubic_downsample, bicubic_sample_into};
use crate::raster::RasterImage;
use crate::scalar::Scalar;
use crate::seed::{rng_for, tags};

pub const NYU_TRAIN_COUNT: usize = 1000;
pub const NYU_TEST_COUNT: usize = 449;
pub const MIDDLEBURY_TEST_COUNT: usize = 30;
pub const LU_TEST_COUNT: usize = 6;
pub const DEFAULT_PATCH_SIZE: usize = 256;
pub const DEFAULT_SAMPLES_PER_PATCH: usize = 30720;
pub const META_FILE: &str = "meta.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Depth,
    Disparity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    NyuV2,
    Middlebury,
    /// Middlebury inputs evaluated with the noisy degradation.
    MiddleburyNoisy,
    Lu,
    Synthetic,
}

impl DatasetName {
    pub fn key(self) -> &'static str {
        match self {
            DatasetName::NyuV2 => "nyu_v2",
            DatasetName::Middlebury => "middlebury",
            DatasetName::MiddleburyNoisy => "middlebury_noisy",
            DatasetName::Lu => "lu",
            DatasetName::Synthetic => "synthetic",
        }
    }

    /// Directory under the dataset root.
    pub fn dir(self) -> &'static str {
        match self {
            DatasetName::MiddleburyNoisy => "middlebury",
            other => other.key(),
        }
    }

    pub fn value_kind(self) -> ValueKind {
        match self {
            DatasetName::NyuV2 | DatasetName::Synthetic => ValueKind::Depth,
            _ => ValueKind::Disparity,
        }
    }

    pub fn test_only(self) -> bool {
        matches!(
            self,
            DatasetName::Middlebury | DatasetName::MiddleburyNoisy | DatasetName::Lu
        )
    }

    pub fn expected_count(self, split: Split) -> Option<usize> {
        match (self, split) {
            (DatasetName::NyuV2, Split::Train) => Some(NYU_TRAIN_COUNT),
            (DatasetName::NyuV2, Split::Test) => Some(NYU_TEST_COUNT),
            (DatasetName::Middlebury | DatasetName::MiddleburyNoisy, Split::Test) => {
                Some(MIDDLEBURY_TEST_COUNT)
            }
            (DatasetName::Lu, Split::Test) => Some(LU_TEST_COUNT),
            _ => None,
        }
    }

    /// Noise level used when none is given explicitly.
    pub fn default_noise_sigma(self) -> f64 {
        match self {
            DatasetName::MiddleburyNoisy => 651.0,
            _ => 0.0,
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for DatasetName {
    type Err = JiifError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "nyu_v2" | "nyu" | "nyuv2" => DatasetName::NyuV2,
            "middlebury" => DatasetName::Middlebury,
            "middlebury_noisy" | "noisy_middlebury" => DatasetName::MiddleburyNoisy,
            "lu" => DatasetName::Lu,
            "synthetic" | "synth" => DatasetName::Synthetic,
            _ => {
                return Err(JiifError::config(
                    "dataset",
                    format!("unknown dataset `{s}` (nyu_v2, middlebury, middlebury_noisy, lu, synthetic)"),
                ))
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn key(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Split {
    type Err = JiifError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(JiifError::config("split", format!("expected train or test, got `{s}`"))),
        }
    }
}

/// An aligned guide/depth pair in physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbdPair<T> {
    pub id: String,
    /// `H x W x 3`, values in `[0, 1]`.
    pub guide: RasterImage<T>,
    /// `H x W x 1`, finite and non-negative.
    pub depth: RasterImage<T>,
    pub value_kind: ValueKind,
}

impl<T: Scalar> RgbdPair<T> {
    pub fn new(
        id: impl Into<String>,
        guide: RasterImage<T>,
        depth: RasterImage<T>,
        value_kind: ValueKind,
    ) -> Result<Self> {
        let id = id.into();
        if guide.channels() != 3 || depth.channels() != 1 {
            return Err(JiifError::invalid(format!(
                "pair {id}: expected 3-channel guide and 1-channel depth, got {} and {}",
                guide.channels(),
                depth.channels()
            )));
        }
        if guide.dims() != depth.dims() || guide.is_empty() {
            return Err(JiifError::invalid(format!(
                "pair {id}: guide {:?} and depth {:?} differ in size",
                guide.dims(),
                depth.dims()
            )));
        }
        if depth.as_slice().iter().any(|&v| !v.is_finite() || v < T::zero()) {
            return Err(JiifError::invalid(format!("pair {id}: depth must be finite and non-negative")));
        }
        Ok(Self {
            id,
            guide,
            depth,
            value_kind,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.depth.dims()
    }

    pub fn cast<U: Scalar>(&self) -> RgbdPair<U> {
        RgbdPair {
            id: self.id.clone(),
            guide: self.guide.cast(),
            depth: self.depth.cast(),
            value_kind: self.value_kind,
        }
    }

    /// Centered crop of both images to the largest multiple of `scale`.
    pub fn crop_to_multiple(&self, scale: usize) -> Result<Self> {
        Ok(Self {
            id: self.id.clone(),
            guide: self.guide.center_crop_to_multiple(scale)?,
            depth: self.depth.center_crop_to_multiple(scale)?,
            value_kind: self.value_kind,
        })
    }
}

/// How the per-pixel noise level `x` is derived.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseProxy {
    /// `x` is the normalized depth value; noise is added after normalization.
    NormalizedDepth,
    /// `x = 1 / d` for raw disparity `d`; noise is added in disparity units.
    InverseDisparity,
}

impl NoiseProxy {
    pub fn for_kind(kind: ValueKind) -> Self {
        match kind {
            ValueKind::Depth => NoiseProxy::NormalizedDepth,
            ValueKind::Disparity => NoiseProxy::InverseDisparity,
        }
    }

    /// Noise standard deviation at value `v`, or `None` when undefined.
    pub fn std_at(self, sigma: f64, v: f64) -> Option<f64> {
        match self {
            NoiseProxy::NormalizedDepth => Some(sigma * v.abs()),
            NoiseProxy::InverseDisparity => (v != 0.0).then(|| sigma / v.abs()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub scale: usize,
    pub noise_sigma: f64,
    pub proxy: NoiseProxy,
}

impl DegradationSpec {
    pub fn clean(scale: usize, kind: ValueKind) -> Self {
        Self {
            scale,
            noise_sigma: 0.0,
            proxy: NoiseProxy::for_kind(kind),
        }
    }

    pub fn noisy(scale: usize, noise_sigma: f64, kind: ValueKind) -> Self {
        Self {
            noise_sigma,
            ..Self::clean(scale, kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 {
            return Err(JiifError::config("scale", "must be a positive integer"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(JiifError::config("noise_sigma", "must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Degraded<T> {
    pub lr: RasterImage<T>,
    /// Pixels left un-noised because their noise level was undefined.
    pub skipped: usize,
}

/// Bicubic shrink by `spec.scale`, then conditional Gaussian noise. `hr`
/// must already be in the domain the proxy expects (normalized depth or
/// raw disparity) and divisible by the scale.
pub fn degrade<T: Scalar>(hr: &RasterImage<T>, spec: &DegradationSpec, seed: u64) -> Result<Degraded<T>> {
    spec.validate()?;
    let mut lr = bicubic_downsample(hr, spec.scale)?;
    let skipped = if spec.noise_sigma > 0.0 {
        add_noise(&mut lr, spec.noise_sigma, spec.proxy, &mut rng_for(seed, &[tags::NOISE]))
    } else {
        0
    };
    Ok(Degraded { lr, skipped })
}

/// Adds `N(0, std(x))` per pixel and clamps at zero. Returns the number of
/// skipped pixels.
pub fn add_noise<T: Scalar>(image: &mut RasterImage<T>, sigma: f64, proxy: NoiseProxy, rng: &mut ChaCha8Rng) -> usize {
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut skipped = 0;
    for v in image.as_slice_mut() {
        let x = v.to_f64_lossy();
        match proxy.std_at(sigma, x) {
            Some(std) => {
                let noisy = x + std * unit.sample(rng);
                *v = T::of(noisy.max(0.0));
            }
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} zero-valued pixels left un-noised");
    }
    skipped
}

#[derive(Clone, Debug, PartialEq)]
pub struct Normalized<T> {
    pub image: RasterImage<T>,
    pub min: T,
    pub max: T,
    /// Set when `max == min`; the image is then all zeros.
    pub constant: bool,
}

/// Affine map of `depth` onto `[0, 1]` using its own min and max.
pub fn normalize_depth<T: Scalar>(depth: &RasterImage<T>) -> Normalized<T> {
    let (min, max) = depth.min_max().unwrap_or((T::zero(), T::zero()));
    let constant = !(max > min);
    if constant {
        log::warn!("constant depth map normalized to zeros");
    }
    Normalized {
        image: normalize_with(depth, min, max),
        min,
        max,
        constant,
    }
}

pub fn normalize_with<T: Scalar>(depth: &RasterImage<T>, min: T, max: T) -> RasterImage<T> {
    let range = max - min;
    if !(range > T::zero()) {
        return RasterImage::zeros(depth.height(), depth.width(), depth.channels());
    }
    depth.map(|v| (v - min) / range)
}

pub fn denormalize<T: Scalar>(image: &RasterImage<T>, min: T, max: T) -> RasterImage<T> {
    let range = max - min;
    image.map(|v| v * range + min)
}

/// Normalized HR target and LR input for one pair at one degradation.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedPair<T> {
    pub hr_depth: RasterImage<T>,
    pub lr_depth: RasterImage<T>,
    pub guide: RasterImage<T>,
    pub min: T,
    pub max: T,
    pub skipped: usize,
}

/// Degrades physical `depth` and normalizes both resolutions with the
/// statistics `(min, max)`. Noise is applied in the proxy's domain.
fn degrade_and_normalize<T: Scalar>(
    depth: &RasterImage<T>,
    spec: &DegradationSpec,
    min: T,
    max: T,
    seed: u64,
) -> Result<(RasterImage<T>, Degraded<T>)> {
    let hr = normalize_with(depth, min, max);
    match spec.proxy {
        NoiseProxy::NormalizedDepth => {
            let d = degrade(&hr, spec, seed)?;
            Ok((hr, d))
        }
        NoiseProxy::InverseDisparity => {
            let d = degrade(depth, spec, seed)?;
            Ok((
                hr,
                Degraded {
                    lr: normalize_with(&d.lr, min, max),
                    skipped: d.skipped,
                },
            ))
        }
    }
}

/// Evaluation-time preparation: crop to a multiple of the scale, normalize
/// per image and degrade.
pub fn prepare_pair<T: Scalar>(pair: &RgbdPair<T>, spec: &DegradationSpec, seed: u64) -> Result<PreparedPair<T>> {
    let cropped = pair.crop_to_multiple(spec.scale)?;
    let (min, max) = cropped.depth.min_max().expect("non-empty pair");
    let (hr, d) = degrade_and_normalize(&cropped.depth, spec, min, max, seed)?;
    Ok(PreparedPair {
        hr_depth: hr,
        lr_depth: d.lr,
        guide: cropped.guide,
        min,
        max,
        skipped: d.skipped,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchConfig {
    pub patch_size: usize,
    pub samples: usize,
    pub flips: bool,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            patch_size: DEFAULT_PATCH_SIZE,
            samples: DEFAULT_SAMPLES_PER_PATCH,
            flips: true,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self, scale: usize) -> Result<()> {
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(scale) {
            return Err(JiifError::config(
                "patch_size",
                format!("{} must be a positive multiple of the scale {scale}", self.patch_size),
            ));
        }
        if self.samples == 0 || self.samples > self.patch_size * self.patch_size {
            return Err(JiifError::config(
                "samples",
                format!("must lie in 1..={}", self.patch_size * self.patch_size),
            ));
        }
        Ok(())
    }
}

/// One training step's inputs, all depth values normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample<T> {
    pub lr_depth: RasterImage<T>,
    pub hr_guide: RasterImage<T>,
    pub queries: Vec<Coord<T>>,
    pub targets: Vec<T>,
    /// Bicubic up-sampled LR depth at each query.
    pub base: Vec<T>,
    /// HR `(row, col)` of each query inside the patch.
    pub pixels: Vec<(usize, usize)>,
    /// Top-left corner of the crop in the (padded) source image.
    pub origin: (usize, usize),
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
}

/// Random crop, joint flips, degradation and pixel sampling. Images smaller
/// than the patch are reflect-padded first.
pub fn sample_training_patch<T: Scalar>(
    pair: &RgbdPair<T>,
    spec: &DegradationSpec,
    patch: &PatchConfig,
    seed: u64,
) -> Result<TrainingSample<T>> {
    spec.validate()?;
    patch.validate(spec.scale)?;
    let p = patch.patch_size;
    let (min, max) = pair.depth.min_max().expect("non-empty pair");
    let guide = pair.guide.reflect_pad_to(p, p);
    let depth = pair.depth.reflect_pad_to(p, p);
    let mut rng = rng_for(seed, &[tags::PATCH]);
    let top = rng.gen_range(0..=guide.height() - p);
    let left = rng.gen_range(0..=guide.width() - p);
    let mut guide = guide.crop(top, left, p, p)?;
    let mut depth = depth.crop(top, left, p, p)?;
    let (fh, fv) = if patch.flips {
        (rng.gen_bool(0.5), rng.gen_bool(0.5))
    } else {
        (false, false)
    };
    if fh {
        guide = guide.flip_horizontal();
        depth = depth.flip_horizontal();
    }
    if fv {
        guide = guide.flip_vertical();
        depth = depth.flip_vertical();
    }
    let (hr, degraded) = degrade_and_normalize(&depth, spec, min, max, seed)?;
    let lr = degraded.lr;

    let picks = sample_indices(&mut rng, p * p, patch.samples);
    let mut queries = Vec::with_capacity(patch.samples);
    let mut targets = Vec::with_capacity(patch.samples);
    let mut base = Vec::with_capacity(patch.samples);
    let mut pixels = Vec::with_capacity(patch.samples);
    let mut b = [T::zero()];
    for idx in picks.iter() {
        let (r, c) = (idx / p, idx % p);
        let q = Coord::new(pixel_center::<T>(r, p), pixel_center::<T>(c, p));
        bicubic_sample_into(&lr, q, &mut b);
        queries.push(q);
        targets.push(hr.get(r, c, 0));
        base.push(b[0]);
        pixels.push((r, c));
    }
    Ok(TrainingSample {
        lr_depth: lr,
        hr_guide: guide,
        queries,
        targets,
        base,
        pixels,
        origin: (top, left),
        flip_horizontal: fh,
        flip_vertical: fv,
    })
}

/// Per-split sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub value_kind: ValueKind,
    /// Physical units per stored depth step.
    #[serde(default = "unit_scale")]
    pub default_scale: f64,
    /// Per-image overrides of `default_scale`.
    #[serde(default)]
    pub scales: BTreeMap<String, f64>,
}

fn unit_scale() -> f64 {
    1.0
}

impl DatasetMeta {
    pub fn new(value_kind: ValueKind, default_scale: f64) -> Self {
        Self {
            value_kind,
            default_scale,
            scales: BTreeMap::new(),
        }
    }

    pub fn scale_for(&self, id: &str) -> f64 {
        self.scales.get(id).copied().unwrap_or(self.default_scale)
    }
}

pub fn split_dir(root: &Path, name: DatasetName, split: Split) -> PathBuf {
    root.join(name.dir()).join(split.key())
}

/// Loads every pair of `<root>/<dataset>/<split>` in id order.
pub fn load_dataset(name: DatasetName, split: Split, root: &Path) -> Result<Vec<RgbdPair<f64>>> {
    if name.test_only() && split == Split::Train {
        return Err(JiifError::config("split", format!("{name} is a test-only dataset")));
    }
    let dir = split_dir(root, name, split);
    if !dir.is_dir() {
        return Err(JiifError::data(&dir, "dataset directory not found"));
    }
    let meta_path = dir.join(META_FILE);
    let meta = if meta_path.is_file() {
        let text = fs::read_to_string(&meta_path).map_err(|e| JiifError::io(&meta_path, e))?;
        serde_json::from_str::<DatasetMeta>(&text)
            .map_err(|e| JiifError::data(&meta_path, e.to_string()))?
    } else {
        log::warn!("{} missing; assuming unit scale", meta_path.display());
        DatasetMeta::new(name.value_kind(), 1.0)
    };

    let mut ids: Vec<String> = fs::read_dir(&dir)
        .map_err(|e| JiifError::io(&dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|n| n.strip_suffix("_rgb.png"))
                .map(str::to_string)
        })
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(JiifError::data(&dir, "no *_rgb.png files"));
    }

    let mut pairs = Vec::with_capacity(ids.len());
    for id in ids {
        let rgb = dir.join(format!("{id}_rgb.png"));
        let dep = dir.join(format!("{id}_depth.png"));
        if !dep.is_file() {
            return Err(JiifError::data(&dep, "depth image missing for this guide"));
        }
        let guide = read_guide_png(&rgb)?;
        let depth = read_depth_png(&dep, meta.scale_for(&id))?;
        let pair = RgbdPair::new(id, guide, depth, meta.value_kind)
            .map_err(|e| JiifError::data(&dep, e.to_string()))?;
        pairs.push(pair);
    }
    if let Some(n) = name.expected_count(split) {
        if n != pairs.len() {
            log::warn!("{name}/{split}: found {} pairs, the standard split has {n}", pairs.len());
        }
    }
    Ok(pairs)
}

/// Writes pairs (and a sidecar) in the documented layout.
pub fn write_dataset<T: Scalar>(
    root: &Path,
    name: DatasetName,
    split: Split,
    pairs: &[RgbdPair<T>],
    depth_scale: f64,
) -> Result<PathBuf> {
    let dir = split_dir(root, name, split);
    fs::create_dir_all(&dir).map_err(|e| JiifError::io(&dir, e))?;
    let kind = pairs.first().map(|p| p.value_kind).unwrap_or(name.value_kind());
    for p in pairs {
        write_guide_png(&dir.join(format!("{}_rgb.png", p.id)), &p.guide)?;
        write_depth_png(&dir.join(format!("{}_depth.png", p.id)), &p.depth, depth_scale)?;
    }
    let meta = DatasetMeta::new(kind, depth_scale);
    let path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&path, text).map_err(|e| JiifError::io(&path, e))?;
    Ok(dir)
}

fn image_err(path: &Path, e: image::ImageError) -> JiifError {
    match e {
        image::ImageError::IoError(io) => JiifError::io(path, io),
        other => JiifError::data(path, other.to_string()),
    }
}

/// RGB guide scaled to `[0, 1]`.
pub fn read_guide_png(path: &Path) -> Result<RasterImage<f64>> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let rgb = img.to_rgb16();
    let (w, h) = rgb.dimensions();
    let data: Vec<f64> = rgb.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
    RasterImage::from_vec(h as usize, w as usize, 3, data)
}

/// Single-channel depth, each stored value multiplied by `scale`.
pub fn read_depth_png(path: &Path, scale: f64) -> Result<RasterImage<f64>> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    if img.color().channel_count() != 1 {
        return Err(JiifError::data(path, "depth image must be single-channel"));
    }
    let l = img.to_luma16();
    let (w, h) = l.dimensions();
    let data: Vec<f64> = l.into_raw().into_iter().map(|v| v as f64 * scale).collect();
    RasterImage::from_vec(h as usize, w as usize, 1, data)
}

pub fn write_guide_png<T: Scalar>(path: &Path, guide: &RasterImage<T>) -> Result<()> {
    let (h, w) = guide.dims();
    let raw: Vec<u8> = guide
        .as_slice()
        .iter()
        .map(|v| (v.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = ImageBuffer::<Rgb<u8>, _>::from_raw(w as u32, h as u32, raw)
        .ok_or_else(|| JiifError::invalid("guide must have 3 channels"))?;
    buf.save(path).map_err(|e| image_err(path, e))
}

/// Stores `round(value / scale)` as 16-bit, saturating at the type range.
pub fn write_depth_png<T: Scalar>(path: &Path, depth: &RasterImage<T>, scale: f64) -> Result<()> {
    let (h, w) = depth.dims();
    let raw: Vec<u16> = depth
        .as_slice()
        .iter()
        .map(|v| (v.to_f64_lossy() / scale).round().clamp(0.0, 65535.0) as u16)
        .collect();
    let buf = ImageBuffer::<Luma<u16>, _>::from_raw(w as u32, h as u32, raw)
        .ok_or_else(|| JiifError::invalid("depth must have 1 channel"))?;
    buf.save(path).map_err(|e| image_err(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub count: usize,
    #[serde(with = "crate::seed::serde_seed")]
    pub seed: u64,
    pub height: usize,
    pub width: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            count: 8,
            seed: 0,
            height: 256,
            width: 256,
        }
    }
}

/// Piecewise-smooth scenes: planar regions cut by random lines plus
/// Gaussian bumps, with a guide whose colors change at the same edges and
/// carry extra texture that has no depth counterpart.
pub fn generate_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Result<Vec<RgbdPair<T>>> {
    if spec.height == 0 || spec.width == 0 {
        return Err(JiifError::config("synthetic", "image size must be positive"));
    }
    (0..spec.count)
        .map(|i| {
            let mut rng = rng_for(spec.seed, &[tags::SYNTHETIC, i as u64]);
            let (depth, guide) = synthetic_scene(&mut rng, spec.height, spec.width);
            RgbdPair::new(format!("synth_{i:04}"), guide.cast(), depth.cast(), ValueKind::Depth)
        })
        .collect()
}

fn synthetic_scene(rng: &mut ChaCha8Rng, h: usize, w: usize) -> (RasterImage<f64>, RasterImage<f64>) {
    let n_lines = rng.gen_range(2..=4);
    // Line: (normal angle, offset).
    let lines: Vec<(f64, f64)> = (0..n_lines)
        .map(|_| (rng.gen_range(0.0..std::f64::consts::PI), rng.gen_range(-0.6..0.6)))
        .collect();
    let regions = 1usize << n_lines;
    let planes: Vec<[f64; 3]> = (0..regions)
        .map(|_| [rng.gen_range(100.0..400.0), rng.gen_range(-60.0..60.0), rng.gen_range(-60.0..60.0)])
        .collect();
    let colors: Vec<[f64; 3]> = (0..regions)
        .map(|_| [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)])
        .collect();
    let bumps: Vec<[f64; 4]> = (0..3)
        .map(|_| {
            [
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
                rng.gen_range(0.05..0.25),
                rng.gen_range(-40.0..40.0),
            ]
        })
        .collect();
    let freq = [rng.gen_range(8.0..30.0), rng.gen_range(8.0..30.0)];
    let texture = rng.gen_range(0.02..0.08);

    let mut region = vec![0usize; h * w];
    let mut depth = RasterImage::zeros(h, w, 1);
    for r in 0..h {
        for c in 0..w {
            let y: f64 = pixel_center(r, h);
            let x: f64 = pixel_center(c, w);
            let id = lines.iter().enumerate().fold(0, |acc, (k, &(a, o))| {
                acc | (((y * a.sin() + x * a.cos() > o) as usize) << k)
            });
            region[r * w + c] = id;
            let [d0, dy, dx] = planes[id];
            let mut d = d0 + dy * y + dx * x;
            for &[by, bx, s, amp] in &bumps {
                d += amp * (-((y - by).powi(2) + (x - bx).powi(2)) / (2.0 * s * s)).exp();
            }
            depth.set(r, c, 0, d.max(10.0));
        }
    }
    let (dmin, dmax) = depth.min_max().unwrap();
    let span = (dmax - dmin).max(1e-9);
    let guide = RasterImage::from_fn(h, w, 3, |r, c, ch| {
        let y: f64 = pixel_center(r, h);
        let x: f64 = pixel_center(c, w);
        let shade = 0.75 + 0.25 * (1.0 - (depth.get(r, c, 0) - dmin) / span);
        let tex = texture * (freq[0] * y).sin() * (freq[1] * x).cos();
        (colors[region[r * w + c]][ch] * shade + tex).clamp(0.0, 1.0)
    });
    (depth, guide)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_example() {
        let d = RasterImage::from_vec(1, 3, 1, vec![2.0f64, 4.0, 6.0]).unwrap();
        let n = normalize_depth(&d);
        assert_eq!(n.image.as_slice(), &[0.0, 0.5, 1.0]);
        assert_eq!((n.min, n.max, n.constant), (2.0, 6.0, false));
        let c = normalize_depth(&RasterImage::filled(2, 2, 1, 5.0f64));
        assert!(c.constant);
        assert!(c.image.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dataset_names_parse() {
        assert_eq!("nyu_v2".parse::<DatasetName>().unwrap(), DatasetName::NyuV2);
        assert_eq!("middlebury_noisy".parse::<DatasetName>().unwrap().dir(), "middlebury");
        assert_eq!(DatasetName::MiddleburyNoisy.default_noise_sigma(), 651.0);
        assert!("kitti".parse::<DatasetName>().is_err());
    }

    #[test]
    fn proxy_std() {
        assert_eq!(NoiseProxy::NormalizedDepth.std_at(0.04, 0.5), Some(0.02));
        assert_eq!(NoiseProxy::InverseDisparity.std_at(651.0, 0.0), None);
        assert!((NoiseProxy::InverseDisparity.std_at(651.0, 100.0).unwrap() - 6.51).abs() < 1e-12);
    }
}
