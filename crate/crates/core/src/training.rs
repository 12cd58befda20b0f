//! L1 objective, step learning-rate schedule, Adam, checkpoints and the
//! training loop.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{sample_training_patch, DegradationSpec, PatchConfig, RgbdPair};
use crate::error::{JiifError, Result};
use crate::model::{build_model, JiifModel, ModelConfig, DEFAULT_QUERY_CHUNK};
use crate::nn::Parameters;
use crate::scalar::{DType, Scalar};
use crate::seed::{derive_seed, rng_for, serde_seed, tags};

/// Mean absolute error.
pub fn l1_loss<T: Scalar>(predicted: &[T], target: &[T]) -> Result<T> {
    check_lengths(predicted, target)?;
    let sum = predicted
        .iter()
        .zip(target)
        .fold(T::zero(), |acc, (&p, &t)| acc + (p - t).abs());
    Ok(sum / T::of_usize(predicted.len()))
}

/// Gradient of [`l1_loss`] with respect to `predicted`; zero at exact ties.
pub fn l1_loss_grad<T: Scalar>(predicted: &[T], target: &[T]) -> Result<Vec<T>> {
    check_lengths(predicted, target)?;
    let inv = T::one() / T::of_usize(predicted.len());
    Ok(predicted
        .iter()
        .zip(target)
        .map(|(&p, &t)| l1_sign(p - t) * inv)
        .collect())
}

fn l1_sign<T: Scalar>(d: T) -> T {
    if d > T::zero() {
        T::one()
    } else if d < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn check_lengths<T>(a: &[T], b: &[T]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(JiifError::invalid(format!(
            "l1 loss needs equal non-empty lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Step decay: `lr0 * factor^k` for epochs `k*every + 1 ..= (k+1)*every`
/// (epochs count from 1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub lr0: f64,
    pub factor: f64,
    pub every: usize,
}

impl LrSchedule {
    pub fn decays_before(&self, epoch: usize) -> u32 {
        (epoch.saturating_sub(1) / self.every.max(1)) as u32
    }

    /// The product is formed in decimal and rounded once, so the values are
    /// the literals `1e-4, 2e-5, 4e-6, 8e-7` rather than accumulated
    /// binary products.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let k = self.decays_before(epoch);
        decimal_product(self.lr0, self.factor, k).unwrap_or_else(|| self.lr0 * self.factor.powi(k as i32))
    }
}

/// `(mantissa, exponent)` with `value == mantissa * 10^exponent`, taken from
/// the shortest round-trip decimal representation.
fn to_decimal(v: f64) -> Option<(u128, i32)> {
    if !(v.is_finite() && v >= 0.0) {
        return None;
    }
    let s = format!("{v:e}");
    let (mant, exp) = s.split_once('e')?;
    let exp: i32 = exp.parse().ok()?;
    let (int, frac) = mant.split_once('.').unwrap_or((mant, ""));
    let digits: u128 = format!("{int}{frac}").parse().ok()?;
    Some((digits, exp - frac.len() as i32))
}

fn decimal_product(base: f64, factor: f64, k: u32) -> Option<f64> {
    let (mut m, mut e) = to_decimal(base)?;
    let (fm, fe) = to_decimal(factor)?;
    for _ in 0..k {
        m = m.checked_mul(fm)?;
        e += fe;
    }
    format!("{m}e{e}").parse().ok()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments share the parameter container's
/// structure.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<M> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: M,
    pub v: M,
}

impl<M: Clone> Adam<M> {
    pub fn new<T: Scalar>(config: AdamConfig, params: &M) -> Self
    where
        M: Parameters<T>,
    {
        Self {
            config,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step<T: Scalar>(&mut self, params: &mut M, grads: &M, lr: f64)
    where
        M: Parameters<T>,
    {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = T::of(1.0 - beta1.powi(self.t as i32));
        let c2 = T::of(1.0 - beta2.powi(self.t as i32));
        let (b1, b2, eps, lr) = (T::of(beta1), T::of(beta2), T::of(eps), T::of(lr));
        let one = T::one();
        let g = grads.params();
        let mut m = self.m.params_mut();
        let mut v = self.v.params_mut();
        for (i, p) in params.params_mut().iter_mut().enumerate() {
            let (gi, mi, vi) = (g[i].data, &mut *m[i].data, &mut *v[i].data);
            for j in 0..p.data.len() {
                mi[j] = b1 * mi[j] + (one - b1) * gi[j];
                vi[j] = b2 * vi[j] + (one - b2) * gi[j] * gi[j];
                let mhat = mi[j] / c1;
                let vhat = vi[j] / c2;
                p.data[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay_factor: f64,
    pub decay_every: usize,
    pub adam: AdamConfig,
    #[serde(with = "serde_seed")]
    pub seed: u64,
    pub scale: usize,
    pub noise_sigma: f64,
    pub patch: PatchConfig,
    /// Epoch interval between checkpoints; the last epoch is always saved.
    pub checkpoint_every: usize,
    pub query_chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 1,
            lr0: 1e-4,
            lr_decay_factor: 0.2,
            decay_every: 60,
            adam: AdamConfig::default(),
            seed: 0,
            scale: 8,
            noise_sigma: 0.0,
            patch: PatchConfig::default(),
            checkpoint_every: 10,
            query_chunk: DEFAULT_QUERY_CHUNK,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            lr0: self.lr0,
            factor: self.lr_decay_factor,
            every: self.decay_every,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("decay_every", self.decay_every),
            ("scale", self.scale),
            ("checkpoint_every", self.checkpoint_every),
            ("query_chunk", self.query_chunk),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(JiifError::config(field, "must be positive"));
            }
        }
        if self.batch_size != 1 {
            return Err(JiifError::config("batch_size", "only a batch size of 1 is supported"));
        }
        for (field, v) in [("lr0", self.lr0), ("lr_decay_factor", self.lr_decay_factor), ("adam.eps", self.adam.eps)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(JiifError::config(field, "must be positive and finite"));
            }
        }
        for (field, v) in [("adam.beta1", self.adam.beta1), ("adam.beta2", self.adam.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(JiifError::config(field, "must lie in [0, 1)"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(JiifError::config("noise_sigma", "must be finite and non-negative"));
        }
        self.patch.validate(self.scale)
    }
}

/// Model, optimizer state and counters at the end of an epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub epoch: usize,
    pub step: u64,
    pub model: JiifModel<T>,
    pub optimizer: Option<Adam<JiifModel<T>>>,
}

const MAGIC: &[u8; 8] = b"JIIFCKP1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dtype: String,
    epoch: usize,
    step: u64,
    #[serde(with = "serde_seed")]
    seed: u64,
    adam_t: Option<u64>,
    model: ModelConfig,
    train: TrainConfig,
}

impl<T: Scalar> Checkpoint<T> {
    /// A fresh model with no optimizer history.
    pub fn initial(model_config: ModelConfig, train_config: TrainConfig) -> Result<Self> {
        let model = build_model(model_config.clone(), train_config.seed)?;
        Ok(Self {
            model_config,
            train_config,
            epoch: 0,
            step: 0,
            model,
            optimizer: None,
        })
    }

    /// Binary layout, little-endian throughout:
    ///
    /// ```text
    /// "JIIFCKP1" | u32 header_len | TOML header | u32 tensor_count |
    /// per tensor: u16 name_len | name | u8 dtype | u8 ndim | u64 dims[ndim] | data
    /// ```
    ///
    /// Optimizer moments follow the model tensors as `adam.m/<name>` and
    /// `adam.v/<name>`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            dtype: T::DTYPE.name().to_string(),
            epoch: self.epoch,
            step: self.step,
            seed: self.train_config.seed,
            adam_t: self.optimizer.as_ref().map(|o| o.t),
            model: self.model_config.clone(),
            train: self.train_config.clone(),
        };
        let text = toml::to_string(&header).expect("checkpoint header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());

        let mut tensors: Vec<(String, Vec<usize>, &[T])> = self
            .model
            .params()
            .into_iter()
            .map(|p| (p.name, p.shape, p.data))
            .collect();
        if let Some(opt) = &self.optimizer {
            for (tag, state) in [("adam.m/", &opt.m), ("adam.v/", &opt.v)] {
                tensors.extend(
                    state
                        .params()
                        .into_iter()
                        .map(|p| (format!("{tag}{}", p.name), p.shape, p.data)),
                );
            }
        }
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, shape, data) in tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(T::DTYPE.tag());
            out.push(shape.len() as u8);
            for d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in data {
                v.write_le(&mut out);
            }
        }
        out
    }

    /// Parses a checkpoint; tensors stored in another precision are cast.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(JiifError::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let hlen = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(hlen)?)
            .map_err(|_| JiifError::Checkpoint("header is not UTF-8".into()))?;
        let header: Header =
            toml::from_str(text).map_err(|e| JiifError::Checkpoint(format!("header: {e}")))?;
        let mut train_config = header.train;
        train_config.seed = header.seed;
        let mut model = build_model::<T>(header.model.clone(), 0)
            .map_err(|e| JiifError::Checkpoint(format!("model config: {e}")))?;
        let mut optimizer = header.adam_t.map(|t| Adam {
            config: train_config.adam,
            t,
            m: model.zeros_like(),
            v: model.zeros_like(),
        });

        let count = r.u32()? as usize;
        let mut seen = std::collections::HashSet::new();
        for _ in 0..count {
            let nlen = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| JiifError::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let dtype = DType::from_tag(r.u8()?)
                .ok_or_else(|| JiifError::Checkpoint(format!("{name}: unknown dtype")))?;
            let ndim = r.u8()? as usize;
            let shape: Vec<usize> = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n * dtype.size())?;

            let (target, key) = match (name.strip_prefix("adam.m/"), name.strip_prefix("adam.v/")) {
                (Some(k), _) => (optimizer.as_mut().map(|o| &mut o.m), k),
                (_, Some(k)) => (optimizer.as_mut().map(|o| &mut o.v), k),
                _ => (Some(&mut model), name.as_str()),
            };
            let target = target.ok_or_else(|| {
                JiifError::Checkpoint(format!("{name}: optimizer tensor without optimizer state"))
            })?;
            let mut params = target.params_mut();
            let slot = params
                .iter_mut()
                .find(|p| p.name == key)
                .ok_or_else(|| JiifError::Checkpoint(format!("unexpected tensor {name}")))?;
            if slot.shape != shape {
                return Err(JiifError::Checkpoint(format!(
                    "{name}: shape {shape:?} does not match the model's {:?}",
                    slot.shape
                )));
            }
            for (i, v) in slot.data.iter_mut().enumerate() {
                let chunk = &raw[i * dtype.size()..][..dtype.size()];
                *v = match dtype {
                    DType::F32 => T::of(f32::read_le(chunk) as f64),
                    DType::F64 => T::of(f64::read_le(chunk)),
                };
            }
            seen.insert(name);
        }
        let expected = model.params().len() * if optimizer.is_some() { 3 } else { 1 };
        if seen.len() != expected {
            return Err(JiifError::Checkpoint(format!(
                "expected {expected} tensors, found {}",
                seen.len()
            )));
        }
        if r.pos != bytes.len() {
            return Err(JiifError::Checkpoint("trailing bytes after the last tensor".into()));
        }
        Ok(Self {
            model_config: header.model,
            train_config,
            epoch: header.epoch,
            step: header.step,
            model,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| JiifError::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| JiifError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| JiifError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            JiifError::Checkpoint(m) => JiifError::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| JiifError::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

impl std::fmt::Display for StepLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "step={} epoch={} lr={:e} loss={:.8}", self.step, self.epoch, self.lr, self.loss)
    }
}

/// Callbacks from [`train`]. Errors returned here abort training.
pub trait TrainObserver<T> {
    fn on_step(&mut self, _log: &StepLog) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _ckpt: &Checkpoint<T>) -> Result<()> {
        Ok(())
    }

    /// Called with the state that produced a non-finite loss.
    fn on_abort(&mut self, _ckpt: &Checkpoint<T>) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores every event.
pub struct Silent;

impl<T> TrainObserver<T> for Silent {}

/// Runs the remaining epochs of `state` over `pairs`. Each epoch visits every
/// pair once in a seeded order; each visit is one optimizer step.
pub fn train<T: Scalar>(
    mut state: Checkpoint<T>,
    pairs: &[RgbdPair<T>],
    observer: &mut dyn TrainObserver<T>,
) -> Result<Checkpoint<T>> {
    let cfg = state.train_config.clone();
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(JiifError::invalid("training needs at least one pair"));
    }
    let schedule = cfg.schedule();
    let mut optimizer = state
        .optimizer
        .take()
        .unwrap_or_else(|| Adam::new(cfg.adam, &state.model));
    let n = pairs.len();

    for epoch in state.epoch + 1..=cfg.epochs {
        let lr = schedule.lr_at(epoch);
        let order = {
            let mut idx: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(&mut idx[..], &mut rng_for(cfg.seed, &[tags::SHUFFLE, epoch as u64]));
            idx
        };
        for &pi in &order {
            let pair = &pairs[pi];
            let spec = DegradationSpec::noisy(cfg.scale, cfg.noise_sigma, pair.value_kind);
            let sample_seed = derive_seed(cfg.seed, &[tags::PATCH, epoch as u64, pi as u64]);
            let sample = sample_training_patch(pair, &spec, &cfg.patch, sample_seed)?;
            let inv_n = T::one() / T::of_usize(sample.targets.len());
            let targets = &sample.targets;
            let result = state.model.gradient(
                &sample.lr_depth,
                &sample.hr_guide,
                &sample.queries,
                cfg.query_chunk,
                |i, p| l1_sign(p - targets[i]) * inv_n,
            );
            state.step += 1;
            let failure = match &result {
                Err(JiifError::Numeric(msg)) => Some(msg.clone()),
                Err(_) => None,
                Ok((preds, _)) => {
                    let loss = l1_loss(preds, targets)?.to_f64_lossy();
                    (!loss.is_finite()).then(|| format!("loss is {loss}"))
                }
            };
            if let Some(msg) = failure {
                state.epoch = epoch;
                state.optimizer = Some(optimizer);
                observer.on_abort(&state)?;
                return Err(JiifError::Numeric(format!(
                    "step {} (epoch {epoch}, pair {}): {msg}",
                    state.step, pair.id
                )));
            }
            let (preds, grads) = result?;
            let log = StepLog {
                step: state.step,
                epoch,
                lr,
                loss: l1_loss(&preds, targets)?.to_f64_lossy(),
            };
            optimizer.step(&mut state.model, &grads, lr);
            log::debug!("{log}");
            observer.on_step(&log)?;
        }
        state.epoch = epoch;
        if epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs {
            state.optimizer = Some(optimizer.clone());
            observer.on_checkpoint(&state)?;
        }
    }
    state.optimizer = Some(optimizer);
    Ok(state)
}
