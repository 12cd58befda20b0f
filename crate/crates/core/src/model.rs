//! The trainable network: two encoders, the implicit decoder, and the
//! optional bicubic residual base.

use serde::{Deserialize, Serialize};

use crate::coordgrid::{make_coord_grid, Coord};
use crate::encoders::{build_encoder, CodeSource, Encoder, EncoderConfig, EncoderTrace};
use crate::error::{JiifError, Result};
use crate::interpolation::{bicubic_resample, bicubic_resample_adjoint, bicubic_sample_into};
use crate::jiif_decoder::{
    build_decoder, DecoderConfig, DecoderMode, JiifDecoder, WeightStrategy, DEFAULT_HIDDEN_DIMS,
};
use crate::nn::{join, ParamMut, ParamRef, Parameters};
use crate::raster::RasterImage;
use crate::scalar::Scalar;
use crate::seed::{derive_seed, tags};

pub const DEFAULT_QUERY_CHUNK: usize = 30720;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub num_residual_blocks: usize,
    pub kernel_size: usize,
    pub hidden_dims: Vec<usize>,
    /// `joint` or `separate`; forced to `value_only` for the bilinear and
    /// direct-regression strategies.
    pub mode: DecoderMode,
    pub strategy: WeightStrategy,
    pub use_residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 128,
            num_residual_blocks: 16,
            kernel_size: 3,
            hidden_dims: DEFAULT_HIDDEN_DIMS.to_vec(),
            mode: DecoderMode::Joint,
            strategy: WeightStrategy::GraphAttention,
            use_residual: true,
        }
    }
}

impl ModelConfig {
    pub fn decoder_mode(&self) -> DecoderMode {
        match self.strategy {
            WeightStrategy::GraphAttention => self.mode,
            _ => DecoderMode::ValueOnly,
        }
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        DecoderConfig {
            feature_dim: self.feature_dim,
            hidden_dims: self.hidden_dims.clone(),
            mode: self.decoder_mode(),
            strategy: self.strategy,
        }
    }

    pub fn encoder_config(&self, in_channels: usize) -> EncoderConfig {
        EncoderConfig {
            feature_dim: self.feature_dim,
            num_residual_blocks: self.num_residual_blocks,
            kernel_size: self.kernel_size,
            in_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategy == WeightStrategy::GraphAttention && self.mode == DecoderMode::ValueOnly {
            return Err(JiifError::config(
                "mode",
                "graph attention weights need a joint or separate decoder",
            ));
        }
        self.encoder_config(1)
            .validate()
            .map_err(|e| JiifError::config("model", e.to_string()))?;
        self.decoder_config()
            .validate()
            .map_err(|e| JiifError::config("model", e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JiifModel<T> {
    config: ModelConfig,
    pub input_encoder: Encoder<T>,
    pub guide_encoder: Encoder<T>,
    pub decoder: JiifDecoder<T>,
}

pub fn build_model<T: Scalar>(config: ModelConfig, seed: u64) -> Result<JiifModel<T>> {
    config.validate()?;
    Ok(JiifModel {
        input_encoder: build_encoder(
            config.encoder_config(1),
            derive_seed(seed, &[tags::INPUT_ENCODER]),
        )?,
        guide_encoder: build_encoder(
            config.encoder_config(3),
            derive_seed(seed, &[tags::GUIDE_ENCODER]),
        )?,
        decoder: build_decoder(config.decoder_config(), derive_seed(seed, &[tags::DECODER]))?,
        config,
    })
}

/// Encoder outputs for one `(lr, guide)` pair.
struct Encoded<T> {
    z_lr: RasterImage<T>,
    g_hr: RasterImage<T>,
    g_lr: RasterImage<T>,
}

impl<T: Scalar> JiifModel<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn check_inputs(&self, lr_depth: &RasterImage<T>, hr_guide: &RasterImage<T>) -> Result<usize> {
        if lr_depth.channels() != 1 {
            return Err(JiifError::invalid(format!(
                "LR depth must be single-channel, got {}",
                lr_depth.channels()
            )));
        }
        if hr_guide.channels() != 3 {
            return Err(JiifError::invalid(format!(
                "guide must have 3 channels, got {}",
                hr_guide.channels()
            )));
        }
        let (lh, lw) = lr_depth.dims();
        let (hh, hw) = hr_guide.dims();
        if lh == 0 || lw == 0 || hh % lh != 0 || hw % lw != 0 || hh / lh != hw / lw {
            return Err(JiifError::invalid(format!(
                "LR {lh}x{lw} and HR {hh}x{hw} are not related by an integer scale"
            )));
        }
        Ok(hh / lh)
    }

    fn encode(&self, lr_depth: &RasterImage<T>, hr_guide: &RasterImage<T>) -> Result<Encoded<T>> {
        let z = self.input_encoder.encode(lr_depth, CodeSource::Input)?;
        let g = self.guide_encoder.encode(hr_guide, CodeSource::Guide)?;
        let g_lr = bicubic_resample(&g.codes, lr_depth.height(), lr_depth.width())?;
        Ok(Encoded {
            z_lr: z.codes,
            g_hr: g.codes,
            g_lr,
        })
    }

    fn add_base(&self, lr_depth: &RasterImage<T>, queries: &[Coord<T>], preds: &mut [T]) {
        if !self.config.use_residual {
            return;
        }
        let mut base = [T::zero()];
        for (p, &q) in preds.iter_mut().zip(queries) {
            bicubic_sample_into(lr_depth, q, &mut base);
            *p += base[0];
        }
    }

    /// Predicted (normalized) depth at each query coordinate.
    pub fn forward(
        &self,
        lr_depth: &RasterImage<T>,
        hr_guide: &RasterImage<T>,
        queries: &[Coord<T>],
    ) -> Result<Vec<T>> {
        self.forward_chunked(lr_depth, hr_guide, queries, DEFAULT_QUERY_CHUNK)
    }

    pub fn forward_chunked(
        &self,
        lr_depth: &RasterImage<T>,
        hr_guide: &RasterImage<T>,
        queries: &[Coord<T>],
        chunk: usize,
    ) -> Result<Vec<T>> {
        self.check_inputs(lr_depth, hr_guide)?;
        let enc = self.encode(lr_depth, hr_guide)?;
        let mut out = Vec::with_capacity(queries.len());
        for qs in queries.chunks(chunk.max(1)) {
            let fwd = self.decoder.query_batch(&enc.z_lr, &enc.g_lr, &enc.g_hr, qs)?;
            let start = out.len();
            out.extend_from_slice(&fwd.predictions);
            self.add_base(lr_depth, qs, &mut out[start..]);
        }
        Ok(out)
    }

    /// Queries every HR pixel center and assembles the (normalized) HR depth.
    pub fn full_inference(
        &self,
        lr_depth: &RasterImage<T>,
        hr_guide: &RasterImage<T>,
        chunk: usize,
    ) -> Result<RasterImage<T>> {
        let (h, w) = hr_guide.dims();
        let grid = make_coord_grid::<T>(h, w)?;
        let values = self.forward_chunked(lr_depth, hr_guide, grid.coords(), chunk)?;
        RasterImage::from_vec(h, w, 1, values)
    }

    /// Predictions and parameter gradients of an objective whose derivative
    /// with respect to prediction `i` is `upstream(i, prediction_i)`.
    pub fn gradient(
        &self,
        lr_depth: &RasterImage<T>,
        hr_guide: &RasterImage<T>,
        queries: &[Coord<T>],
        chunk: usize,
        mut upstream: impl FnMut(usize, T) -> T,
    ) -> Result<(Vec<T>, JiifModel<T>)> {
        self.check_inputs(lr_depth, hr_guide)?;
        let (z, z_trace): (_, EncoderTrace<T>) =
            self.input_encoder.forward_trace(lr_depth, CodeSource::Input)?;
        let (g, g_trace) = self.guide_encoder.forward_trace(hr_guide, CodeSource::Guide)?;
        let (lh, lw) = lr_depth.dims();
        let (hh, hw) = hr_guide.dims();
        let g_lr = bicubic_resample(&g.codes, lh, lw)?;

        let mut grads = self.zeros_like();
        let f = self.config.feature_dim;
        let mut gz = RasterImage::<T>::zeros(lh, lw, f);
        let mut gg_lr = RasterImage::<T>::zeros(lh, lw, f);
        let mut gg_hr = RasterImage::<T>::zeros(hh, hw, f);
        let mut preds = Vec::with_capacity(queries.len());

        for qs in queries.chunks(chunk.max(1)) {
            let fwd = self.decoder.query_batch(&z.codes, &g_lr, &g.codes, qs)?;
            let start = preds.len();
            preds.extend_from_slice(&fwd.predictions);
            self.add_base(lr_depth, qs, &mut preds[start..]);
            let gp: Vec<T> = preds[start..]
                .iter()
                .enumerate()
                .map(|(i, &p)| upstream(start + i, p))
                .collect();
            let qg = self
                .decoder
                .backward(&fwd, &gp, (lh, lw), &g.codes, &mut grads.decoder);
            *gz.array_mut() += qg.z_lr.array();
            *gg_lr.array_mut() += qg.g_lr.array();
            *gg_hr.array_mut() += qg.g_hr.array();
        }

        *gg_hr.array_mut() += bicubic_resample_adjoint(&gg_lr, hh, hw).array();
        self.input_encoder
            .backward(&z_trace, &gz, &mut grads.input_encoder, false);
        self.guide_encoder
            .backward(&g_trace, &gg_hr, &mut grads.guide_encoder, false);
        Ok((preds, grads))
    }
}

impl<T: Scalar> Parameters<T> for JiifModel<T> {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        self.input_encoder.collect_params(&join(prefix, "input_encoder"), out);
        self.guide_encoder.collect_params(&join(prefix, "guide_encoder"), out);
        self.decoder.collect_params(&join(prefix, "decoder"), out);
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        self.input_encoder.collect_params_mut(&join(prefix, "input_encoder"), out);
        self.guide_encoder.collect_params_mut(&join(prefix, "guide_encoder"), out);
        self.decoder.collect_params_mut(&join(prefix, "decoder"), out);
    }
}

/// Zeroes every decoder parameter, leaving the encoders untouched. With
/// residual learning on, the model then reproduces bicubic up-sampling.
pub fn zero_decoder<T: Scalar>(model: &mut JiifModel<T>) {
    model.decoder.fill_zero();
}
