//! Convolutional feature extractors producing per-pixel latent codes at the
//! resolution of their input.
//!
//! The backbone is EDSR-baseline with its up-sampler removed: a head
//! convolution, a stack of `conv -> ReLU -> conv` residual blocks, a body
//! convolution, and a skip from the head output around the whole body.

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coordgrid::{make_coord_grid, CoordGrid};
use crate::error::{JiifError, Result};
use crate::nn::{join, relu_backward_inplace, relu_inplace, Conv2d, ParamMut, ParamRef, Parameters};
use crate::raster::RasterImage;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeSource {
    Input,
    Guide,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentCodeMap<T> {
    pub codes: RasterImage<T>,
    pub source: CodeSource,
}

impl<T: Scalar> LatentCodeMap<T> {
    pub fn new(codes: RasterImage<T>, source: CodeSource) -> Self {
        Self { codes, source }
    }

    pub fn feature_dim(&self) -> usize {
        self.codes.channels()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.codes.dims()
    }

    pub fn grid(&self) -> CoordGrid<T> {
        make_coord_grid(self.codes.height(), self.codes.width())
            .expect("code maps are never empty")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub feature_dim: usize,
    pub num_residual_blocks: usize,
    pub kernel_size: usize,
    pub in_channels: usize,
}

impl EncoderConfig {
    pub fn depth() -> Self {
        Self {
            feature_dim: 128,
            num_residual_blocks: 16,
            kernel_size: 3,
            in_channels: 1,
        }
    }

    pub fn guide() -> Self {
        Self {
            in_channels: 3,
            ..Self::depth()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(JiifError::invalid("encoder feature_dim must be at least 1"));
        }
        if self.num_residual_blocks == 0 {
            return Err(JiifError::invalid("encoder needs at least one residual block"));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(JiifError::invalid(format!(
                "kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.in_channels == 0 {
            return Err(JiifError::invalid("encoder in_channels must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock<T> {
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<T> {
    config: EncoderConfig,
    pub head: Conv2d<T>,
    pub blocks: Vec<ResBlock<T>>,
    pub body_tail: Conv2d<T>,
}

/// Activations kept for the backward pass.
pub struct EncoderTrace<T> {
    input: Array3<T>,
    block_inputs: Vec<Array3<T>>,
    block_hidden: Vec<Array3<T>>,
    body_in: Array3<T>,
}

pub fn build_encoder<T: Scalar>(config: EncoderConfig, seed: u64) -> Result<Encoder<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k, f) = (config.kernel_size, config.feature_dim);
    let head = Conv2d::init(k, config.in_channels, f, &mut rng);
    let blocks = (0..config.num_residual_blocks)
        .map(|_| ResBlock {
            conv1: Conv2d::init(k, f, f, &mut rng),
            conv2: Conv2d::init(k, f, f, &mut rng),
        })
        .collect();
    let body_tail = Conv2d::init(k, f, f, &mut rng);
    Ok(Encoder {
        config,
        head,
        blocks,
        body_tail,
    })
}

impl<T: Scalar> Encoder<T> {
    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn encode(&self, image: &RasterImage<T>, source: CodeSource) -> Result<LatentCodeMap<T>> {
        Ok(self.forward_trace(image, source)?.0)
    }

    pub fn forward_trace(
        &self,
        image: &RasterImage<T>,
        source: CodeSource,
    ) -> Result<(LatentCodeMap<T>, EncoderTrace<T>)> {
        if image.channels() != self.config.in_channels {
            return Err(JiifError::invalid(format!(
                "encoder expects {} input channels, image has {}",
                self.config.in_channels,
                image.channels()
            )));
        }
        if image.is_empty() {
            return Err(JiifError::invalid("cannot encode an empty image"));
        }
        let input = image.array().clone();
        let head_out = self.head.forward(&input);
        let mut r = head_out.clone();
        let mut block_inputs = Vec::with_capacity(self.blocks.len());
        let mut block_hidden = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let mut t = block.conv1.forward(&r);
            relu_inplace(t.as_slice_mut().unwrap());
            let next = &r + &block.conv2.forward(&t);
            block_inputs.push(r);
            block_hidden.push(t);
            r = next;
        }
        let mut out = self.body_tail.forward(&r);
        out += &head_out;
        let trace = EncoderTrace {
            input,
            block_inputs,
            block_hidden,
            body_in: r,
        };
        Ok((LatentCodeMap::new(RasterImage::from_array(out), source), trace))
    }

    /// Back-propagates `grad_codes` (same shape as the code map), accumulating
    /// into `grads`. Returns the gradient with respect to the input image when
    /// requested.
    pub fn backward(
        &self,
        trace: &EncoderTrace<T>,
        grad_codes: &RasterImage<T>,
        grads: &mut Encoder<T>,
        need_input_grad: bool,
    ) -> Option<RasterImage<T>> {
        let g_out = grad_codes.array();
        let mut g_r = self
            .body_tail
            .backward(&trace.body_in, g_out, &mut grads.body_tail, true)
            .expect("input gradient requested");
        for (i, block) in self.blocks.iter().enumerate().rev() {
            let t = &trace.block_hidden[i];
            let mut g_t = block
                .conv2
                .backward(t, &g_r, &mut grads.blocks[i].conv2, true)
                .expect("input gradient requested");
            relu_backward_inplace(g_t.as_slice_mut().unwrap(), t.as_slice().unwrap());
            let g_in = block
                .conv1
                .backward(&trace.block_inputs[i], &g_t, &mut grads.blocks[i].conv1, true)
                .expect("input gradient requested");
            g_r += &g_in;
        }
        g_r += g_out;
        self.head
            .backward(&trace.input, &g_r, &mut grads.head, need_input_grad)
            .map(RasterImage::from_array)
    }
}

impl<T: Scalar> Parameters<T> for Encoder<T> {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        self.head.collect_params(&join(prefix, "head"), out);
        for (i, b) in self.blocks.iter().enumerate() {
            let p = join(prefix, &format!("blocks.{i}"));
            b.conv1.collect_params(&join(&p, "conv1"), out);
            b.conv2.collect_params(&join(&p, "conv2"), out);
        }
        self.body_tail.collect_params(&join(prefix, "body_tail"), out);
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        self.head.collect_params_mut(&join(prefix, "head"), out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = join(prefix, &format!("blocks.{i}"));
            b.conv1.collect_params_mut(&join(&p, "conv1"), out);
            b.conv2.collect_params_mut(&join(&p, "conv2"), out);
        }
        self.body_tail.collect_params_mut(&join(prefix, "body_tail"), out);
    }
}
