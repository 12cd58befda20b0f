//! The implicit decoder: for each HR query it predicts an interpolation value
//! and an edge logit for each of the four surrounding LR pixels, normalizes
//! the logits with a softmax, and returns the weighted sum.
//!
//! Three decoder layouts are supported:
//!
//! * `Joint`: one MLP on `[z_i, g_i, g_q - g_i, x_q - x_i]` emitting
//!   `(value, logit)`.
//! * `Separate`: a value MLP on `[z_i, g_i, x_q - x_i]` and a weight MLP on
//!   `[g_i, g_q - g_i]`.
//! * `ValueOnly`: the value MLP alone; weights come from bilinear areas or
//!   from a linear regression head on `g_q`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coordgrid::{corner_neighbors, nearest_index, Coord, QueryBundle};
use crate::error::{JiifError, Result};
use crate::interpolation::{bicubic_resample, bilinear_weights, weighted_interpolate};
use crate::nn::{join, Linear, Mlp, MlpTrace, ParamMut, ParamRef, Parameters};
use crate::raster::RasterImage;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderMode {
    Joint,
    Separate,
    ValueOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightStrategy {
    GraphAttention,
    Bilinear,
    DirectRegression,
}

impl WeightStrategy {
    pub const ALL: [WeightStrategy; 3] = [
        WeightStrategy::Bilinear,
        WeightStrategy::DirectRegression,
        WeightStrategy::GraphAttention,
    ];

    pub fn label(self) -> &'static str {
        match self {
            WeightStrategy::GraphAttention => "Graph Attention",
            WeightStrategy::Bilinear => "Bilinear",
            WeightStrategy::DirectRegression => "Direct Regression",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            WeightStrategy::GraphAttention => "graph_attention",
            WeightStrategy::Bilinear => "bilinear",
            WeightStrategy::DirectRegression => "direct_regression",
        }
    }
}

impl fmt::Display for WeightStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for WeightStrategy {
    type Err = JiifError;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "graph_attention" => Ok(WeightStrategy::GraphAttention),
            "bilinear" => Ok(WeightStrategy::Bilinear),
            "direct_regression" => Ok(WeightStrategy::DirectRegression),
            other => Err(JiifError::config(
                "strategy",
                format!("unknown weight strategy `{other}` (bilinear, direct_regression, graph_attention)"),
            )),
        }
    }
}

impl fmt::Display for DecoderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderMode::Joint => "joint",
            DecoderMode::Separate => "separate",
            DecoderMode::ValueOnly => "value_only",
        })
    }
}

impl FromStr for DecoderMode {
    type Err = JiifError;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "joint" => Ok(DecoderMode::Joint),
            "separate" => Ok(DecoderMode::Separate),
            "value_only" => Ok(DecoderMode::ValueOnly),
            other => Err(JiifError::config(
                "mode",
                format!("unknown decoder mode `{other}` (joint, separate, value_only)"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub feature_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub mode: DecoderMode,
    pub strategy: WeightStrategy,
}

pub const DEFAULT_HIDDEN_DIMS: [usize; 4] = [1024, 512, 256, 128];

impl DecoderConfig {
    pub fn joint(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            hidden_dims: DEFAULT_HIDDEN_DIMS.to_vec(),
            mode: DecoderMode::Joint,
            strategy: WeightStrategy::GraphAttention,
        }
    }

    /// Input width of the value (or joint) network.
    pub fn value_input_width(&self) -> usize {
        match self.mode {
            DecoderMode::Joint => 3 * self.feature_dim + 2,
            _ => 2 * self.feature_dim + 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(JiifError::invalid("decoder feature_dim must be at least 1"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(JiifError::invalid("decoder hidden widths must be positive"));
        }
        let ok = match self.strategy {
            WeightStrategy::GraphAttention => self.mode != DecoderMode::ValueOnly,
            _ => self.mode == DecoderMode::ValueOnly,
        };
        if !ok {
            return Err(JiifError::invalid(format!(
                "weight strategy {} is incompatible with decoder mode {}",
                self.strategy, self.mode
            )));
        }
        Ok(())
    }

    fn widths(&self, input: usize, output: usize) -> Vec<usize> {
        std::iter::once(input)
            .chain(self.hidden_dims.iter().copied())
            .chain(std::iter::once(output))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JiifDecoder<T> {
    config: DecoderConfig,
    /// Joint mode: outputs `(value, logit)`; otherwise the value alone.
    pub value_net: Mlp<T>,
    /// Separate mode only.
    pub weight_net: Option<Mlp<T>>,
    /// Direct-regression strategy only: `g_q -> 4 logits`.
    pub regression_head: Option<Linear<T>>,
}

pub fn build_decoder<T: Scalar>(config: DecoderConfig, seed: u64) -> Result<JiifDecoder<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = config.feature_dim;
    let value_out = if config.mode == DecoderMode::Joint { 2 } else { 1 };
    let value_net = Mlp::init(&config.widths(config.value_input_width(), value_out), &mut rng);
    let weight_net = (config.mode == DecoderMode::Separate)
        .then(|| Mlp::init(&config.widths(2 * f, 1), &mut rng));
    let regression_head = (config.strategy == WeightStrategy::DirectRegression)
        .then(|| Linear::init(f, 4, &mut rng));
    Ok(JiifDecoder {
        config,
        value_net,
        weight_net,
        regression_head,
    })
}

/// Softmax over the four corner logits.
pub fn normalize_weights<T: Scalar>(logits: &[T; 4]) -> Result<[T; 4]> {
    if logits.iter().any(|v| v.is_nan()) {
        return Err(JiifError::Numeric(format!("NaN interpolation logit in {logits:?}")));
    }
    let max = logits.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let exps = logits.map(|a| (a - max).exp());
    let sum = exps.iter().fold(T::zero(), |s, &e| s + e);
    Ok(exps.map(|e| e / sum))
}

fn softmax_backward<T: Scalar>(weights: &[T; 4], grad_weights: &[T; 4]) -> [T; 4] {
    let dot = weights
        .iter()
        .zip(grad_weights)
        .fold(T::zero(), |s, (&w, &g)| s + w * g);
    std::array::from_fn(|k| weights[k] * (grad_weights[k] - dot))
}

/// Everything the backward pass needs from a batched query.
pub struct QueryForward<T> {
    pub predictions: Vec<T>,
    pub weights: Vec<[T; 4]>,
    pub values: Vec<[T; 4]>,
    bundles: Vec<QueryBundle<T>>,
    hr_pixels: Vec<(usize, usize)>,
    value_trace: MlpTrace<T>,
    weight_trace: Option<MlpTrace<T>>,
}

/// Gradients of a batched query with respect to the three code maps.
pub struct QueryGrads<T> {
    pub z_lr: RasterImage<T>,
    pub g_lr: RasterImage<T>,
    pub g_hr: RasterImage<T>,
}

impl<T: Scalar> JiifDecoder<T> {
    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn mode(&self) -> DecoderMode {
        self.config.mode
    }

    pub fn strategy(&self) -> WeightStrategy {
        self.config.strategy
    }

    fn check_dim(&self, name: &str, v: &[T]) -> Result<()> {
        if v.len() != self.config.feature_dim {
            return Err(JiifError::invalid(format!(
                "{name} has {} channels, decoder expects {}",
                v.len(),
                self.config.feature_dim
            )));
        }
        Ok(())
    }

    /// Joint decoder on one corner: returns `(logit, value)`.
    pub fn decode_joint(&self, z_i: &[T], g_i: &[T], g_rel: &[T], x_rel: Coord<T>) -> Result<(T, T)> {
        if self.config.mode != DecoderMode::Joint {
            return Err(JiifError::InvalidState(format!(
                "decode_joint needs a joint decoder, this one is {}",
                self.config.mode
            )));
        }
        self.check_dim("z_i", z_i)?;
        self.check_dim("g_i", g_i)?;
        self.check_dim("g_rel", g_rel)?;
        let row: Vec<T> = [z_i, g_i, g_rel, &[x_rel.y, x_rel.x][..]].concat();
        let out = self.value_net.forward(ArrayView1::from(&row).insert_axis(ndarray::Axis(0)));
        Ok((out[[0, 1]], out[[0, 0]]))
    }

    /// Value network of the separate/value-only layouts.
    pub fn decode_value(&self, z_i: &[T], g_i: &[T], x_rel: Coord<T>) -> Result<T> {
        if self.config.mode == DecoderMode::Joint {
            return Err(JiifError::InvalidState(
                "decode_value is unavailable on a joint decoder".into(),
            ));
        }
        self.check_dim("z_i", z_i)?;
        self.check_dim("g_i", g_i)?;
        let row: Vec<T> = [z_i, g_i, &[x_rel.y, x_rel.x][..]].concat();
        let out = self.value_net.forward(ArrayView1::from(&row).insert_axis(ndarray::Axis(0)));
        Ok(out[[0, 0]])
    }

    /// Edge logit of the separate layout; not symmetric in `(g_i, g_q)`.
    pub fn decode_weight(&self, g_i: &[T], g_rel: &[T]) -> Result<T> {
        let net = self.weight_net.as_ref().ok_or_else(|| {
            JiifError::InvalidState(format!(
                "decode_weight needs a separate decoder, this one is {}",
                self.config.mode
            ))
        })?;
        self.check_dim("g_i", g_i)?;
        self.check_dim("g_rel", g_rel)?;
        let row: Vec<T> = [g_i, g_rel].concat();
        let out = net.forward(ArrayView1::from(&row).insert_axis(ndarray::Axis(0)));
        Ok(out[[0, 0]])
    }

    /// Predicts one HR pixel from an LR input code map and an HR guide code map.
    pub fn query_pixel(
        &self,
        z_map: &RasterImage<T>,
        g_map: &RasterImage<T>,
        x_q: Coord<T>,
    ) -> Result<T> {
        self.check_maps(z_map, g_map)?;
        let g_lr = bicubic_resample(g_map, z_map.height(), z_map.width())?;
        Ok(self.query_batch(z_map, &g_lr, g_map, &[x_q])?.predictions[0])
    }

    fn check_maps(&self, z_map: &RasterImage<T>, g_hr: &RasterImage<T>) -> Result<()> {
        let f = self.config.feature_dim;
        if z_map.channels() != f || g_hr.channels() != f {
            return Err(JiifError::invalid(format!(
                "code maps have {}/{} channels, decoder expects {f}",
                z_map.channels(),
                g_hr.channels()
            )));
        }
        if z_map.is_empty() || g_hr.is_empty() {
            return Err(JiifError::invalid("empty code map"));
        }
        if g_hr.height() < z_map.height() || g_hr.width() < z_map.width() {
            return Err(JiifError::invalid(format!(
                "guide codes {}x{} are smaller than input codes {}x{}",
                g_hr.height(),
                g_hr.width(),
                z_map.height(),
                z_map.width()
            )));
        }
        Ok(())
    }

    /// Batched prediction. `g_lr` is `g_hr` bicubically sampled at the LR
    /// pixel centers (see [`bicubic_resample`]).
    pub fn query_batch(
        &self,
        z_lr: &RasterImage<T>,
        g_lr: &RasterImage<T>,
        g_hr: &RasterImage<T>,
        queries: &[Coord<T>],
    ) -> Result<QueryForward<T>> {
        self.check_maps(z_lr, g_hr)?;
        if g_lr.dims() != z_lr.dims() || g_lr.channels() != z_lr.channels() {
            return Err(JiifError::invalid("g_lr must match the input code map shape"));
        }
        let f = self.config.feature_dim;
        let (lh, lw) = z_lr.dims();
        let (hh, hw) = g_hr.dims();
        let n = queries.len();
        let joint = self.config.mode == DecoderMode::Joint;
        let vin = self.config.value_input_width();

        let bundles: Vec<QueryBundle<T>> = queries.iter().map(|&q| corner_neighbors(q, lh, lw)).collect();
        let hr_pixels: Vec<(usize, usize)> = queries
            .iter()
            .map(|&q| {
                let p = nearest_index(q, hh, hw);
                (p.row, p.col)
            })
            .collect();

        let mut xv = Array2::<T>::zeros((4 * n, vin));
        let mut xw = self
            .weight_net
            .as_ref()
            .map(|_| Array2::<T>::zeros((4 * n, 2 * f)));
        for (qi, bundle) in bundles.iter().enumerate() {
            let (hy, hx) = hr_pixels[qi];
            let gq = g_hr.pixel(hy, hx);
            let gq = gq.as_slice().unwrap();
            for k in 0..4 {
                let (r, c) = bundle.indices[k];
                let zi = z_lr.pixel(r, c);
                let gi = g_lr.pixel(r, c);
                let (zi, gi) = (zi.as_slice().unwrap(), gi.as_slice().unwrap());
                let mut row = xv.row_mut(4 * qi + k);
                let row = row.as_slice_mut().unwrap();
                row[..f].copy_from_slice(zi);
                row[f..2 * f].copy_from_slice(gi);
                let mut off = 2 * f;
                if joint {
                    for j in 0..f {
                        row[off + j] = gq[j] - gi[j];
                    }
                    off += f;
                }
                row[off] = bundle.rel_coords[k].y;
                row[off + 1] = bundle.rel_coords[k].x;
                if let Some(xw) = xw.as_mut() {
                    let mut wrow = xw.row_mut(4 * qi + k);
                    let wrow = wrow.as_slice_mut().unwrap();
                    wrow[..f].copy_from_slice(gi);
                    for j in 0..f {
                        wrow[f + j] = gq[j] - gi[j];
                    }
                }
            }
        }

        let (vout, value_trace) = self.value_net.forward_trace(xv);
        let (wout, weight_trace) = match (&self.weight_net, xw) {
            (Some(net), Some(xw)) => {
                let (o, t) = net.forward_trace(xw);
                (Some(o), Some(t))
            }
            _ => (None, None),
        };

        let mut predictions = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        for (qi, bundle) in bundles.iter().enumerate() {
            let v: [T; 4] = std::array::from_fn(|k| vout[[4 * qi + k, 0]]);
            let w = match self.config.strategy {
                WeightStrategy::Bilinear => bilinear_weights(bundle),
                WeightStrategy::GraphAttention => {
                    let logits: [T; 4] = match &wout {
                        Some(wo) => std::array::from_fn(|k| wo[[4 * qi + k, 0]]),
                        None => std::array::from_fn(|k| vout[[4 * qi + k, 1]]),
                    };
                    normalize_weights(&logits)?
                }
                WeightStrategy::DirectRegression => {
                    let head = self.regression_head.as_ref().expect("built with a regression head");
                    let (hy, hx) = hr_pixels[qi];
                    let gq = g_hr.pixel(hy, hx);
                    let logits: [T; 4] =
                        std::array::from_fn(|k| head.bias[k] + gq.dot(&head.weight.column(k)));
                    normalize_weights(&logits)?
                }
            };
            predictions.push(weighted_interpolate(&w, &v));
            weights.push(w);
            values.push(v);
        }
        Ok(QueryForward {
            predictions,
            weights,
            values,
            bundles,
            hr_pixels,
            value_trace,
            weight_trace,
        })
    }

    /// Back-propagates `grad_pred` (one entry per query), accumulating
    /// parameter gradients into `grads`.
    pub fn backward(
        &self,
        fwd: &QueryForward<T>,
        grad_pred: &[T],
        z_lr_dims: (usize, usize),
        g_hr: &RasterImage<T>,
        grads: &mut JiifDecoder<T>,
    ) -> QueryGrads<T> {
        let f = self.config.feature_dim;
        let n = fwd.predictions.len();
        assert_eq!(grad_pred.len(), n, "one gradient per query");
        let joint = self.config.mode == DecoderMode::Joint;
        let vout_w = self.value_net.output_width();
        let (lh, lw) = z_lr_dims;
        let (hh, hw) = g_hr.dims();

        let mut gv = Array2::<T>::zeros((4 * n, vout_w));
        let mut gw_logit = self.weight_net.as_ref().map(|_| Array2::<T>::zeros((4 * n, 1)));
        let mut gz = RasterImage::zeros(lh, lw, f);
        let mut gg_lr = RasterImage::zeros(lh, lw, f);
        let mut gg_hr = RasterImage::zeros(hh, hw, f);

        for qi in 0..n {
            let g = grad_pred[qi];
            let w = &fwd.weights[qi];
            let v = &fwd.values[qi];
            for k in 0..4 {
                gv[[4 * qi + k, 0]] = g * w[k];
            }
            let grad_w: [T; 4] = std::array::from_fn(|k| g * v[k]);
            match self.config.strategy {
                WeightStrategy::Bilinear => {}
                WeightStrategy::GraphAttention => {
                    let ga = softmax_backward(w, &grad_w);
                    for k in 0..4 {
                        match gw_logit.as_mut() {
                            Some(gl) => gl[[4 * qi + k, 0]] = ga[k],
                            None => gv[[4 * qi + k, 1]] = ga[k],
                        }
                    }
                }
                WeightStrategy::DirectRegression => {
                    let ga = softmax_backward(w, &grad_w);
                    let head = self.regression_head.as_ref().expect("regression head");
                    let ghead = grads.regression_head.as_mut().expect("regression head");
                    let (hy, hx) = fwd.hr_pixels[qi];
                    let gq = g_hr.pixel(hy, hx).to_owned();
                    let mut ggq = gg_hr.pixel_mut(hy, hx);
                    for k in 0..4 {
                        ghead.bias[k] += ga[k];
                        for j in 0..f {
                            ghead.weight[[j, k]] += gq[j] * ga[k];
                            ggq[j] += head.weight[[j, k]] * ga[k];
                        }
                    }
                }
            }
        }

        let gxv = self
            .value_net
            .backward(&fwd.value_trace, gv, &mut grads.value_net, true)
            .expect("input gradient requested");
        let gxw = match (&self.weight_net, &fwd.weight_trace, gw_logit) {
            (Some(net), Some(trace), Some(gl)) => net.backward(
                trace,
                gl,
                grads.weight_net.as_mut().expect("weight net"),
                true,
            ),
            _ => None,
        };

        for (qi, bundle) in fwd.bundles.iter().enumerate() {
            let (hy, hx) = fwd.hr_pixels[qi];
            for k in 0..4 {
                let (r, c) = bundle.indices[k];
                let row = gxv.row(4 * qi + k);
                let row = row.as_slice().unwrap();
                add_into(gz.pixel_mut(r, c), &row[..f]);
                add_into(gg_lr.pixel_mut(r, c), &row[f..2 * f]);
                if joint {
                    let grel = &row[2 * f..3 * f];
                    sub_from(gg_lr.pixel_mut(r, c), grel);
                    add_into(gg_hr.pixel_mut(hy, hx), grel);
                }
                if let Some(gxw) = gxw.as_ref() {
                    let wrow = gxw.row(4 * qi + k);
                    let wrow = wrow.as_slice().unwrap();
                    add_into(gg_lr.pixel_mut(r, c), &wrow[..f]);
                    sub_from(gg_lr.pixel_mut(r, c), &wrow[f..]);
                    add_into(gg_hr.pixel_mut(hy, hx), &wrow[f..]);
                }
            }
        }
        QueryGrads {
            z_lr: gz,
            g_lr: gg_lr,
            g_hr: gg_hr,
        }
    }
}

fn add_into<T: Scalar>(mut dst: ndarray::ArrayViewMut1<'_, T>, src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn sub_from<T: Scalar>(mut dst: ndarray::ArrayViewMut1<'_, T>, src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d -= s;
    }
}

impl<T: Scalar> Parameters<T> for JiifDecoder<T> {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        self.value_net.collect_params(&join(prefix, "value_net"), out);
        if let Some(w) = &self.weight_net {
            w.collect_params(&join(prefix, "weight_net"), out);
        }
        if let Some(h) = &self.regression_head {
            h.collect_params(&join(prefix, "regression_head"), out);
        }
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        self.value_net.collect_params_mut(&join(prefix, "value_net"), out);
        if let Some(w) = &mut self.weight_net {
            w.collect_params_mut(&join(prefix, "weight_net"), out);
        }
        if let Some(h) = &mut self.regression_head {
            h.collect_params_mut(&join(prefix, "regression_head"), out);
        }
    }
}
