//! Layers with hand-written backward passes.
//!
//! Layers own their parameters; a gradient buffer is simply a zeroed clone
//! of the layer, so optimizers and checkpoints walk both through
//! [`Parameters`] in the same fixed order.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array3, Array4, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

/// Borrowed view of one named parameter tensor.
pub struct ParamRef<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

pub struct ParamMut<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [T],
}

pub trait Parameters<T: Scalar> {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>);

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>);

    fn params(&self) -> Vec<ParamRef<'_, T>> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        let mut out = Vec::new();
        self.collect_params_mut("", &mut out);
        out
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }

    fn fill_zero(&mut self) {
        for p in self.params_mut() {
            p.data.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Same structure, all parameters zero. Used as a gradient buffer.
    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        z.fill_zero();
        z
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Uniform `(-bound, bound)` fill; values are drawn in `f64` so `f32` and
/// `f64` models built from the same seed agree up to rounding.
pub(crate) fn uniform_fill<T: Scalar>(data: &mut [T], bound: f64, rng: &mut ChaCha8Rng) {
    for v in data {
        *v = T::of(rng.gen_range(-bound..bound));
    }
}

/// Element-wise `max(0, x)`; NaN passes through.
pub fn relu_inplace<T: Scalar>(data: &mut [T]) {
    for v in data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes gradient entries whose activation was clipped; `activated` is the
/// post-ReLU output.
pub fn relu_backward_inplace<T: Scalar>(grad: &mut [T], activated: &[T]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if !(a > T::zero()) {
            *g = T::zero();
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    /// `(in, out)`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Fan-in scaled uniform initialization.
    pub fn init(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut l = Self::zeros(inputs, outputs);
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        uniform_fill(l.weight.as_slice_mut().unwrap(), bound, rng);
        uniform_fill(l.bias.as_slice_mut().unwrap(), bound, rng);
        l
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        let mut out = Array2::zeros((x.nrows(), self.outputs()));
        out.rows_mut().into_iter().for_each(|mut r| r.assign(&self.bias));
        general_mat_mul(T::one(), &x, &self.weight, T::one(), &mut out);
        out
    }

    /// Accumulates parameter gradients into `grads` and returns the input
    /// gradient when requested.
    pub fn backward(
        &self,
        x: ArrayView2<'_, T>,
        grad_out: ArrayView2<'_, T>,
        grads: &mut Linear<T>,
        need_input_grad: bool,
    ) -> Option<Array2<T>> {
        general_mat_mul(T::one(), &x.t(), &grad_out, T::one(), &mut grads.weight);
        grads.bias += &grad_out.sum_axis(Axis(0));
        need_input_grad.then(|| {
            let mut gin = Array2::zeros((grad_out.nrows(), self.inputs()));
            general_mat_mul(T::one(), &grad_out, &self.weight.t(), T::zero(), &mut gin);
            gin
        })
    }
}

impl<T: Scalar> Parameters<T> for Linear<T> {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        out.push(ParamRef {
            name: join(prefix, "weight"),
            shape: self.weight.shape().to_vec(),
            data: self.weight.as_slice().unwrap(),
        });
        out.push(ParamRef {
            name: join(prefix, "bias"),
            shape: self.bias.shape().to_vec(),
            data: self.bias.as_slice().unwrap(),
        });
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        let ws = self.weight.shape().to_vec();
        let bs = self.bias.shape().to_vec();
        out.push(ParamMut {
            name: join(prefix, "weight"),
            shape: ws,
            data: self.weight.as_slice_mut().unwrap(),
        });
        out.push(ParamMut {
            name: join(prefix, "bias"),
            shape: bs,
            data: self.bias.as_slice_mut().unwrap(),
        });
    }
}

/// Affine layers with ReLU between them (none after the last).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
}

/// Per-layer inputs saved by [`Mlp::forward_trace`]; entry `i` is the input
/// of layer `i` (post-ReLU for `i > 0`).
pub struct MlpTrace<T> {
    inputs: Vec<Array2<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// `widths` lists every layer boundary, input first and output last.
    pub fn init(widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| Linear::init(w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        Self {
            layers: widths.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(|l| l.outputs()).unwrap_or(0)
    }

    pub fn forward(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        self.forward_trace(x.to_owned()).0
    }

    pub fn forward_trace(&self, x: Array2<T>) -> (Array2<T>, MlpTrace<T>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = layer.forward(h.view());
            if i < last {
                relu_inplace(out.as_slice_mut().unwrap());
            }
            inputs.push(h);
            h = out;
        }
        (h, MlpTrace { inputs })
    }

    pub fn backward(
        &self,
        trace: &MlpTrace<T>,
        grad_out: Array2<T>,
        grads: &mut Mlp<T>,
        need_input_grad: bool,
    ) -> Option<Array2<T>> {
        let mut g = grad_out;
        for i in (0..self.layers.len()).rev() {
            let x = &trace.inputs[i];
            let need = i > 0 || need_input_grad;
            let gin = self.layers[i].backward(x.view(), g.view(), &mut grads.layers[i], need);
            match gin {
                Some(mut gin) if i > 0 => {
                    // x is the ReLU output of layer i - 1.
                    relu_backward_inplace(gin.as_slice_mut().unwrap(), x.as_slice().unwrap());
                    g = gin;
                }
                other => return other,
            }
        }
        None
    }
}

impl<T: Scalar> Parameters<T> for Mlp<T> {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.collect_params(&join(prefix, &format!("layers.{i}")), out);
        }
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.collect_params_mut(&join(prefix, &format!("layers.{i}")), out);
        }
    }
}

/// Stride-1 convolution with zero padding that preserves spatial size.
/// Feature maps are `(height, width, channels)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    /// `(k, k, in, out)`.
    pub weight: Array4<T>,
    pub bias: Array1<T>,
}

/// Pixels per im2col band; bounds scratch memory while keeping GEMMs large.
const BAND_PIXELS: usize = 4096;

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(kernel: usize, inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array4::zeros((kernel, kernel, inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn init(kernel: usize, inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut c = Self::zeros(kernel, inputs, outputs);
        let bound = 1.0 / ((kernel * kernel * inputs).max(1) as f64).sqrt();
        uniform_fill(c.weight.as_slice_mut().unwrap(), bound, rng);
        uniform_fill(c.bias.as_slice_mut().unwrap(), bound, rng);
        c
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[3]
    }

    fn weight_matrix(&self) -> ArrayView2<'_, T> {
        let k = self.kernel();
        self.weight
            .view()
            .into_shape_with_order((k * k * self.inputs(), self.outputs()))
            .expect("conv weight is contiguous")
    }

    fn bands(&self, height: usize, width: usize) -> impl Iterator<Item = (usize, usize)> {
        let rows = (BAND_PIXELS / width.max(1)).max(1);
        (0..height)
            .step_by(rows)
            .map(move |y0| (y0, (y0 + rows).min(height)))
    }

    fn im2col(&self, input: &Array3<T>, y0: usize, y1: usize) -> Array2<T> {
        let (h, w, cin) = input.dim();
        let k = self.kernel();
        let pad = (k / 2) as isize;
        let src = input.as_slice().expect("feature map is contiguous");
        let mut col = Array2::zeros(((y1 - y0) * w, k * k * cin));
        let dst = col.as_slice_mut().unwrap();
        let row_len = k * k * cin;
        for y in y0..y1 {
            for x in 0..w {
                let row = &mut dst[((y - y0) * w + x) * row_len..][..row_len];
                for ky in 0..k {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let sx = x as isize + kx as isize - pad;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let s = (sy as usize * w + sx as usize) * cin;
                        row[(ky * k + kx) * cin..][..cin].copy_from_slice(&src[s..s + cin]);
                    }
                }
            }
        }
        col
    }

    fn col2im_add(&self, col: &Array2<T>, grad_in: &mut Array3<T>, y0: usize, y1: usize) {
        let (h, w, cin) = grad_in.dim();
        let k = self.kernel();
        let pad = (k / 2) as isize;
        let src = col.as_slice().unwrap();
        let dst = grad_in.as_slice_mut().unwrap();
        let row_len = k * k * cin;
        for y in y0..y1 {
            for x in 0..w {
                let row = &src[((y - y0) * w + x) * row_len..][..row_len];
                for ky in 0..k {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let sx = x as isize + kx as isize - pad;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let d = (sy as usize * w + sx as usize) * cin;
                        for (o, &g) in dst[d..d + cin].iter_mut().zip(&row[(ky * k + kx) * cin..][..cin]) {
                            *o += g;
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, input: &Array3<T>) -> Array3<T> {
        let (h, w, cin) = input.dim();
        assert_eq!(cin, self.inputs(), "conv input channels");
        let cout = self.outputs();
        let mut out = Array3::zeros((h, w, cout));
        let wm = self.weight_matrix();
        for (y0, y1) in self.bands(h, w) {
            let col = self.im2col(input, y0, y1);
            let n = (y1 - y0) * w;
            let slice = &mut out.as_slice_mut().unwrap()[y0 * w * cout..][..n * cout];
            let mut band = ArrayViewMut2::from_shape((n, cout), slice).unwrap();
            band.rows_mut().into_iter().for_each(|mut r| r.assign(&self.bias));
            general_mat_mul(T::one(), &col, &wm, T::one(), &mut band);
        }
        out
    }

    pub fn backward(
        &self,
        input: &Array3<T>,
        grad_out: &Array3<T>,
        grads: &mut Conv2d<T>,
        need_input_grad: bool,
    ) -> Option<Array3<T>> {
        let (h, w, cin) = input.dim();
        let cout = self.outputs();
        let k = self.kernel();
        let wm = self.weight_matrix();
        let mut grad_in = need_input_grad.then(|| Array3::zeros((h, w, cin)));
        let mut gw = grads
            .weight
            .view_mut()
            .into_shape_with_order((k * k * cin, cout))
            .expect("conv weight is contiguous");
        let gsrc = grad_out.as_slice().expect("gradient is contiguous");
        for (y0, y1) in self.bands(h, w) {
            let n = (y1 - y0) * w;
            let gband = ArrayView2::from_shape((n, cout), &gsrc[y0 * w * cout..][..n * cout]).unwrap();
            let col = self.im2col(input, y0, y1);
            general_mat_mul(T::one(), &col.t(), &gband, T::one(), &mut gw);
            grads.bias += &gband.sum_axis(Axis(0));
            if let Some(gi) = grad_in.as_mut() {
                let mut dcol = Array2::zeros((n, wm.nrows()));
                general_mat_mul(T::one(), &gband, &wm.t(), T::zero(), &mut dcol);
                self.col2im_add(&dcol, gi, y0, y1);
            }
        }
        grad_in
    }
}

impl<T: Scalar> Parameters<T> for Conv2d<T> {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        out.push(ParamRef {
            name: join(prefix, "weight"),
            shape: self.weight.shape().to_vec(),
            data: self.weight.as_slice().unwrap(),
        });
        out.push(ParamRef {
            name: join(prefix, "bias"),
            shape: self.bias.shape().to_vec(),
            data: self.bias.as_slice().unwrap(),
        });
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        let ws = self.weight.shape().to_vec();
        let bs = self.bias.shape().to_vec();
        out.push(ParamMut {
            name: join(prefix, "weight"),
            shape: ws,
            data: self.weight.as_slice_mut().unwrap(),
        });
        out.push(ParamMut {
            name: join(prefix, "bias"),
            shape: bs,
            data: self.bias.as_slice_mut().unwrap(),
        });
    }
}
