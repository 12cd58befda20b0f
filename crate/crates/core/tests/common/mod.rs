#![allow(dead_code)]

use jiif::coordgrid::Coord;
use jiif::nn::{Linear, Mlp};
use jiif::raster::RasterImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> RasterImage<f64> {
    RasterImage::from_fn(h, w, c, |_, _, _| rng.gen_range(-1.0..1.0))
}

pub fn random_unit_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> RasterImage<f64> {
    RasterImage::from_fn(h, w, c, |_, _, _| rng.gen_range(0.0..1.0))
}

pub fn random_coords(rng: &mut ChaCha8Rng, n: usize) -> Vec<Coord<f64>> {
    (0..n)
        .map(|_| Coord::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect()
}

/// Plain nested-loop MLP evaluation on one input row.
pub fn mlp_reference(mlp: &Mlp<f64>, input: &[f64]) -> Vec<f64> {
    let mut h = input.to_vec();
    let last = mlp.layers.len() - 1;
    for (li, layer) in mlp.layers.iter().enumerate() {
        h = linear_reference(layer, &h);
        if li < last {
            for v in &mut h {
                *v = v.max(0.0);
            }
        }
    }
    h
}

pub fn linear_reference(layer: &Linear<f64>, input: &[f64]) -> Vec<f64> {
    (0..layer.outputs())
        .map(|o| {
            layer.bias[o]
                + input
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| x * layer.weight[[i, o]])
                    .sum::<f64>()
        })
        .collect()
}

/// Reference softmax evaluated with explicit sums.
pub fn softmax_reference(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|a| (a - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Cubic convolution kernel, a = -0.5.
pub fn cubic_reference(x: f64) -> f64 {
    let a = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (a + 2.0) * x.powi(3) - (a + 3.0) * x.powi(2) + 1.0
    } else if x < 2.0 {
        a * x.powi(3) - 5.0 * a * x.powi(2) + 8.0 * a * x - 4.0 * a
    } else {
        0.0
    }
}

fn mirror(i: i64, n: i64) -> usize {
    let p = 2 * n;
    let m = ((i % p) + p) % p;
    (if m >= n { p - 1 - m } else { m }) as usize
}

/// Bicubic sample of channel `c` at a continuous coordinate: direct 4x4
/// kernel sum with half-sample mirroring.
pub fn bicubic_reference(img: &RasterImage<f64>, y: f64, x: f64, c: usize) -> f64 {
    let (h, w) = img.dims();
    let py = (y + 1.0) * h as f64 / 2.0 - 0.5;
    let px = (x + 1.0) * w as f64 / 2.0 - 0.5;
    let (fy, fx) = (py.floor(), px.floor());
    let mut acc = 0.0;
    for dy in -1..=2i64 {
        for dx in -1..=2i64 {
            let iy = fy as i64 + dy;
            let ix = fx as i64 + dx;
            let wgt = cubic_reference(py - iy as f64) * cubic_reference(px - ix as f64);
            acc += wgt * img.get(mirror(iy, h as i64), mirror(ix, w as i64), c);
        }
    }
    acc
}

/// Classical bilinear sample with edge clamping: locate the surrounding
/// pixels in pixel units, clamp, and lerp along each axis.
pub fn bilinear_reference(img: &RasterImage<f64>, y: f64, x: f64) -> f64 {
    let (h, w) = img.dims();
    let py = (y + 1.0) * h as f64 / 2.0 - 0.5;
    let px = (x + 1.0) * w as f64 / 2.0 - 0.5;
    let (y0, x0) = (py.floor(), px.floor());
    let (ty, tx) = (py - y0, px - x0);
    let cy = |i: f64| (i.max(0.0) as usize).min(h - 1);
    let cx = |i: f64| (i.max(0.0) as usize).min(w - 1);
    let at = |a: f64, b: f64| img.get(cy(a), cx(b), 0);
    let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1.0) * tx;
    let bottom = at(y0 + 1.0, x0) * (1.0 - tx) + at(y0 + 1.0, x0 + 1.0) * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Relative error with a floor: gradients smaller than `floor` in magnitude
/// are compared absolutely against `tol * floor`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}
