//! Classical interpolation: bilinear corner weights, the generic weighted
//! sum over four neighbours, and Catmull-Rom bicubic resampling.

use crate::coordgrid::{pixel_center, source_position, Coord, QueryBundle};
use crate::error::{JiifError, Result};
use crate::raster::{reflect_index, RasterImage};
use crate::scalar::Scalar;

/// Cubic convolution parameter (Catmull-Rom).
pub const CUBIC_A: f64 = -0.5;

/// Weights and values for one query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterpolationBundle<T> {
    pub weights: [T; 4],
    pub values: [T; 4],
    /// Partial areas `S_i` and their total `S`, for the bilinear path.
    pub areas: Option<([T; 4], T)>,
}

impl<T: Scalar> InterpolationBundle<T> {
    pub fn bilinear(bundle: &QueryBundle<T>, values: [T; 4]) -> Self {
        let (areas, total) = bilinear_areas(bundle);
        Self {
            weights: areas.map(|s| s / total),
            values,
            areas: Some((areas, total)),
        }
    }

    pub fn evaluate(&self) -> T {
        weighted_interpolate(&self.weights, &self.values)
    }
}

/// Area of the rectangle spanned by the query and the corner diagonally
/// opposite each corner, plus their sum.
pub fn bilinear_areas<T: Scalar>(bundle: &QueryBundle<T>) -> ([T; 4], T) {
    let areas: [T; 4] = std::array::from_fn(|k| {
        let opp: Coord<T> = bundle.rel_coords[3 - k];
        (opp.y * opp.x).abs()
    });
    let total = areas.iter().fold(T::zero(), |acc, &s| acc + s);
    (areas, total)
}

pub fn bilinear_weights<T: Scalar>(bundle: &QueryBundle<T>) -> [T; 4] {
    let (areas, total) = bilinear_areas(bundle);
    areas.map(|s| s / total)
}

pub fn weighted_interpolate<T: Scalar>(weights: &[T; 4], values: &[T; 4]) -> T {
    debug_assert!(
        {
            let sum = weights.iter().fold(T::zero(), |a, &w| a + w);
            (sum - T::one()).abs() <= T::of(1e-5)
        },
        "interpolation weights must sum to one: {weights:?}"
    );
    weights
        .iter()
        .zip(values)
        .fold(T::zero(), |acc, (&w, &v)| acc + w * v)
}

#[inline]
pub fn cubic_kernel<T: Scalar>(x: T) -> T {
    let a = T::of(CUBIC_A);
    let x = x.abs();
    let two = T::of(2.0);
    let three = T::of(3.0);
    if x <= T::one() {
        ((a + two) * x - (a + three)) * x * x + T::one()
    } else if x < two {
        ((a * x - T::of(5.0) * a) * x + T::of(8.0) * a) * x - T::of(4.0) * a
    } else {
        T::zero()
    }
}

/// Four `(index, weight)` taps around continuous position `pos` on an axis
/// of `n` samples, with symmetric reflection at the borders.
pub fn bicubic_taps<T: Scalar>(pos: T, n: usize) -> [(usize, T); 4] {
    let base = pos.floor();
    let t = pos - base;
    let i0 = base.to_isize().unwrap_or(0);
    let w = [
        cubic_kernel(t + T::one()),
        cubic_kernel(t),
        cubic_kernel(T::one() - t),
        cubic_kernel(T::of(2.0) - t),
    ];
    std::array::from_fn(|k| (reflect_index(i0 - 1 + k as isize, n), w[k]))
}

/// Channel values of `image` at a continuous coordinate, written into `out`.
pub fn bicubic_sample_into<T: Scalar>(image: &RasterImage<T>, coord: Coord<T>, out: &mut [T]) {
    let (h, w) = image.dims();
    let ty = bicubic_taps(source_position(coord.y, h), h);
    let tx = bicubic_taps(source_position(coord.x, w), w);
    accumulate_taps(image, &ty, &tx, out);
}

fn accumulate_taps<T: Scalar>(
    image: &RasterImage<T>,
    ty: &[(usize, T); 4],
    tx: &[(usize, T); 4],
    out: &mut [T],
) {
    let channels = image.channels();
    let width = image.width();
    let data = image.as_slice();
    out.iter_mut().for_each(|v| *v = T::zero());
    for &(r, wy) in ty {
        for &(c, wx) in tx {
            let wgt = wy * wx;
            let base = (r * width + c) * channels;
            for (o, &v) in out.iter_mut().zip(&data[base..base + channels]) {
                *o += wgt * v;
            }
        }
    }
}

/// Resamples every channel to `out_height x out_width` by sampling each
/// output pixel center. No anti-alias pre-filter is applied when shrinking.
pub fn bicubic_resample<T: Scalar>(
    image: &RasterImage<T>,
    out_height: usize,
    out_width: usize,
) -> Result<RasterImage<T>> {
    if image.is_empty() {
        return Err(JiifError::invalid("cannot resample an empty image"));
    }
    if out_height == 0 || out_width == 0 {
        return Err(JiifError::invalid(format!(
            "resample target must be positive, got {out_height}x{out_width}"
        )));
    }
    let (h, w) = image.dims();
    let channels = image.channels();
    let taps_y = axis_taps::<T>(h, out_height);
    let taps_x = axis_taps::<T>(w, out_width);
    let mut out = RasterImage::zeros(out_height, out_width, channels);
    let dst = out.as_slice_mut();
    for (oy, ty) in taps_y.iter().enumerate() {
        for (ox, tx) in taps_x.iter().enumerate() {
            let base = (oy * out_width + ox) * channels;
            accumulate_taps(image, ty, tx, &mut dst[base..base + channels]);
        }
    }
    Ok(out)
}

/// Adjoint of [`bicubic_resample`]: scatters output gradients back onto an
/// `in_height x in_width` source grid.
pub fn bicubic_resample_adjoint<T: Scalar>(
    grad_out: &RasterImage<T>,
    in_height: usize,
    in_width: usize,
) -> RasterImage<T> {
    let (oh, ow) = grad_out.dims();
    let channels = grad_out.channels();
    let taps_y = axis_taps::<T>(in_height, oh);
    let taps_x = axis_taps::<T>(in_width, ow);
    let mut grad_in = RasterImage::zeros(in_height, in_width, channels);
    let src = grad_out.as_slice();
    let dst = grad_in.as_slice_mut();
    for (oy, ty) in taps_y.iter().enumerate() {
        for (ox, tx) in taps_x.iter().enumerate() {
            let g = &src[(oy * ow + ox) * channels..][..channels];
            for &(r, wy) in ty {
                for &(c, wx) in tx {
                    let wgt = wy * wx;
                    let base = (r * in_width + c) * channels;
                    for (d, &gv) in dst[base..base + channels].iter_mut().zip(g) {
                        *d += wgt * gv;
                    }
                }
            }
        }
    }
    grad_in
}

fn axis_taps<T: Scalar>(src: usize, dst: usize) -> Vec<[(usize, T); 4]> {
    (0..dst)
        .map(|o| bicubic_taps(source_position(pixel_center::<T>(o, dst), src), src))
        .collect()
}

/// Integer-factor shrink: plain bicubic point sampling of the LR pixel
/// centers, with no pre-blur.
pub fn bicubic_downsample<T: Scalar>(image: &RasterImage<T>, factor: usize) -> Result<RasterImage<T>> {
    let (h, w) = image.dims();
    if factor == 0 || h % factor != 0 || w % factor != 0 || image.is_empty() {
        return Err(JiifError::invalid(format!(
            "{h}x{w} image cannot be shrunk by a factor of {factor}"
        )));
    }
    if factor == 1 {
        return Ok(image.clone());
    }
    bicubic_resample(image, h / factor, w / factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coordgrid::corner_neighbors;

    #[test]
    fn downsample_preserves_constants_and_ramps() {
        let c = RasterImage::filled(16, 24, 2, 3.25f64);
        let d = bicubic_downsample(&c, 4).unwrap();
        assert_eq!(d.dims(), (4, 6));
        assert!(d.as_slice().iter().all(|&v| (v - 3.25).abs() < 1e-12));
        // Every LR center at 4o + 1.5 has all four taps inside the image.
        let ramp = RasterImage::from_fn(32, 32, 1, |y, x, _| 0.5 * y as f64 - 0.25 * x as f64);
        let d = bicubic_downsample(&ramp, 4).unwrap();
        for oy in 0..8 {
            for ox in 0..8 {
                let (cy, cx) = (4.0 * oy as f64 + 1.5, 4.0 * ox as f64 + 1.5);
                assert!((d.get(oy, ox, 0) - (0.5 * cy - 0.25 * cx)).abs() < 1e-12);
            }
        }
        assert!(bicubic_downsample(&ramp, 5).is_err());
        assert_eq!(bicubic_downsample(&ramp, 1).unwrap(), ramp);
    }

    #[test]
    fn bilinear_weight_examples() {
        let centre = corner_neighbors(Coord::new(0.0f64, 0.0), 2, 2);
        assert_eq!(bilinear_weights(&centre), [0.25; 4]);

        // Query on corner (1, 0) of a 2x2 grid.
        let on_corner = corner_neighbors(Coord::new(0.5f64, -0.5), 2, 2);
        let w = bilinear_weights(&on_corner);
        let k = on_corner.indices.iter().position(|&i| i == (1, 0)).unwrap();
        for (j, &wj) in w.iter().enumerate() {
            assert!((wj - if j == k { 1.0 } else { 0.0 }).abs() < 1e-12);
        }

        // A quarter of the way from corner (0,0) towards (1,1) of a 4x4 cell:
        // centers at -0.25 and 0.25, so the query sits at -0.125.
        let b = corner_neighbors(Coord::new(-0.125f64, -0.125), 4, 4);
        assert_eq!(b.indices[0], (1, 1));
        let expected = [0.5625, 0.1875, 0.1875, 0.0625];
        let (areas, total) = bilinear_areas(&b);
        for k in 0..4 {
            assert!((areas[k] / total - expected[k]).abs() < 1e-12);
        }
        // Full cell area: (2/4)^2.
        assert!((total - 0.25).abs() < 1e-12);
    }

    #[test]
    fn weighted_interpolate_examples() {
        assert_eq!(weighted_interpolate(&[0.25f64; 4], &[1.0, 2.0, 3.0, 4.0]), 2.5);
        assert_eq!(weighted_interpolate(&[0.0f64, 0.0, 1.0, 0.0], &[1.0, 2.0, 3.0, 4.0]), 3.0);
        let v = weighted_interpolate(&[0.5625f64, 0.1875, 0.1875, 0.0625], &[1.0, 2.0, 3.0, 4.0]);
        assert!((v - 1.75).abs() < 1e-15);
    }

    #[test]
    #[should_panic(expected = "sum to one")]
    #[cfg(debug_assertions)]
    fn weighted_interpolate_flags_unnormalized() {
        weighted_interpolate(&[0.5f64; 4], &[1.0; 4]);
    }

    #[test]
    fn bundle_areas_consistent() {
        let b = corner_neighbors(Coord::new(0.31f32, -0.62), 5, 7);
        let ib = InterpolationBundle::bilinear(&b, [1.0, 1.0, 1.0, 1.0]);
        let (areas, total) = ib.areas.unwrap();
        let sum: f32 = areas.iter().sum();
        assert!((sum - total).abs() < 1e-6);
        assert!((ib.evaluate() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cubic_kernel_values() {
        assert_eq!(cubic_kernel(0.0f64), 1.0);
        assert_eq!(cubic_kernel(1.0f64), 0.0);
        assert_eq!(cubic_kernel(2.0f64), 0.0);
        // (a+2)/8 - (a+3)/4 + 1 at a = -0.5.
        assert!((cubic_kernel(0.5f64) - 0.5625).abs() < 1e-15);
        assert!((cubic_kernel(-1.5f64) + 0.0625).abs() < 1e-15);
        for t in [0.0, 0.1, 0.37, 0.5, 0.99] {
            let s: f64 = bicubic_taps(3.0 + t, 10).iter().map(|&(_, w)| w).sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn resample_constant_and_identity() {
        let c = RasterImage::<f32>::filled(7, 5, 2, 3.25);
        for (h, w) in [(1, 1), (3, 2), (14, 10), (29, 3)] {
            let r = bicubic_resample(&c, h, w).unwrap();
            assert!(r.as_slice().iter().all(|&v| (v - 3.25).abs() < 1e-5));
        }
        let img = RasterImage::<f64>::from_fn(6, 9, 3, |y, x, c| ((y * 13 + x * 5 + c) % 7) as f64 / 7.0);
        let r = bicubic_resample(&img, 6, 9).unwrap();
        for (a, b) in r.as_slice().iter().zip(img.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(bicubic_resample(&img, 0, 4).is_err());
    }

    #[test]
    fn ramp_down_up_interior() {
        // Ramp normalized to [0, 1]. The mirrored border perturbs the two
        // outer LR samples, which reaches two HR pixels inward after
        // up-sampling; only the central 2x2 block is clear of it.
        let ramp = RasterImage::<f64>::from_fn(8, 8, 1, |y, x, _| (y + x) as f64 / 14.0);
        let down = bicubic_resample(&ramp, 4, 4).unwrap();
        let up = bicubic_resample(&down, 8, 8).unwrap();
        for y in 3..5 {
            for x in 3..5 {
                assert!((up.get(y, x, 0) - ramp.get(y, x, 0)).abs() < 1e-3, "({y},{x})");
            }
        }
    }

    #[test]
    fn affine_reproduced_in_interior() {
        let affine = |y: usize, x: usize| 2.5 * (0.3 * y as f64 - 0.7 * x as f64) + 4.0;
        let img = RasterImage::<f64>::from_fn(16, 16, 1, |y, x, _| affine(y, x));
        let up = bicubic_resample(&img, 32, 32).unwrap();
        for y in 4..28 {
            for x in 4..28 {
                // Output pixel p sits at source position p/2 - 0.25.
                let (sy, sx) = (y as f64 / 2.0 - 0.25, x as f64 / 2.0 - 0.25);
                let want = 2.5 * (0.3 * sy - 0.7 * sx) + 4.0;
                assert!((up.get(y, x, 0) - want).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn adjoint_matches_inner_product() {
        let a = RasterImage::<f64>::from_fn(5, 6, 2, |y, x, c| ((y * 7 + x * 3 + c * 11) % 5) as f64 - 2.0);
        let g = RasterImage::<f64>::from_fn(3, 4, 2, |y, x, c| ((y * 5 + x + c) % 3) as f64 * 0.5);
        let ra = bicubic_resample(&a, 3, 4).unwrap();
        let lhs: f64 = ra.as_slice().iter().zip(g.as_slice()).map(|(x, y)| x * y).sum();
        let adj = bicubic_resample_adjoint(&g, 5, 6);
        let rhs: f64 = a.as_slice().iter().zip(adj.as_slice()).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn point_sample_matches_resample_bitwise() {
        let img = RasterImage::<f32>::from_fn(4, 5, 1, |y, x, _| (y * 5 + x) as f32 * 0.1);
        let r = bicubic_resample(&img, 12, 15).unwrap();
        let grid = crate::coordgrid::make_coord_grid::<f32>(12, 15).unwrap();
        let mut out = [0.0f32];
        for y in 0..12 {
            for x in 0..15 {
                bicubic_sample_into(&img, grid.get(y, x), &mut out);
                assert_eq!(out[0].to_bits(), r.get(y, x, 0).to_bits());
            }
        }
    }
}
