//! Continuous image coordinates shared by the HR and LR domains.
//!
//! A pixel `i` of an axis with `n` samples sits at `-1 + (2i + 1) / n`, so
//! every image, whatever its resolution, tiles the open square `(-1, 1)^2`.
//! Coordinates are `(y, x)` pairs: row first, matching raster indexing.

use ndarray::Array1;

use crate::error::{JiifError, Result};
use crate::interpolation::{bicubic_taps, bilinear_weights};
use crate::raster::RasterImage;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Coord<T> {
    pub y: T,
    pub x: T,
}

impl<T: Scalar> Coord<T> {
    pub fn new(y: T, x: T) -> Self {
        Self { y, x }
    }

    pub fn sub(self, other: Self) -> Self {
        Self::new(self.y - other.y, self.x - other.x)
    }

    pub fn neg(self) -> Self {
        Self::new(-self.y, -self.x)
    }
}

/// Center of pixel `i` on an axis of `n` pixels.
#[inline]
pub fn pixel_center<T: Scalar>(i: usize, n: usize) -> T {
    T::of_usize(2 * i + 1) / T::of_usize(n) - T::one()
}

/// Continuous pixel index of `coord` on an axis of `n` pixels; pixel centers
/// land on integers.
#[inline]
pub fn source_position<T: Scalar>(coord: T, n: usize) -> T {
    (coord + T::one()) * T::of_usize(n) / T::of(2.0) - T::of(0.5)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordGrid<T> {
    height: usize,
    width: usize,
    coords: Vec<Coord<T>>,
}

impl<T: Scalar> CoordGrid<T> {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> Coord<T> {
        self.coords[row * self.width + col]
    }

    /// Row-major pixel centers.
    pub fn coords(&self) -> &[Coord<T>] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<Coord<T>> {
        self.coords
    }
}

pub fn make_coord_grid<T: Scalar>(height: usize, width: usize) -> Result<CoordGrid<T>> {
    if height == 0 || width == 0 {
        return Err(JiifError::invalid(format!(
            "coordinate grid needs positive dimensions, got {height}x{width}"
        )));
    }
    let rows: Vec<T> = (0..height).map(|i| pixel_center(i, height)).collect();
    let cols: Vec<T> = (0..width).map(|j| pixel_center(j, width)).collect();
    let coords = rows
        .iter()
        .flat_map(|&y| cols.iter().map(move |&x| Coord::new(y, x)))
        .collect();
    Ok(CoordGrid {
        height,
        width,
        coords,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelIndex {
    pub row: usize,
    pub col: usize,
    /// The coordinate fell outside `[-1, 1]^2` and was clamped.
    pub clamped: bool,
}

fn nearest_axis<T: Scalar>(coord: T, n: usize) -> (usize, bool) {
    let out_of_range = !(coord >= -T::one() && coord <= T::one());
    // Round half toward the smaller index.
    let pos = (source_position(coord, n) - T::of(0.5)).ceil();
    let idx = pos.max(T::zero()).min(T::of_usize(n - 1));
    (idx.to_usize().unwrap_or(0), out_of_range)
}

/// Pixel whose center is closest to `coord`; ties go to the smaller index.
pub fn nearest_index<T: Scalar>(coord: Coord<T>, height: usize, width: usize) -> PixelIndex {
    let (row, cy) = nearest_axis(coord.y, height);
    let (col, cx) = nearest_axis(coord.x, width);
    PixelIndex {
        row,
        col,
        clamped: cy || cx,
    }
}

/// The four LR pixels surrounding a query, ordered
/// `(top, left), (top, right), (bottom, left), (bottom, right)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueryBundle<T> {
    pub query: Coord<T>,
    /// Clamped `(row, col)` of each corner in the LR grid.
    pub indices: [(usize, usize); 4],
    /// Corner centers before clamping; may lie outside `(-1, 1)` at borders.
    pub corner_coords: [Coord<T>; 4],
    /// `query - corner_coords[k]`.
    pub rel_coords: [Coord<T>; 4],
}

pub fn corner_neighbors<T: Scalar>(x_q: Coord<T>, lr_height: usize, lr_width: usize) -> QueryBundle<T> {
    let axis = |c: T, n: usize| -> ([isize; 2], [T; 2]) {
        let lo = source_position(c, n).floor().to_isize().unwrap_or(0);
        let virt = |i: isize| T::of((2 * i + 1) as f64) / T::of_usize(n) - T::one();
        ([lo, lo + 1], [virt(lo), virt(lo + 1)])
    };
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let (rows, ys) = axis(x_q.y, lr_height);
    let (cols, xs) = axis(x_q.x, lr_width);

    let mut indices = [(0, 0); 4];
    let mut corner_coords = [Coord::default(); 4];
    let mut rel_coords = [Coord::default(); 4];
    for k in 0..4 {
        let (a, b) = (k / 2, k % 2);
        indices[k] = (clamp(rows[a], lr_height), clamp(cols[b], lr_width));
        corner_coords[k] = Coord::new(ys[a], xs[b]);
        rel_coords[k] = x_q.sub(corner_coords[k]);
    }
    QueryBundle {
        query: x_q,
        indices,
        corner_coords,
        rel_coords,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    Nearest,
    Bilinear,
    Bicubic,
}

/// Samples a code map at a continuous coordinate, channel by channel.
pub fn sample_latent<T: Scalar>(
    codes: &RasterImage<T>,
    coord: Coord<T>,
    mode: SampleMode,
) -> Result<Array1<T>> {
    if codes.is_empty() {
        return Err(JiifError::invalid("cannot sample an empty code map"));
    }
    let (h, w) = codes.dims();
    let channels = codes.channels();
    let mut out = Array1::zeros(channels);
    match mode {
        SampleMode::Nearest => {
            let idx = nearest_index(coord, h, w);
            out.assign(&codes.pixel(idx.row, idx.col));
        }
        SampleMode::Bilinear => {
            let bundle = corner_neighbors(coord, h, w);
            let weights = bilinear_weights(&bundle);
            for (k, &(r, c)) in bundle.indices.iter().enumerate() {
                out.scaled_add(weights[k], &codes.pixel(r, c));
            }
        }
        SampleMode::Bicubic => {
            let ty = bicubic_taps(source_position(coord.y, h), h);
            let tx = bicubic_taps(source_position(coord.x, w), w);
            for &(r, wy) in &ty {
                for &(c, wx) in &tx {
                    out.scaled_add(wy * wx, &codes.pixel(r, c));
                }
            }
        }
    }
    Ok(out)
}
