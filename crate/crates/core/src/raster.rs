//! Dense `height x width x channels` images stored row-major with interleaved
//! channels.

use ndarray::{s, Array3, ArrayView1, ArrayViewMut1};

use crate::error::{JiifError, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage<T> {
    data: Array3<T>,
}

impl<T: Scalar> RasterImage<T> {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            data: Array3::zeros((height, width, channels)),
        }
    }

    pub fn from_array(data: Array3<T>) -> Self {
        let data = if data.is_standard_layout() {
            data
        } else {
            data.as_standard_layout().into_owned()
        };
        Self { data }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, values: Vec<T>) -> Result<Self> {
        let data = Array3::from_shape_vec((height, width, channels), values)
            .map_err(|e| JiifError::invalid(format!("raster shape: {e}")))?;
        Ok(Self { data })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        Self {
            data: Array3::from_shape_fn((height, width, channels), |(y, x, c)| f(y, x, c)),
        }
    }

    /// Image with every sample set to `value`.
    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        Self {
            data: Array3::from_elem((height, width, channels), value),
        }
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[[y, x, c]]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        self.data[[y, x, c]] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> ArrayView1<'_, T> {
        self.data.slice(s![y, x, ..])
    }

    pub fn pixel_mut(&mut self, y: usize, x: usize) -> ArrayViewMut1<'_, T> {
        self.data.slice_mut(s![y, x, ..])
    }

    pub fn array(&self) -> &Array3<T> {
        &self.data
    }

    pub fn array_mut(&mut self) -> &mut Array3<T> {
        &mut self.data
    }

    pub fn into_array(self) -> Array3<T> {
        self.data
    }

    /// Contiguous samples in `(y, x, c)` order.
    pub fn as_slice(&self) -> &[T] {
        self.data.as_slice().expect("raster is kept in standard layout")
    }

    pub fn as_slice_mut(&mut self) -> &mut [T] {
        self.data
            .as_slice_mut()
            .expect("raster is kept in standard layout")
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            data: self.data.mapv(f),
        }
    }

    pub fn cast<U: Scalar>(&self) -> RasterImage<U> {
        RasterImage {
            data: self.data.mapv(|v| U::of(v.to_f64_lossy())),
        }
    }

    pub fn min_max(&self) -> Option<(T, T)> {
        let mut it = self.data.iter().copied();
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }

    /// Copies the window `[top, top+height) x [left, left+width)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height() || left + width > self.width() {
            return Err(JiifError::invalid(format!(
                "crop {height}x{width}@({top},{left}) exceeds {}x{}",
                self.height(),
                self.width()
            )));
        }
        Ok(Self::from_array(
            self.data
                .slice(s![top..top + height, left..left + width, ..])
                .to_owned(),
        ))
    }

    /// Centered crop to the largest size divisible by `multiple`.
    pub fn center_crop_to_multiple(&self, multiple: usize) -> Result<Self> {
        if multiple == 0 {
            return Err(JiifError::invalid("crop multiple must be positive"));
        }
        let h = self.height() / multiple * multiple;
        let w = self.width() / multiple * multiple;
        if h == 0 || w == 0 {
            return Err(JiifError::invalid(format!(
                "{}x{} image is smaller than the scale factor {multiple}",
                self.height(),
                self.width()
            )));
        }
        self.crop((self.height() - h) / 2, (self.width() - w) / 2, h, w)
    }

    /// Mirrors left-right.
    pub fn flip_horizontal(&self) -> Self {
        Self::from_array(self.data.slice(s![.., ..;-1, ..]).to_owned())
    }

    /// Mirrors top-bottom.
    pub fn flip_vertical(&self) -> Self {
        Self::from_array(self.data.slice(s![..;-1, .., ..]).to_owned())
    }

    /// Pads with half-sample symmetric reflection up to at least the given size.
    pub fn reflect_pad_to(&self, height: usize, width: usize) -> Self {
        if self.height() >= height && self.width() >= width {
            return self.clone();
        }
        let (h, w) = (self.height().max(height), self.width().max(width));
        let (sh, sw) = (self.height(), self.width());
        Self::from_fn(h, w, self.channels(), |y, x, c| {
            self.get(reflect_index(y as isize, sh), reflect_index(x as isize, sw), c)
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Half-sample symmetric reflection: `-1 -> 0`, `n -> n-1`.
pub fn reflect_index(i: isize, n: usize) -> usize {
    debug_assert!(n > 0);
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}
