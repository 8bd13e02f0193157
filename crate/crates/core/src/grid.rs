//! Image and coordinate lattices.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `height × width × channels` signal, row-major with interleaved
/// channels, every sample in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("sample {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image from arbitrary reals, clipping each sample to `[0, 1]`.
    /// NaN maps to 0.
    pub fn from_clipped(
        height: usize,
        width: usize,
        channels: usize,
        data: impl IntoIterator<Item = f64>,
    ) -> Result<Self> {
        let data = data.into_iter().map(clip_unit).collect();
        Self::new(height, width, channels, data)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Network output (`pixels × channels`) back to an image; values are clipped.
    pub fn from_matrix(height: usize, width: usize, m: ArrayView2<f64>) -> Result<Self> {
        if m.nrows() != height * width {
            return Err(Error::invalid(format!(
                "matrix has {} rows, expected {}",
                m.nrows(),
                height * width
            )));
        }
        Self::from_clipped(height, width, m.ncols(), m.iter().copied())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// One channel as an `H × W` matrix.
    pub fn plane(&self, channel: usize) -> Array2<f64> {
        Array2::from_shape_fn((self.height, self.width), |(r, c)| self.get(r, c, channel))
    }

    /// Pixels as rows, channels as columns: the regression target layout.
    pub fn to_matrix(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.pixels(), self.channels), self.data.clone())
            .expect("length checked at construction")
    }

    /// Channel-mean grayscale copy.
    pub fn to_gray(&self) -> ImageGrid {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks(self.channels)
            .map(|px| px.iter().sum::<f64>() / self.channels as f64)
            .collect();
        ImageGrid {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }
}

pub(crate) fn clip_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Values `n` points spanning `[-1, 1]` inclusive; a single point sits at 0.
pub fn linspace_unit(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    let step = 2.0 / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { 1.0 } else { -1.0 + step * i as f64 })
        .collect()
}

/// Row-major lattice of `(x, y)` input coordinates in `[-1, 1]²`; `x` follows
/// the row index and `y` the column index.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordGrid {
    rows: usize,
    cols: usize,
    coords: Array2<f64>,
}

impl CoordGrid {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(rows·cols) × 2` matrix of coordinates.
    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.coords.view()
    }

    /// Appends a constant extra coordinate (e.g. normalized time) to every
    /// point.
    pub fn with_extra(&self, value: f64) -> Array2<f64> {
        let n = self.len();
        let mut out = Array2::zeros((n, 3));
        out.slice_mut(ndarray::s![.., 0..2]).assign(&self.coords);
        out.column_mut(2).fill(value);
        out
    }
}

pub fn make_coord_grid(rows: usize, cols: usize) -> Result<CoordGrid> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!(
            "coordinate grid needs positive dimensions, got {rows}x{cols}"
        )));
    }
    let xs = linspace_unit(rows);
    let ys = linspace_unit(cols);
    let mut coords = Array2::zeros((rows * cols, 2));
    for (r, &x) in xs.iter().enumerate() {
        for (c, &y) in ys.iter().enumerate() {
            let i = r * cols + c;
            coords[[i, 0]] = x;
            coords[[i, 1]] = y;
        }
    }
    Ok(CoordGrid { rows, cols, coords })
}
