//! Image planes and the pixel-level primitives shared by every other module.
//!
//! An [`ImagePlane`] is an `H x W x C` tensor of unit-interval intensities
//! stored row-major with interleaved channels. Filters accumulate in `f64`
//! and store `f32`.

pub(crate) mod filter;
mod histogram;
mod io;

pub use filter::{gaussian_blur, gaussian_kernel, median_filter, reflect_index, resample};
pub use histogram::{histogram, pearson, Histogram};
pub use io::{load_image, save_image};

use crate::error::{Error, Result};

/// Rec.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Debug, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels == 0 {
            return Err(Error::InvalidArgument("image needs at least one channel".into()));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::shape(
                format!("{expected} values for {height}x{width}x{channels}"),
                data.len(),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// A plane with every value set to `value`.
    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty image plane");
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Builds a plane by evaluating `f(y, x, c)` at every element.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty image plane");
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f32) {
        let i = self.index(y, x, c);
        self.data[i] = value;
    }

    pub fn same_shape(&self, other: &ImagePlane) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn same_size(&self, other: &ImagePlane) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.height, self.width, self.channels)
    }

    pub(crate) fn ensure_same_shape(&self, other: &ImagePlane) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(self.shape_string(), other.shape_string()))
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> ImagePlane {
        ImagePlane {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ImagePlane, f: impl Fn(f32, f32) -> f32) -> Result<ImagePlane> {
        self.ensure_same_shape(other)?;
        Ok(ImagePlane {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Copies one channel out as a single-channel plane.
    pub fn channel(&self, c: usize) -> ImagePlane {
        assert!(c < self.channels);
        ImagePlane {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.data.iter().skip(c).step_by(self.channels).copied().collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Channel-planar copy (`C x H x W`) for the network.
    pub fn to_planar(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; self.data.len()];
        for p in 0..plane {
            for c in 0..self.channels {
                out[c * plane + p] = self.data[p * self.channels + c];
            }
        }
        out
    }

    pub fn from_planar(height: usize, width: usize, channels: usize, planar: &[f32]) -> Result<Self> {
        let plane = height * width;
        if planar.len() != plane * channels {
            return Err(Error::shape(plane * channels, planar.len()));
        }
        let mut data = vec![0.0; planar.len()];
        for c in 0..channels {
            for p in 0..plane {
                data[p * channels + c] = planar[c * plane + p];
            }
        }
        Self::new(height, width, channels, data)
    }

    /// Mirror image across the vertical axis.
    pub fn flip_horizontal(&self) -> ImagePlane {
        ImagePlane::from_fn(self.height, self.width, self.channels, |y, x, c| {
            self.get(y, self.width - 1 - x, c)
        })
    }

    pub fn flip_vertical(&self) -> ImagePlane {
        ImagePlane::from_fn(self.height, self.width, self.channels, |y, x, c| {
            self.get(self.height - 1 - y, x, c)
        })
    }

    /// Rotates by 90 degrees counter-clockwise `quarter_turns` times.
    pub fn rotate90(&self, quarter_turns: usize) -> ImagePlane {
        match quarter_turns % 4 {
            0 => self.clone(),
            1 => ImagePlane::from_fn(self.width, self.height, self.channels, |y, x, c| {
                self.get(x, self.width - 1 - y, c)
            }),
            2 => ImagePlane::from_fn(self.height, self.width, self.channels, |y, x, c| {
                self.get(self.height - 1 - y, self.width - 1 - x, c)
            }),
            _ => ImagePlane::from_fn(self.width, self.height, self.channels, |y, x, c| {
                self.get(self.height - 1 - x, y, c)
            }),
        }
    }
}

/// `1 - x` elementwise.
///
/// Exactly involutive on values that are multiples of `2^-24`, which covers
/// all of `[0.5, 1]`; smaller values may move by one unit in the last place
/// of `1.0`.
pub fn invert(img: &ImagePlane) -> ImagePlane {
    img.map(|v| 1.0 - v)
}

pub fn gamma_correct(img: &ImagePlane, gamma: f64) -> Result<ImagePlane> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    if gamma == 1.0 {
        return Ok(img.clone());
    }
    Ok(img.map(|v| (v.max(0.0) as f64).powf(gamma) as f32))
}

pub fn to_grayscale(img: &ImagePlane) -> Result<ImagePlane> {
    if img.channels() != 3 {
        return Err(Error::shape("3 channels", format!("{} channels", img.channels())));
    }
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| {
            let v = LUMA_WEIGHTS[0] * p[0] as f64
                + LUMA_WEIGHTS[1] * p[1] as f64
                + LUMA_WEIGHTS[2] * p[2] as f64;
            v.clamp(0.0, 1.0) as f32
        })
        .collect();
    ImagePlane::new(img.height(), img.width(), 1, data)
}

/// Grayscale for 3-channel input, a copy for single-channel input.
pub fn luminance(img: &ImagePlane) -> Result<ImagePlane> {
    match img.channels() {
        1 => Ok(img.clone()),
        _ => to_grayscale(img),
    }
}

pub fn clamp_unit(img: &ImagePlane) -> ImagePlane {
    img.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
}
