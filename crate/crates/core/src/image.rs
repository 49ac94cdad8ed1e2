//! Image representation shared by every stage of the pipeline.
//!
//! Images are H×W×3 RGB with intensities nominally in `[0, 1]`. Storage is
//! planar (one contiguous plane per channel), which lets separable filters
//! and the network engine work on channels without reshuffling.

use std::fmt;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use unrain_nn::{Shape, Tensor};

use crate::error::{Error, Result};

/// Scalar type for image math: `f32` for training, `f64` for oracles.
pub trait Real: Float + FromPrimitive + ToPrimitive + Default + Send + Sync + fmt::Debug + 'static {}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub(crate) fn lit<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("representable literal")
}

/// Smallest side accepted by pipeline entry points.
pub const MIN_SIDE: usize = 16;

pub const CHANNELS: usize = 3;

#[derive(Clone, PartialEq)]
pub struct ImageTensor<T = f32> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T> fmt::Debug for ImageTensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ImageTensor({}x{}x3)", self.height, self.width)
    }
}

impl<T: Real> ImageTensor<T> {
    /// Builds an image from planar data (`c * H * W + y * W + x`).
    pub fn from_planar(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!("empty image {height}x{width}")));
        }
        if data.len() != height * width * CHANNELS {
            return Err(Error::InvalidArgument(format!("{} values for a {height}x{width}x3 image", data.len())));
        }
        Ok(ImageTensor { height, width, data })
    }

    pub fn filled(height: usize, width: usize, v: T) -> Self {
        assert!(height > 0 && width > 0, "empty image");
        ImageTensor { height, width, data: vec![v; height * width * CHANNELS] }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, T::zero())
    }

    /// Fills pixel `(y, x)` channel `c` with `f(y, x, c)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut img = Self::zeros(height, width);
        for c in 0..CHANNELS {
            for y in 0..height {
                for x in 0..width {
                    img.data[(c * height + y) * width + x] = f(y, x, c);
                }
            }
        }
        img
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn shape_str(&self) -> String {
        format!("{}x{}x3", self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        ImageTensor { height: self.height, width: self.width, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Elementwise combination of two same-shaped images.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(ImageTensor { height: self.height, width: self.width, data })
    }

    pub fn check_same_shape<U: Real>(&self, other: &ImageTensor<U>) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shapes(self.shape_str(), other.shape_str()));
        }
        Ok(())
    }

    pub fn check_min_side(&self, min: usize) -> Result<()> {
        if self.height < min || self.width < min {
            return Err(Error::InvalidArgument(format!("image {} is smaller than {min}x{min}", self.shape_str())));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ImageTensor<U> {
        ImageTensor {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64().unwrap_or(0.0)).unwrap_or(U::zero())).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64().unwrap_or(0.0)).sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn flip_horizontal(&self) -> Self {
        let (h, w) = self.dims();
        Self::from_fn(h, w, |y, x, c| self.get(y, w - 1 - x, c))
    }
}

impl ImageTensor<f32> {
    /// A `1x3xHxW` network tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(Shape::new(1, CHANNELS, self.height, self.width), self.data.clone())
    }

    /// Stacks same-shaped images into an `Nx3xHxW` tensor.
    pub fn batch_to_tensor(images: &[ImageTensor<f32>]) -> Result<Tensor> {
        let first = images.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let mut data = Vec::with_capacity(first.len() * images.len());
        for img in images {
            first.check_same_shape(img)?;
            data.extend_from_slice(&img.data);
        }
        Ok(Tensor::from_vec(Shape::new(images.len(), CHANNELS, first.height, first.width), data))
    }

    /// Splits an `Nx3xHxW` tensor into images.
    pub fn batch_from_tensor(t: &Tensor) -> Result<Vec<ImageTensor<f32>>> {
        if t.shape.c != CHANNELS {
            return Err(Error::InvalidArgument(format!("tensor {} is not RGB", t.shape)));
        }
        (0..t.shape.n).map(|i| ImageTensor::from_planar(t.shape.h, t.shape.w, t.sample(i).to_vec())).collect()
    }
}

/// Single-channel luminance, same spatial size as its source image.
#[derive(Clone, Debug, PartialEq)]
pub struct LuminanceMap<T = f32> {
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> LuminanceMap<T> {
    pub fn mean(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64().unwrap_or(0.0)).sum::<f64>() / self.data.len() as f64
    }
}

/// Rec. 601 luma weights for R, G, B.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Saturates every element into `[0, 1]`.
pub fn clamp01<T: Real>(x: &ImageTensor<T>) -> ImageTensor<T> {
    x.map(|v| v.max(T::zero()).min(T::one()))
}

pub fn to_luminance<T: Real>(x: &ImageTensor<T>) -> LuminanceMap<T> {
    let [wr, wg, wb] = LUMA_WEIGHTS.map(lit::<T>);
    let (r, g, b) = (x.channel(0), x.channel(1), x.channel(2));
    let data = r.iter().zip(g).zip(b).map(|((&r, &g), &b)| wr * r + wg * g + wb * b).collect();
    LuminanceMap { height: x.height, width: x.width, data }
}

/// Mean of `|a - b|` over all `H * W * 3` elements.
pub fn mean_abs_diff<T: Real>(a: &ImageTensor<T>, b: &ImageTensor<T>) -> Result<T> {
    a.check_same_shape(b)?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(&x, &y)| (x - y).abs().to_f64().unwrap_or(f64::NAN)).sum();
    Ok(lit(sum / a.len() as f64))
}
