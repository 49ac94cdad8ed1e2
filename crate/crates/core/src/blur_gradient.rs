//! Background guidance: Gaussian blur at several scales, spatial gradients,
//! and the multi-scale blurred-gradient matching loss between a rainy input
//! and its derained estimate.
//!
//! At large blur scales rain streaks vanish while background structure
//! survives, so matching blurred gradients pins the background without
//! asking the output to keep the streaks.

use crate::error::{Error, Result};
use crate::image::{lit, ImageTensor, Real, CHANNELS};

/// One blur level: standard deviation in pixels and its loss weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlurScale {
    pub sigma: f64,
    pub lambda: f64,
}

/// Ordered blur ladder. Sigmas are strictly increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianScaleConfig {
    scales: Vec<BlurScale>,
}

impl Default for GaussianScaleConfig {
    fn default() -> Self {
        GaussianScaleConfig {
            scales: vec![
                BlurScale { sigma: 3.0, lambda: 0.01 },
                BlurScale { sigma: 5.0, lambda: 0.1 },
                BlurScale { sigma: 9.0, lambda: 1.0 },
            ],
        }
    }
}

impl GaussianScaleConfig {
    pub fn new(scales: Vec<BlurScale>) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::InvalidArgument("blur ladder is empty".into()));
        }
        for s in &scales {
            if !(s.sigma > 0.0 && s.sigma.is_finite()) || !(s.lambda > 0.0 && s.lambda.is_finite()) {
                return Err(Error::InvalidArgument(format!("blur scale {s:?} must have positive sigma and lambda")));
            }
        }
        if scales.windows(2).any(|w| w[1].sigma <= w[0].sigma) {
            return Err(Error::InvalidArgument("blur sigmas must be strictly increasing".into()));
        }
        Ok(GaussianScaleConfig { scales })
    }

    pub fn scales(&self) -> &[BlurScale] {
        &self.scales
    }

    /// Parses `sigma:lambda` pairs separated by commas, e.g. `3:0.01,5:0.1,9:1`.
    pub fn parse(s: &str) -> Result<Self> {
        let scales = s
            .split(',')
            .map(|pair| {
                let (a, b) = pair
                    .split_once(':')
                    .ok_or_else(|| Error::InvalidArgument(format!("`{pair}` is not sigma:lambda")))?;
                let num = |t: &str| {
                    t.trim().parse::<f64>().map_err(|_| Error::InvalidArgument(format!("`{t}` is not a number")))
                };
                Ok(BlurScale { sigma: num(a)?, lambda: num(b)? })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(scales)
    }
}

impl std::fmt::Display for GaussianScaleConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.scales.iter().map(|s| format!("{}:{}", s.sigma, s.lambda)).collect();
        f.write_str(&parts.join(","))
    }
}

/// Horizontal and vertical derivatives of an image.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField<T = f32> {
    /// Derivative along columns (x).
    pub gx: ImageTensor<T>,
    /// Derivative along rows (y).
    pub gy: ImageTensor<T>,
}

/// Normalized Gaussian taps of length `2 * ceil(3 sigma) + 1`.
pub fn gaussian_kernel_1d(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("gaussian sigma must be positive, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let z: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / z).collect())
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Source index for every (output position, tap) pair along an axis of length `n`.
fn tap_table(n: usize, taps: usize) -> Vec<usize> {
    let r = (taps / 2) as isize;
    (0..n).flat_map(|j| (0..taps).map(move |k| reflect(j as isize + k as isize - r, n))).collect()
}

/// Separable reflect-padded correlation of one plane (rows, then columns).
fn blur_plane<T: Real>(src: &[T], h: usize, w: usize, kernel: &[T], rows: &[usize], cols: &[usize]) -> Vec<T> {
    let taps = kernel.len();
    let mut tmp = vec![T::zero(); h * w];
    for y in 0..h {
        let srow = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let idx = &cols[x * taps..(x + 1) * taps];
            tmp[y * w + x] = idx.iter().zip(kernel).fold(T::zero(), |acc, (&i, &k)| acc + k * srow[i]);
        }
    }
    let mut out = vec![T::zero(); h * w];
    for y in 0..h {
        let idx = &rows[y * taps..(y + 1) * taps];
        for (&i, &k) in idx.iter().zip(kernel) {
            let trow = &tmp[i * w..(i + 1) * w];
            for (o, &t) in out[y * w..(y + 1) * w].iter_mut().zip(trow) {
                *o = *o + k * t;
            }
        }
    }
    out
}

/// Adjoint of [`blur_plane`]: scatters each output gradient back to its taps.
fn blur_plane_adjoint<T: Real>(g: &[T], h: usize, w: usize, kernel: &[T], rows: &[usize], cols: &[usize]) -> Vec<T> {
    let taps = kernel.len();
    let mut tmp = vec![T::zero(); h * w];
    for y in 0..h {
        let idx = &rows[y * taps..(y + 1) * taps];
        let grow = &g[y * w..(y + 1) * w];
        for (&i, &k) in idx.iter().zip(kernel) {
            for (t, &gv) in tmp[i * w..(i + 1) * w].iter_mut().zip(grow) {
                *t = *t + k * gv;
            }
        }
    }
    let mut out = vec![T::zero(); h * w];
    for y in 0..h {
        let trow = &tmp[y * w..(y + 1) * w];
        let orow = &mut out[y * w..(y + 1) * w];
        for x in 0..w {
            let idx = &cols[x * taps..(x + 1) * taps];
            for (&i, &k) in idx.iter().zip(kernel) {
                orow[i] = orow[i] + k * trow[x];
            }
        }
    }
    out
}

struct BlurOp<T> {
    kernel: Vec<T>,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

/// Plane, height, width, kernel, row and column reflection tables.
type PlaneOp<T> = fn(&[T], usize, usize, &[T], &[usize], &[usize]) -> Vec<T>;

impl<T: Real> BlurOp<T> {
    fn new(sigma: f64, h: usize, w: usize) -> Result<Self> {
        let kernel: Vec<T> = gaussian_kernel_1d(sigma)?.into_iter().map(lit).collect();
        let taps = kernel.len();
        Ok(BlurOp { rows: tap_table(h, taps), cols: tap_table(w, taps), kernel })
    }

    fn apply(&self, x: &ImageTensor<T>) -> ImageTensor<T> {
        self.per_channel(x, blur_plane)
    }

    fn adjoint(&self, g: &ImageTensor<T>) -> ImageTensor<T> {
        self.per_channel(g, blur_plane_adjoint)
    }

    fn per_channel(&self, x: &ImageTensor<T>, f: PlaneOp<T>) -> ImageTensor<T> {
        let (h, w) = x.dims();
        let mut data = Vec::with_capacity(x.len());
        for c in 0..CHANNELS {
            data.extend(f(x.channel(c), h, w, &self.kernel, &self.rows, &self.cols));
        }
        ImageTensor::from_planar(h, w, data).expect("shape preserved")
    }
}

/// Per-channel separable Gaussian blur with reflect padding.
pub fn gaussian_blur<T: Real>(x: &ImageTensor<T>, sigma: f64) -> Result<ImageTensor<T>> {
    let (h, w) = x.dims();
    Ok(BlurOp::new(sigma, h, w)?.apply(x))
}

/// Central differences per axis and channel, replicating the border sample.
pub fn spatial_gradient<T: Real>(x: &ImageTensor<T>) -> Result<GradientField<T>> {
    let (h, w) = x.dims();
    if h < 3 || w < 3 {
        return Err(Error::InvalidArgument(format!("gradient needs at least 3x3, got {}", x.shape_str())));
    }
    let half = lit::<T>(0.5);
    let gx = ImageTensor::from_fn(h, w, |y, i, c| {
        (x.get(y, (i + 1).min(w - 1), c) - x.get(y, i.saturating_sub(1), c)) * half
    });
    let gy = ImageTensor::from_fn(h, w, |i, xx, c| {
        (x.get((i + 1).min(h - 1), xx, c) - x.get(i.saturating_sub(1), xx, c)) * half
    });
    Ok(GradientField { gx, gy })
}

fn spatial_gradient_adjoint<T: Real>(gx: &ImageTensor<T>, gy: &ImageTensor<T>) -> ImageTensor<T> {
    let (h, w) = gx.dims();
    let half = lit::<T>(0.5);
    let mut out = ImageTensor::zeros(h, w);
    for c in 0..CHANNELS {
        for y in 0..h {
            for x in 0..w {
                let a = gx.get(y, x, c) * half;
                let (xp, xm) = ((x + 1).min(w - 1), x.saturating_sub(1));
                out.set(y, xp, c, out.get(y, xp, c) + a);
                out.set(y, xm, c, out.get(y, xm, c) - a);
                let b = gy.get(y, x, c) * half;
                let (yp, ym) = ((y + 1).min(h - 1), y.saturating_sub(1));
                out.set(yp, x, c, out.get(yp, x, c) + b);
                out.set(ym, x, c, out.get(ym, x, c) - b);
            }
        }
    }
    out
}

fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

struct ScaleTerm<T> {
    error: T,
    grad: Option<ImageTensor<T>>,
}

fn scale_term<T: Real>(
    r: &ImageTensor<T>,
    c_hat: &ImageTensor<T>,
    sigma: f64,
    want_grad: bool,
) -> Result<ScaleTerm<T>> {
    r.check_same_shape(c_hat)?;
    let (h, w) = r.dims();
    let op = BlurOp::new(sigma, h, w)?;
    let gr = spatial_gradient(&op.apply(r))?;
    let gc = spatial_gradient(&op.apply(c_hat))?;
    let n = lit::<T>((2 * r.len()) as f64);
    let dx = gr.gx.zip_map(&gc.gx, |a, b| a - b)?;
    let dy = gr.gy.zip_map(&gc.gy, |a, b| a - b)?;
    let total = dx.as_slice().iter().chain(dy.as_slice()).fold(T::zero(), |acc, &d| acc + d.abs());
    let grad = if want_grad {
        // d|gr - gc| / d gc = -sign(gr - gc)
        let sx = dx.map(|d| -sign(d) / n);
        let sy = dy.map(|d| -sign(d) / n);
        Some(op.adjoint(&spatial_gradient_adjoint(&sx, &sy)))
    } else {
        None
    };
    Ok(ScaleTerm { error: total / n, grad })
}

/// Unweighted error at one scale: mean over both axes, all pixels and channels
/// of `|grad(blur(r)) - grad(blur(c_hat))|`.
pub fn scale_gradient_error<T: Real>(r: &ImageTensor<T>, c_hat: &ImageTensor<T>, sigma: f64) -> Result<T> {
    Ok(scale_term(r, c_hat, sigma, false)?.error)
}

/// Weighted sum of per-scale blurred-gradient errors.
pub fn background_guidance_loss<T: Real>(
    r: &ImageTensor<T>,
    c_hat: &ImageTensor<T>,
    cfg: &GaussianScaleConfig,
) -> Result<T> {
    let mut loss = T::zero();
    for s in cfg.scales() {
        loss = loss + lit::<T>(s.lambda) * scale_term(r, c_hat, s.sigma, false)?.error;
    }
    Ok(loss)
}

/// Loss value and its gradient with respect to `c_hat`.
pub fn background_guidance_loss_grad<T: Real>(
    r: &ImageTensor<T>,
    c_hat: &ImageTensor<T>,
    cfg: &GaussianScaleConfig,
) -> Result<(T, ImageTensor<T>)> {
    let (h, w) = r.dims();
    let mut loss = T::zero();
    let mut grad = ImageTensor::zeros(h, w);
    for s in cfg.scales() {
        let lambda = lit::<T>(s.lambda);
        let term = scale_term(r, c_hat, s.sigma, true)?;
        loss = loss + lambda * term.error;
        let g = term.grad.expect("requested");
        for (acc, &v) in grad.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *acc = *acc + lambda * v;
        }
    }
    Ok((loss, grad))
}
