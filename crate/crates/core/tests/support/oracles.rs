//! Brute-force double-precision reference implementations.

#![allow(dead_code)]

use unrain::ImageTensor;

pub fn psnr(a: &ImageTensor<f32>, b: &ImageTensor<f32>) -> f64 {
    let (h, w) = a.dims();
    let mut sse = 0.0;
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let d = a.get(y, x, c) as f64 - b.get(y, x, c) as f64;
                sse += d * d;
            }
        }
    }
    let mse = sse / (h * w * 3) as f64;
    10.0 * (1.0 / mse).log10()
}

/// Direct 11x11 Gaussian window (sigma 1.5) at every fully contained
/// position, per channel, averaged.
pub fn ssim(a: &ImageTensor<f32>, b: &ImageTensor<f32>) -> f64 {
    const N: usize = 11;
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut win = [[0.0f64; N]; N];
    let mut z = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5)).exp();
            z += *v;
        }
    }
    let (h, w) = a.dims();
    let mut total = 0.0;
    for c in 0..3 {
        let mut sum = 0.0;
        let mut count = 0;
        for y0 in 0..=h - N {
            for x0 in 0..=w - N {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (i, row) in win.iter().enumerate() {
                    for (j, &k) in row.iter().enumerate() {
                        let k = k / z;
                        let u = a.get(y0 + i, x0 + j, c) as f64;
                        let v = b.get(y0 + i, x0 + j, c) as f64;
                        ma += k * u;
                        mb += k * v;
                        saa += k * u * u;
                        sbb += k * v * v;
                        sab += k * u * v;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total += sum / count as f64;
    }
    total / 3.0
}

/// Central finite difference of `f` at every coordinate of `x`.
pub fn numeric_gradient(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `||a - b|| / ||b||`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}
