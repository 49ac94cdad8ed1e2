use rand_chacha::ChaCha8Rng;

use crate::init::he_normal;
use crate::module::{Backward, Mode, Module};
use crate::param::Param;
use crate::tensor::{Shape, Tensor};

/// 2-D convolution with zero padding, lowered to a matrix product via im2col.
///
/// Weights are stored as an `out_c x (in_c * k * k)` row-major matrix.
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Param,
    pub bias: Param,
    cache: Option<ConvCache>,
}

struct ConvCache {
    in_shape: Shape,
    cols: Vec<Vec<f32>>,
}

impl Conv2d {
    pub fn new(name: &str, in_c: usize, out_c: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        assert!(in_c > 0 && out_c > 0 && kernel > 0 && stride > 0, "invalid conv geometry");
        Conv2d {
            in_c,
            out_c,
            kernel,
            stride,
            pad,
            weight: Param::zeros(format!("{name}.weight"), vec![out_c, in_c, kernel, kernel]),
            bias: Param::zeros(format!("{name}.bias"), vec![out_c]),
            cache: None,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    /// He-normal weights, zero biases.
    pub fn init(&mut self, rng: &mut ChaCha8Rng) {
        let fan_in = self.fan_in();
        he_normal(&mut self.weight.value, fan_in, rng);
        self.bias.value.iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.pad - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.pad - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    fn im2col(&self, x: &[f32], h: usize, w: usize, oh: usize, ow: usize, cols: &mut [f32]) {
        let (k, s, p) = (self.kernel, self.stride, self.pad as isize);
        let plane = oh * ow;
        for ci in 0..self.in_c {
            let src = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p;
                        let drow = &mut dst[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            drow.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                        if s == 1 {
                            // valid ox range: 0 <= ox + kx - p < w
                            let lo = (p - kx as isize).clamp(0, ow as isize) as usize;
                            let hi = (w as isize + p - kx as isize).clamp(0, ow as isize) as usize;
                            drow[..lo].iter_mut().for_each(|v| *v = 0.0);
                            if hi > lo {
                                let start = (lo as isize + kx as isize - p) as usize;
                                drow[lo..hi].copy_from_slice(&srow[start..start + hi - lo]);
                            }
                            drow[hi.max(lo)..].iter_mut().for_each(|v| *v = 0.0);
                        } else {
                            for (ox, v) in drow.iter_mut().enumerate() {
                                let ix = (ox * s + kx) as isize - p;
                                *v = if ix < 0 || ix >= w as isize { 0.0 } else { srow[ix as usize] };
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], h: usize, w: usize, oh: usize, ow: usize, gx: &mut [f32]) {
        let (k, s, p) = (self.kernel, self.stride, self.pad as isize);
        let plane = oh * ow;
        for ci in 0..self.in_c {
            let dst = &mut gx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        let srow = &src[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            let lo = (p - kx as isize).clamp(0, ow as isize) as usize;
                            let hi = (w as isize + p - kx as isize).clamp(0, ow as isize) as usize;
                            if hi > lo {
                                let start = (lo as isize + kx as isize - p) as usize;
                                for (d, v) in drow[start..start + hi - lo].iter_mut().zip(&srow[lo..hi]) {
                                    *d += v;
                                }
                            }
                        } else {
                            for (ox, v) in srow.iter().enumerate() {
                                let ix = (ox * s + kx) as isize - p;
                                if ix >= 0 && ix < w as isize {
                                    drow[ix as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `c = alpha * a * b + beta * c` for row-major operands with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: isize,
    csa: isize,
    b: &[f32],
    rsb: isize,
    csb: isize,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe matrices that lie inside the given slices,
    // which callers guarantee by construction of the shapes.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Module for Conv2d {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let s = x.shape;
        assert_eq!(s.c, self.in_c, "{}: expected {} input channels, got {}", self.weight.name, self.in_c, s.c);
        assert!(
            s.h + 2 * self.pad >= self.kernel && s.w + 2 * self.pad >= self.kernel,
            "{}: input {s} smaller than kernel",
            self.weight.name
        );
        let (oh, ow) = self.out_hw(s.h, s.w);
        let kk = self.fan_in();
        let plane = oh * ow;
        let mut out = Tensor::zeros(Shape::new(s.n, self.out_c, oh, ow));
        let mut cols_all = Vec::with_capacity(s.n);
        for i in 0..s.n {
            let mut cols = vec![0.0f32; kk * plane];
            self.im2col(x.sample(i), s.h, s.w, oh, ow, &mut cols);
            let o = out.sample_mut(i);
            for (oc, row) in o.chunks_mut(plane).enumerate() {
                row.iter_mut().for_each(|v| *v = self.bias.value[oc]);
            }
            gemm(self.out_c, kk, plane, &self.weight.value, kk as isize, 1, &cols, plane as isize, 1, 1.0, o);
            if mode == Mode::Train {
                cols_all.push(cols);
            }
        }
        self.cache = match mode {
            Mode::Train => Some(ConvCache { in_shape: s, cols: cols_all }),
            Mode::Eval => None,
        };
        out
    }

    fn backward(&mut self, grad: &Tensor, opts: Backward) -> Tensor {
        let cache = self.cache.take().expect("conv backward without a training forward");
        let s = cache.in_shape;
        let (oh, ow) = (grad.shape.h, grad.shape.w);
        let kk = self.fan_in();
        let plane = oh * ow;
        let mut gx = if opts.input { Tensor::zeros(s) } else { Tensor::zeros(Shape::new(0, 0, 0, 0)) };
        let mut gcols = if opts.input { vec![0.0f32; kk * plane] } else { Vec::new() };
        for i in 0..s.n {
            let g = grad.sample(i);
            if opts.params {
                let cols = &cache.cols[i];
                // dW += G * cols^T
                gemm(self.out_c, plane, kk, g, plane as isize, 1, cols, 1, plane as isize, 1.0, &mut self.weight.grad);
                for (oc, row) in g.chunks(plane).enumerate() {
                    self.bias.grad[oc] += row.iter().sum::<f32>();
                }
            }
            if opts.input {
                // dcols = W^T * G
                gemm(kk, self.out_c, plane, &self.weight.value, 1, kk as isize, g, plane as isize, 1, 0.0, &mut gcols);
                self.col2im(&gcols, s.h, s.w, oh, ow, gx.sample_mut(i));
            }
        }
        gx
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}
