use crate::module::{Backward, Mode, Module, Sequential};
use crate::param::Param;
use crate::tensor::{Shape, Tensor};

fn empty() -> Tensor {
    Tensor::zeros(Shape::new(0, 0, 0, 0))
}

/// Mirror index without repeating the edge sample (`d c b | a b c d | c b a`).
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

/// Reflect padding on both spatial axes.
pub struct ReflectPad {
    pad: usize,
    in_shape: Option<Shape>,
}

impl ReflectPad {
    pub fn new(pad: usize) -> Self {
        ReflectPad { pad, in_shape: None }
    }
}

impl Module for ReflectPad {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let s = x.shape;
        let p = self.pad;
        let (oh, ow) = (s.h + 2 * p, s.w + 2 * p);
        let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
        let xs: Vec<usize> = (0..ow).map(|j| reflect(j as isize - p as isize, s.w)).collect();
        for plane in 0..s.n * s.c {
            let src = &x.data[plane * s.h * s.w..(plane + 1) * s.h * s.w];
            let dst = &mut out.data[plane * oh * ow..(plane + 1) * oh * ow];
            for i in 0..oh {
                let si = reflect(i as isize - p as isize, s.h);
                let srow = &src[si * s.w..(si + 1) * s.w];
                for (d, &sj) in dst[i * ow..(i + 1) * ow].iter_mut().zip(&xs) {
                    *d = srow[sj];
                }
            }
        }
        if mode == Mode::Train {
            self.in_shape = Some(s);
        }
        out
    }

    fn backward(&mut self, grad: &Tensor, opts: Backward) -> Tensor {
        let s = self.in_shape.take().expect("pad backward without a training forward");
        if !opts.input {
            return empty();
        }
        let p = self.pad;
        let (oh, ow) = (grad.shape.h, grad.shape.w);
        let mut gx = Tensor::zeros(s);
        let xs: Vec<usize> = (0..ow).map(|j| reflect(j as isize - p as isize, s.w)).collect();
        for plane in 0..s.n * s.c {
            let src = &grad.data[plane * oh * ow..(plane + 1) * oh * ow];
            let dst = &mut gx.data[plane * s.h * s.w..(plane + 1) * s.h * s.w];
            for i in 0..oh {
                let si = reflect(i as isize - p as isize, s.h);
                let drow = &mut dst[si * s.w..(si + 1) * s.w];
                for (g, &sj) in src[i * ow..(i + 1) * ow].iter().zip(&xs) {
                    drow[sj] += g;
                }
            }
        }
        gx
    }
}

/// Per-sample, per-channel normalization without affine parameters.
pub struct InstanceNorm {
    eps: f32,
    cache: Option<(Vec<f32>, Vec<f32>, Shape)>,
}

impl InstanceNorm {
    pub fn new() -> Self {
        InstanceNorm { eps: 1e-5, cache: None }
    }
}

impl Default for InstanceNorm {
    fn default() -> Self {
        Self::new()
    }
}

impl Module for InstanceNorm {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let s = x.shape;
        let plane = s.plane();
        let mut out = Tensor::zeros(s);
        let mut inv_stds = Vec::with_capacity(s.n * s.c);
        for (src, dst) in x.data.chunks(plane).zip(out.data.chunks_mut(plane)) {
            let mean = src.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
            let var = src.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / plane as f64;
            let inv = 1.0 / (var + self.eps as f64).sqrt();
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = ((v as f64 - mean) * inv) as f32;
            }
            inv_stds.push(inv as f32);
        }
        self.cache = match mode {
            Mode::Train => Some((out.data.clone(), inv_stds, s)),
            Mode::Eval => None,
        };
        out
    }

    fn backward(&mut self, grad: &Tensor, opts: Backward) -> Tensor {
        let (xhat, inv_stds, s) = self.cache.take().expect("norm backward without a training forward");
        if !opts.input {
            return empty();
        }
        let plane = s.plane();
        let mut gx = Tensor::zeros(s);
        for (k, ((g, xh), dst)) in
            grad.data.chunks(plane).zip(xhat.chunks(plane)).zip(gx.data.chunks_mut(plane)).enumerate()
        {
            let mean_g = g.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
            let mean_gx = g.iter().zip(xh).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() / plane as f64;
            let inv = inv_stds[k] as f64;
            for ((d, &gi), &xi) in dst.iter_mut().zip(g).zip(xh) {
                *d = (inv * (gi as f64 - mean_g - xi as f64 * mean_gx)) as f32;
            }
        }
        gx
    }
}

#[derive(Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Relu { mask: None }
    }
}

impl Module for Relu {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let data: Vec<f32> = x.data.iter().map(|&v| v.max(0.0)).collect();
        if mode == Mode::Train {
            self.mask = Some(x.data.iter().map(|&v| v > 0.0).collect());
        }
        Tensor::from_vec(x.shape, data)
    }

    fn backward(&mut self, grad: &Tensor, opts: Backward) -> Tensor {
        let mask = self.mask.take().expect("relu backward without a training forward");
        if !opts.input {
            return empty();
        }
        let data = grad.data.iter().zip(&mask).map(|(&g, &m)| if m { g } else { 0.0 }).collect();
        Tensor::from_vec(grad.shape, data)
    }
}

pub struct LeakyRelu {
    slope: f32,
    mask: Option<Vec<bool>>,
}

impl LeakyRelu {
    pub fn new(slope: f32) -> Self {
        LeakyRelu { slope, mask: None }
    }
}

impl Module for LeakyRelu {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let a = self.slope;
        let data: Vec<f32> = x.data.iter().map(|&v| if v > 0.0 { v } else { a * v }).collect();
        if mode == Mode::Train {
            self.mask = Some(x.data.iter().map(|&v| v > 0.0).collect());
        }
        Tensor::from_vec(x.shape, data)
    }

    fn backward(&mut self, grad: &Tensor, opts: Backward) -> Tensor {
        let mask = self.mask.take().expect("leaky relu backward without a training forward");
        if !opts.input {
            return empty();
        }
        let a = self.slope;
        let data = grad.data.iter().zip(&mask).map(|(&g, &m)| if m { g } else { a * g }).collect();
        Tensor::from_vec(grad.shape, data)
    }
}

/// Nearest-neighbour 2x spatial upsampling.
#[derive(Default)]
pub struct Upsample2 {
    in_shape: Option<Shape>,
}

impl Upsample2 {
    pub fn new() -> Self {
        Upsample2 { in_shape: None }
    }
}

impl Module for Upsample2 {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let s = x.shape;
        let (oh, ow) = (2 * s.h, 2 * s.w);
        let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
        for plane in 0..s.n * s.c {
            let src = &x.data[plane * s.plane()..(plane + 1) * s.plane()];
            let dst = &mut out.data[plane * oh * ow..(plane + 1) * oh * ow];
            for i in 0..oh {
                let srow = &src[(i / 2) * s.w..(i / 2 + 1) * s.w];
                for (j, d) in dst[i * ow..(i + 1) * ow].iter_mut().enumerate() {
                    *d = srow[j / 2];
                }
            }
        }
        if mode == Mode::Train {
            self.in_shape = Some(s);
        }
        out
    }

    fn backward(&mut self, grad: &Tensor, opts: Backward) -> Tensor {
        let s = self.in_shape.take().expect("upsample backward without a training forward");
        if !opts.input {
            return empty();
        }
        let (oh, ow) = (grad.shape.h, grad.shape.w);
        let mut gx = Tensor::zeros(s);
        for plane in 0..s.n * s.c {
            let src = &grad.data[plane * oh * ow..(plane + 1) * oh * ow];
            let dst = &mut gx.data[plane * s.plane()..(plane + 1) * s.plane()];
            for i in 0..oh {
                let drow = &mut dst[(i / 2) * s.w..(i / 2 + 1) * s.w];
                for (j, g) in src[i * ow..(i + 1) * ow].iter().enumerate() {
                    drow[j / 2] += g;
                }
            }
        }
        gx
    }
}

/// `y = x + body(x)`.
pub struct Residual {
    body: Sequential,
}

impl Residual {
    pub fn new(body: Sequential) -> Self {
        Residual { body }
    }
}

impl Module for Residual {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let mut y = self.body.forward(x, mode);
        y.add_assign(x);
        y
    }

    fn backward(&mut self, grad: &Tensor, opts: Backward) -> Tensor {
        // the body always needs its input gradient when ours is requested
        let mut g = self.body.backward(grad, opts);
        if opts.input {
            g.add_assign(grad);
        }
        g
    }

    fn params(&self) -> Vec<&Param> {
        self.body.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.body.params_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::seeded_rng;
    use rand::Rng;

    fn random(shape: Shape, seed: u64) -> Tensor {
        let mut rng = seeded_rng(seed, 1);
        Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Compares the analytic input gradient of `sum(module(x) * r)` with
    /// central differences in double-checked f32.
    fn check_input_grad(module: &mut dyn Module, x: &Tensor, tol: f64) {
        let y = module.forward(x, Mode::Train);
        let r = random(y.shape, 99);
        let g = module.backward(&r, Backward::FULL);
        let h = 1e-2f32;
        for idx in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[idx] += h;
            let mut xm = x.clone();
            xm.data[idx] -= h;
            let f = |t: &Tensor, m: &mut dyn Module| -> f64 {
                m.forward(t, Mode::Eval).data.iter().zip(&r.data).map(|(a, b)| *a as f64 * *b as f64).sum()
            };
            let fd = (f(&xp, module) - f(&xm, module)) / (2.0 * h as f64);
            assert!((fd - g.data[idx] as f64).abs() < tol, "grad {idx}: fd {fd} vs {}", g.data[idx]);
        }
    }

    #[test]
    fn reflect_index_folds() {
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn reflect_pad_values_and_grad() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 3), vec![1., 2., 3., 4., 5., 6.]);
        let mut pad = ReflectPad::new(1);
        let y = pad.forward(&x, Mode::Eval);
        assert_eq!(y.shape, Shape::new(1, 1, 4, 5));
        assert_eq!(&y.data[..5], &[5., 4., 5., 6., 5.]);
        check_input_grad(&mut ReflectPad::new(2), &random(Shape::new(2, 2, 4, 5), 3), 1e-3);
    }

    #[test]
    fn instance_norm_normalizes_and_differentiates() {
        let x = random(Shape::new(2, 3, 5, 4), 5);
        let y = InstanceNorm::new().forward(&x, Mode::Eval);
        for plane in y.data.chunks(20) {
            let mean: f32 = plane.iter().sum::<f32>() / 20.0;
            let var: f32 = plane.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / 20.0;
            assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-3);
        }
        check_input_grad(&mut InstanceNorm::new(), &x, 2e-3);
    }

    #[test]
    fn activations_and_upsample_gradients() {
        let mut x = random(Shape::new(1, 2, 3, 3), 8);
        // keep samples away from the kink at zero
        x.data.iter_mut().for_each(|v| *v += 0.1 * v.signum());
        check_input_grad(&mut LeakyRelu::new(0.2), &x, 1e-3);
        check_input_grad(&mut Upsample2::new(), &x, 1e-3);
        let y = Relu::new().forward(&x, Mode::Eval);
        assert!(y.data.iter().all(|&v| v >= 0.0));
    }
}
