//! The four trainable networks: deraining generator, lightweight rain-adding
//! generator, and two patch discriminators.
//!
//! Generators are residual encoder-decoders: a 7x7 stem, two stride-2
//! downsampling convolutions, a stack of residual blocks, two upsampling
//! stages (nearest 2x then 3x3 convolution) and a 7x7 head. The head output
//! is added to the input expressed in tanh space, then mapped through a
//! rescaled tanh, so outputs always lie in `[0, 1]` and a zero residual is the
//! identity map. Discriminators are stride-2 4x4 convolution stacks emitting
//! raw patch logits.

use rand_chacha::ChaCha8Rng;
use unrain_nn::{
    he_normal, seeded_rng, Backward, Conv2d, InstanceNorm, LeakyRelu, Mode, Module, Param, ReflectPad, Relu, Residual,
    Sequential, Shape, Tensor, Upsample2,
};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

pub const ARCH_VERSION: &str = "resnet-patch-v1";

/// Inputs are clipped to this magnitude in tanh space before the identity skip.
const SKIP_CLIP: f32 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorRole {
    Derain,
    Rerain,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub base_channels: usize,
    pub num_resblocks_gc: usize,
    pub num_resblocks_gr: usize,
    pub disc_layers: usize,
    /// Instance normalization in generators and inner discriminator layers.
    pub norm: bool,
    /// Add the input (in tanh space) to the generator head output.
    pub input_skip: bool,
    /// Fixed scale on the generator's residual branch, so a freshly
    /// initialized generator starts near the identity.
    pub residual_gain: f32,
    /// Constrain the residual to a non-negative rain layer: the deraining
    /// generator can only remove it, the rain-adding generator only add it.
    pub signed_residual: bool,
    /// Average the residual over channels so it only changes brightness.
    pub achromatic_residual: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            base_channels: 64,
            num_resblocks_gc: 6,
            num_resblocks_gr: 2,
            disc_layers: 4,
            norm: true,
            input_skip: true,
            residual_gain: 0.1,
            signed_residual: false,
            achromatic_residual: false,
        }
    }
}

impl NetworkConfig {
    /// Defaults for a training resolution: 9 residual blocks at 256 and above, 6 below.
    pub fn for_image_size(size: usize) -> Self {
        NetworkConfig { num_resblocks_gc: if size >= 256 { 9 } else { 6 }, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("network config: {what} must be positive")));
        if self.base_channels < 2 {
            return Err(Error::InvalidArgument("network config: base_channels must be at least 2".into()));
        }
        if self.num_resblocks_gc == 0 {
            return bad("num_resblocks_gc");
        }
        if self.num_resblocks_gr == 0 {
            return bad("num_resblocks_gr");
        }
        if self.disc_layers == 0 {
            return bad("disc_layers");
        }
        if !(self.residual_gain > 0.0 && self.residual_gain.is_finite()) {
            return bad("residual_gain");
        }
        Ok(())
    }

    /// Spatial reduction factor of the discriminators.
    pub fn disc_stride(&self) -> usize {
        1 << self.disc_layers
    }
}

/// Mirrors an index past the far edge back inside `0..n`.
fn fold(i: usize, n: usize) -> usize {
    if i < n {
        i
    } else {
        2 * n - 2 - i
    }
}

/// Replaces every channel by the per-pixel channel mean. The map is a
/// symmetric projection, so it is also its own adjoint.
fn channel_mean_broadcast(t: &mut Tensor) {
    let (c, plane) = (t.shape.c, t.shape.h * t.shape.w);
    for img in t.data.chunks_mut(c * plane) {
        for i in 0..plane {
            let m = (0..c).map(|k| img[k * plane + i]).sum::<f32>() / c as f32;
            (0..c).for_each(|k| img[k * plane + i] = m);
        }
    }
}

fn conv(name: String, i: usize, o: usize, k: usize, s: usize, p: usize) -> Conv2d {
    Conv2d::new(&name, i, o, k, s, p)
}

fn norm_act(seq: &mut Sequential, norm: bool) {
    if norm {
        seq.push(InstanceNorm::new());
    }
    seq.push(Relu::new());
}

pub struct Generator {
    role: GeneratorRole,
    body: Sequential,
    input_skip: bool,
    gain: f32,
    signed: bool,
    achromatic: bool,
    cache: Option<GenCache>,
}

struct GenCache {
    t: Vec<f32>,
    skip_deriv: Vec<f32>,
    /// d(residual)/d(body output) when the residual is sign-constrained.
    res_deriv: Vec<f32>,
}

impl Generator {
    pub fn role(&self) -> GeneratorRole {
        self.role
    }

    /// Runs the generator; inputs are `Nx3xHxW` with H, W divisible by 4.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        assert!(
            x.shape.h.is_multiple_of(4) && x.shape.w.is_multiple_of(4),
            "generator input {} not divisible by 4",
            x.shape
        );
        let mut h = self.body.forward(x, mode);
        debug_assert_eq!(h.shape, x.shape);
        if self.achromatic {
            channel_mean_broadcast(&mut h);
        }
        let mut res_deriv = Vec::new();
        if self.signed {
            let sign = if self.role == GeneratorRole::Derain { -self.gain } else { self.gain };
            if mode == Mode::Train {
                res_deriv = h.data.iter().map(|&b| sign / (1.0 + (-b).exp())).collect();
            }
            // stable softplus
            h.data.iter_mut().for_each(|b| *b = sign * (b.max(0.0) + (-b.abs()).exp().ln_1p()));
        } else if self.gain != 1.0 {
            h.scale(self.gain);
        }
        let mut skip_deriv = Vec::new();
        if self.input_skip {
            if mode == Mode::Train {
                skip_deriv.reserve(x.data.len());
            }
            for (hv, &xv) in h.data.iter_mut().zip(&x.data) {
                let u = 2.0 * xv - 1.0;
                let uc = u.clamp(-SKIP_CLIP, SKIP_CLIP);
                *hv += uc.atanh();
                if mode == Mode::Train {
                    // d atanh(2x - 1) / dx, zero where clipped
                    skip_deriv.push(if u.abs() < SKIP_CLIP { 2.0 / (1.0 - uc * uc) } else { 0.0 });
                }
            }
        }
        let t: Vec<f32> = h.data.iter().map(|v| v.tanh()).collect();
        let out = Tensor::from_vec(h.shape, t.iter().map(|v| 0.5 * (v + 1.0)).collect());
        if mode == Mode::Train {
            self.cache = Some(GenCache { t, skip_deriv, res_deriv });
        }
        out
    }

    pub fn backward(&mut self, grad: &Tensor, opts: Backward) -> Tensor {
        let cache = self.cache.take().expect("generator backward without a training forward");
        let dh: Vec<f32> = grad.data.iter().zip(&cache.t).map(|(g, t)| g * 0.5 * (1.0 - t * t)).collect();
        let dh = Tensor::from_vec(grad.shape, dh);
        let mut dbody = dh.clone();
        if self.signed {
            dbody.data.iter_mut().zip(&cache.res_deriv).for_each(|(d, k)| *d *= k);
        } else if self.gain != 1.0 {
            dbody.scale(self.gain);
        }
        if self.achromatic {
            channel_mean_broadcast(&mut dbody);
        }
        let mut gx = self.body.backward(&dbody, opts);
        if opts.input && self.input_skip {
            for ((g, d), s) in gx.data.iter_mut().zip(&dh.data).zip(&cache.skip_deriv) {
                *g += d * s;
            }
        }
        gx
    }

    pub fn infer(&mut self, x: &Tensor) -> Tensor {
        self.forward(x, Mode::Eval)
    }

    /// Runs on one image of any size: reflect-pads up to a multiple of 4,
    /// infers, and crops back.
    pub fn apply(&mut self, img: &ImageTensor<f32>) -> Result<ImageTensor<f32>> {
        let (h, w) = img.dims();
        let (ph, pw) = (h.div_ceil(4) * 4, w.div_ceil(4) * 4);
        if ph + 1 > 2 * h || pw + 1 > 2 * w {
            return Err(Error::InvalidArgument(format!("image {} too small to pad", img.shape_str())));
        }
        let padded = if (ph, pw) == (h, w) {
            img.clone()
        } else {
            ImageTensor::from_fn(ph, pw, |y, x, c| img.get(fold(y, h), fold(x, w), c))
        };
        let out = self.infer(&padded.to_tensor());
        let out = ImageTensor::from_planar(ph, pw, out.data)?;
        if (ph, pw) == (h, w) {
            return Ok(out);
        }
        Ok(ImageTensor::from_fn(h, w, |y, x, c| out.get(y, x, c)))
    }

    pub fn params(&self) -> Vec<&Param> {
        self.body.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.body.params_mut()
    }
}

pub struct Discriminator {
    body: Sequential,
    stride: usize,
}

impl Discriminator {
    /// Patch logits of shape `Nx1x(H/16)x(W/16)` for four layers.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        assert!(
            x.shape.h.is_multiple_of(self.stride) && x.shape.w.is_multiple_of(self.stride),
            "discriminator input {} not divisible by {}",
            x.shape,
            self.stride
        );
        self.body.forward(x, mode)
    }

    pub fn backward(&mut self, grad: &Tensor, opts: Backward) -> Tensor {
        self.body.backward(grad, opts)
    }

    pub fn output_shape(&self, input: Shape) -> Shape {
        Shape::new(input.n, 1, input.h / self.stride, input.w / self.stride)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.body.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.body.params_mut()
    }
}

/// Builds an uninitialized (all-zero) generator.
pub fn build_generator(cfg: &NetworkConfig, role: GeneratorRole) -> Result<Generator> {
    cfg.validate()?;
    let (prefix, c, blocks) = match role {
        GeneratorRole::Derain => ("g_c", cfg.base_channels, cfg.num_resblocks_gc),
        GeneratorRole::Rerain => ("g_r", cfg.base_channels / 2, cfg.num_resblocks_gr),
    };
    let mut body = Sequential::new();
    body.push(ReflectPad::new(3)).push(conv(format!("{prefix}.stem"), 3, c, 7, 1, 0));
    norm_act(&mut body, cfg.norm);
    body.push(conv(format!("{prefix}.down1"), c, 2 * c, 3, 2, 1));
    norm_act(&mut body, cfg.norm);
    body.push(conv(format!("{prefix}.down2"), 2 * c, 4 * c, 3, 2, 1));
    norm_act(&mut body, cfg.norm);
    for b in 0..blocks {
        let mut block = Sequential::new();
        block.push(ReflectPad::new(1)).push(conv(format!("{prefix}.res{b}.conv1"), 4 * c, 4 * c, 3, 1, 0));
        norm_act(&mut block, cfg.norm);
        block.push(ReflectPad::new(1)).push(conv(format!("{prefix}.res{b}.conv2"), 4 * c, 4 * c, 3, 1, 0));
        if cfg.norm {
            block.push(InstanceNorm::new());
        }
        body.push(Residual::new(block));
    }
    body.push(Upsample2::new()).push(ReflectPad::new(1)).push(conv(format!("{prefix}.up1"), 4 * c, 2 * c, 3, 1, 0));
    norm_act(&mut body, cfg.norm);
    body.push(Upsample2::new()).push(ReflectPad::new(1)).push(conv(format!("{prefix}.up2"), 2 * c, c, 3, 1, 0));
    norm_act(&mut body, cfg.norm);
    body.push(ReflectPad::new(3)).push(conv(format!("{prefix}.head"), c, 3, 7, 1, 0));
    Ok(Generator {
        role,
        body,
        input_skip: cfg.input_skip,
        gain: cfg.residual_gain,
        signed: cfg.signed_residual,
        achromatic: cfg.achromatic_residual,
        cache: None,
    })
}

/// Builds an uninitialized patch discriminator named `prefix`.
pub fn build_discriminator(cfg: &NetworkConfig, prefix: &str) -> Result<Discriminator> {
    cfg.validate()?;
    let c = cfg.base_channels;
    let mut body = Sequential::new();
    let mut ch = 3;
    for layer in 0..cfg.disc_layers {
        let last = layer + 1 == cfg.disc_layers;
        let out = if last { 1 } else { c << layer.min(3) };
        body.push(conv(format!("{prefix}.conv{layer}"), ch, out, 4, 2, 1));
        if !last {
            if layer > 0 && cfg.norm {
                body.push(InstanceNorm::new());
            }
            body.push(LeakyRelu::new(0.2));
        }
        ch = out;
    }
    Ok(Discriminator { body, stride: cfg.disc_stride() })
}

/// He-normal initialization: rank-4 convolution weights get std
/// `sqrt(2 / fan_in)`, everything else is zeroed.
pub fn init_weights(params: Vec<&mut Param>, rng: &mut ChaCha8Rng) {
    for p in params {
        if p.shape.len() == 4 {
            let fan_in = p.shape[1] * p.shape[2] * p.shape[3];
            he_normal(&mut p.value, fan_in, rng);
        } else {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
        p.zero_grad();
    }
}

/// Parameters of all four networks plus the configuration that shaped them.
pub struct ModelBundle {
    pub g_c: Generator,
    pub g_r: Generator,
    pub d_c: Discriminator,
    pub d_s: Discriminator,
    pub config: NetworkConfig,
    pub arch_version: String,
}

/// RNG streams used to initialize each network from one seed.
const INIT_STREAMS: [u64; 4] = [11, 12, 13, 14];

impl ModelBundle {
    /// Builds and initializes all networks from `seed`.
    pub fn new(cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        let mut m = Self::uninitialized(cfg)?;
        init_weights(m.g_c.params_mut(), &mut seeded_rng(seed, INIT_STREAMS[0]));
        init_weights(m.g_r.params_mut(), &mut seeded_rng(seed, INIT_STREAMS[1]));
        init_weights(m.d_c.params_mut(), &mut seeded_rng(seed, INIT_STREAMS[2]));
        init_weights(m.d_s.params_mut(), &mut seeded_rng(seed, INIT_STREAMS[3]));
        Ok(m)
    }

    pub fn uninitialized(cfg: &NetworkConfig) -> Result<Self> {
        Ok(ModelBundle {
            g_c: build_generator(cfg, GeneratorRole::Derain)?,
            g_r: build_generator(cfg, GeneratorRole::Rerain)?,
            d_c: build_discriminator(cfg, "d_c")?,
            d_s: build_discriminator(cfg, "d_s")?,
            config: cfg.clone(),
            arch_version: ARCH_VERSION.to_string(),
        })
    }

    /// Generator parameters in optimizer order (`g_c` then `g_r`).
    pub fn generator_params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.g_c.params_mut();
        p.extend(self.g_r.params_mut());
        p
    }
}
