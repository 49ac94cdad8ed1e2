//! Training configuration: a flat `key = value` file whose keys mirror the
//! command-line flags (`-` and `_` are interchangeable).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::blur_gradient::GaussianScaleConfig;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::luminance::DEFAULT_LUM_GAMMA;
use crate::networks::NetworkConfig;

/// Components switched off for ablation runs. Each flag zeroes its loss
/// weight and skips the matching discriminator update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AblationFlags {
    pub no_rgm: bool,
    pub no_bgm: bool,
    pub no_lum: bool,
}

impl AblationFlags {
    pub const ALL: AblationFlags = AblationFlags { no_rgm: true, no_bgm: true, no_lum: true };

    pub fn label(&self) -> String {
        let off: Vec<&str> = [(self.no_rgm, "RGM"), (self.no_bgm, "BGM"), (self.no_lum, "lum")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        match off.len() {
            0 => "full".into(),
            1 => format!("-{}", off[0]),
            _ => format!("-{{{}}}", off.join(",")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub lr0: f64,
    /// Discriminator learning rate as a multiple of the generator's.
    pub d_lr_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub total_iters: u64,
    /// Defaults to `total_iters / 2`.
    pub decay_start: Option<u64>,
    pub batch: usize,
    pub image_size: usize,
    pub data_seed: u64,
    pub init_seed: u64,
    pub ablation: AblationFlags,
    pub lum_gamma: f64,
    pub blur_scales: GaussianScaleConfig,
    pub network: NetworkConfig,
    pub checkpoint_every: u64,
    pub sample_every: u64,
    pub prefetch: usize,
    pub data_root: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights::default(),
            lr0: 2e-4,
            d_lr_scale: 1.0,
            beta1: 0.5,
            beta2: 0.999,
            total_iters: 2000,
            decay_start: None,
            batch: 1,
            image_size: 64,
            data_seed: 0,
            init_seed: 0,
            ablation: AblationFlags::default(),
            lum_gamma: DEFAULT_LUM_GAMMA,
            blur_scales: GaussianScaleConfig::default(),
            network: NetworkConfig::for_image_size(64),
            checkpoint_every: 500,
            sample_every: 500,
            prefetch: 4,
            data_root: None,
            out_dir: PathBuf::from("runs/unrain"),
        }
    }
}

fn bad(key: &str, msg: impl Into<String>) -> Error {
    Error::Config { key: key.to_string(), msg: msg.into() }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(key, format!("cannot parse `{v}`")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(bad(key, format!("expected a boolean, got `{v}`"))),
    }
}

/// Keys that do not affect the optimization trajectory.
const OPERATIONAL_KEYS: [&str; 6] =
    ["total_iters", "checkpoint_every", "sample_every", "prefetch", "data_root", "out_dir"];

impl TrainConfig {
    /// Sets one key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = key.trim().replace('-', "_");
        let v = value.trim();
        match k.as_str() {
            "w1" => self.weights.w1 = num(&k, v)?,
            "w2" => self.weights.w2 = num(&k, v)?,
            "w3" => self.weights.w3 = num(&k, v)?,
            "w4" => self.weights.w4 = num(&k, v)?,
            "lr" | "lr0" => self.lr0 = num(&k, v)?,
            "d_lr_scale" => self.d_lr_scale = num(&k, v)?,
            "beta1" => self.beta1 = num(&k, v)?,
            "beta2" => self.beta2 = num(&k, v)?,
            "total_iters" => self.total_iters = num(&k, v)?,
            "decay_start" => self.decay_start = if v == "auto" { None } else { Some(num(&k, v)?) },
            "batch" => self.batch = num(&k, v)?,
            "train_size" | "image_size" => self.image_size = num(&k, v)?,
            "seed" => {
                self.data_seed = num(&k, v)?;
                self.init_seed = self.data_seed;
            }
            "data_seed" => self.data_seed = num(&k, v)?,
            "init_seed" => self.init_seed = num(&k, v)?,
            "no_rgm" => self.ablation.no_rgm = flag(&k, v)?,
            "no_bgm" => self.ablation.no_bgm = flag(&k, v)?,
            "no_lum" => self.ablation.no_lum = flag(&k, v)?,
            "lum_gamma" => self.lum_gamma = num(&k, v)?,
            "blur_scales" => self.blur_scales = GaussianScaleConfig::parse(v).map_err(|e| bad(&k, e.to_string()))?,
            "base_channels" => self.network.base_channels = num(&k, v)?,
            "resblocks_gc" => self.network.num_resblocks_gc = num(&k, v)?,
            "resblocks_gr" => self.network.num_resblocks_gr = num(&k, v)?,
            "disc_layers" => self.network.disc_layers = num(&k, v)?,
            "norm" => self.network.norm = flag(&k, v)?,
            "input_skip" => self.network.input_skip = flag(&k, v)?,
            "residual_gain" => self.network.residual_gain = num(&k, v)?,
            "signed_residual" => self.network.signed_residual = flag(&k, v)?,
            "achromatic_residual" => self.network.achromatic_residual = flag(&k, v)?,
            "checkpoint_every" => self.checkpoint_every = num(&k, v)?,
            "sample_every" => self.sample_every = num(&k, v)?,
            "prefetch" => self.prefetch = num(&k, v)?,
            "data_root" => self.data_root = Some(PathBuf::from(v)),
            "out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(bad(key.trim(), "unknown key")),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| bad(line, format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate().map_err(|e| bad("w1..w4", e.to_string()))?;
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(bad("lr", "must be positive"));
        }
        if !(self.d_lr_scale > 0.0 && self.d_lr_scale.is_finite()) {
            return Err(bad("d_lr_scale", "must be positive"));
        }
        for (k, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(bad(k, "must lie in [0, 1)"));
            }
        }
        if self.batch == 0 {
            return Err(bad("batch", "must be at least 1"));
        }
        if self.image_size < 16 || !self.image_size.is_multiple_of(self.network.disc_stride().max(4)) {
            return Err(bad(
                "train_size",
                format!("must be at least 16 and divisible by {}", self.network.disc_stride().max(4)),
            ));
        }
        if let Some(d) = self.decay_start {
            if d > self.total_iters {
                return Err(bad("decay_start", "must not exceed total_iters"));
            }
        }
        if !(self.lum_gamma > 0.0 && self.lum_gamma < 1.0) {
            return Err(bad("lum_gamma", "must lie in (0, 1)"));
        }
        self.network.validate().map_err(|e| bad("network", e.to_string()))?;
        if self.checkpoint_every == 0 {
            return Err(bad("checkpoint_every", "must be positive"));
        }
        Ok(())
    }

    pub fn decay_start(&self) -> u64 {
        self.decay_start.unwrap_or(self.total_iters / 2)
    }

    /// Loss weights with ablated components zeroed.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights;
        if self.ablation.no_rgm {
            w.w1 = 0.0;
        }
        if self.ablation.no_bgm {
            w.w2 = 0.0;
        }
        if self.ablation.no_lum {
            w.w3 = 0.0;
        }
        w
    }

    /// Canonical `key = value` listing that round-trips through `apply_str`.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let w = &self.weights;
        let n = &self.network;
        let decay = self.decay_start.map_or("auto".to_string(), |d| d.to_string());
        let lines: Vec<(&str, String)> = vec![
            ("w1", w.w1.to_string()),
            ("w2", w.w2.to_string()),
            ("w3", w.w3.to_string()),
            ("w4", w.w4.to_string()),
            ("lr", self.lr0.to_string()),
            ("d_lr_scale", self.d_lr_scale.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("total_iters", self.total_iters.to_string()),
            ("decay_start", decay),
            ("batch", self.batch.to_string()),
            ("train_size", self.image_size.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("init_seed", self.init_seed.to_string()),
            ("no_rgm", self.ablation.no_rgm.to_string()),
            ("no_bgm", self.ablation.no_bgm.to_string()),
            ("no_lum", self.ablation.no_lum.to_string()),
            ("lum_gamma", self.lum_gamma.to_string()),
            ("blur_scales", self.blur_scales.to_string()),
            ("base_channels", n.base_channels.to_string()),
            ("resblocks_gc", n.num_resblocks_gc.to_string()),
            ("resblocks_gr", n.num_resblocks_gr.to_string()),
            ("disc_layers", n.disc_layers.to_string()),
            ("norm", n.norm.to_string()),
            ("input_skip", n.input_skip.to_string()),
            ("residual_gain", n.residual_gain.to_string()),
            ("signed_residual", n.signed_residual.to_string()),
            ("achromatic_residual", n.achromatic_residual.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("sample_every", self.sample_every.to_string()),
            ("prefetch", self.prefetch.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
        ];
        for (k, v) in lines {
            writeln!(s, "{k} = {v}").unwrap();
        }
        if let Some(root) = &self.data_root {
            writeln!(s, "data_root = {}", root.display()).unwrap();
        }
        s
    }

    /// FNV-1a hash of the keys that shape the optimization trajectory.
    pub fn trajectory_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for line in self.to_kv_string().lines() {
            let key = line.split('=').next().unwrap_or("").trim();
            if key == "decay_start" {
                // resolved so that an implicit and explicit midpoint agree
                for b in format!("decay_start={}", self.decay_start()).bytes() {
                    h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
                }
                continue;
            }
            if OPERATIONAL_KEYS.contains(&key) {
                continue;
            }
            for b in line.bytes() {
                h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
            }
        }
        h
    }
}
