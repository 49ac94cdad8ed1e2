//! Checkpoint directories: one parameter blob per network, optimizer
//! moments, the training config and a `key=value` metadata sidecar.
//!
//! ```text
//! iter-00000500/
//!   meta.txt  config.txt  g_c.bin  g_r.bin  d_c.bin  d_s.bin  optim.bin
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use unrain_nn::{read_params, write_params, Adam, AdamState, Param};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::networks::{build_generator, Generator, GeneratorRole, ModelBundle, NetworkConfig, ARCH_VERSION};

pub const META_FILE: &str = "meta.txt";
pub const LATEST_FILE: &str = "latest";

/// Everything needed to continue training bit-for-bit.
pub struct TrainingState<'a> {
    pub models: &'a ModelBundle,
    pub optimizers: [&'a Adam; 3],
    pub iteration: u64,
    pub config: &'a TrainConfig,
}

/// Parsed `meta.txt`.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub arch_version: String,
    pub iteration: u64,
    pub config_hash: u64,
    pub init_seed: u64,
    pub data_seed: u64,
    pub network: NetworkConfig,
    pub optimizer_steps: [u64; 3],
}

const OPTIMIZERS: [&str; 3] = ["opt_g", "opt_dc", "opt_ds"];

impl CheckpointMeta {
    fn render(&self) -> String {
        let n = &self.network;
        format!(
            "arch_version={}\niteration={}\nconfig_hash={:016x}\ninit_seed={}\ndata_seed={}\n\
             base_channels={}\nresblocks_gc={}\nresblocks_gr={}\ndisc_layers={}\nnorm={}\ninput_skip={}\nresidual_gain={}\nsigned_residual={}\nachromatic_residual={}\n\
             opt_g_step={}\nopt_dc_step={}\nopt_ds_step={}\n",
            self.arch_version,
            self.iteration,
            self.config_hash,
            self.init_seed,
            self.data_seed,
            n.base_channels,
            n.num_resblocks_gc,
            n.num_resblocks_gr,
            n.disc_layers,
            n.norm,
            n.input_skip,
            n.residual_gain,
            n.signed_residual,
            n.achromatic_residual,
            self.optimizer_steps[0],
            self.optimizer_steps[1],
            self.optimizer_steps[2],
        )
    }

    fn parse(text: &str) -> Result<Self> {
        let kv: BTreeMap<&str, &str> =
            text.lines().filter_map(|l| l.split_once('=')).map(|(k, v)| (k.trim(), v.trim())).collect();
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::Checkpoint(format!("meta.txt lacks `{k}`")));
        let int = |k: &str| -> Result<u64> {
            get(k)?.parse().map_err(|_| Error::Checkpoint(format!("meta.txt: bad value for `{k}`")))
        };
        let boolean = |k: &str| -> Result<bool> {
            get(k)?.parse().map_err(|_| Error::Checkpoint(format!("meta.txt: bad value for `{k}`")))
        };
        Ok(CheckpointMeta {
            arch_version: get("arch_version")?.to_string(),
            iteration: int("iteration")?,
            config_hash: u64::from_str_radix(get("config_hash")?, 16)
                .map_err(|_| Error::Checkpoint("meta.txt: bad config_hash".into()))?,
            init_seed: int("init_seed")?,
            data_seed: int("data_seed")?,
            network: NetworkConfig {
                base_channels: int("base_channels")? as usize,
                num_resblocks_gc: int("resblocks_gc")? as usize,
                num_resblocks_gr: int("resblocks_gr")? as usize,
                disc_layers: int("disc_layers")? as usize,
                norm: boolean("norm")?,
                input_skip: boolean("input_skip")?,
                residual_gain: get("residual_gain")?
                    .parse()
                    .map_err(|_| Error::Checkpoint("meta.txt: bad value for `residual_gain`".into()))?,
                signed_residual: boolean("signed_residual")?,
                achromatic_residual: boolean("achromatic_residual")?,
            },
            optimizer_steps: [int("opt_g_step")?, int("opt_dc_step")?, int("opt_ds_step")?],
        })
    }
}

fn write_blob(path: &Path, params: &[&Param]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_params(&mut w, params.iter().map(|p| (p.name.as_str(), p.shape.as_slice(), p.value.as_slice())))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_blob(path: &Path) -> Result<Vec<Param>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_params(&mut BufReader::new(file)).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

/// Copies stored values into `dst`, requiring identical names and shapes.
fn restore(dst: Vec<&mut Param>, src: Vec<Param>, what: &str) -> Result<()> {
    if dst.len() != src.len() {
        return Err(Error::Checkpoint(format!("{what}: expected {} tensors, found {}", dst.len(), src.len())));
    }
    for (d, s) in dst.into_iter().zip(src) {
        if d.name != s.name || d.shape != s.shape {
            return Err(Error::Checkpoint(format!(
                "{what}: expected {} {:?}, found {} {:?}",
                d.name, d.shape, s.name, s.shape
            )));
        }
        d.value = s.value;
        d.zero_grad();
    }
    Ok(())
}

/// Writes a checkpoint into `dir` (created if needed).
pub fn save(dir: &Path, state: &TrainingState) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = state.models;
    write_blob(&dir.join("g_c.bin"), &m.g_c.params())?;
    write_blob(&dir.join("g_r.bin"), &m.g_r.params())?;
    write_blob(&dir.join("d_c.bin"), &m.d_c.params())?;
    write_blob(&dir.join("d_s.bin"), &m.d_s.params())?;

    let mut moments: Vec<Param> = Vec::new();
    for (name, opt) in OPTIMIZERS.iter().zip(state.optimizers) {
        for (i, (mv, vv)) in opt.state.m.iter().zip(&opt.state.v).enumerate() {
            for (kind, data) in [("m", mv), ("v", vv)] {
                let mut p = Param::zeros(format!("{name}.{kind}.{i}"), vec![data.len()]);
                p.value.clone_from(data);
                moments.push(p);
            }
        }
    }
    write_blob(&dir.join("optim.bin"), &moments.iter().collect::<Vec<_>>())?;

    let cfg_path = dir.join("config.txt");
    fs::write(&cfg_path, state.config.to_kv_string()).map_err(|e| Error::io(&cfg_path, e))?;
    let meta = CheckpointMeta {
        arch_version: m.arch_version.clone(),
        iteration: state.iteration,
        config_hash: state.config.trajectory_hash(),
        init_seed: state.config.init_seed,
        data_seed: state.config.data_seed,
        network: m.config.clone(),
        optimizer_steps: state.optimizers.map(|o| o.state.step),
    };
    // metadata last: its presence marks a complete checkpoint
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, meta.render()).map_err(|e| Error::io(&meta_path, e))
}

/// Accepts a checkpoint directory, or a directory holding a `latest` pointer
/// (directly or under `checkpoints/`).
pub fn resolve(path: &Path) -> Result<PathBuf> {
    if path.join(META_FILE).is_file() {
        return Ok(path.to_path_buf());
    }
    for base in [path.to_path_buf(), path.join("checkpoints")] {
        let pointer = base.join(LATEST_FILE);
        if pointer.is_file() {
            let name = fs::read_to_string(&pointer).map_err(|e| Error::io(&pointer, e))?;
            let dir = base.join(name.trim());
            if dir.join(META_FILE).is_file() {
                return Ok(dir);
            }
        }
    }
    Err(Error::Checkpoint(format!("{} is not a checkpoint directory", path.display())))
}

pub fn read_meta(dir: &Path) -> Result<CheckpointMeta> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta = CheckpointMeta::parse(&text)?;
    if meta.arch_version != ARCH_VERSION {
        return Err(Error::Checkpoint(format!(
            "architecture `{}` is not compatible with `{ARCH_VERSION}`",
            meta.arch_version
        )));
    }
    meta.network.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(meta)
}

/// Loads the deraining generator alone.
pub fn load_generator(path: &Path) -> Result<Generator> {
    let dir = resolve(path)?;
    let meta = read_meta(&dir)?;
    let mut g = build_generator(&meta.network, GeneratorRole::Derain)?;
    restore(g.params_mut(), read_blob(&dir.join("g_c.bin"))?, "g_c")?;
    Ok(g)
}

/// Full training state restored from a checkpoint.
pub struct LoadedCheckpoint {
    pub models: ModelBundle,
    pub optimizers: [AdamState; 3],
    pub meta: CheckpointMeta,
    pub config: TrainConfig,
}

pub fn load(path: &Path) -> Result<LoadedCheckpoint> {
    let dir = resolve(path)?;
    let meta = read_meta(&dir)?;
    let mut models = ModelBundle::uninitialized(&meta.network)?;
    restore(models.g_c.params_mut(), read_blob(&dir.join("g_c.bin"))?, "g_c")?;
    restore(models.g_r.params_mut(), read_blob(&dir.join("g_r.bin"))?, "g_r")?;
    restore(models.d_c.params_mut(), read_blob(&dir.join("d_c.bin"))?, "d_c")?;
    restore(models.d_s.params_mut(), read_blob(&dir.join("d_s.bin"))?, "d_s")?;

    let mut optimizers: [AdamState; 3] = Default::default();
    let mut moments = read_blob(&dir.join("optim.bin"))?.into_iter();
    let sizes = [
        models.generator_params_mut().iter().map(|p| p.len()).collect::<Vec<_>>(),
        models.d_c.params().iter().map(|p| p.len()).collect(),
        models.d_s.params().iter().map(|p| p.len()).collect(),
    ];
    for (k, st) in optimizers.iter_mut().enumerate() {
        st.step = meta.optimizer_steps[k];
        if st.step == 0 {
            continue;
        }
        for (i, &len) in sizes[k].iter().enumerate() {
            for kind in ["m", "v"] {
                let p = moments
                    .next()
                    .ok_or_else(|| Error::Checkpoint(format!("optim.bin ends before {}.{kind}.{i}", OPTIMIZERS[k])))?;
                if p.name != format!("{}.{kind}.{i}", OPTIMIZERS[k]) || p.len() != len {
                    return Err(Error::Checkpoint(format!("optim.bin: unexpected record {}", p.name)));
                }
                if kind == "m" { &mut st.m } else { &mut st.v }.push(p.value);
            }
        }
    }

    let cfg_path = dir.join("config.txt");
    let mut config = TrainConfig::default();
    config.apply_str(&fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?)?;
    Ok(LoadedCheckpoint { models, optimizers, meta, config })
}

/// Points `root/latest` at the checkpoint directory `name`.
pub fn mark_latest(root: &Path, name: &str) -> Result<()> {
    let p = root.join(LATEST_FILE);
    fs::write(&p, format!("{name}\n")).map_err(|e| Error::io(&p, e))
}
