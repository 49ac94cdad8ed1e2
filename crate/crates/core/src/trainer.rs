//! Alternating optimization of the two discriminators and the two
//! generators, the learning-rate schedule, and the file-producing training
//! driver.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{error, info};
use unrain_nn::{zero_grads, Adam, Backward, Mode, Tensor};

use crate::blur_gradient::background_guidance_loss_grad;
use crate::checkpoint::{self, TrainingState};
use crate::config::TrainConfig;
use crate::data::{write_png, Batch, Prefetcher, UnpairedDataset};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::losses::{cycle_loss, cycle_loss_grad, total_generator_loss, GeneratorTerms, LossBundle, LossWeights};
use crate::luminance::{
    lum_adv_discriminator_grad, lum_adv_discriminator_loss, lum_adv_generator_grad, lum_adv_generator_loss,
    CachePolicy, NegativeSampleSet,
};
use crate::networks::ModelBundle;
use crate::rain_guidance::{
    compose_fake_rainy, extract_streaks, fake_rainy_pass_mask, rain_guidance_discriminator_grad,
    rain_guidance_discriminator_loss, rain_guidance_generator_grad, rain_guidance_generator_loss,
};

/// Constant `lr0` before `decay_start`, then linear decay reaching zero at
/// `total_iters`.
pub fn lr_schedule(iter: u64, cfg: &TrainConfig) -> Result<f64> {
    if iter >= cfg.total_iters {
        return Err(Error::InvalidArgument(format!("iteration {iter} outside [0, {})", cfg.total_iters)));
    }
    let start = cfg.decay_start();
    if iter < start {
        return Ok(cfg.lr0);
    }
    Ok(cfg.lr0 * (cfg.total_iters - iter) as f64 / (cfg.total_iters - start) as f64)
}

/// Prefixes the component of a non-finite failure.
fn in_component(component: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { component: inner } => Error::NonFinite { component: format!("{component} ({inner})") },
        other => other,
    }
}

fn tensor_of(images: &[ImageTensor<f32>]) -> Result<Tensor> {
    ImageTensor::batch_to_tensor(images)
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub models: ModelBundle,
    pub opt_g: Adam,
    pub opt_dc: Adam,
    pub opt_ds: Adam,
    /// Number of completed steps.
    pub iteration: u64,
    negatives: NegativeSampleSet,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let models = ModelBundle::new(&cfg.network, cfg.init_seed)?;
        Self::with_models(cfg, models)
    }

    fn with_models(cfg: TrainConfig, models: ModelBundle) -> Result<Self> {
        let adam = || Adam::new(cfg.beta1 as f32, cfg.beta2 as f32);
        let negatives = NegativeSampleSet::new(cfg.lum_gamma, CachePolicy::OnTheFly)?;
        Ok(Trainer { opt_g: adam(), opt_dc: adam(), opt_ds: adam(), models, iteration: 0, negatives, cfg })
    }

    /// Continues from a checkpoint. `cfg` must describe the same trajectory
    /// (see [`TrainConfig::trajectory_hash`]); operational keys such as
    /// `total_iters` may differ.
    pub fn resume(path: &Path, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let ck = checkpoint::load(path)?;
        if ck.meta.config_hash != cfg.trajectory_hash() {
            return Err(Error::Checkpoint(
                "training config differs from the one the checkpoint was written with".into(),
            ));
        }
        let mut t = Self::with_models(cfg, ck.models)?;
        let [g, dc, ds] = ck.optimizers;
        t.opt_g.state = g;
        t.opt_dc.state = dc;
        t.opt_ds.state = ds;
        t.iteration = ck.meta.iteration;
        Ok(t)
    }

    pub fn state(&self) -> TrainingState<'_> {
        TrainingState {
            models: &self.models,
            optimizers: [&self.opt_g, &self.opt_dc, &self.opt_ds],
            iteration: self.iteration,
            config: &self.cfg,
        }
    }

    /// One step on a sampled batch; brightened negatives come from the clean images.
    pub fn step(&mut self, batch: &Batch) -> Result<LossBundle> {
        let e = batch
            .clean
            .iter()
            .zip(&batch.clean_indices)
            .map(|(c, &i)| self.negatives.negative(i, c))
            .collect::<Result<Vec<_>>>()?;
        self.train_step(&batch.rainy, &batch.clean, &e)
    }

    /// One alternating update on rainy `r`, unpaired clean `c` and brightened
    /// negatives `e`:
    /// 1. forward `c~ = G_c(r)`, `s~ = r - c~`, fake rainy `clamp01(s~ + c)`, `r' = G_r(c~)`;
    /// 2. update `D_c` on `c` (real) against `e` and detached `c~`;
    /// 3. update `D_s` on `r` (real) against the detached fake rainy images;
    /// 4. update `G_c` and `G_r` jointly on the weighted total with the
    ///    already-updated discriminators.
    ///
    /// Ablation flags zero their weight and skip the matching discriminator.
    pub fn train_step(
        &mut self,
        r: &[ImageTensor<f32>],
        c: &[ImageTensor<f32>],
        e: &[ImageTensor<f32>],
    ) -> Result<LossBundle> {
        let mut bundle = LossBundle::default();
        let out = self.train_step_inner(r, c, e, &mut bundle);
        if let Err(err) = &out {
            error!(
                "aborting at iteration {}: {err}; losses so far: {}",
                self.iteration,
                bundle.csv_row(self.iteration)
            );
        }
        out
    }

    fn train_step_inner(
        &mut self,
        r: &[ImageTensor<f32>],
        c: &[ImageTensor<f32>],
        e: &[ImageTensor<f32>],
        bundle: &mut LossBundle,
    ) -> Result<LossBundle> {
        if e.len() != r.len() {
            return Err(Error::InvalidArgument(format!("{} negatives for {} rainy images", e.len(), r.len())));
        }
        let lr = lr_schedule(self.iteration, &self.cfg)? as f32;
        let w = self.cfg.effective_weights();
        let flags = self.cfg.ablation;

        let fwd = self.forward_generators(r, c)?;
        if !flags.no_lum {
            bundle.d_c = self.update_clean_discriminator(&fwd, e, lr)?;
        }
        if !flags.no_rgm {
            bundle.d_s = self.update_rain_discriminator(&fwd, lr)?;
        }
        let (terms, total) = self.generator_backward(&fwd, r, &w)?;
        bundle.guid_r = terms.guid_r;
        bundle.guid_b = terms.guid_b;
        bundle.lum_adv_g = terms.lum_adv_g;
        bundle.cyc = terms.cyc;
        bundle.total_g = total;
        self.opt_g.step(&mut self.models.generator_params_mut(), lr);

        self.iteration += 1;
        Ok(*bundle)
    }

    fn forward_generators(&mut self, r: &[ImageTensor<f32>], c: &[ImageTensor<f32>]) -> Result<GeneratorForward> {
        let n = r.len();
        if n == 0 || c.len() != n {
            return Err(Error::InvalidArgument(format!("batch sizes differ: {n} rainy, {} clean", c.len())));
        }
        let m = &mut self.models;
        let r_t = tensor_of(r)?;
        let c_t = tensor_of(c)?;
        let chat_t = m.g_c.forward(&r_t, Mode::Train);
        let chat = ImageTensor::batch_from_tensor(&chat_t)?;
        let mut fake = Vec::with_capacity(n);
        let mut mask = Vec::with_capacity(n);
        for i in 0..n {
            let s = extract_streaks(&r[i], &chat[i])?;
            fake.push(compose_fake_rainy(&s, &c[i])?);
            mask.push(fake_rainy_pass_mask(&s, &c[i])?);
        }
        let rprime_t = m.g_r.forward(&chat_t, Mode::Train);
        Ok(GeneratorForward {
            n,
            r_t,
            c_t,
            chat_t,
            chat,
            fake_t: tensor_of(&fake)?,
            mask_t: tensor_of(&mask)?,
            rprime_t,
        })
    }

    /// Clean images are real; brightened negatives and detached outputs are fake.
    fn update_clean_discriminator(&mut self, f: &GeneratorForward, e: &[ImageTensor<f32>], lr: f32) -> Result<f64> {
        let d = &mut self.models.d_c;
        let e_t = tensor_of(e)?;
        let logits = d.forward(&Tensor::concat_batch(&[&f.c_t, &e_t, &f.chat_t]), Mode::Train);
        let p = logits.split_batch(&[f.n, f.n, f.n]);
        let loss = lum_adv_discriminator_loss(&p[0].data, Some(&p[1].data), &p[2].data).map_err(in_component("d_c"))?;
        let (gc, ge, gd) = lum_adv_discriminator_grad(&p[0].data, Some(&p[1].data), &p[2].data)?;
        let ge = ge.expect("enhanced logits were supplied");
        let grad = Tensor::concat_batch(&[
            &Tensor::from_vec(p[0].shape, gc),
            &Tensor::from_vec(p[1].shape, ge),
            &Tensor::from_vec(p[2].shape, gd),
        ]);
        zero_grads(&mut d.params_mut());
        d.backward(&grad, Backward::PARAMS_ONLY);
        self.opt_dc.step(&mut d.params_mut(), lr * self.cfg.d_lr_scale as f32);
        Ok(loss as f64)
    }

    /// Real rainy images against detached fake rainy images.
    fn update_rain_discriminator(&mut self, f: &GeneratorForward, lr: f32) -> Result<f64> {
        let d = &mut self.models.d_s;
        let logits = d.forward(&Tensor::concat_batch(&[&f.r_t, &f.fake_t]), Mode::Train);
        let p = logits.split_batch(&[f.n, f.n]);
        let loss = rain_guidance_discriminator_loss(&p[0].data, &p[1].data).map_err(in_component("d_s"))?;
        let (gr, gf) = rain_guidance_discriminator_grad(&p[0].data, &p[1].data)?;
        let grad = Tensor::concat_batch(&[&Tensor::from_vec(p[0].shape, gr), &Tensor::from_vec(p[1].shape, gf)]);
        zero_grads(&mut d.params_mut());
        d.backward(&grad, Backward::PARAMS_ONLY);
        self.opt_ds.step(&mut d.params_mut(), lr * self.cfg.d_lr_scale as f32);
        Ok(loss as f64)
    }

    /// Generator-side terms and their weighted total; leaves the gradient of
    /// the total in the generator parameters (previous gradients are
    /// discarded). Discriminator parameters are never touched.
    fn generator_backward(
        &mut self,
        f: &GeneratorForward,
        r: &[ImageTensor<f32>],
        w: &LossWeights,
    ) -> Result<(GeneratorTerms, f64)> {
        let n = f.n;
        let m = &mut self.models;
        let mut terms = GeneratorTerms::default();
        // dL/dc~ accumulated in image space, then backpropagated once
        let mut d_chat = Tensor::zeros(f.chat_t.shape);
        if w.w1 > 0.0 {
            let logits = m.d_s.forward(&f.fake_t, Mode::Train);
            terms.guid_r = rain_guidance_generator_loss(&logits.data).map_err(in_component("guid_r"))? as f64;
            let g = rain_guidance_generator_grad(&logits.data)?;
            let d_fake = m.d_s.backward(&Tensor::from_vec(logits.shape, g), Backward::INPUT_ONLY);
            // fake = clamp01(r - c~ + c)
            for ((d, &g), &k) in d_chat.data.iter_mut().zip(&d_fake.data).zip(&f.mask_t.data) {
                *d -= w.w1 as f32 * k * g;
            }
        }
        if w.w2 > 0.0 {
            let k = (w.w2 / n as f64) as f32;
            for (i, (ri, ci)) in r.iter().zip(&f.chat).enumerate() {
                let (l, g) = background_guidance_loss_grad(ri, ci, &self.cfg.blur_scales)?;
                terms.guid_b += l as f64 / n as f64;
                for (d, &g) in d_chat.sample_mut(i).iter_mut().zip(g.as_slice()) {
                    *d += k * g;
                }
            }
        }
        if w.w3 > 0.0 {
            let logits = m.d_c.forward(&f.chat_t, Mode::Train);
            terms.lum_adv_g = lum_adv_generator_loss(&logits.data).map_err(in_component("lum_adv_g"))? as f64;
            let g = lum_adv_generator_grad(&logits.data)?;
            let mut d = m.d_c.backward(&Tensor::from_vec(logits.shape, g), Backward::INPUT_ONLY);
            d.scale(w.w3 as f32);
            d_chat.add_assign(&d);
        }
        let rprime = ImageTensor::batch_from_tensor(&f.rprime_t)?;
        let mut d_rprime = Tensor::zeros(f.rprime_t.shape);
        let k = (w.w4 / n as f64) as f32;
        for i in 0..n {
            terms.cyc += cycle_loss(&r[i], &rprime[i])? as f64 / n as f64;
            let g = cycle_loss_grad(&r[i], &rprime[i])?;
            for (d, &g) in d_rprime.sample_mut(i).iter_mut().zip(g.as_slice()) {
                *d = k * g;
            }
        }
        let total = total_generator_loss(&terms, w)?;

        zero_grads(&mut m.generator_params_mut());
        if w.w4 > 0.0 {
            let d = m.g_r.backward(&d_rprime, Backward::FULL);
            d_chat.add_assign(&d);
        }
        m.g_c.backward(&d_chat, Backward::PARAMS_ONLY);
        Ok((terms, total))
    }

    /// Evaluates the generator objective under weights `w` without updating
    /// anything, leaving its gradient in the generator parameters.
    pub fn generator_gradients(
        &mut self,
        r: &[ImageTensor<f32>],
        c: &[ImageTensor<f32>],
        w: &LossWeights,
    ) -> Result<(GeneratorTerms, f64)> {
        let fwd = self.forward_generators(r, c)?;
        self.generator_backward(&fwd, r, w)
    }
}

/// Activations shared by the discriminator and generator updates of one step.
struct GeneratorForward {
    n: usize,
    r_t: Tensor,
    c_t: Tensor,
    chat_t: Tensor,
    chat: Vec<ImageTensor<f32>>,
    fake_t: Tensor,
    mask_t: Tensor,
    rprime_t: Tensor,
}

/// Where [`train`] writes its outputs.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: &Path) -> Self {
        RunPaths { root: root.to_path_buf() }
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn checkpoint(&self, iteration: u64) -> PathBuf {
        self.checkpoints().join(format!("iter-{iteration:08}"))
    }
    pub fn loss_log(&self) -> PathBuf {
        self.root.join("losses.csv")
    }
    pub fn samples(&self) -> PathBuf {
        self.root.join("samples")
    }
}

fn save_checkpoint(trainer: &Trainer, paths: &RunPaths) -> Result<PathBuf> {
    let dir = paths.checkpoint(trainer.iteration);
    checkpoint::save(&dir, &trainer.state())?;
    let name = dir.file_name().expect("checkpoint dir has a name").to_string_lossy().into_owned();
    checkpoint::mark_latest(&paths.checkpoints(), &name)?;
    Ok(dir)
}

/// Side-by-side grid: rainy input, derained output, removed streaks
/// (offset by 0.5 so negative values are visible), clean sample.
fn sample_grid(trainer: &mut Trainer, batch: &Batch) -> Result<ImageTensor<f32>> {
    let r = &batch.rainy[0];
    let chat = trainer.models.g_c.apply(r)?;
    let s = extract_streaks(r, &chat)?;
    let panels = [r.clone(), chat, s.0.map(|v| (v + 0.5).clamp(0.0, 1.0)), batch.clean[0].clone()];
    let (h, w) = r.dims();
    Ok(ImageTensor::from_fn(h, w * panels.len(), |y, x, ch| panels[x / w].get(y, x % w, ch)))
}

/// Runs from `trainer.iteration` to `total_iters`, writing the loss log,
/// checkpoints every `checkpoint_every` steps and at the end, and sample
/// grids every `sample_every` steps. With nothing left to run, only the
/// current state is checkpointed.
pub fn train(trainer: &mut Trainer, ds: Arc<UnpairedDataset>, out: &Path) -> Result<Vec<LossBundle>> {
    let paths = RunPaths::new(out);
    fs::create_dir_all(paths.checkpoints()).map_err(|e| Error::io(paths.checkpoints(), e))?;
    let log_path = paths.loss_log();
    let fresh = trainer.iteration == 0 || !log_path.exists();
    let file = if fresh { File::create(&log_path) } else { OpenOptions::new().append(true).open(&log_path) }
        .map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    if fresh {
        writeln!(log, "{}", LossBundle::CSV_HEADER).map_err(|e| Error::io(&log_path, e))?;
    }

    let total = trainer.cfg.total_iters;
    let mut history = Vec::new();
    if trainer.iteration >= total {
        save_checkpoint(trainer, &paths)?;
        return Ok(history);
    }
    let mut prefetch = Prefetcher::spawn(ds, trainer.cfg.batch, trainer.iteration, total, trainer.cfg.prefetch);
    while trainer.iteration < total {
        let batch = prefetch.next_batch()?;
        let losses = match trainer.step(&batch) {
            Ok(l) => l,
            Err(e) => {
                let _ = log.flush();
                return Err(e);
            }
        };
        let it = trainer.iteration;
        writeln!(log, "{}", losses.csv_row(it - 1)).map_err(|e| Error::io(&log_path, e))?;
        history.push(losses);
        if it.is_multiple_of(100) {
            info!("iteration {it}/{total}: total_g {:.4} d_c {:.4} d_s {:.4}", losses.total_g, losses.d_c, losses.d_s);
        }
        if trainer.cfg.sample_every > 0 && it.is_multiple_of(trainer.cfg.sample_every) {
            let grid = sample_grid(trainer, &batch)?;
            write_png(&paths.samples().join(format!("iter-{it:08}.png")), &grid)?;
        }
        if it.is_multiple_of(trainer.cfg.checkpoint_every) || it == total {
            log.flush().map_err(|e| Error::io(&log_path, e))?;
            save_checkpoint(trainer, &paths)?;
        }
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    Ok(history)
}
