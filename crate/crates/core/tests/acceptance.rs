//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if any
//! criterion fails.

#[path = "support/oracles.rs"]
mod oracles;

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use unrain::blur_gradient::{
    background_guidance_loss, background_guidance_loss_grad, scale_gradient_error, GaussianScaleConfig,
};
use unrain::config::{AblationFlags, TrainConfig};
use unrain::data::{build_corpus, CorpusSpec, UnpairedDataset};
use unrain::losses::{cycle_loss, cycle_loss_grad, total_generator_loss, GeneratorTerms, LossWeights};
use unrain::luminance::{
    lum_adv_discriminator_grad, lum_adv_discriminator_loss, lum_adv_generator_grad, lum_adv_generator_loss,
};
use unrain::metrics::{do_nothing_baseline, evaluate, psnr, ssim};
use unrain::networks::{GeneratorRole, ModelBundle, NetworkConfig};
use unrain::rain_guidance::{
    compose_fake_rainy, extract_streaks, rain_guidance_discriminator_grad, rain_guidance_discriminator_loss,
    rain_guidance_generator_grad, rain_guidance_generator_loss,
};
use unrain::synth::{procedural_scene, synthesize_rain, SyntheticRainSpec};
use unrain::trainer::{train, Trainer};
use unrain::ImageTensor;
use unrain_nn::{seeded_rng, Mode, Shape, Tensor};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn rand_image(rng: &mut impl Rng, h: usize, w: usize) -> ImageTensor<f32> {
    ImageTensor::from_fn(h, w, |_, _, _| rng.random_range(0.0..1.0))
}

fn metric_oracles() -> Verdict {
    let start = Instant::now();
    let mut rng = seeded_rng(1, 0);
    let (mut dp, mut ds) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let a = rand_image(&mut rng, 32, 32);
        let b = rand_image(&mut rng, 32, 32);
        dp = dp.max((psnr(&a, &b).unwrap() - oracles::psnr(&a, &b)).abs());
        ds = ds.max((ssim(&a, &b).unwrap() - oracles::ssim(&a, &b)).abs());
    }
    let x = rand_image(&mut rng, 32, 32);
    let self_ssim = ssim(&x, &x).unwrap();
    let zero = ImageTensor::<f32>::zeros(32, 32);
    let offset = ImageTensor::<f32>::filled(32, 32, 0.1);
    let p20 = psnr(&zero, &offset).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = dp < 1e-6 && ds < 1e-6 && (self_ssim - 1.0).abs() < 1e-12 && (p20 - 20.0).abs() < 1e-6 && secs < 10.0;
    verdict(
        pass,
        format!(
            "max |psnr err| {dp:.2e} dB, max |ssim err| {ds:.2e}, ssim(x,x) {self_ssim}, offset psnr {p20:.9} dB, {secs:.1}s"
        ),
    )
}

fn bgm_scale_property() -> Verdict {
    let start = Instant::now();
    let n = 24;
    let mut wins = 0;
    for i in 0..n {
        let c = procedural_scene(64, 64, 100 + i);
        let spec = SyntheticRainSpec { seed: 200 + i, ..SyntheticRainSpec::default() };
        let (r, _) = synthesize_rain(&c, &spec).unwrap();
        let (c, r) = (c.cast::<f64>(), r.cast::<f64>());
        if scale_gradient_error(&r, &c, 9.0).unwrap() < scale_gradient_error(&r, &c, 3.0).unwrap() {
            wins += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let frac = wins as f64 / n as f64;
    verdict(frac >= 0.9 && secs < 30.0, format!("sigma 9 below sigma 3 in {wins}/{n} images, {secs:.1}s"))
}

fn image_vec(img: &ImageTensor<f64>) -> Vec<f64> {
    img.as_slice().to_vec()
}

fn from_vec(h: usize, w: usize, v: &[f64]) -> ImageTensor<f64> {
    ImageTensor::from_planar(h, w, v.to_vec()).unwrap()
}

fn gradient_correctness() -> Verdict {
    let start = Instant::now();
    let step = 1e-3;
    let (h, w) = (16, 16);
    let mut rng = seeded_rng(3, 0);
    let mut img = || ImageTensor::<f64>::from_fn(h, w, |_, _, _| rng.random_range(0.0..1.0));
    let mut errs: Vec<(&str, f64)> = vec![];

    let cfg = GaussianScaleConfig::default();
    let (r, c) = (img(), img());
    let (_, g) = background_guidance_loss_grad(&r, &c, &cfg).unwrap();
    let fd = oracles::numeric_gradient(&image_vec(&c), step, |v| {
        background_guidance_loss(&r, &from_vec(h, w, v), &cfg).unwrap()
    });
    errs.push(("background guidance", oracles::relative_error(&fd, g.as_slice())));

    // keep every |r - r'| well clear of the L1 kink
    let r = img();
    let mut rng = seeded_rng(3, 1);
    let offsets: Vec<f64> =
        (0..r.len()).map(|_| if rng.random_bool(0.5) { 0.05 } else { -0.05 } + rng.random_range(-0.02..0.02)).collect();
    let rp = from_vec(h, w, &r.as_slice().iter().zip(&offsets).map(|(v, o)| v + o).collect::<Vec<_>>());
    let g = cycle_loss_grad(&r, &rp).unwrap();
    let fd = oracles::numeric_gradient(&image_vec(&rp), step, |v| cycle_loss(&r, &from_vec(h, w, v)).unwrap());
    errs.push(("cycle", oracles::relative_error(&fd, g.as_slice())));

    let mut rng = seeded_rng(3, 2);
    let mut logits = || (0..h * w).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<f64>>();
    let (a, b, e) = (logits(), logits(), logits());
    let n = a.len();
    let joined: Vec<f64> = a.iter().chain(&b).copied().collect();
    let (ga, gb) = rain_guidance_discriminator_grad(&a, &b).unwrap();
    let fd = oracles::numeric_gradient(&joined, step, |v| rain_guidance_discriminator_loss(&v[..n], &v[n..]).unwrap());
    let an: Vec<f64> = ga.into_iter().chain(gb).collect();
    errs.push(("rain discriminator", oracles::relative_error(&fd, &an)));

    let fd = oracles::numeric_gradient(&b, step, |v| rain_guidance_generator_loss(v).unwrap());
    errs.push(("rain generator", oracles::relative_error(&fd, &rain_guidance_generator_grad(&b).unwrap())));

    let joined: Vec<f64> = a.iter().chain(&e).chain(&b).copied().collect();
    let (gc, ge, gd) = lum_adv_discriminator_grad(&a, Some(&e), &b).unwrap();
    let fd = oracles::numeric_gradient(&joined, step, |v| {
        lum_adv_discriminator_loss(&v[..n], Some(&v[n..2 * n]), &v[2 * n..]).unwrap()
    });
    let an: Vec<f64> = gc.into_iter().chain(ge.unwrap()).chain(gd).collect();
    errs.push(("luminance discriminator", oracles::relative_error(&fd, &an)));

    let fd = oracles::numeric_gradient(&b, step, |v| lum_adv_generator_loss(v).unwrap());
    errs.push(("luminance generator", oracles::relative_error(&fd, &lum_adv_generator_grad(&b).unwrap())));

    let secs = start.elapsed().as_secs_f64();
    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    let listed: Vec<String> = errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    verdict(worst < 1e-3 && secs < 60.0, format!("relative errors: {}; {secs:.1}s", listed.join(", ")))
}

fn tiny_trainer() -> Trainer {
    let network =
        NetworkConfig { base_channels: 4, num_resblocks_gc: 1, num_resblocks_gr: 1, ..NetworkConfig::default() };
    Trainer::new(TrainConfig { network, image_size: 16, total_iters: 10, ..TrainConfig::default() }).unwrap()
}

fn generator_grads(t: &mut Trainer, r: &[ImageTensor<f32>], c: &[ImageTensor<f32>], w: &LossWeights) -> Vec<f64> {
    t.generator_gradients(r, c, w).unwrap();
    t.models.generator_params_mut().iter().flat_map(|p| p.grad.iter().map(|&g| g as f64).collect::<Vec<_>>()).collect()
}

fn loss_assembly() -> Verdict {
    let ones = GeneratorTerms { guid_r: 1.0, guid_b: 1.0, lum_adv_g: 1.0, cyc: 1.0 };
    let total = total_generator_loss(&ones, &LossWeights::default()).unwrap();

    let c = procedural_scene(16, 16, 3);
    let spec = SyntheticRainSpec { density: 0.05, streak_length_px: 5, ..SyntheticRainSpec::default() };
    let (r, _) = synthesize_rain(&procedural_scene(16, 16, 4), &spec).unwrap();
    let (r, c) = (vec![r], vec![c]);
    let defaults = LossWeights::default().as_array();
    let weights = |mask: [bool; 4]| {
        let v: Vec<f64> = defaults.iter().zip(mask).map(|(w, m)| if m { *w } else { 0.0 }).collect();
        LossWeights { w1: v[0], w2: v[1], w3: v[2], w4: v[3] }
    };
    let mut t = tiny_trainer();
    let single: Vec<Vec<f64>> = (0..4)
        .map(|k| {
            let mut m = [false; 4];
            m[k] = true;
            generator_grads(&mut t, &r, &c, &weights(m))
        })
        .collect();
    let mut worst: f64 = 0.0;
    for k in 0..4 {
        let mut m = [true; 4];
        m[k] = false;
        let without = generator_grads(&mut t, &r, &c, &weights(m));
        let others: Vec<f64> =
            (0..without.len()).map(|i| (0..4).filter(|&j| j != k).map(|j| single[j][i]).sum()).collect();
        worst = worst.max(oracles::relative_error(&without, &others));
    }
    let none = generator_grads(&mut t, &r, &c, &weights([false; 4]));
    let zero = none.iter().all(|&g| g == 0.0);
    verdict(
        total == 7.5 && worst < 1e-5 && zero,
        format!(
            "total with unit components {total}; zeroed-weight gradient vs sum of the others rel err {worst:.1e}; all-zero weights give zero gradient: {zero}"
        ),
    )
}

fn round_trip() -> Verdict {
    let mut worst = 0.0f32;
    for seed in 0..10 {
        let c = procedural_scene(32, 32, seed).map(|v| v * 0.6);
        let spec = SyntheticRainSpec { intensity: 0.4, seed, ..SyntheticRainSpec::default() };
        let (r, s) = synthesize_rain(&c, &spec).unwrap();
        assert!(r.as_slice().iter().all(|&v| v < 1.0), "rain saturated");
        let extracted = extract_streaks(&r, &c).unwrap();
        let composed = compose_fake_rainy(&extracted, &c).unwrap();
        for (a, b) in extracted.0.as_slice().iter().zip(s.0.as_slice()) {
            worst = worst.max((a - b).abs());
        }
        for (a, b) in composed.as_slice().iter().zip(r.as_slice()) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(worst < 1e-6, format!("max abs error {worst:.1e} over 10 images"))
}

/// Desk-scale runs: per seed, (baseline, full model, cycle-only benchmark).
fn desk_runs() -> Vec<(u64, f64, f64, f64)> {
    let base: TrainConfig = {
        let mut cfg = TrainConfig::default();
        cfg.apply_str(include_str!("../../../configs/desk.cfg")).unwrap();
        cfg
    };
    (0..3u64)
        .map(|seed| {
            let rain = SyntheticRainSpec { seed: 1000 + seed, ..SyntheticRainSpec::default() };
            let corpus = build_corpus(&CorpusSpec { rain, seed, ..CorpusSpec::default() }).unwrap();
            let baseline = do_nothing_baseline(&corpus.test).mean_psnr;
            let run = |ablation: AblationFlags| {
                let cfg = TrainConfig { data_seed: seed, init_seed: seed, ablation, ..base.clone() };
                let ds: Arc<UnpairedDataset> = Arc::new(corpus.dataset(cfg.image_size, seed).unwrap());
                let out = tempfile::tempdir().unwrap();
                let started = Instant::now();
                let mut t = Trainer::new(cfg).unwrap();
                train(&mut t, ds, out.path()).unwrap();
                let rep = evaluate(&ablation.label(), &corpus.test, |r| t.models.g_c.apply(r));
                eprintln!(
                    "  seed {seed} {}: {:.3} dB (baseline {baseline:.3}) in {:.0}s",
                    ablation.label(),
                    rep.mean_psnr,
                    started.elapsed().as_secs_f64()
                );
                rep.mean_psnr
            };
            let full = run(AblationFlags::default());
            let bench = run(AblationFlags::ALL);
            (seed, baseline, full, bench)
        })
        .collect()
}

fn training_efficacy(runs: &[(u64, f64, f64, f64)]) -> Verdict {
    let ok = runs.iter().filter(|r| r.2 - r.1 >= 2.0).count();
    let listed: Vec<String> = runs.iter().map(|r| format!("seed {} {:+.2} dB", r.0, r.2 - r.1)).collect();
    verdict(ok >= 2, format!("gain over do-nothing baseline: {} ({ok}/3 at least 2 dB)", listed.join(", ")))
}

fn ablation_ordering(runs: &[(u64, f64, f64, f64)]) -> Verdict {
    let ok = runs.iter().filter(|r| r.2 >= r.3).count();
    let listed: Vec<String> = runs.iter().map(|r| format!("seed {} full {:.2} vs {:.2}", r.0, r.2, r.3)).collect();
    verdict(ok >= 2, format!("{} ({ok}/3 full >= cycle-only)", listed.join(", ")))
}

fn determinism_and_resume() -> Verdict {
    let corpus = build_corpus(&CorpusSpec { scenes: 12, size: 32, test_pairs: 2, ..CorpusSpec::default() }).unwrap();
    let network =
        NetworkConfig { base_channels: 4, num_resblocks_gc: 1, num_resblocks_gr: 1, ..NetworkConfig::default() };
    let cfg = |total| TrainConfig {
        network: network.clone(),
        image_size: 16,
        batch: 2,
        total_iters: total,
        decay_start: Some(10),
        checkpoint_every: 10,
        sample_every: 0,
        data_seed: 5,
        init_seed: 6,
        ..TrainConfig::default()
    };
    let ds = Arc::new(corpus.dataset(16, 5).unwrap());
    let run = |total: u64| {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::new(cfg(total)).unwrap();
        let hist = train(&mut t, ds.clone(), dir.path()).unwrap();
        (dir, hist)
    };
    let (_a, h1) = run(50);
    let (_b, h2) = run(50);
    let det = h1[49].as_array().iter().zip(h2[49].as_array()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);

    let (_c, full) = run(20);
    let (part_dir, _) = run(10);
    let mut t = Trainer::resume(part_dir.path(), cfg(20)).unwrap();
    let tail = train(&mut t, ds.clone(), part_dir.path()).unwrap();
    let mut res: f64 = if tail.len() == 10 { 0.0 } else { f64::INFINITY };
    for (a, b) in full[10..].iter().zip(&tail) {
        for (x, y) in a.as_array().iter().zip(b.as_array()) {
            res = res.max((x - y).abs());
        }
    }
    verdict(det < 1e-5 && res < 1e-4, format!("step-50 loss difference {det:.1e}; resume vs uninterrupted {res:.1e}"))
}

fn architecture_contracts() -> Verdict {
    let cfg = NetworkConfig::default();
    let mut m = ModelBundle::new(&cfg, 0).unwrap();
    assert_eq!(m.g_c.role(), GeneratorRole::Derain);
    let count = |ps: Vec<&unrain_nn::Param>| ps.iter().map(|p| p.len()).sum::<usize>();
    let (gc, gr) = (count(m.g_c.params()), count(m.g_r.params()));
    let x = Tensor::zeros(Shape::new(1, 3, 64, 48));
    let (oc, os) = (m.d_c.forward(&x, Mode::Eval).shape, m.d_s.forward(&x, Mode::Eval).shape);
    let shape_ok = oc == Shape::new(1, 1, 4, 3) && os == oc;
    let mut worst: f64 = 0.0;
    let all: Vec<&unrain_nn::Param> =
        m.g_c.params().into_iter().chain(m.g_r.params()).chain(m.d_c.params()).chain(m.d_s.params()).collect();
    for p in all.iter().filter(|p| p.shape.len() == 4) {
        let fan_in = (p.shape[1] * p.shape[2] * p.shape[3]) as f64;
        let n = p.value.len() as f64;
        let mean = p.value.iter().map(|&v| v as f64).sum::<f64>() / n;
        let std = (p.value.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
        worst = worst.max((std / (2.0 / fan_in).sqrt() - 1.0).abs());
    }
    verdict(
        3 * gr < gc && shape_ok && worst < 0.1,
        format!(
            "G_r {gr} vs G_c {gc} params; 64x48 input gives {oc} logits; worst He-init std deviation {:.1}%",
            worst * 100.0
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Verdict)> = vec![
        (1, "metric oracles", metric_oracles()),
        (2, "multi-scale gradient error shrinks with blur", bgm_scale_property()),
        (3, "analytic gradients", gradient_correctness()),
        (4, "loss assembly", loss_assembly()),
        (5, "streak round trip", round_trip()),
    ];
    eprintln!("desk-scale training (3 seeds x 2 variants, 2000 iterations each)");
    let runs = desk_runs();
    results.push((6, "desk-scale training efficacy", training_efficacy(&runs)));
    results.push((7, "full model vs cycle-only benchmark", ablation_ordering(&runs)));
    results.push((8, "determinism and resume", determinism_and_resume()));
    results.push((9, "architecture contracts", architecture_contracts()));
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (n, name, v) in &results {
        println!("criterion {n} {}: {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
