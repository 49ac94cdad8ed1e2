use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};
use unrain::checkpoint;
use unrain::config::{AblationFlags, TrainConfig};
use unrain::data::{
    list_pngs, load_paired_testset, rain_for, read_png, split_corpus, write_manifest, write_png, PairedSample,
    UnpairedDataset,
};
use unrain::metrics::{do_nothing_baseline, evaluate, EvalReport};
use unrain::synth::{procedural_scene, SyntheticRainSpec};
use unrain::trainer::{train, Trainer};
use unrain::{Error, ImageTensor};

mod overrides;

#[derive(Parser)]
#[command(name = "unrain", version, about = "Unsupervised single-image deraining")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from unpaired rainy and clean images.
    Train(TrainArgs),
    /// Derain every PNG in a directory with a trained checkpoint.
    Derain(DerainArgs),
    /// Report PSNR and SSIM on a paired test set.
    Evaluate(EvaluateArgs),
    /// Render synthetic rain onto clean images.
    MakeSynthetic(SynthArgs),
    /// Train and evaluate the full model and its four ablated variants.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Resume from a checkpoint directory or run directory.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Config overrides, after all other options: `--key=value`, `key=value`
    /// or `--flag` for booleans. They win over the config file.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct DerainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory holding `rainy/` and `gt/`.
    #[arg(long)]
    testset: PathBuf,
    #[arg(long, required_unless_present = "baseline", conflicts_with = "baseline")]
    checkpoint: Option<PathBuf>,
    /// Score the untouched rainy inputs instead of a model.
    #[arg(long)]
    baseline: bool,
    /// Also write per-image results as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory of clean PNGs.
    #[arg(long, required_unless_present = "scenes", conflicts_with = "scenes")]
    clean_dir: Option<PathBuf>,
    /// Render this many procedural clean scenes instead.
    #[arg(long)]
    scenes: Option<usize>,
    /// Side of the procedural scenes.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long)]
    out: PathBuf,
    /// Write a `train/{rainy,clean}` + `test/{rainy,gt,streaks}` layout.
    #[arg(long)]
    split: bool,
    #[arg(long, default_value_t = 8)]
    test_pairs: usize,
    /// Streak angle from vertical, degrees.
    #[arg(long)]
    angle: Option<f64>,
    #[arg(long)]
    streak_length: Option<usize>,
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    intensity: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding `rainy/` and `gt/`.
    #[arg(long)]
    testset: PathBuf,
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

type Outcome = Result<(), Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Derain(a) => cmd_derain(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::MakeSynthetic(a) => cmd_make_synthetic(a),
        Command::Ablate(a) => cmd_ablate(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<TrainConfig, Failure> {
    let mut cfg = TrainConfig::default();
    if let Some(p) = path {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(usage)?;
        cfg.apply_str(&text).map_err(usage)?;
    }
    for (k, v) in overrides::parse(overrides).map_err(|e| usage(anyhow!(e)))? {
        cfg.set(&k, &v).map_err(usage)?;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn dataset(cfg: &TrainConfig) -> Result<UnpairedDataset, Failure> {
    let root = cfg.data_root.as_ref().ok_or_else(|| usage(anyhow!("config key `data_root` is required")))?;
    UnpairedDataset::from_root(root, cfg.image_size, cfg.data_seed).map_err(runtime)
}

fn cmd_train(a: TrainArgs) -> Outcome {
    let cfg = load_config(a.config.as_deref(), &a.overrides)?;
    let ds = Arc::new(dataset(&cfg)?);
    let out = cfg.out_dir.clone();
    let mut trainer = match &a.resume {
        Some(p) => Trainer::resume(p, cfg).map_err(runtime)?,
        None => Trainer::new(cfg).map_err(runtime)?,
    };
    info!("training {} -> {}", trainer.cfg.ablation.label(), out.display());
    train(&mut trainer, ds, &out).map_err(runtime)?;
    info!("finished at iteration {}", trainer.iteration);
    Ok(())
}

fn cmd_derain(a: DerainArgs) -> Outcome {
    let mut g = checkpoint::load_generator(&a.checkpoint).map_err(runtime)?;
    let inputs = list_pngs(&a.input).map_err(runtime)?;
    fs::create_dir_all(&a.output).with_context(|| format!("creating {}", a.output.display())).map_err(runtime)?;
    let mut failed = 0;
    for path in &inputs {
        let name = path.file_name().expect("listed PNGs have names");
        let res = read_png(path).and_then(|img| g.apply(&img)).and_then(|out| write_png(&a.output.join(name), &out));
        if let Err(e) = res {
            error!("{}: {e}", path.display());
            failed += 1;
        }
    }
    info!("derained {} of {} images", inputs.len() - failed, inputs.len());
    if failed > 0 {
        return Err(runtime(anyhow!("{failed} images failed")));
    }
    Ok(())
}

fn report(rep: &EvalReport, csv: Option<&Path>) -> Outcome {
    print!("{}", rep.to_table());
    if let Some(p) = csv {
        fs::write(p, rep.to_csv()).with_context(|| format!("writing {}", p.display())).map_err(runtime)?;
    }
    if rep.succeeded() == 0 {
        return Err(runtime(anyhow!("no test pair could be evaluated")));
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Outcome {
    let pairs = load_paired_testset(&a.testset).map_err(runtime)?;
    let rep = match &a.checkpoint {
        Some(ck) => {
            let mut g = checkpoint::load_generator(ck).map_err(runtime)?;
            evaluate(&ck.display().to_string(), &pairs, |r| g.apply(r))
        }
        None => do_nothing_baseline(&pairs),
    };
    report(&rep, a.csv.as_deref())
}

fn rain_spec(a: &SynthArgs) -> Result<SyntheticRainSpec, Failure> {
    let d = SyntheticRainSpec::default();
    let spec = SyntheticRainSpec {
        angle_deg: a.angle.unwrap_or(d.angle_deg),
        streak_length_px: a.streak_length.unwrap_or(d.streak_length_px),
        density: a.density.unwrap_or(d.density),
        intensity: a.intensity.unwrap_or(d.intensity),
        seed: a.seed,
    };
    spec.validate().map_err(usage)?;
    Ok(spec)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn cmd_make_synthetic(a: SynthArgs) -> Outcome {
    let rain = rain_spec(&a)?;
    let scenes: Vec<(String, ImageTensor<f32>)> = match (&a.clean_dir, a.scenes) {
        (Some(dir), _) => {
            let paths = list_pngs(dir).map_err(usage)?;
            if paths.is_empty() {
                return Err(usage(anyhow!("no PNG images in {}", dir.display())));
            }
            paths.iter().map(|p| Ok((stem(p), read_png(p)?))).collect::<Result<_, Error>>().map_err(runtime)?
        }
        (None, Some(n)) => {
            if n == 0 {
                return Err(usage(anyhow!("--scenes must be positive")));
            }
            (0..n).map(|i| (format!("{i:04}"), procedural_scene(a.size, a.size, derive(a.seed, i)))).collect()
        }
        (None, None) => unreachable!("clap requires --clean-dir or --scenes"),
    };
    if a.split {
        let corpus = split_corpus(scenes, a.test_pairs, &rain).map_err(usage)?;
        corpus.write(&a.out).map_err(runtime)?;
        info!(
            "wrote {} rainy, {} clean training images and {} test pairs to {}",
            corpus.train_rainy.len(),
            corpus.train_clean.len(),
            corpus.test.len(),
            a.out.display()
        );
        return Ok(());
    }
    let mut names = Vec::with_capacity(scenes.len());
    for (i, (name, clean)) in scenes.iter().enumerate() {
        let (rainy, streaks) = rain_for(clean, &rain, i).map_err(runtime)?;
        for (dir, img) in [("rainy", &rainy), ("gt", clean), ("streaks", &streaks)] {
            write_png(&a.out.join(dir).join(format!("{name}.png")), img).map_err(runtime)?;
        }
        names.push(format!("{name}.png"));
    }
    for dir in ["rainy", "gt", "streaks"] {
        let entries: Vec<String> = names.iter().map(|n| format!("{dir}/{n}")).collect();
        write_manifest(&a.out.join(format!("{dir}.list")), &entries).map_err(runtime)?;
    }
    info!("wrote {} triplets to {}", names.len(), a.out.display());
    Ok(())
}

fn derive(seed: u64, i: usize) -> u64 {
    unrain::data::derive_seed(seed, i as u64)
}

const VARIANTS: [AblationFlags; 5] = [
    AblationFlags { no_rgm: false, no_bgm: false, no_lum: false },
    AblationFlags { no_rgm: true, no_bgm: false, no_lum: false },
    AblationFlags { no_rgm: false, no_bgm: true, no_lum: false },
    AblationFlags { no_rgm: false, no_bgm: false, no_lum: true },
    AblationFlags::ALL,
];

fn slug(flags: AblationFlags) -> String {
    let mut parts = vec![];
    if flags.no_rgm {
        parts.push("rgm");
    }
    if flags.no_bgm {
        parts.push("bgm");
    }
    if flags.no_lum {
        parts.push("lum");
    }
    if parts.is_empty() {
        "full".into()
    } else {
        format!("no-{}", parts.join("-"))
    }
}

fn run_variant(base: &TrainConfig, flags: AblationFlags, pairs: &[PairedSample]) -> anyhow::Result<EvalReport> {
    let mut cfg = base.clone();
    cfg.ablation = flags;
    cfg.out_dir = base.out_dir.join(slug(flags));
    let root = cfg.data_root.clone().ok_or_else(|| anyhow!("config key `data_root` is required"))?;
    let ds = Arc::new(UnpairedDataset::from_root(&root, cfg.image_size, cfg.data_seed)?);
    let out = cfg.out_dir.clone();
    let mut trainer = Trainer::new(cfg)?;
    train(&mut trainer, ds, &out)?;
    let rep = evaluate(&flags.label(), pairs, |r| trainer.models.g_c.apply(r));
    if rep.succeeded() == 0 {
        anyhow::bail!("no test pair could be evaluated");
    }
    Ok(rep)
}

fn cmd_ablate(a: AblateArgs) -> Outcome {
    let cfg = load_config(a.config.as_deref(), &a.overrides)?;
    if cfg.data_root.is_none() {
        return Err(usage(anyhow!("config key `data_root` is required")));
    }
    let pairs = load_paired_testset(&a.testset).map_err(runtime)?;
    let mut rows = vec![];
    for flags in VARIANTS {
        info!("ablation variant {}", flags.label());
        let row = run_variant(&cfg, flags, &pairs);
        if let Err(e) = &row {
            warn!("variant {} failed: {e:#}", flags.label());
        }
        rows.push((flags.label(), row));
    }
    let mut table = format!("{:<18} {:>10} {:>8}\n", "variant", "PSNR", "SSIM");
    let mut csv = String::from("variant,psnr,ssim\n");
    for (label, row) in &rows {
        match row {
            Ok(r) => {
                table += &format!("{label:<18} {:>10.4} {:>8.4}\n", r.mean_psnr, r.mean_ssim);
                csv += &format!("\"{label}\",{},{}\n", r.mean_psnr, r.mean_ssim);
            }
            Err(_) => {
                table += &format!("{label:<18} {:>10} {:>8}\n", "FAILED", "FAILED");
                csv += &format!("\"{label}\",FAILED,FAILED\n");
            }
        }
    }
    print!("{table}");
    fs::create_dir_all(&cfg.out_dir).map_err(runtime)?;
    let csv_path = cfg.out_dir.join("ablation.csv");
    fs::write(&csv_path, csv).with_context(|| format!("writing {}", csv_path.display())).map_err(runtime)?;
    if rows.iter().any(|(_, r)| r.is_err()) {
        return Err(runtime(anyhow!("some ablation variants failed")));
    }
    Ok(())
}
