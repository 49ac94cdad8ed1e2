use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use unrain::data::{read_png, write_png};
use unrain::synth::procedural_scene;

fn unrain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unrain")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = vec![];
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

const TOY: &str = "
base_channels = 4
resblocks_gc = 1
resblocks_gr = 1
train_size = 16
checkpoint_every = 2
sample_every = 2
prefetch = 2
";

/// Writes a toy corpus and config, returns (workdir, config path).
fn toy_setup(iters: u64) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = unrain(&[
        "make-synthetic",
        "--scenes",
        "12",
        "--size",
        "32",
        "--split",
        "--test-pairs",
        "3",
        "--out",
        s(&data),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = dir.path().join("toy.cfg");
    let text = format!(
        "{TOY}total_iters = {iters}\ndata_root = {}\nout_dir = {}\n",
        data.join("train").display(),
        dir.path().join("run").display()
    );
    fs::write(&cfg, text).unwrap();
    (dir, cfg)
}

fn write_clean(dir: &Path, n: usize) {
    for i in 0..n {
        write_png(&dir.join(format!("img{i}.png")), &procedural_scene(24, 20, i as u64)).unwrap();
    }
}

#[test]
fn make_synthetic_writes_one_triplet_per_clean_image() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean");
    write_clean(&clean, 5);
    let out_dir = dir.path().join("out");
    let out = unrain(&["make-synthetic", "--clean-dir", s(&clean), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0);
    for sub in ["rainy", "gt", "streaks"] {
        assert_eq!(fs::read_dir(out_dir.join(sub)).unwrap().count(), 5, "{sub}");
        assert_eq!(fs::read_to_string(out_dir.join(format!("{sub}.list"))).unwrap().lines().count(), 5);
    }
}

#[test]
fn make_synthetic_with_zero_density_leaves_images_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean");
    write_clean(&clean, 2);
    let out_dir = dir.path().join("out");
    let out = unrain(&["make-synthetic", "--clean-dir", s(&clean), "--density", "0", "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0);
    for i in 0..2 {
        let name = format!("img{i}.png");
        assert_eq!(
            fs::read(out_dir.join("rainy").join(&name)).unwrap(),
            fs::read(out_dir.join("gt").join(&name)).unwrap()
        );
    }
}

#[test]
fn make_synthetic_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean");
    write_clean(&clean, 3);
    let run = |name: &str, seed: &str| {
        let o = dir.path().join(name);
        assert_eq!(code(&unrain(&["make-synthetic", "--clean-dir", s(&clean), "--seed", seed, "--out", s(&o)])), 0);
        tree(&o)
    };
    let a = run("a", "7");
    assert_eq!(a, run("b", "7"));
    assert_ne!(a, run("c", "8"));
}

#[test]
fn make_synthetic_rejects_empty_clean_dir() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean");
    fs::create_dir(&clean).unwrap();
    let out = unrain(&["make-synthetic", "--clean-dir", s(&clean), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_rejects_unknown_key_with_usage_code() {
    let (_dir, cfg) = toy_setup(2);
    let out = unrain(&["train", "--config", s(&cfg), "--totl-iters=3"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("totl-iters"));
}

#[test]
fn train_rejects_unknown_key_in_config_file() {
    let (dir, cfg) = toy_setup(2);
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, fs::read_to_string(&cfg).unwrap() + "learning_rat = 0.1\n").unwrap();
    let out = unrain(&["train", "--config", s(&bad)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));
}

#[test]
fn train_with_zero_iterations_writes_only_the_initial_checkpoint() {
    let (dir, cfg) = toy_setup(5);
    let out = unrain(&["train", "--config", s(&cfg), "--total-iters=0"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ck = dir.path().join("run/checkpoints");
    let dirs: Vec<_> = fs::read_dir(&ck).unwrap().map(|e| e.unwrap().file_name()).filter(|n| n != "latest").collect();
    assert_eq!(dirs, vec!["iter-00000000"]);
    let log = fs::read_to_string(dir.path().join("run/losses.csv")).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[test]
fn train_then_resume_then_derain_and_evaluate() {
    let (dir, cfg) = toy_setup(4);
    let run = dir.path().join("run");
    let out = unrain(&["train", "--config", s(&cfg), "--total-iters=2", "--decay-start=1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = unrain(&["train", "--config", s(&cfg), "--resume", s(&run), "--decay-start=1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("checkpoints/iter-00000004/meta.txt").is_file());
    assert!(run.join("samples/iter-00000004.png").is_file());
    let log = fs::read_to_string(run.join("losses.csv")).unwrap();
    assert_eq!(log.lines().count(), 5);

    let test = dir.path().join("data/test");
    let derained = dir.path().join("derained");
    let out = unrain(&["derain", "--checkpoint", s(&run), "--input", s(&test.join("rainy")), "--output", s(&derained)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_dir(&derained).unwrap().count(), 3);

    let csv = dir.path().join("eval.csv");
    let out = unrain(&["evaluate", "--testset", s(&test), "--checkpoint", s(&run), "--csv", s(&csv)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().filter(|l| l.ends_with(",ok")).count(), 3);
    let out = unrain(&["evaluate", "--testset", s(&test), "--baseline"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("mean"));
}

fn trained_checkpoint() -> (TempDir, PathBuf) {
    let (dir, cfg) = toy_setup(0);
    assert_eq!(code(&unrain(&["train", "--config", s(&cfg)])), 0);
    let ck = dir.path().join("run/checkpoints/iter-00000000");
    (dir, ck)
}

#[test]
fn derain_preserves_odd_and_large_sizes() {
    let (dir, ck) = trained_checkpoint();
    let input = dir.path().join("in");
    write_png(&input.join("odd.png"), &procedural_scene(510, 511, 1)).unwrap();
    write_png(&input.join("big.png"), &procedural_scene(512, 512, 2)).unwrap();
    let output = dir.path().join("out");
    let out = unrain(&["derain", "--checkpoint", s(&ck), "--input", s(&input), "--output", s(&output)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_png(&output.join("odd.png")).unwrap().dims(), (510, 511));
    assert_eq!(read_png(&output.join("big.png")).unwrap().dims(), (512, 512));
}

#[test]
fn derain_needs_only_the_deraining_generator() {
    let (dir, ck) = trained_checkpoint();
    for f in ["g_r.bin", "d_c.bin", "d_s.bin", "optim.bin"] {
        fs::remove_file(ck.join(f)).unwrap();
    }
    let input = dir.path().join("in");
    write_png(&input.join("a.png"), &procedural_scene(20, 20, 1)).unwrap();
    let out = unrain(&["derain", "--checkpoint", s(&ck), "--input", s(&input), "--output", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn derain_on_empty_dir_succeeds_with_no_output() {
    let (dir, ck) = trained_checkpoint();
    let input = dir.path().join("in");
    fs::create_dir(&input).unwrap();
    let output = dir.path().join("out");
    let out = unrain(&["derain", "--checkpoint", s(&ck), "--input", s(&input), "--output", s(&output)]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read_dir(&output).unwrap().count(), 0);
}

#[test]
fn derain_with_corrupt_checkpoint_fails_at_runtime() {
    let (dir, ck) = trained_checkpoint();
    let blob = ck.join("g_c.bin");
    let bytes = fs::read(&blob).unwrap();
    fs::write(&blob, &bytes[..bytes.len() / 2]).unwrap();
    let input = dir.path().join("in");
    write_png(&input.join("a.png"), &procedural_scene(20, 20, 1)).unwrap();
    let out = unrain(&["derain", "--checkpoint", s(&ck), "--input", s(&input), "--output", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 1);
}

#[test]
fn ablate_prints_five_rows_reproducibly() {
    let (dir, cfg) = toy_setup(2);
    let test = dir.path().join("data/test");
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out_arg = format!("--out-dir={}", out_dir.display());
        let out = unrain(&["ablate", "--config", s(&cfg), "--testset", s(&test), &out_arg]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        fs::read_to_string(out_dir.join("ablation.csv")).unwrap()
    };
    let a = run("a1");
    let rows: Vec<&str> = a.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[0].starts_with("\"full\","));
    assert!(rows[4].starts_with("\"-{RGM,BGM,lum}\","));
    assert_eq!(a, run("a2"));
}
