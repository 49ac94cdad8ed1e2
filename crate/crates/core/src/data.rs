//! Image I/O, unpaired sampling, paired test sets and desk-scale corpora.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::{Arc, OnceLock};
use std::thread::JoinHandle;

use image::{imageops, ImageBuffer, Rgb, RgbImage};
use log::warn;
use rand::Rng;
use unrain_nn::seeded_rng;

use crate::error::{Error, Result};
use crate::image::{ImageTensor, MIN_SIDE};
use crate::synth::{procedural_scene, synthesize_rain, SyntheticRainSpec};

const READ_ATTEMPTS: usize = 3;

/// Decodes a PNG into `[0, 1]` RGB; 8-bit value `v` maps to `v / 255`.
pub fn read_png(path: &Path) -> Result<ImageTensor<f32>> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Decode { path: path.to_path_buf(), msg: e.to_string() })?
        .to_rgb8();
    Ok(from_rgb8(&img))
}

fn from_rgb8(img: &RgbImage) -> ImageTensor<f32> {
    let (w, h) = img.dimensions();
    ImageTensor::from_fn(h as usize, w as usize, |y, x, c| img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0)
}

fn to_rgb8(img: &ImageTensor<f32>) -> RgbImage {
    let (h, w) = img.dims();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let px = |c| (img.get(y as usize, x as usize, c).clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([px(0), px(1), px(2)])
    })
}

/// Encodes as 8-bit RGB PNG, creating parent directories.
pub fn write_png(path: &Path, img: &ImageTensor<f32>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    to_rgb8(img)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Decode { path: path.to_path_buf(), msg: e.to_string() })
}

/// Sorted `*.png` files directly inside `dir`.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Reads a manifest: one path per line, relative to the manifest's directory.
/// Blank lines and `#` comments are ignored.
pub fn read_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(|l| base.join(l)).collect())
}

pub fn write_manifest(path: &Path, entries: &[String]) -> Result<()> {
    let mut text = entries.join("\n");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// A rainy input with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub name: String,
    pub rainy: ImageTensor<f32>,
    pub gt: ImageTensor<f32>,
}

/// Loads `root/rainy/*.png` against `root/gt/*.png` by stem, in
/// lexicographic order.
pub fn load_paired_testset(root: &Path) -> Result<Vec<PairedSample>> {
    let rainy = list_pngs(&root.join("rainy"))?;
    let gt = list_pngs(&root.join("gt"))?;
    let rs: Vec<String> = rainy.iter().map(|p| stem(p)).collect();
    let gs: Vec<String> = gt.iter().map(|p| stem(p)).collect();
    let mut missing: Vec<String> = rs.iter().filter(|s| !gs.contains(s)).map(|s| format!("gt/{s}")).collect();
    missing.extend(gs.iter().filter(|s| !rs.contains(s)).map(|s| format!("rainy/{s}")));
    if !missing.is_empty() {
        return Err(Error::Dataset(format!("unmatched test pairs, missing: {}", missing.join(", "))));
    }
    rainy
        .iter()
        .zip(&gt)
        .map(|(rp, gp)| {
            let (r, g) = (read_png(rp)?, read_png(gp)?);
            if r.dims() != g.dims() {
                return Err(Error::Dataset(format!(
                    "pair {}: rainy {} vs gt {}",
                    stem(rp),
                    r.shape_str(),
                    g.shape_str()
                )));
            }
            Ok(PairedSample { name: stem(rp), rainy: r, gt: g })
        })
        .collect()
}

enum Entry {
    File(PathBuf, OnceLock<Option<Arc<ImageTensor<f32>>>>),
    Memory(Arc<ImageTensor<f32>>),
}

/// One image domain; files are decoded lazily and cached.
pub struct Domain {
    name: String,
    entries: Vec<Entry>,
}

impl Domain {
    pub fn from_paths(name: &str, paths: Vec<PathBuf>) -> Self {
        Domain { name: name.into(), entries: paths.into_iter().map(|p| Entry::File(p, OnceLock::new())).collect() }
    }

    pub fn from_images(name: &str, images: Vec<ImageTensor<f32>>) -> Self {
        Domain { name: name.into(), entries: images.into_iter().map(|i| Entry::Memory(Arc::new(i))).collect() }
    }

    /// Files from `dir/<name>.list` if present, else every PNG in `dir/<name>/`.
    pub fn discover(dir: &Path, name: &str) -> Result<Self> {
        let manifest = dir.join(format!("{name}.list"));
        let paths = if manifest.is_file() { read_manifest(&manifest)? } else { list_pngs(&dir.join(name))? };
        Ok(Self::from_paths(name, paths))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn get(&self, i: usize) -> Option<Arc<ImageTensor<f32>>> {
        match &self.entries[i] {
            Entry::Memory(img) => Some(img.clone()),
            Entry::File(path, cell) => cell
                .get_or_init(|| {
                    let mut last = None;
                    for _ in 0..READ_ATTEMPTS {
                        match read_png(path).and_then(|img| img.check_min_side(MIN_SIDE).map(|_| img)) {
                            Ok(img) => return Some(Arc::new(img)),
                            Err(e) => last = Some(e),
                        }
                    }
                    warn!("skipping {}: {}", path.display(), last.map(|e| e.to_string()).unwrap_or_default());
                    None
                })
                .clone(),
        }
    }
}

/// Unpaired rainy and clean domains with a seeded, stateless sampler: the
/// batch for step `k` depends only on `(seed, k)`.
pub struct UnpairedDataset {
    pub rainy: Domain,
    pub clean: Domain,
    pub image_size: usize,
    pub seed: u64,
}

/// Images and the domain indices they came from.
#[derive(Clone, Debug)]
pub struct Batch {
    pub rainy: Vec<ImageTensor<f32>>,
    pub clean: Vec<ImageTensor<f32>>,
    pub rainy_indices: Vec<usize>,
    pub clean_indices: Vec<usize>,
}

impl UnpairedDataset {
    pub fn new(rainy: Domain, clean: Domain, image_size: usize, seed: u64) -> Result<Self> {
        if rainy.is_empty() || clean.is_empty() {
            return Err(Error::Dataset(format!(
                "need at least one image per domain, got {} rainy and {} clean",
                rainy.len(),
                clean.len()
            )));
        }
        if image_size < MIN_SIDE || !image_size.is_multiple_of(16) {
            return Err(Error::InvalidArgument(format!(
                "training size {image_size} must be a multiple of 16 and at least {MIN_SIDE}"
            )));
        }
        Ok(UnpairedDataset { rainy, clean, image_size, seed })
    }

    /// Expects `root/rainy` and `root/clean` (or `rainy.list` / `clean.list`).
    pub fn from_root(root: &Path, image_size: usize, seed: u64) -> Result<Self> {
        Self::new(Domain::discover(root, "rainy")?, Domain::discover(root, "clean")?, image_size, seed)
    }
}

fn draw(domain: &Domain, rng: &mut impl Rng, size: usize) -> Result<(usize, ImageTensor<f32>)> {
    // a full epoch of consecutive failures means nothing is loadable
    for _ in 0..domain.len().max(1) * 2 {
        let i = rng.random_range(0..domain.len());
        if let Some(img) = domain.get(i) {
            return Ok((i, fit(&img, size, rng)));
        }
    }
    Err(Error::Dataset(format!("no loadable images in the {} domain", domain.name)))
}

/// Random `size x size` crop, upscaling first when the image is smaller.
fn fit(img: &ImageTensor<f32>, size: usize, rng: &mut impl Rng) -> ImageTensor<f32> {
    let (h, w) = img.dims();
    let src = if h < size || w < size {
        let scale = size as f64 / h.min(w) as f64;
        let (nh, nw) = (((h as f64 * scale).ceil() as usize).max(size), ((w as f64 * scale).ceil() as usize).max(size));
        let buf: ImageBuffer<Rgb<f32>, Vec<f32>> =
            ImageBuffer::from_fn(w as u32, h as u32, |x, y| Rgb([0, 1, 2].map(|c| img.get(y as usize, x as usize, c))));
        let big = imageops::resize(&buf, nw as u32, nh as u32, imageops::FilterType::Triangle);
        std::borrow::Cow::Owned(ImageTensor::from_fn(nh, nw, |y, x, c| {
            big.get_pixel(x as u32, y as u32)[c].clamp(0.0, 1.0)
        }))
    } else {
        std::borrow::Cow::Borrowed(img)
    };
    let (h, w) = src.dims();
    let oy = rng.random_range(0..=h - size);
    let ox = rng.random_range(0..=w - size);
    if (h, w) == (size, size) {
        return src.into_owned();
    }
    ImageTensor::from_fn(size, size, |y, x, c| src.get(y + oy, x + ox, c))
}

const RAINY_STREAM: u64 = 1;
const CLEAN_STREAM: u64 = 2;

/// Draws the batch for training step `step`. Rainy and clean indices come
/// from independent RNG streams.
pub fn sample_unpaired_batch(ds: &UnpairedDataset, batch: usize, step: u64) -> Result<Batch> {
    if batch == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut r_rng = seeded_rng(ds.seed, (step << 2) | RAINY_STREAM);
    let mut c_rng = seeded_rng(ds.seed, (step << 2) | CLEAN_STREAM);
    let mut out = Batch { rainy: vec![], clean: vec![], rainy_indices: vec![], clean_indices: vec![] };
    for _ in 0..batch {
        let (i, r) = draw(&ds.rainy, &mut r_rng, ds.image_size)?;
        let (j, c) = draw(&ds.clean, &mut c_rng, ds.image_size)?;
        out.rainy.push(r);
        out.rainy_indices.push(i);
        out.clean.push(c);
        out.clean_indices.push(j);
    }
    Ok(out)
}

/// Background decoder producing batches for steps `start..end` in order
/// through a bounded queue.
pub struct Prefetcher {
    rx: Receiver<Result<Batch>>,
    handle: Option<JoinHandle<()>>,
}

impl Prefetcher {
    pub fn spawn(ds: Arc<UnpairedDataset>, batch: usize, start: u64, end: u64, depth: usize) -> Self {
        let (tx, rx) = sync_channel(depth.max(1));
        let handle = std::thread::spawn(move || {
            for step in start..end {
                let b = sample_unpaired_batch(&ds, batch, step);
                let failed = b.is_err();
                if tx.send(b).is_err() || failed {
                    break;
                }
            }
        });
        Prefetcher { rx, handle: Some(handle) }
    }

    pub fn next_batch(&mut self) -> Result<Batch> {
        self.rx.recv().map_err(|_| Error::Dataset("prefetch worker stopped early".into()))?
    }
}

impl Drop for Prefetcher {
    fn drop(&mut self) {
        // unblock the worker before joining
        let (_tx, rx) = sync_channel(1);
        drop(std::mem::replace(&mut self.rx, rx));
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// SplitMix64 finalizer, for deriving per-item seeds.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Shape of a seeded synthetic corpus built from procedural scenes.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub scenes: usize,
    pub size: usize,
    pub test_pairs: usize,
    pub rain: SyntheticRainSpec,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec { scenes: 40, size: 64, test_pairs: 8, rain: SyntheticRainSpec::default(), seed: 0 }
    }
}

/// Training domains plus held-out pairs. The scenes behind the rainy training
/// images, the clean training images and the test pairs are disjoint.
pub struct SyntheticCorpus {
    pub train_rainy: Vec<(String, ImageTensor<f32>)>,
    pub train_clean: Vec<(String, ImageTensor<f32>)>,
    pub test: Vec<PairedSample>,
    pub test_streaks: Vec<ImageTensor<f32>>,
}

/// Renders rain onto `clean[i]` with a per-image seed derived from `rain.seed`.
pub fn rain_for(
    clean: &ImageTensor<f32>,
    rain: &SyntheticRainSpec,
    index: usize,
) -> Result<(ImageTensor<f32>, ImageTensor<f32>)> {
    let spec = SyntheticRainSpec { seed: derive_seed(rain.seed, index as u64), ..rain.clone() };
    let (r, s) = synthesize_rain(clean, &spec)?;
    Ok((r, s.0))
}

pub fn build_corpus(spec: &CorpusSpec) -> Result<SyntheticCorpus> {
    let scenes = (0..spec.scenes)
        .map(|i| (format!("{i:04}"), procedural_scene(spec.size, spec.size, derive_seed(spec.seed, i as u64))))
        .collect();
    split_corpus(scenes, spec.test_pairs, &spec.rain)
}

/// Holds out the last `test_pairs` scenes as rainy/gt pairs; the remaining
/// scenes alternate between the rainy and the clean training domain.
pub fn split_corpus(
    scenes: Vec<(String, ImageTensor<f32>)>,
    test_pairs: usize,
    rain: &SyntheticRainSpec,
) -> Result<SyntheticCorpus> {
    if test_pairs + 2 > scenes.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scenes cannot hold {test_pairs} test pairs and two training domains",
            scenes.len()
        )));
    }
    let mut corpus = SyntheticCorpus { train_rainy: vec![], train_clean: vec![], test: vec![], test_streaks: vec![] };
    let n_train = scenes.len() - test_pairs;
    for (i, (name, scene)) in scenes.into_iter().enumerate() {
        if i >= n_train {
            let (rainy, streaks) = rain_for(&scene, rain, i)?;
            corpus.test.push(PairedSample { name, rainy, gt: scene });
            corpus.test_streaks.push(streaks);
        } else if i % 2 == 0 {
            corpus.train_rainy.push((name, rain_for(&scene, rain, i)?.0));
        } else {
            corpus.train_clean.push((name, scene));
        }
    }
    Ok(corpus)
}

impl SyntheticCorpus {
    pub fn dataset(&self, image_size: usize, seed: u64) -> Result<UnpairedDataset> {
        let imgs = |v: &[(String, ImageTensor<f32>)]| v.iter().map(|p| p.1.clone()).collect();
        UnpairedDataset::new(
            Domain::from_images("rainy", imgs(&self.train_rainy)),
            Domain::from_images("clean", imgs(&self.train_clean)),
            image_size,
            seed,
        )
    }

    /// Writes `train/{rainy,clean}` and `test/{rainy,gt,streaks}` with manifests.
    pub fn write(&self, root: &Path) -> Result<()> {
        let put = |dir: &str, name: &str, img: &ImageTensor<f32>, list: &mut Vec<String>| -> Result<()> {
            write_png(&root.join(dir).join(format!("{name}.png")), img)?;
            list.push(format!("{}/{name}.png", dir.rsplit('/').next().unwrap_or(dir)));
            Ok(())
        };
        let (mut rl, mut cl, mut tl) = (vec![], vec![], vec![]);
        for (n, img) in &self.train_rainy {
            put("train/rainy", n, img, &mut rl)?;
        }
        for (n, img) in &self.train_clean {
            put("train/clean", n, img, &mut cl)?;
        }
        for (p, s) in self.test.iter().zip(&self.test_streaks) {
            put("test/rainy", &p.name, &p.rainy, &mut tl)?;
            put("test/gt", &p.name, &p.gt, &mut vec![])?;
            put("test/streaks", &p.name, s, &mut vec![])?;
        }
        write_manifest(&root.join("train/rainy.list"), &rl)?;
        write_manifest(&root.join("train/clean.list"), &cl)?;
        write_manifest(&root.join("test/rainy.list"), &tl)
    }
}
