//! Full-reference quality metrics and the evaluation runner.

use std::fmt::Write as _;

use crate::data::PairedSample;
use crate::error::{Error, Result};
use crate::image::{ImageTensor, CHANNELS};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Peak signal-to-noise ratio in dB for peak value 1.
pub fn psnr(a: &ImageTensor<f32>, b: &ImageTensor<f32>) -> Result<f64> {
    a.check_same_shape(b)?;
    let sse: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    let mse = sse / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn ssim_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> =
        (0..SSIM_WINDOW).map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

/// Separable valid-mode filtering of an `h x w` plane.
fn filter_valid(p: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &p[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity: Gaussian 11x11 window (sigma 1.5), valid
/// windows only, computed per RGB channel and averaged.
pub fn ssim(a: &ImageTensor<f32>, b: &ImageTensor<f32>) -> Result<f64> {
    a.check_same_shape(b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}",
            a.shape_str()
        )));
    }
    let k = ssim_window();
    let mut total = 0.0;
    for c in 0..CHANNELS {
        let pa: Vec<f64> = a.channel(c).iter().map(|&v| v as f64).collect();
        let pb: Vec<f64> = b.channel(c).iter().map(|&v| v as f64).collect();
        let prod = |f: &dyn Fn(f64, f64) -> f64| pa.iter().zip(&pb).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
        let mu_a = filter_valid(&pa, h, w, &k);
        let mu_b = filter_valid(&pb, h, w, &k);
        let e_aa = filter_valid(&prod(&|x, _| x * x), h, w, &k);
        let e_bb = filter_valid(&prod(&|_, y| y * y), h, w, &k);
        let e_ab = filter_valid(&prod(&|x, y| x * y), h, w, &k);
        let mut sum = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
        total += sum / mu_a.len() as f64;
    }
    Ok(total / CHANNELS as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub enum EvalOutcome {
    Ok { psnr_db: f64, ssim: f64 },
    Failed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalEntry {
    pub name: String,
    pub outcome: EvalOutcome,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub model_tag: String,
    pub per_image: Vec<EvalEntry>,
    /// Means over successful entries; NaN when none succeeded.
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl EvalReport {
    pub fn from_entries(model_tag: &str, per_image: Vec<EvalEntry>) -> Self {
        let ok: Vec<(f64, f64)> = per_image
            .iter()
            .filter_map(|e| match e.outcome {
                EvalOutcome::Ok { psnr_db, ssim } => Some((psnr_db, ssim)),
                EvalOutcome::Failed(_) => None,
            })
            .collect();
        let n = ok.len() as f64;
        let (mean_psnr, mean_ssim) = if ok.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (ok.iter().map(|p| p.0).sum::<f64>() / n, ok.iter().map(|p| p.1).sum::<f64>() / n)
        };
        EvalReport { model_tag: model_tag.to_string(), per_image, mean_psnr, mean_ssim }
    }

    pub fn succeeded(&self) -> usize {
        self.per_image.iter().filter(|e| matches!(e.outcome, EvalOutcome::Ok { .. })).count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# model={} ssim=rgb-mean gaussian11 sigma1.5 psnr_peak=1\n", self.model_tag);
        s.push_str("name,psnr_db,ssim,status\n");
        for e in &self.per_image {
            match &e.outcome {
                EvalOutcome::Ok { psnr_db, ssim } => {
                    writeln!(s, "{},{psnr_db:.6},{ssim:.6},ok", e.name)
                }
                EvalOutcome::Failed(msg) => {
                    writeln!(s, "{},,,failed: {}", e.name, msg.replace(',', ";"))
                }
            }
            .unwrap();
        }
        writeln!(s, "mean,{:.6},{:.6},{}/{}", self.mean_psnr, self.mean_ssim, self.succeeded(), self.per_image.len())
            .unwrap();
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("model: {} (SSIM on RGB, averaged over channels)\n", self.model_tag);
        writeln!(s, "{:<24} {:>10} {:>8}", "image", "PSNR(dB)", "SSIM").unwrap();
        for e in &self.per_image {
            match &e.outcome {
                EvalOutcome::Ok { psnr_db, ssim } => {
                    writeln!(s, "{:<24} {psnr_db:>10.3} {ssim:>8.4}", e.name)
                }
                EvalOutcome::Failed(msg) => writeln!(s, "{:<24} FAILED: {msg}", e.name),
            }
            .unwrap();
        }
        writeln!(s, "{:<24} {:>10.3} {:>8.4}", "mean", self.mean_psnr, self.mean_ssim).unwrap();
        s
    }
}

/// Applies `derain` to every rainy input and scores it against ground truth.
/// Per-pair failures are recorded, not propagated.
pub fn evaluate(
    model_tag: &str,
    pairs: &[PairedSample],
    mut derain: impl FnMut(&ImageTensor<f32>) -> Result<ImageTensor<f32>>,
) -> EvalReport {
    let entries = pairs
        .iter()
        .map(|p| {
            let scored = p
                .rainy
                .check_same_shape(&p.gt)
                .and_then(|_| derain(&p.rainy))
                .and_then(|out| Ok(EvalOutcome::Ok { psnr_db: psnr(&out, &p.gt)?, ssim: ssim(&out, &p.gt)? }));
            EvalEntry { name: p.name.clone(), outcome: scored.unwrap_or_else(|e| EvalOutcome::Failed(e.to_string())) }
        })
        .collect();
    EvalReport::from_entries(model_tag, entries)
}

/// Scores the untouched rainy inputs.
pub fn do_nothing_baseline(pairs: &[PairedSample]) -> EvalReport {
    evaluate("do-nothing", pairs, |r| Ok(r.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f32) -> ImageTensor<f32> {
        ImageTensor::from_fn(h, w, f)
    }

    #[test]
    fn psnr_examples() {
        let a = img(16, 16, |y, x, c| ((y * 7 + x * 3 + c) % 10) as f32 / 20.0);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
        assert!(psnr(&a, &img(16, 17, |_, _, _| 0.0)).is_err());
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let a = img(32, 32, |y, x, c| 0.25 + 0.5 * (((y / 4 + x / 4 + c) % 2) as f32));
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let inv = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &inv).unwrap() < 0.5);
        assert!(ssim(&img(10, 40, |_, _, _| 0.5), &img(10, 40, |_, _, _| 0.5)).is_err());
    }

    #[test]
    fn ssim_constant_images_reduce_to_luminance_term() {
        let (ma, mb) = (0.4f32, 0.5f32);
        let got = ssim(&img(16, 16, |_, _, _| ma), &img(16, 16, |_, _, _| mb)).unwrap();
        let (ma, mb) = (ma as f64, mb as f64);
        let want = (2.0 * ma * mb + SSIM_C1) / (ma * ma + mb * mb + SSIM_C1);
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn report_means_skip_failures() {
        let entries = vec![
            EvalEntry { name: "a".into(), outcome: EvalOutcome::Ok { psnr_db: 20.0, ssim: 0.5 } },
            EvalEntry { name: "b".into(), outcome: EvalOutcome::Failed("shape".into()) },
            EvalEntry { name: "c".into(), outcome: EvalOutcome::Ok { psnr_db: 30.0, ssim: 0.7 } },
        ];
        let r = EvalReport::from_entries("t", entries);
        assert_eq!(r.succeeded(), 2);
        assert!((r.mean_psnr - 25.0).abs() < 1e-12 && (r.mean_ssim - 0.6).abs() < 1e-12);
        assert!(r.to_csv().contains("b,,,failed"));
        assert!(r.to_table().contains("FAILED"));
    }
}
