//! Evaluation metrics: PSNR, single-scale SSIM, a fixed-random-feature
//! perceptual distance, and wall-clock throughput of the inference path.
//! All image math runs in f64 regardless of the model element type.

use std::time::Instant;

use crate::detector::{fit_affine, warp, KeypointDetector};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::losses::{loss_perc, FeatureExtractor};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One evaluation record; the CSV row layout is fixed.
#[derive(Clone, Debug)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub feat_dist: f64,
    pub fps: f64,
    pub pair_count: usize,
    pub config_digest: u64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "config_digest,psnr_db,ssim,feat_dist,fps";

    pub fn csv_row(&self) -> String {
        format!(
            "{:016x},{},{},{},{}",
            self.config_digest, self.psnr_db, self.ssim, self.feat_dist, self.fps
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.psnr_db) || self.psnr_db <= 0.0 {
            return Err(Error::Contract(format!("psnr {} outside (0,100]", self.psnr_db)));
        }
        if !(-1.0..=1.0).contains(&self.ssim) {
            return Err(Error::Contract(format!("ssim {} outside [-1,1]", self.ssim)));
        }
        if self.fps <= 0.0 {
            return Err(Error::Contract(format!("fps {} must be positive", self.fps)));
        }
        Ok(())
    }
}

pub const PSNR_CAP_DB: f64 = 100.0;

/// 10 log10(max^2 / MSE) over all elements, capped at 100 dB.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, max_val: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim("psnr", a.shape(), b.shape()));
    }
    let av = a.data();
    let bv = b.data();
    let mut se = 0.0f64;
    for (x, y) in av.iter().zip(bv.iter()) {
        let d = x.to_f64() - y.to_f64();
        se += d * d;
    }
    let mse = se / av.len() as f64;
    if mse < 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (max_val * max_val / mse).log10()).min(PSNR_CAP_DB))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

fn to_gray<T: Scalar>(img: &Tensor<T>) -> Result<(Vec<f64>, usize, usize)> {
    if img.shape().len() != 3 {
        return Err(Error::shape("ssim", img.shape(), "expected [C,H,W]"));
    }
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let d = img.data();
    let mut gray = vec![0.0f64; h * w];
    for ci in 0..c {
        for p in 0..h * w {
            gray[p] += d[ci * h * w + p].to_f64();
        }
    }
    for v in &mut gray {
        *v /= c as f64;
    }
    Ok((gray, h, w))
}

/// Valid-mode separable filtering with the 1-D window along both axes.
fn filter_valid(x: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> (Vec<f64>, usize, usize) {
    let k = SSIM_WINDOW;
    let ow = w - k + 1;
    // rows
    let mut tmp = vec![0.0f64; h * ow];
    for r in 0..h {
        for c in 0..ow {
            let mut s = 0.0;
            for i in 0..k {
                s += win[i] * x[r * w + c + i];
            }
            tmp[r * ow + c] = s;
        }
    }
    // cols
    let oh = h - k + 1;
    let mut out = vec![0.0f64; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            let mut s = 0.0;
            for i in 0..k {
                s += win[i] * tmp[(r + i) * ow + c];
            }
            out[r * ow + c] = s;
        }
    }
    (out, oh, ow)
}

/// Mean local SSIM over valid 11x11 windows of the channel-mean grayscale,
/// Gaussian-weighted statistics, constants for a [0,1] range.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim("ssim", a.shape(), b.shape()));
    }
    let (xa, h, w) = to_gray(a)?;
    let (xb, _, _) = to_gray(b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Config(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let win = gaussian_window();
    let sq_a: Vec<f64> = xa.iter().map(|v| v * v).collect();
    let sq_b: Vec<f64> = xb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = xa.iter().zip(xb.iter()).map(|(x, y)| x * y).collect();

    let (mu_a, oh, ow) = filter_valid(&xa, h, w, &win);
    let (mu_b, _, _) = filter_valid(&xb, h, w, &win);
    let (m_aa, _, _) = filter_valid(&sq_a, h, w, &win);
    let (m_bb, _, _) = filter_valid(&sq_b, h, w, &win);
    let (m_ab, _, _) = filter_valid(&ab, h, w, &win);

    let mut total = 0.0f64;
    for i in 0..oh * ow {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = m_aa[i] - ma * ma;
        let vb = m_bb[i] - mb * mb;
        let cov = m_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
        total += num / den;
    }
    Ok(total / (oh * ow) as f64)
}

/// Perceptual distance metric: same computation as the perceptual loss,
/// reported on detached f64 copies.
pub fn feat_dist<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    fe: &FeatureExtractor<f64>,
) -> Result<f64> {
    Ok(loss_perc(&a.cast::<f64>(), &b.cast::<f64>(), fe)?.item())
}

/// Wall-clock throughput of the full inference path with a per-stage
/// breakdown (all milliseconds per image; single-threaded path).
#[derive(Clone, Debug)]
pub struct FpsReport {
    pub fps: f64,
    pub detect_ms: f64,
    pub warp_ms: f64,
    pub generate_ms: f64,
    pub iters: usize,
}

impl FpsReport {
    pub fn summary(&self) -> String {
        format!(
            "fps {:.2} | detect {:.2} ms | warp {:.2} ms | generate {:.2} ms ({} iters)",
            self.fps, self.detect_ms, self.warp_ms, self.generate_ms, self.iters
        )
    }
}

/// Median-of-3 measurement of detect + generate; the warp stage is timed
/// separately (it is a training-path stage, not part of inference).
pub fn fps_bench<T: Scalar>(
    detector: &KeypointDetector<T>,
    generator: &Generator<T>,
    xh: &Tensor<T>,
    xi: &Tensor<T>,
    warmup: usize,
    iters: usize,
) -> Result<FpsReport> {
    if iters < 10 {
        return Err(Error::Config(format!("fps_bench needs iters >= 10, got {iters}")));
    }
    if warmup < 3 {
        return Err(Error::Config(format!("fps_bench needs warmup >= 3, got {warmup}")));
    }
    for _ in 0..warmup {
        let kps = detector.detect(xh)?;
        let _ = generator.generate(xh, &kps)?;
    }

    let mut runs = Vec::with_capacity(3);
    for _ in 0..3 {
        let mut detect_s = 0.0;
        let mut generate_s = 0.0;
        let t_all = Instant::now();
        for _ in 0..iters {
            let t = Instant::now();
            let kps = detector.detect(xh)?;
            detect_s += t.elapsed().as_secs_f64();
            let t = Instant::now();
            let _ = generator.generate(xh, &kps)?;
            generate_s += t.elapsed().as_secs_f64();
        }
        let wall = t_all.elapsed().as_secs_f64();
        runs.push((iters as f64 / wall, detect_s, generate_s));
    }
    runs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let (fps, detect_s, generate_s) = runs[1];

    // Warp stage timing: detect both sides once, then fit + warp repeatedly.
    let kh = detector.detect(xh)?;
    let ki = detector.detect(xi)?;
    let t = Instant::now();
    for _ in 0..iters {
        let a = fit_affine(&kh, &ki, detector.cfg.ridge)?;
        let _ = warp(xh, &a)?;
    }
    let warp_s = t.elapsed().as_secs_f64();

    Ok(FpsReport {
        fps,
        detect_ms: detect_s / iters as f64 * 1e3,
        warp_ms: warp_s / iters as f64 * 1e3,
        generate_ms: generate_s / iters as f64 * 1e3,
        iters,
    })
}
