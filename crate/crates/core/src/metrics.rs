//! Reference-based quality metrics: PSNR and single-scale SSIM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ImageBuffer, MaskBuffer};

/// Reported for identical images (and as a cap for vanishing MSE).
pub const PSNR_CAP: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn check_same_dims(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() || a.channels() != b.channels() {
        return Err(Error::InvalidDimensions(format!(
            "image dimensions {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB with peak 1.0, capped at 99 dB.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_same_dims(a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    Ok(mse_to_psnr(mse))
}

/// PSNR restricted to pixels where `mask >= 0.5` (all channels of each kept
/// pixel contribute).
pub fn psnr_masked(a: &ImageBuffer, b: &ImageBuffer, mask: &MaskBuffer) -> Result<f64> {
    check_same_dims(a, b)?;
    if mask.width() != a.width() || mask.height() != a.height() {
        return Err(Error::InvalidDimensions("mask does not match images".into()));
    }
    let channels = a.channels();
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in 0..a.width() * a.height() {
        if mask.data()[p] >= 0.5 {
            for c in 0..channels {
                let d = a.data()[p * channels + c] - b.data()[p * channels + c];
                sum += d * d;
            }
            count += channels;
        }
    }
    if count == 0 {
        return Err(Error::EmptyRegion);
    }
    Ok(mse_to_psnr(sum / count as f64))
}

fn mse_to_psnr(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (k, slot) in w.iter_mut().enumerate() {
        let d = k as f64 - r;
        *slot = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *slot;
    }
    for slot in &mut w {
        *slot /= sum;
    }
    w
}

/// Separable valid-mode filtering with the SSIM window.
fn filter_valid(plane: &[f64], w: usize, h: usize) -> Vec<f64> {
    let window = gaussian_window();
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut mid = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, &wk) in window.iter().enumerate() {
                acc += wk * plane[y * w + x + k];
            }
            mid[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, &wk) in window.iter().enumerate() {
                acc += wk * mid[(y + k) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Single-scale structural similarity on the grayscale plane: 11x11 Gaussian
/// window (sigma 1.5), stabilizers (0.01)^2 and (0.03)^2, averaged over valid
/// window positions.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_same_dims(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidDimensions(format!(
            "images {w}x{h} are smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let ga = a.to_gray();
    let gb = b.to_gray();
    let aa: Vec<f64> = ga.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = gb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = ga.iter().zip(&gb).map(|(x, y)| x * y).collect();

    let mu_a = filter_valid(&ga, w, h);
    let mu_b = filter_valid(&gb, w, h);
    let e_aa = filter_valid(&aa, w, h);
    let e_bb = filter_valid(&bb, w, h);
    let e_ab = filter_valid(&ab, w, h);

    let mut sum = 0.0;
    for k in 0..mu_a.len() {
        let (ma, mb) = (mu_a[k], mu_b[k]);
        let var_a = e_aa[k] - ma * ma;
        let var_b = e_bb[k] - mb * mb;
        let cov = e_ab[k] - ma * mb;
        let value = ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2));
        sum += value;
    }
    Ok(sum / mu_a.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageScore {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub per_image: Vec<ImageScore>,
}

/// Scores each (prediction, reference) pair and reports arithmetic means.
pub fn evaluate_pairs(pairs: &[(String, &ImageBuffer, &ImageBuffer)]) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let mut per_image = Vec::with_capacity(pairs.len());
    for (name, pred, reference) in pairs {
        per_image.push(ImageScore {
            name: name.clone(),
            psnr: psnr(pred, reference)?,
            ssim: ssim(pred, reference)?,
        });
    }
    let mean_psnr = per_image.iter().map(|s| s.psnr).sum::<f64>() / per_image.len() as f64;
    let mean_ssim = per_image.iter().map(|s| s.ssim).sum::<f64>() / per_image.len() as f64;
    Ok(EvalReport { count: per_image.len(), mean_psnr, mean_ssim, per_image })
}
