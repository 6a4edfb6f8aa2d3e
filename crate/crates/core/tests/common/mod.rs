#![allow(dead_code)] // shared across test binaries; not every binary uses every helper

//! Shared fixtures and independent reference implementations for the
//! integration suites. The reference warp and reference SSIM here are
//! deliberately written from scratch (scalar, per pixel) so they share no
//! code with the library paths they validate.

use rectangling::rng::SplitMix64;
use rectangling::{ImageBuffer, MeshGrid};

/// Procedural test photograph: layered cosine fields plus soft-edged
/// rectangles and disks, so appearance and structure metrics have real
/// content to work with.
pub fn textured_image(w: usize, h: usize, seed: u64) -> ImageBuffer {
    let mut rng = SplitMix64::new(seed);
    let mut data = vec![0.0; w * h * 3];
    for c in 0..3 {
        let waves: Vec<(f64, f64, f64, f64)> = (0..8)
            .map(|k| {
                let wavelength = rng.range(10.0, 140.0);
                let angle = rng.range(0.0, std::f64::consts::TAU);
                (
                    std::f64::consts::TAU * angle.cos() / wavelength,
                    std::f64::consts::TAU * angle.sin() / wavelength,
                    rng.range(0.0, std::f64::consts::TAU),
                    1.0 / (k as f64 + 1.5),
                )
            })
            .collect();
        for y in 0..h {
            for x in 0..w {
                let mut v = 0.0;
                for &(fx, fy, ph, amp) in &waves {
                    v += amp * (fx * x as f64 + fy * y as f64 + ph).cos();
                }
                data[(y * w + x) * 3 + c] = 0.5 + 0.24 * v;
            }
        }
    }
    // Soft-edged shapes give the image distinct structures.
    for _ in 0..6 {
        let cx = rng.range(0.1, 0.9) * w as f64;
        let cy = rng.range(0.1, 0.9) * h as f64;
        let radius = rng.range(0.04, 0.18) * w as f64;
        let color = [rng.next_f64(), rng.next_f64(), rng.next_f64()];
        let disk = rng.next_f64() < 0.5;
        for y in 0..h {
            for x in 0..w {
                let dx = (x as f64 - cx).abs();
                let dy = (y as f64 - cy).abs();
                let dist = if disk {
                    (dx * dx + dy * dy).sqrt() - radius
                } else {
                    dx.max(dy) - radius
                };
                // 1.5 px feathered edge
                let alpha = (0.5 - dist / 1.5).clamp(0.0, 1.0) * 0.85;
                if alpha > 0.0 {
                    let idx = (y * w + x) * 3;
                    for (slot, tint) in data[idx..idx + 3].iter_mut().zip(&color) {
                        *slot = *slot * (1.0 - alpha) + tint * alpha;
                    }
                }
            }
        }
    }
    for v in &mut data {
        *v = v.clamp(0.02, 0.98);
    }
    ImageBuffer::new(w, h, 3, data).unwrap()
}

/// Independent scalar backward warp: per output pixel, locate the rigid cell
/// by plain division, blend the four source-mesh corners, and sample the
/// image bilinearly with border clamp. No precomputed plan, no parallelism.
pub fn reference_warp_to_rigid(
    src: &ImageBuffer,
    src_mesh: &MeshGrid,
    out_w: usize,
    out_h: usize,
) -> Vec<f64> {
    let u = src_mesh.rows() - 1;
    let v = src_mesh.cols() - 1;
    let cell_w = out_w as f64 / v as f64;
    let cell_h = out_h as f64 / u as f64;
    let channels = src.channels();
    let mut out = vec![0.0; out_w * out_h * channels];
    for py in 0..out_h {
        for px in 0..out_w {
            let cx = px as f64 + 0.5;
            let cy = py as f64 + 0.5;
            let mut j = (cx / cell_w) as usize;
            let mut i = (cy / cell_h) as usize;
            if j >= v {
                j = v - 1;
            }
            if i >= u {
                i = u - 1;
            }
            let s = cx / cell_w - j as f64;
            let t = cy / cell_h - i as f64;
            let a = src_mesh.vertex(i, j);
            let b = src_mesh.vertex(i, j + 1);
            let c = src_mesh.vertex(i + 1, j);
            let d = src_mesh.vertex(i + 1, j + 1);
            let qx = (1.0 - s) * (1.0 - t) * a.x
                + s * (1.0 - t) * b.x
                + (1.0 - s) * t * c.x
                + s * t * d.x;
            let qy = (1.0 - s) * (1.0 - t) * a.y
                + s * (1.0 - t) * b.y
                + (1.0 - s) * t * c.y
                + s * t * d.y;
            for ch in 0..channels {
                out[(py * out_w + px) * channels + ch] = sample_clamped(src, qx, qy, ch);
            }
        }
    }
    out
}

fn sample_clamped(src: &ImageBuffer, qx: f64, qy: f64, ch: usize) -> f64 {
    let (w, h) = (src.width() as i64, src.height() as i64);
    let xf = qx - 0.5;
    let yf = qy - 0.5;
    let x0 = xf.floor() as i64;
    let y0 = yf.floor() as i64;
    let fx = xf - x0 as f64;
    let fy = yf - y0 as f64;
    let at = |x: i64, y: i64| {
        src.get(
            x.clamp(0, w - 1) as usize,
            y.clamp(0, h - 1) as usize,
            ch,
        )
    };
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
    let bot = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Independent single-scale SSIM: direct 11x11 window loops on the luma
/// plane, weighted moments computed per window position.
pub fn reference_ssim(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    const WIN: usize = 11;
    let luma = |img: &ImageBuffer, x: usize, y: usize| {
        if img.channels() == 1 {
            img.get(x, y, 0)
        } else {
            0.299 * img.get(x, y, 0) + 0.587 * img.get(x, y, 1) + 0.114 * img.get(x, y, 2)
        }
    };
    let mut weights = [[0.0; WIN]; WIN];
    let sigma = 1.5;
    let mut total = 0.0;
    for (ky, row) in weights.iter_mut().enumerate() {
        for (kx, wslot) in row.iter_mut().enumerate() {
            let dy = ky as f64 - 5.0;
            let dx = kx as f64 - 5.0;
            *wslot = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            total += *wslot;
        }
    }
    for row in &mut weights {
        for wslot in row.iter_mut() {
            *wslot /= total;
        }
    }
    let (c1, c2) = (0.01_f64.powi(2), 0.03_f64.powi(2));
    let (w, h) = (a.width(), a.height());
    let mut sum = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - WIN {
        for x0 in 0..=w - WIN {
            let (mut ma, mut mb, mut maa, mut mbb, mut mab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (ky, row) in weights.iter().enumerate() {
                for (kx, &wgt) in row.iter().enumerate() {
                    let va = luma(a, x0 + kx, y0 + ky);
                    let vb = luma(b, x0 + kx, y0 + ky);
                    ma += wgt * va;
                    mb += wgt * vb;
                    maa += wgt * va * va;
                    mbb += wgt * vb * vb;
                    mab += wgt * va * vb;
                }
            }
            let var_a = maa - ma * ma;
            let var_b = mbb - mb * mb;
            let cov = mab - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
            count += 1;
        }
    }
    sum / count as f64
}
