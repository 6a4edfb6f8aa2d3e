//! Pluggable semantic feature extraction for the perception term.
//!
//! The built-in extractor is a fixed three-level pyramid: the grayscale
//! intensity is Gaussian-blurred (sigma 1, 2, 4), downsampled by 1, 2, 4, and
//! each level contributes the blurred intensity plus its x/y central
//! differences. Every stage is linear with an exact adjoint, so perception
//! gradients are exact. Any extractor with a well-defined input gradient can
//! be plugged in through [`FeatureExtractor`].

use rayon::prelude::*;

use crate::raster::{ImageBuffer, LUMA_WEIGHTS};

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePlane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub planes: Vec<FeaturePlane>,
}

impl FeatureStack {
    pub fn total_elements(&self) -> usize {
        self.planes.iter().map(|p| p.data.len()).sum()
    }
}

/// A deterministic map from images to feature stacks with a gradient back to
/// input pixels.
pub trait FeatureExtractor: Send + Sync {
    fn extract(&self, image: &ImageBuffer) -> FeatureStack;

    /// Pulls a feature-stack adjoint back to per-pixel adjoints
    /// (`width*height*channels`, interleaved like the image data).
    fn backprop(&self, image: &ImageBuffer, upstream: &FeatureStack) -> Vec<f64>;
}

/// Features are the raw pixels; the perception term then reduces to a mean
/// squared pixel error.
#[derive(Debug, Clone, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn extract(&self, image: &ImageBuffer) -> FeatureStack {
        FeatureStack {
            planes: vec![FeaturePlane {
                width: image.width() * image.channels(),
                height: image.height(),
                data: image.data().to_vec(),
            }],
        }
    }

    fn backprop(&self, _image: &ImageBuffer, upstream: &FeatureStack) -> Vec<f64> {
        upstream.planes[0].data.clone()
    }
}

/// The built-in proxy for high-level perception: a recursive blur-decimate
/// cascade whose levels carry effective Gaussian scales of 1, 2 and 4
/// full-resolution pixels.
#[derive(Debug, Clone)]
pub struct PyramidExtractor {
    /// sigma = 1 applied at full resolution.
    base_kernel: Vec<f64>,
    /// sigma applied after each decimation; on a stride-2^l grid this brings
    /// the cumulative full-resolution sigma from 2^l to 2^(l+1).
    step_kernel: Vec<f64>,
}

impl Default for PyramidExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl PyramidExtractor {
    pub fn new() -> Self {
        // sqrt(3)/2 on the decimated grid: 1^2 + (2 * sqrt(3)/2)^2 = 2^2.
        Self {
            base_kernel: gaussian_kernel(1.0),
            step_kernel: gaussian_kernel(3.0_f64.sqrt() / 2.0),
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    for w in &mut kernel {
        *w /= sum;
    }
    kernel
}

/// Separable zero-padded blur. The kernel is symmetric and the padding is
/// zero, so the operator is self-adjoint.
fn blur(plane: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut mid = vec![0.0; w * h];
    mid.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let src = &plane[y * w..(y + 1) * w];
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &wk) in kernel.iter().enumerate() {
                let xi = x as i64 + k as i64 - r;
                if xi >= 0 && xi < w as i64 {
                    acc += wk * src[xi as usize];
                }
            }
            *out = acc;
        }
    });
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (k, &wk) in kernel.iter().enumerate() {
            let yi = y as i64 + k as i64 - r;
            if yi >= 0 && yi < h as i64 {
                let src = &mid[yi as usize * w..(yi as usize + 1) * w];
                for (out, &v) in row.iter_mut().zip(src) {
                    *out += wk * v;
                }
            }
        }
    });
    out
}

fn subsample(plane: &[f64], w: usize, h: usize, stride: usize) -> (Vec<f64>, usize, usize) {
    let ow = w.div_ceil(stride);
    let oh = h.div_ceil(stride);
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = plane[(y * stride) * w + x * stride];
        }
    }
    (out, ow, oh)
}

fn subsample_adjoint(up: &[f64], ow: usize, oh: usize, stride: usize, w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..oh {
        for x in 0..ow {
            out[(y * stride) * w + x * stride] = up[y * ow + x];
        }
    }
    out
}

/// Central difference with zero padding; `sign` +1 gives the forward operator
/// and -1 its adjoint (the kernel is antisymmetric).
fn central_dx(plane: &[f64], w: usize, h: usize, sign: f64) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        let orow = &mut out[y * w..(y + 1) * w];
        for x in 0..w {
            let right = if x + 1 < w { row[x + 1] } else { 0.0 };
            let left = if x > 0 { row[x - 1] } else { 0.0 };
            orow[x] = sign * 0.5 * (right - left);
        }
    }
    out
}

fn central_dy(plane: &[f64], w: usize, h: usize, sign: f64) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let below = if y + 1 < h { plane[(y + 1) * w + x] } else { 0.0 };
            let above = if y > 0 { plane[(y - 1) * w + x] } else { 0.0 };
            out[y * w + x] = sign * 0.5 * (below - above);
        }
    }
    out
}

const PYRAMID_LEVELS: usize = 3;

impl FeatureExtractor for PyramidExtractor {
    fn extract(&self, image: &ImageBuffer) -> FeatureStack {
        let (w, h) = (image.width(), image.height());
        let gray = image.to_gray();
        let mut planes = Vec::with_capacity(PYRAMID_LEVELS * 3);
        let mut current = blur(&gray, w, h, &self.base_kernel);
        let (mut cw, mut ch) = (w, h);
        for level in 0..PYRAMID_LEVELS {
            planes.push(FeaturePlane {
                width: cw,
                height: ch,
                data: central_dx(&current, cw, ch, 1.0),
            });
            planes.push(FeaturePlane {
                width: cw,
                height: ch,
                data: central_dy(&current, cw, ch, 1.0),
            });
            planes.push(FeaturePlane { width: cw, height: ch, data: current.clone() });
            if level + 1 < PYRAMID_LEVELS {
                let (sub, sw, sh) = subsample(&current, cw, ch, 2);
                current = blur(&sub, sw, sh, &self.step_kernel);
                (cw, ch) = (sw, sh);
            }
        }
        FeatureStack { planes }
    }

    fn backprop(&self, image: &ImageBuffer, upstream: &FeatureStack) -> Vec<f64> {
        let (w, h, channels) = (image.width(), image.height(), image.channels());
        assert_eq!(upstream.planes.len(), PYRAMID_LEVELS * 3);
        // Walk the cascade backwards, carrying the adjoint of each level's
        // blurred plane.
        let mut carry: Vec<f64> = Vec::new();
        for level in (0..PYRAMID_LEVELS).rev() {
            let up_dx = &upstream.planes[level * 3];
            let up_dy = &upstream.planes[level * 3 + 1];
            let up_int = &upstream.planes[level * 3 + 2];
            let (cw, ch) = (up_int.width, up_int.height);
            let mut g_level = up_int.data.clone();
            for (g, v) in g_level.iter_mut().zip(central_dx(&up_dx.data, cw, ch, -1.0)) {
                *g += v;
            }
            for (g, v) in g_level.iter_mut().zip(central_dy(&up_dy.data, cw, ch, -1.0)) {
                *g += v;
            }
            if !carry.is_empty() {
                // carry holds the adjoint of blur(subsample(this level)).
                let g_sub = blur(&carry, cw.div_ceil(2), ch.div_ceil(2), &self.step_kernel);
                let scattered =
                    subsample_adjoint(&g_sub, cw.div_ceil(2), ch.div_ceil(2), 2, cw, ch);
                for (g, v) in g_level.iter_mut().zip(scattered) {
                    *g += v;
                }
            }
            carry = g_level;
        }
        let g_gray = blur(&carry, w, h, &self.base_kernel);
        if channels == 1 {
            return g_gray;
        }
        let mut out = vec![0.0; w * h * channels];
        for (p, &g) in g_gray.iter().enumerate() {
            out[p * 3] = g * LUMA_WEIGHTS[0];
            out[p * 3 + 1] = g * LUMA_WEIGHTS[1];
            out[p * 3 + 2] = g * LUMA_WEIGHTS[2];
        }
        out
    }
}
