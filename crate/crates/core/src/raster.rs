//! Raster buffers: images and validity masks in `[0,1]` double precision.
//!
//! Images are row-major interleaved with 1 (gray) or 3 (RGB) channels.
//! Masks are single-channel; loaded masks are binarized to {0,1}, while
//! warped masks may hold fractional coverage values.

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};

const RANGE_SLACK: f64 = 1e-9;

/// BT.601 luma weights, also used by the SSIM grayscale conversion.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    /// Builds an image from raw interleaved samples, validating shape,
    /// finiteness and the `[0,1]` range.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions(format!(
                "image {width}x{height} must be non-empty"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidDimensions(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidDimensions(format!(
                "image data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        for &v in &data {
            if !v.is_finite() {
                return Err(Error::NonFinite { context: "image data" });
            }
            if !(-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&v) {
                return Err(Error::OutOfRange { context: "image data" });
            }
        }
        Ok(Self { width, height, channels, data })
    }

    /// Constant-valued image.
    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Internal constructor for samples known to be convex combinations of
    /// in-range values; clamps floating-point spill instead of re-validating.
    pub(crate) fn from_convex_samples(
        width: usize,
        height: usize,
        channels: usize,
        mut data: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Self { width, height, channels, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Loads an 8-bit gray or RGB PNG, mapping intensities linearly to [0,1].
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let (buf, channels) = match img {
            DynamicImage::ImageLuma8(g) => {
                let data: Vec<f64> = g.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
                ((g.width() as usize, g.height() as usize, data), 1)
            }
            other => {
                let rgb = other.to_rgb8();
                let data: Vec<f64> =
                    rgb.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
                ((rgb.width() as usize, rgb.height() as usize, data), 3)
            }
        };
        let ((width, height, data), channels) = (buf, channels);
        Self::new(width, height, channels, data)
    }

    /// Stores as an 8-bit PNG (gray for 1 channel, RGB for 3).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let bytes: Vec<u8> = self.data.iter().copied().map(to_u8).collect();
        let res = if self.channels == 1 {
            GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
                .expect("buffer sized by construction")
                .save(path)
        } else {
            RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
                .expect("buffer sized by construction")
                .save(path)
        };
        res.map_err(|source| Error::Image { path: path.to_path_buf(), source })
    }

    /// Grayscale plane via the BT.601 luma weights (identity for 1 channel).
    pub fn to_gray(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.data.clone();
        }
        self.data
            .chunks_exact(3)
            .map(|px| px[0] * LUMA_WEIGHTS[0] + px[1] * LUMA_WEIGHTS[1] + px[2] * LUMA_WEIGHTS[2])
            .collect()
    }

    /// Bilinear resize; used by the optional downsample-solve-upsample path.
    pub fn resize_bilinear(&self, new_w: usize, new_h: usize) -> Result<Self> {
        if new_w == 0 || new_h == 0 {
            return Err(Error::InvalidDimensions("resize target must be non-empty".into()));
        }
        let sx = self.width as f64 / new_w as f64;
        let sy = self.height as f64 / new_h as f64;
        let mut data = vec![0.0; new_w * new_h * self.channels];
        for oy in 0..new_h {
            let src_y = (oy as f64 + 0.5) * sy - 0.5;
            let y0 = src_y.floor();
            let fy = src_y - y0;
            let y0i = (y0 as i64).clamp(0, self.height as i64 - 1) as usize;
            let y1i = (y0 as i64 + 1).clamp(0, self.height as i64 - 1) as usize;
            for ox in 0..new_w {
                let src_x = (ox as f64 + 0.5) * sx - 0.5;
                let x0 = src_x.floor();
                let fx = src_x - x0;
                let x0i = (x0 as i64).clamp(0, self.width as i64 - 1) as usize;
                let x1i = (x0 as i64 + 1).clamp(0, self.width as i64 - 1) as usize;
                for c in 0..self.channels {
                    let v00 = self.get(x0i, y0i, c);
                    let v10 = self.get(x1i, y0i, c);
                    let v01 = self.get(x0i, y1i, c);
                    let v11 = self.get(x1i, y1i, c);
                    let top = v00 + (v10 - v00) * fx;
                    let bot = v01 + (v11 - v01) * fx;
                    data[(oy * new_w + ox) * self.channels + c] = top + (bot - top) * fy;
                }
            }
        }
        Ok(Self::from_convex_samples(new_w, new_h, self.channels, data))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskBuffer {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl MaskBuffer {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions(format!(
                "mask {width}x{height} must be non-empty"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidDimensions(format!(
                "mask data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        for &v in &data {
            if !v.is_finite() {
                return Err(Error::NonFinite { context: "mask data" });
            }
            if !(-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&v) {
                return Err(Error::OutOfRange { context: "mask data" });
            }
        }
        Ok(Self { width, height, data })
    }

    pub fn ones(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![1.0; width * height])
    }

    pub(crate) fn from_convex_samples(width: usize, height: usize, mut data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Loads a PNG and binarizes at 0.5: 1 marks valid content, 0 marks void.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image { path: path.to_path_buf(), source })?
            .to_luma8();
        let data: Vec<f64> = img
            .as_raw()
            .iter()
            .map(|&v| if v >= 128 { 1.0 } else { 0.0 })
            .collect();
        Self::new(img.width() as usize, img.height() as usize, data)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer sized by construction")
            .save(path)
            .map_err(|source| Error::Image { path: path.to_path_buf(), source })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Fraction of the raster not covered by valid content.
    pub fn void_fraction(&self) -> f64 {
        1.0 - self.mean()
    }

    /// Binary erosion with a `(2r+1)`-square structuring element; values are
    /// thresholded at 0.5 and out-of-raster neighborhoods count as void.
    pub fn erode(&self, radius: usize) -> MaskBuffer {
        let r = radius as i64;
        let mut out = vec![0.0; self.data.len()];
        for y in 0..self.height as i64 {
            'px: for x in 0..self.width as i64 {
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0
                            || ny < 0
                            || nx >= self.width as i64
                            || ny >= self.height as i64
                            || self.data[(ny as usize) * self.width + nx as usize] < 0.5
                        {
                            continue 'px;
                        }
                    }
                }
                out[(y as usize) * self.width + x as usize] = 1.0;
            }
        }
        MaskBuffer { width: self.width, height: self.height, data: out }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_out_of_range() {
        assert!(matches!(
            ImageBuffer::new(2, 2, 1, vec![0.0, f64::NAN, 0.5, 1.0]),
            Err(Error::NonFinite { .. })
        ));
        assert!(matches!(
            ImageBuffer::new(2, 2, 1, vec![0.0, 1.5, 0.5, 1.0]),
            Err(Error::OutOfRange { .. })
        ));
        assert!(ImageBuffer::new(2, 2, 2, vec![0.0; 8]).is_err());
    }

    #[test]
    fn png_round_trip_is_exact_for_8bit_data() {
        let dir = std::env::temp_dir().join(format!("rectangling-raster-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let data: Vec<f64> = (0..12 * 9 * 3).map(|i| (i % 256) as f64 / 255.0).collect();
        let img = ImageBuffer::new(12, 9, 3, data).unwrap();
        let path = dir.join("rt.png");
        img.save_png(&path).unwrap();
        let back = ImageBuffer::load_png(&path).unwrap();
        assert_eq!(img, back);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn mask_loads_binarized() {
        let dir = std::env::temp_dir().join(format!("rectangling-mask-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let img = ImageBuffer::new(4, 1, 1, vec![0.1, 0.4, 0.6, 1.0]).unwrap();
        let path = dir.join("m.png");
        img.save_png(&path).unwrap();
        let mask = MaskBuffer::load_png(&path).unwrap();
        assert_eq!(mask.data(), &[0.0, 0.0, 1.0, 1.0]);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn erosion_shrinks_a_block() {
        let mut data = vec![0.0; 7 * 7];
        for y in 1..6 {
            for x in 1..6 {
                data[y * 7 + x] = 1.0;
            }
        }
        let mask = MaskBuffer::new(7, 7, data).unwrap();
        let eroded = mask.erode(1);
        let kept: f64 = eroded.data().iter().sum();
        assert_eq!(kept, 9.0); // 5x5 block erodes to 3x3
        assert_eq!(eroded.get(3, 3), 1.0);
        assert_eq!(eroded.get(1, 1), 0.0);
    }
}
