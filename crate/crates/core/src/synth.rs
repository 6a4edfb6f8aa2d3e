//! Synthetic triplet generation by inverse mesh warping.
//!
//! A rectangular source image is warped from the rigid grid onto a randomly
//! deformed mesh, yielding a stitched image with irregular boundaries, its
//! coverage mask, and the original as the rectangling label. Deformations are
//! drawn from a low-frequency field plus inward boundary insets, rescaled so
//! the void fraction lands in a target band and projected to validity (no
//! hinge activation, positively oriented cells, vertices inside the raster).

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::EnergyConfig;
use crate::energy::intra_grid_loss;
use crate::error::{Error, Result};
use crate::mesh::{apply_motion, build_rigid_mesh, MeshGrid, MeshMotion};
use crate::raster::{ImageBuffer, MaskBuffer};
use crate::rng::SplitMix64;
use crate::warp::{validate_cells, warp_from_rigid};

const MAX_ATTEMPTS: usize = 100;
const VOID_TARGET_LO: f64 = 0.12;
const VOID_TARGET_HI: f64 = 0.28;

/// One evaluation sample: stitched image `I`, mask `M`, label `R`, plus the
/// motion that generated it.
#[derive(Debug, Clone)]
pub struct Triplet {
    pub stitched: ImageBuffer,
    pub mask: MaskBuffer,
    pub label: ImageBuffer,
    pub generator_motion: MeshMotion,
    pub seed: u64,
}

/// Smooth low-frequency field: a 3x3 control grid bilinearly upsampled to the
/// full vertex grid, componentwise in [-1, 1].
fn control_field(rows: usize, cols: usize, rng: &mut SplitMix64) -> (Vec<f64>, Vec<f64>) {
    let mut cx = [0.0; 9];
    let mut cy = [0.0; 9];
    for k in 0..9 {
        cx[k] = rng.range(-1.0, 1.0);
        cy[k] = rng.range(-1.0, 1.0);
    }
    let sample = |ctrl: &[f64; 9], u: f64, v: f64| {
        let gx = (v * 2.0).min(2.0 - 1e-12);
        let gy = (u * 2.0).min(2.0 - 1e-12);
        let (j, i) = (gx.floor() as usize, gy.floor() as usize);
        let (fx, fy) = (gx - j as f64, gy - i as f64);
        let tl = ctrl[i * 3 + j];
        let tr = ctrl[i * 3 + j + 1];
        let bl = ctrl[(i + 1) * 3 + j];
        let br = ctrl[(i + 1) * 3 + j + 1];
        let top = tl + (tr - tl) * fx;
        let bot = bl + (br - bl) * fx;
        top + (bot - top) * fy
    };
    let mut dx = vec![0.0; rows * cols];
    let mut dy = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let u = i as f64 / (rows - 1) as f64;
            let v = j as f64 / (cols - 1) as f64;
            dx[i * cols + j] = sample(&cx, u, v);
            dy[i * cols + j] = sample(&cy, u, v);
        }
    }
    (dx, dy)
}

/// Per-side inset profiles in [0.25, 1], smoothed once with a 1-2-1 pass so
/// the synthetic boundary is irregular but does not fold.
fn inset_profile(len: usize, rng: &mut SplitMix64) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.range(0.25, 1.0)).collect();
    (0..len)
        .map(|k| {
            let prev = raw[k.saturating_sub(1)];
            let next = raw[(k + 1).min(len - 1)];
            0.25 * prev + 0.5 * raw[k] + 0.25 * next
        })
        .collect()
}

struct DeformationDraw {
    field_x: Vec<f64>,
    field_y: Vec<f64>,
    taper_x: Vec<f64>,
    taper_y: Vec<f64>,
}

impl DeformationDraw {
    fn motion(&self, rows: usize, cols: usize, lambda: f64) -> MeshMotion {
        let dx = self
            .field_x
            .iter()
            .zip(&self.taper_x)
            .map(|(f, t)| f + lambda * t)
            .collect();
        let dy = self
            .field_y
            .iter()
            .zip(&self.taper_y)
            .map(|(f, t)| f + lambda * t)
            .collect();
        MeshMotion::from_components(rows, cols, dx, dy).expect("finite draw")
    }
}

/// Footprint area fraction missing from the raster, via per-cell shoelace
/// areas (exact for positively oriented, non-overlapping cells).
fn area_void_fraction(mesh: &MeshGrid, width: f64, height: f64) -> f64 {
    let mut area = 0.0;
    for i in 0..mesh.rows() - 1 {
        for j in 0..mesh.cols() - 1 {
            let a = mesh.vertex(i, j);
            let b = mesh.vertex(i, j + 1);
            let c = mesh.vertex(i + 1, j + 1);
            let d = mesh.vertex(i + 1, j);
            let shoelace = a.x * b.y - b.x * a.y + b.x * c.y - c.x * b.y + c.x * d.y
                - d.x * c.y
                + d.x * a.y
                - a.x * d.y;
            area += 0.5 * shoelace.abs();
        }
    }
    1.0 - area / (width * height)
}

fn deformation_valid(rigid: &MeshGrid, motion: &MeshMotion, width: f64, height: f64) -> bool {
    let mesh = match apply_motion(rigid, motion) {
        Ok(mesh) => mesh,
        Err(_) => return false,
    };
    for i in 0..mesh.rows() {
        for j in 0..mesh.cols() {
            let v = mesh.vertex(i, j);
            if v.x < 0.0 || v.y < 0.0 || v.x > width || v.y > height {
                return false;
            }
        }
    }
    if validate_cells(&mesh).is_err() {
        return false;
    }
    let cfg = EnergyConfig {
        mesh_u: mesh.rows() - 1,
        mesh_v: mesh.cols() - 1,
        image_w: width.round() as usize,
        image_h: height.round() as usize,
        ..EnergyConfig::default()
    };
    intra_grid_loss(&[&mesh], &cfg) == 0.0
}

/// Draws a smooth random deformation of `rigid` whose footprint leaves a
/// void fraction in [12%, 32%], deterministic in `seed`.
pub fn random_deformation(rigid: &MeshGrid, magnitude: f64, seed: u64) -> Result<MeshMotion> {
    if !magnitude.is_finite() || magnitude < 0.0 {
        return Err(Error::InvalidConfig(format!("magnitude {magnitude} must be non-negative")));
    }
    let (rows, cols) = (rigid.rows(), rigid.cols());
    if magnitude == 0.0 {
        return Ok(MeshMotion::zeros(rows, cols));
    }
    let span = rigid.vertex(rows - 1, cols - 1);
    let (width, height) = (span.x, span.y);
    let (u, v) = ((rows - 1) as f64, (cols - 1) as f64);

    let mut rng = SplitMix64::new(seed);
    let target_void = rng.range(VOID_TARGET_LO, VOID_TARGET_HI);

    for attempt in 0..MAX_ATTEMPTS {
        let shrink = 0.85_f64.powi(attempt as i32);
        let (fx, fy) = control_field(rows, cols, &mut rng);
        // Interior wobble is attenuated near the boundary so the inset taper
        // dominates there.
        let left = inset_profile(rows, &mut rng);
        let right = inset_profile(rows, &mut rng);
        let top = inset_profile(cols, &mut rng);
        let bottom = inset_profile(cols, &mut rng);

        let mut draw = DeformationDraw {
            field_x: vec![0.0; rows * cols],
            field_y: vec![0.0; rows * cols],
            taper_x: vec![0.0; rows * cols],
            taper_y: vec![0.0; rows * cols],
        };
        for i in 0..rows {
            for j in 0..cols {
                let idx = i * cols + j;
                let fu = i as f64 / u;
                let fv = j as f64 / v;
                let border = if i == 0 || j == 0 || i == rows - 1 || j == cols - 1 {
                    0.25
                } else {
                    1.0
                };
                draw.field_x[idx] = shrink * border * magnitude * 0.5 * fx[idx];
                draw.field_y[idx] = shrink * border * magnitude * 0.5 * fy[idx];
                draw.taper_x[idx] = magnitude * (left[i] * (1.0 - fv) - right[i] * fv);
                draw.taper_y[idx] = magnitude * (top[j] * (1.0 - fu) - bottom[j] * fu);
            }
        }

        // Scale the inset until the footprint void hits the target.
        let mut lambda_hi = 1.0;
        let mut doubled = 0;
        while area_void_fraction(&apply_motion(rigid, &draw.motion(rows, cols, lambda_hi))?, width, height)
            < target_void
        {
            lambda_hi *= 2.0;
            doubled += 1;
            if doubled > 16 {
                break;
            }
        }
        if doubled > 16 {
            continue;
        }
        let mut lo = 0.0;
        let mut hi = lambda_hi;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let voidf =
                area_void_fraction(&apply_motion(rigid, &draw.motion(rows, cols, mid))?, width, height);
            if voidf < target_void {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let motion = draw.motion(rows, cols, 0.5 * (lo + hi));
        if deformation_valid(rigid, &motion, width, height) {
            return Ok(motion);
        }
    }
    Err(Error::ProjectionFailed { seed, attempts: MAX_ATTEMPTS })
}

/// Applies the inverse mesh deformation to a rectangular image, producing a
/// stitched image, its coverage mask, and the label.
pub fn synthesize_triplet(
    rect: &ImageBuffer,
    motion: &MeshMotion,
    cfg: &EnergyConfig,
    seed: u64,
) -> Result<Triplet> {
    cfg.validate()?;
    if rect.width() != cfg.image_w || rect.height() != cfg.image_h {
        return Err(Error::InvalidDimensions(format!(
            "source {}x{} does not match the {}x{} raster",
            rect.width(),
            rect.height(),
            cfg.image_w,
            cfg.image_h
        )));
    }
    let rigid = build_rigid_mesh(cfg.image_w as f64, cfg.image_h as f64, cfg.mesh_u, cfg.mesh_v)?;
    let mesh = apply_motion(&rigid, motion)?;
    let (stitched, mask) =
        warp_from_rigid(rect, &rigid, &mesh, cfg.image_w, cfg.image_h, 0.0)?;
    Ok(Triplet {
        stitched,
        mask,
        label: rect.clone(),
        generator_motion: motion.clone(),
        seed,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleEntry {
    pub index: usize,
    pub seed: u64,
    pub source: String,
    pub void_fraction: f64,
    pub stitched: String,
    pub mask: String,
    pub label: String,
    pub mesh: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub width: usize,
    pub height: usize,
    pub mesh_u: usize,
    pub mesh_v: usize,
    pub seed: u64,
    pub magnitude: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    pub samples: Vec<SampleEntry>,
}

/// Generates `count` triplets from the rectangular PNGs in `src_dir` and
/// writes them (plus a manifest) under `out_dir`, deterministically in
/// `seed`.
#[allow(clippy::too_many_arguments)]
pub fn build_dataset(
    src_dir: &Path,
    out_dir: &Path,
    count: usize,
    cfg: &EnergyConfig,
    seed: u64,
    magnitude: f64,
    split: Option<&str>,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    let sources = load_sources(src_dir, cfg)?;
    let target_dir = match split {
        Some(name) => out_dir.join(name),
        None => out_dir.to_path_buf(),
    };
    std::fs::create_dir_all(&target_dir).map_err(|source| Error::Io {
        path: target_dir.clone(),
        source,
    })?;

    let rigid = build_rigid_mesh(cfg.image_w as f64, cfg.image_h as f64, cfg.mesh_u, cfg.mesh_v)?;
    let entries: Vec<Result<SampleEntry>> = (0..count)
        .into_par_iter()
        .map(|index| {
            let sample_seed = SplitMix64::derive(seed, index as u64);
            let (source_name, source_image) = &sources[index % sources.len()];
            let motion = random_deformation(&rigid, magnitude, sample_seed)?;
            let triplet = synthesize_triplet(source_image, &motion, cfg, sample_seed)?;
            let names = [
                format!("input_{index:05}.png"),
                format!("mask_{index:05}.png"),
                format!("gt_{index:05}.png"),
                format!("mesh_{index:05}.json"),
            ];
            triplet.stitched.save_png(&target_dir.join(&names[0]))?;
            triplet.mask.save_png(&target_dir.join(&names[1]))?;
            triplet.label.save_png(&target_dir.join(&names[2]))?;
            let mesh = apply_motion(&rigid, &motion)?;
            let mesh_path = target_dir.join(&names[3]);
            std::fs::write(&mesh_path, mesh.to_json()).map_err(|source| Error::Io {
                path: mesh_path.clone(),
                source,
            })?;
            Ok(SampleEntry {
                index,
                seed: sample_seed,
                source: source_name.clone(),
                void_fraction: triplet.mask.void_fraction(),
                stitched: names[0].clone(),
                mask: names[1].clone(),
                label: names[2].clone(),
                mesh: names[3].clone(),
            })
        })
        .collect();

    let mut samples = Vec::with_capacity(count);
    for entry in entries {
        samples.push(entry?);
    }
    let manifest = DatasetManifest {
        width: cfg.image_w,
        height: cfg.image_h,
        mesh_u: cfg.mesh_u,
        mesh_v: cfg.mesh_v,
        seed,
        magnitude,
        split: split.map(str::to_owned),
        samples,
    };
    let manifest_path = target_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|source| Error::Json {
        path: manifest_path.clone(),
        source,
    })?;
    std::fs::write(&manifest_path, text).map_err(|source| Error::Io {
        path: manifest_path.clone(),
        source,
    })?;
    Ok(manifest)
}

fn load_sources(src_dir: &Path, cfg: &EnergyConfig) -> Result<Vec<(String, ImageBuffer)>> {
    let read_dir = std::fs::read_dir(src_dir).map_err(|source| Error::Io {
        path: src_dir.to_path_buf(),
        source,
    })?;
    let mut names: Vec<String> = read_dir
        .filter_map(|entry| entry.ok())
        .filter_map(|entry| entry.file_name().into_string().ok())
        .filter(|name| name.to_ascii_lowercase().ends_with(".png"))
        .collect();
    names.sort();

    let mut sources = Vec::new();
    for name in names {
        let path = src_dir.join(&name);
        let image = match ImageBuffer::load_png(&path) {
            Ok(image) => image,
            Err(err) => {
                eprintln!("warning: skipping unreadable source {}: {err}", path.display());
                continue;
            }
        };
        if image.width() < cfg.image_w || image.height() < cfg.image_h {
            eprintln!(
                "warning: skipping undersized source {} ({}x{} < {}x{})",
                path.display(),
                image.width(),
                image.height(),
                cfg.image_w,
                cfg.image_h
            );
            continue;
        }
        let image = if image.width() != cfg.image_w || image.height() != cfg.image_h {
            image.resize_bilinear(cfg.image_w, cfg.image_h)?
        } else {
            image
        };
        sources.push((name, image));
    }
    if sources.is_empty() {
        return Err(Error::NoUsableSources(src_dir.to_path_buf()));
    }
    Ok(sources)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::smooth_test_image;

    #[test]
    fn zero_magnitude_is_zero_motion() {
        let rigid = build_rigid_mesh(512.0, 384.0, 8, 6).unwrap();
        let motion = random_deformation(&rigid, 0.0, 1).unwrap();
        assert_eq!(motion, MeshMotion::zeros(9, 7));
    }

    #[test]
    fn deformations_are_valid_and_deterministic() {
        let rigid = build_rigid_mesh(512.0, 384.0, 8, 6).unwrap();
        let cfg = EnergyConfig::default();
        for seed in [7u64, 42, 1001] {
            let motion = random_deformation(&rigid, 24.0, seed).unwrap();
            let again = random_deformation(&rigid, 24.0, seed).unwrap();
            assert_eq!(motion, again);
            let mesh = apply_motion(&rigid, &motion).unwrap();
            assert_eq!(intra_grid_loss(&[&mesh], &cfg), 0.0);
            assert!(validate_cells(&mesh).is_ok());
            let voidf = area_void_fraction(&mesh, 512.0, 384.0);
            assert!((0.10..=0.40).contains(&voidf), "void {voidf}");
        }
    }

    #[test]
    fn triplet_zero_motion_is_identity() {
        let cfg = EnergyConfig { image_w: 96, image_h: 72, ..EnergyConfig::default() };
        let rect = smooth_test_image(96, 72, 3, 11);
        let motion = MeshMotion::zeros(9, 7);
        let triplet = synthesize_triplet(&rect, &motion, &cfg, 0).unwrap();
        for (a, b) in triplet.stitched.data().iter().zip(rect.data()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(triplet.mask.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn triplet_void_fraction_in_band() {
        let cfg = EnergyConfig::default();
        let rigid = build_rigid_mesh(512.0, 384.0, 8, 6).unwrap();
        let rect = smooth_test_image(512, 384, 3, 3);
        for seed in [5u64, 77] {
            let motion = random_deformation(&rigid, 24.0, seed).unwrap();
            let triplet = synthesize_triplet(&rect, &motion, &cfg, seed).unwrap();
            let voidf = triplet.mask.void_fraction();
            assert!((0.10..=0.40).contains(&voidf), "void {voidf}");
        }
    }

    #[test]
    fn dataset_build_is_deterministic() {
        let base = std::env::temp_dir().join(format!("rectangling-synth-{}", std::process::id()));
        let src = base.join("src");
        std::fs::create_dir_all(&src).unwrap();
        let cfg = EnergyConfig { image_w: 128, image_h: 96, ..EnergyConfig::default() };
        for s in 0..2u64 {
            smooth_test_image(128, 96, 3, s)
                .save_png(&src.join(format!("src_{s}.png")))
                .unwrap();
        }
        let out_a = base.join("a");
        let out_b = base.join("b");
        let ma = build_dataset(&src, &out_a, 4, &cfg, 9, 12.0, None).unwrap();
        let mb = build_dataset(&src, &out_b, 4, &cfg, 9, 12.0, None).unwrap();
        assert_eq!(ma.samples.len(), 4);
        assert_eq!(mb.samples.len(), 4);
        let ta = std::fs::read(out_a.join("manifest.json")).unwrap();
        let tb = std::fs::read(out_b.join("manifest.json")).unwrap();
        assert_eq!(ta, tb);
        for name in ["input_00002.png", "mask_00002.png", "gt_00002.png", "mesh_00002.json"] {
            let fa = std::fs::read(out_a.join(name)).unwrap();
            let fb = std::fs::read(out_b.join(name)).unwrap();
            assert_eq!(fa, fb, "{name}");
        }
        // count 0: manifest only
        let out_c = base.join("c");
        let mc = build_dataset(&src, &out_c, 0, &cfg, 9, 12.0, None).unwrap();
        assert!(mc.samples.is_empty());
        assert_eq!(std::fs::read_dir(&out_c).unwrap().count(), 1);
        std::fs::remove_dir_all(&base).unwrap();
    }
}
