//! Command-line surface: rectangle stitched images, synthesize evaluation
//! triplets, score predictions, and run the gradient self-check.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numerical failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rectangling::{
    apply_motion, build_dataset, build_rigid_mesh, evaluate_pairs, psnr, rectangle_image,
    run_gradient_check, solve_primary, solve_residual, ssim, warp_to_rigid, EnergyConfig, Error,
    ImageBuffer, MaskBuffer, PyramidExtractor, SolveResult,
};

const EXIT_USAGE: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

const GRADCHECK_TOLERANCE: f64 = 1e-3;
const DOWNSAMPLE_BUDGET: f64 = 1e6;

#[derive(Parser)]
#[command(
    name = "rectangling",
    about = "Mesh-based rectangling of stitched images with irregular boundaries",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Warp a stitched image with an irregular boundary into a rectangle.
    Rectangle(RectangleArgs),
    /// Synthesize ground-truth triplets from rectangular images.
    Synth(SynthArgs),
    /// Score predictions against references (PSNR / SSIM).
    Eval(EvalArgs),
    /// Compare the analytic energy gradient against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct RectangleArgs {
    /// Stitched input image (PNG).
    #[arg(long)]
    input: PathBuf,
    /// 0-1 validity mask (PNG, binarized at load).
    #[arg(long)]
    mask: PathBuf,
    /// Rectangling label enabling the content term.
    #[arg(long)]
    label: Option<PathBuf>,
    /// Output image path.
    #[arg(long)]
    out: PathBuf,
    /// Write the final mesh as JSON.
    #[arg(long)]
    mesh_out: Option<PathBuf>,
    /// Write a JSON report (energies, iterations, metrics).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Mesh resolution as UxV.
    #[arg(long, default_value = "8x6", value_parser = parse_mesh)]
    mesh: (usize, usize),
    /// Intra-grid threshold fraction.
    #[arg(long, default_value_t = 0.125)]
    alpha: f64,
    /// Appearance weight.
    #[arg(long, default_value_t = 1.0)]
    wa: f64,
    /// Perception weight.
    #[arg(long, default_value_t = 5e-6)]
    wp: f64,
    /// Iteration budget per stage.
    #[arg(long, default_value_t = 300)]
    iters: usize,
    /// Step size in pixels.
    #[arg(long, default_value_t = 0.5)]
    step: f64,
    /// Ignore any label: boundary and mesh terms only.
    #[arg(long)]
    label_free: bool,
    /// Solve the mesh on a <= 1 megapixel raster, then warp at full
    /// resolution (no-op below the threshold).
    #[arg(long)]
    downsample: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory of rectangular source PNGs.
    #[arg(long)]
    src: PathBuf,
    /// Output directory for triplets and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// Number of triplets.
    #[arg(long)]
    count: usize,
    /// Master seed.
    #[arg(long)]
    seed: u64,
    /// Deformation magnitude in pixels.
    #[arg(long, default_value_t = 24.0)]
    magnitude: f64,
    /// Optional split name (writes into a subdirectory).
    #[arg(long)]
    split: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of predicted images.
    #[arg(long)]
    pred: PathBuf,
    /// Directory of reference images (a synth output directory with a
    /// manifest works too).
    #[arg(long)]
    gt: PathBuf,
    /// Where to write the JSON report.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20240901)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
}

fn parse_mesh(text: &str) -> Result<(usize, usize), String> {
    let (u, v) = text
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected UxV, got {text}"))?;
    let u: usize = u.trim().parse().map_err(|_| format!("bad mesh rows in {text}"))?;
    let v: usize = v.trim().parse().map_err(|_| format!("bad mesh cols in {text}"))?;
    if u == 0 || v == 0 {
        return Err("mesh resolution must be at least 1x1".into());
    }
    Ok((u, v))
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io { .. } | Error::Image { .. } | Error::Json { .. } | Error::NoUsableSources(_) => {
            EXIT_IO
        }
        Error::NonFiniteEnergy { .. }
        | Error::NonFinite { .. }
        | Error::DegenerateCell { .. }
        | Error::VertexOutOfBounds { .. }
        | Error::InverseBilinearDiverged { .. }
        | Error::ProjectionFailed { .. } => EXIT_NUMERIC,
        Error::InvalidDimensions(_)
        | Error::ShapeMismatch { .. }
        | Error::OutOfRange { .. }
        | Error::EmptyRegion
        | Error::InvalidConfig(_) => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Rectangle(args) => run_rectangle(args),
        Command::Synth(args) => run_synth(args),
        Command::Eval(args) => run_eval(args),
        Command::Gradcheck(args) => run_gradcheck(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn run_rectangle(args: RectangleArgs) -> Result<ExitCode, Error> {
    let image = ImageBuffer::load_png(&args.input)?;
    let mask = MaskBuffer::load_png(&args.mask)?;
    let label = match (&args.label, args.label_free) {
        (Some(path), false) => Some(ImageBuffer::load_png(path)?),
        _ => None,
    };

    let cfg = EnergyConfig {
        mesh_u: args.mesh.0,
        mesh_v: args.mesh.1,
        omega_a: args.wa,
        omega_p: args.wp,
        alpha: args.alpha,
        image_w: image.width(),
        image_h: image.height(),
        optimizer: rectangling::OptimizerConfig {
            step: args.step,
            max_iters: args.iters,
            tol: 1e-6,
        },
    };
    cfg.validate()?;

    let phi = PyramidExtractor::new();
    let pixels = (image.width() * image.height()) as f64;
    let (output, solve) = if args.downsample && pixels > DOWNSAMPLE_BUDGET {
        rectangle_downsampled(&image, &mask, label.as_ref(), &cfg, &phi)?
    } else {
        rectangle_image(&image, &mask, &cfg, label.as_ref(), &phi)?
    };

    output.save_png(&args.out)?;

    if let Some(path) = &args.mesh_out {
        let rigid = build_rigid_mesh(
            image.width() as f64,
            image.height() as f64,
            cfg.mesh_u,
            cfg.mesh_v,
        )?;
        let mesh = apply_motion(&rigid, &solve.motion_f)?;
        std::fs::write(path, mesh.to_json())
            .map_err(|source| Error::Io { path: path.clone(), source })?;
    }

    if let Some(path) = &args.report {
        let metrics = match &label {
            Some(label) => serde_json::json!({
                "psnr": psnr(&output, label)?,
                "ssim": ssim(&output, label)?,
            }),
            None => serde_json::Value::Null,
        };
        let report = serde_json::json!({
            "energy": {
                "primary": solve.primary_final(),
                "residual": solve.final_energy(),
            },
            "iterations": solve.iterations_used,
            "converged": solve.converged,
            "metrics": metrics,
        });
        let text = serde_json::to_string_pretty(&report)
            .map_err(|source| Error::Json { path: path.clone(), source })?;
        std::fs::write(path, text).map_err(|source| Error::Io { path: path.clone(), source })?;
    }

    println!(
        "rectangled {} -> {} ({} iterations, converged: {})",
        args.input.display(),
        args.out.display(),
        solve.iterations_used,
        solve.converged
    );
    Ok(ExitCode::SUCCESS)
}

/// Solve the mesh on a downsampled raster, lift the motions by the raster
/// ratio, and warp the full-resolution image.
fn rectangle_downsampled(
    image: &ImageBuffer,
    mask: &MaskBuffer,
    label: Option<&ImageBuffer>,
    cfg: &EnergyConfig,
    phi: &PyramidExtractor,
) -> Result<(ImageBuffer, SolveResult), Error> {
    let pixels = (image.width() * image.height()) as f64;
    let scale = (DOWNSAMPLE_BUDGET / pixels).sqrt();
    let small_w = ((image.width() as f64 * scale).round() as usize).max(cfg.mesh_v + 1);
    let small_h = ((image.height() as f64 * scale).round() as usize).max(cfg.mesh_u + 1);
    let small_cfg = EnergyConfig { image_w: small_w, image_h: small_h, ..cfg.clone() };

    let small_image = image.resize_bilinear(small_w, small_h)?;
    let mask_as_image = ImageBuffer::new(mask.width(), mask.height(), 1, mask.data().to_vec())?;
    let small_mask = MaskBuffer::new(
        small_w,
        small_h,
        mask_as_image
            .resize_bilinear(small_w, small_h)?
            .data()
            .iter()
            .map(|&v| if v >= 0.5 { 1.0 } else { 0.0 })
            .collect(),
    )?;
    let small_label = match label {
        Some(l) => Some(l.resize_bilinear(small_w, small_h)?),
        None => None,
    };

    let rigid_small = build_rigid_mesh(small_w as f64, small_h as f64, cfg.mesh_u, cfg.mesh_v)?;
    let primary = solve_primary(
        &small_image,
        &small_mask,
        &rigid_small,
        small_label.as_ref(),
        &small_cfg,
        phi,
    )?;
    let residual = solve_residual(
        &small_image,
        &small_mask,
        &rigid_small,
        &primary.motion,
        small_label.as_ref(),
        &small_cfg,
        phi,
    )?;

    let sx = image.width() as f64 / small_w as f64;
    let sy = image.height() as f64 / small_h as f64;
    let motion_p = primary.motion.scaled(sx, sy);
    let motion_f = residual.motion.scaled(sx, sy);
    let rigid_full = build_rigid_mesh(
        image.width() as f64,
        image.height() as f64,
        cfg.mesh_u,
        cfg.mesh_v,
    )?;
    let mesh_f = apply_motion(&rigid_full, &motion_f)?;
    let output = warp_to_rigid(image, &mesh_f, &rigid_full)?;

    let primary_iterations = primary.iterations_used;
    let mut history = primary.history;
    history.extend_from_slice(&residual.history);
    Ok((
        output,
        SolveResult {
            motion_p,
            motion_f,
            history,
            primary_iterations,
            converged: primary.converged && residual.converged,
            iterations_used: primary_iterations + residual.iterations_used,
        },
    ))
}

fn run_synth(args: SynthArgs) -> Result<ExitCode, Error> {
    let cfg = EnergyConfig::default();
    let manifest = build_dataset(
        &args.src,
        &args.out,
        args.count,
        &cfg,
        args.seed,
        args.magnitude,
        args.split.as_deref(),
    )?;
    println!(
        "synthesized {} triplets into {} (seed {})",
        manifest.samples.len(),
        args.out.display(),
        args.seed
    );
    Ok(ExitCode::SUCCESS)
}

/// Pairs prediction files with references. When the reference directory
/// carries a synth manifest, its label entries define the references and
/// predictions are taken in sorted order. Otherwise files are joined on the
/// trailing index in their stem, falling back to exact-name matching.
fn pair_files(pred_dir: &Path, gt_dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>, Error> {
    let pred = list_pngs(pred_dir)?;
    let manifest_path = gt_dir.join("manifest.json");
    if manifest_path.exists() {
        let text = std::fs::read_to_string(&manifest_path)
            .map_err(|source| Error::Io { path: manifest_path.clone(), source })?;
        let manifest: rectangling::DatasetManifest = serde_json::from_str(&text)
            .map_err(|source| Error::Json { path: manifest_path.clone(), source })?;
        if manifest.samples.len() != pred.len() {
            return Err(Error::InvalidDimensions(format!(
                "{} predictions vs {} manifest samples",
                pred.len(),
                manifest.samples.len()
            )));
        }
        return Ok(manifest
            .samples
            .iter()
            .zip(pred)
            .map(|(sample, p)| {
                let pred_path = pred_dir.join(&p);
                (p, pred_path, gt_dir.join(&sample.label))
            })
            .collect());
    }

    let gt = list_pngs(gt_dir)?;
    let key_of = |name: &str| -> String {
        let stem = name.strip_suffix(".png").unwrap_or(name);
        let digits: String = stem
            .chars()
            .rev()
            .take_while(|c| c.is_ascii_digit())
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        if digits.is_empty() {
            stem.to_string()
        } else {
            digits
        }
    };
    let gt_map: BTreeMap<String, &String> = gt.iter().map(|name| (key_of(name), name)).collect();
    let mut pairs = Vec::new();
    for name in &pred {
        if let Some(reference) = gt_map.get(&key_of(name)) {
            pairs.push((name.clone(), pred_dir.join(name), gt_dir.join(reference.as_str())));
        }
    }
    if pairs.is_empty() {
        return Err(Error::InvalidDimensions(
            "no prediction/reference pairs found".into(),
        ));
    }
    Ok(pairs)
}

fn list_pngs(dir: &Path) -> Result<Vec<String>, Error> {
    let entries =
        std::fs::read_dir(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    let mut names: Vec<String> = entries
        .filter_map(|entry| entry.ok())
        .filter_map(|entry| entry.file_name().into_string().ok())
        .filter(|name| name.to_ascii_lowercase().ends_with(".png"))
        .collect();
    names.sort();
    Ok(names)
}

fn run_eval(args: EvalArgs) -> Result<ExitCode, Error> {
    let pairs = pair_files(&args.pred, &args.gt)?;
    let mut loaded = Vec::with_capacity(pairs.len());
    for (name, pred_path, gt_path) in &pairs {
        loaded.push((
            name.clone(),
            ImageBuffer::load_png(pred_path)?,
            ImageBuffer::load_png(gt_path)?,
        ));
    }
    let borrowed: Vec<(String, &ImageBuffer, &ImageBuffer)> =
        loaded.iter().map(|(name, a, b)| (name.clone(), a, b)).collect();
    let report = evaluate_pairs(&borrowed)?;
    let text = serde_json::to_string_pretty(&report)
        .map_err(|source| Error::Json { path: args.report.clone(), source })?;
    std::fs::write(&args.report, text)
        .map_err(|source| Error::Io { path: args.report.clone(), source })?;
    println!(
        "evaluated {} pairs: mean PSNR {:.4} dB, mean SSIM {:.6}",
        report.count, report.mean_psnr, report.mean_ssim
    );
    Ok(ExitCode::SUCCESS)
}

fn run_gradcheck(args: GradcheckArgs) -> Result<ExitCode, Error> {
    let report = run_gradient_check(args.trials, args.seed)?;
    println!(
        "gradcheck: trials={} checked={} excluded={} max_rel_err={:.3e} mean_rel_err={:.3e}",
        report.trials,
        report.coords_checked,
        report.coords_excluded,
        report.max_rel_err,
        report.mean_rel_err
    );
    if report.max_rel_err <= GRADCHECK_TOLERANCE {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "error: max relative error {:.3e} exceeds tolerance {GRADCHECK_TOLERANCE:e}",
            report.max_rel_err
        );
        Ok(ExitCode::from(EXIT_NUMERIC))
    }
}
