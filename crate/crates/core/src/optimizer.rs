//! Per-image recovery of mesh motions by two-stage energy minimization.
//!
//! The primary stage optimizes a single motion from a zero (rigid)
//! initialization with the final mesh pinned to the primary one; the residual
//! stage freezes the primary mesh and refines a zero-initialized residual on
//! top of it. Updates are first-order with moment estimates (decay 0.9/0.999,
//! epsilon 1e-8) and a monotone safeguard: a step that would increase the
//! total is halved up to five times and rejected outright if it still
//! increases, so accepted iterates never go uphill.

use crate::config::EnergyConfig;
use crate::energy::{EnergyBreakdown, Evaluator};
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::mesh::{apply_motion, build_rigid_mesh, MeshGrid, MeshMotion};
use crate::raster::{ImageBuffer, MaskBuffer};
use crate::warp::warp_to_rigid;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const MOMENT_EPSILON: f64 = 1e-8;
const MAX_HALVINGS: usize = 5;
const CONVERGED_STREAK: usize = 10;

/// Outcome of one optimization stage.
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub motion: MeshMotion,
    pub history: Vec<EnergyBreakdown>,
    pub converged: bool,
    pub iterations_used: usize,
}

/// Outcome of the full two-stage solve.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub motion_p: MeshMotion,
    pub motion_f: MeshMotion,
    /// Primary-stage breakdowns followed by residual-stage breakdowns.
    pub history: Vec<EnergyBreakdown>,
    pub primary_iterations: usize,
    pub converged: bool,
    pub iterations_used: usize,
}

impl SolveResult {
    pub fn primary_final(&self) -> &EnergyBreakdown {
        &self.history[self.primary_iterations]
    }

    pub fn final_energy(&self) -> &EnergyBreakdown {
        self.history.last().expect("history is never empty")
    }
}

struct Descent {
    dx: Vec<f64>,
    dy: Vec<f64>,
    m_x: Vec<f64>,
    m_y: Vec<f64>,
    v_x: Vec<f64>,
    v_y: Vec<f64>,
    t: i32,
}

impl Descent {
    fn new(n: usize) -> Self {
        Self {
            dx: vec![0.0; n],
            dy: vec![0.0; n],
            m_x: vec![0.0; n],
            m_y: vec![0.0; n],
            v_x: vec![0.0; n],
            v_y: vec![0.0; n],
            t: 0,
        }
    }

    /// Bias-corrected moment direction for the current gradient.
    fn direction(&mut self, gx: &[f64], gy: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t);
        let bc2 = 1.0 - BETA2.powi(self.t);
        let mut dir_x = vec![0.0; gx.len()];
        let mut dir_y = vec![0.0; gy.len()];
        for i in 0..gx.len() {
            self.m_x[i] = BETA1 * self.m_x[i] + (1.0 - BETA1) * gx[i];
            self.m_y[i] = BETA1 * self.m_y[i] + (1.0 - BETA1) * gy[i];
            self.v_x[i] = BETA2 * self.v_x[i] + (1.0 - BETA2) * gx[i] * gx[i];
            self.v_y[i] = BETA2 * self.v_y[i] + (1.0 - BETA2) * gy[i] * gy[i];
            dir_x[i] = (self.m_x[i] / bc1) / ((self.v_x[i] / bc2).sqrt() + MOMENT_EPSILON);
            dir_y[i] = (self.m_y[i] / bc1) / ((self.v_y[i] / bc2).sqrt() + MOMENT_EPSILON);
        }
        (dir_x, dir_y)
    }
}

/// Generic safeguarded descent over a motion field. Candidates are evaluated
/// with a fused energy+gradient pass so an accepted step already carries the
/// gradient for the next direction.
fn descend(
    rows: usize,
    cols: usize,
    cfg: &EnergyConfig,
    mut energy_and_grad: impl FnMut(&[f64], &[f64], &mut [f64], &mut [f64]) -> Result<EnergyBreakdown>,
) -> Result<StageOutcome> {
    let n = rows * cols;
    let mut state = Descent::new(n);
    let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
    let mut current = energy_and_grad(&state.dx, &state.dy, &mut gx, &mut gy)?;
    if !current.is_finite() {
        return Err(Error::NonFiniteEnergy { iteration: 0 });
    }
    let mut history = Vec::with_capacity(cfg.optimizer.max_iters + 1);
    history.push(current);

    let mut converged = false;
    let mut iterations_used = 0;
    let mut streak = 0;
    let mut cand_x = vec![0.0; n];
    let mut cand_y = vec![0.0; n];
    let (mut cand_gx, mut cand_gy) = (vec![0.0; n], vec![0.0; n]);
    for iteration in 1..=cfg.optimizer.max_iters {
        iterations_used = iteration;
        let (dir_x, dir_y) = state.direction(&gx, &gy);
        let previous_total = current.total;
        let mut step = cfg.optimizer.step;
        for _ in 0..=MAX_HALVINGS {
            for i in 0..n {
                cand_x[i] = state.dx[i] - step * dir_x[i];
                cand_y[i] = state.dy[i] - step * dir_y[i];
            }
            cand_gx.iter_mut().for_each(|g| *g = 0.0);
            cand_gy.iter_mut().for_each(|g| *g = 0.0);
            let cand_energy = energy_and_grad(&cand_x, &cand_y, &mut cand_gx, &mut cand_gy)?;
            if !cand_energy.is_finite() {
                return Err(Error::NonFiniteEnergy { iteration });
            }
            if cand_energy.total <= current.total {
                state.dx.copy_from_slice(&cand_x);
                state.dy.copy_from_slice(&cand_y);
                gx.copy_from_slice(&cand_gx);
                gy.copy_from_slice(&cand_gy);
                current = cand_energy;
                break;
            }
            step /= 2.0;
        }
        history.push(current);

        if (previous_total - current.total).abs() < cfg.optimizer.tol {
            streak += 1;
            if streak >= CONVERGED_STREAK {
                converged = true;
                break;
            }
        } else {
            streak = 0;
        }
    }

    Ok(StageOutcome {
        motion: MeshMotion::from_components(rows, cols, state.dx, state.dy)?,
        history,
        converged,
        iterations_used,
    })
}

fn motion_mesh(rigid: &MeshGrid, dx: &[f64], dy: &[f64]) -> Result<MeshGrid> {
    let motion = MeshMotion::from_components(rigid.rows(), rigid.cols(), dx.to_vec(), dy.to_vec())?;
    apply_motion(rigid, &motion)
}

/// Primary stage: minimizes the total energy in single-mesh mode (the final
/// mesh pinned to the primary one) from a zero initialization.
pub fn solve_primary(
    image: &ImageBuffer,
    mask: &MaskBuffer,
    rigid: &MeshGrid,
    label: Option<&ImageBuffer>,
    cfg: &EnergyConfig,
    phi: &dyn FeatureExtractor,
) -> Result<StageOutcome> {
    let eval = Evaluator::new(image, mask, rigid, label, cfg, phi)?;
    let (rows, cols) = (rigid.rows(), rigid.cols());
    descend(rows, cols, cfg, |dx, dy, gx, gy| {
        eval.energy_and_grad_single(&motion_mesh(rigid, dx, dy)?, gx, gy)
    })
}

/// Residual stage: freezes the primary mesh and refines a zero-initialized
/// residual on top of it; returns the composed final motion.
pub fn solve_residual(
    image: &ImageBuffer,
    mask: &MaskBuffer,
    rigid: &MeshGrid,
    motion_p: &MeshMotion,
    label: Option<&ImageBuffer>,
    cfg: &EnergyConfig,
    phi: &dyn FeatureExtractor,
) -> Result<StageOutcome> {
    let eval = Evaluator::new(image, mask, rigid, label, cfg, phi)?;
    let mesh_p = apply_motion(rigid, motion_p)?;
    let frozen = eval.mesh_terms(&mesh_p)?;
    let (rows, cols) = (rigid.rows(), rigid.cols());
    let base = mesh_p.clone();
    let outcome = descend(rows, cols, cfg, |dx, dy, gx, gy| {
        eval.energy_and_grad_pair_frozen(&frozen, &motion_mesh(&base, dx, dy)?, gx, gy)
    })?;
    Ok(StageOutcome {
        motion: motion_p.add(&outcome.motion)?,
        ..outcome
    })
}

/// Runs both stages and warps the image by the final mesh onto the rigid
/// raster.
pub fn rectangle_image(
    image: &ImageBuffer,
    mask: &MaskBuffer,
    cfg: &EnergyConfig,
    label: Option<&ImageBuffer>,
    phi: &dyn FeatureExtractor,
) -> Result<(ImageBuffer, SolveResult)> {
    cfg.validate()?;
    let rigid = build_rigid_mesh(cfg.image_w as f64, cfg.image_h as f64, cfg.mesh_u, cfg.mesh_v)?;
    let primary = solve_primary(image, mask, &rigid, label, cfg, phi)?;
    let residual = solve_residual(image, mask, &rigid, &primary.motion, label, cfg, phi)?;

    let mesh_f = apply_motion(&rigid, &residual.motion)?;
    let output = warp_to_rigid(image, &mesh_f, &rigid)?;

    let primary_iterations = primary.iterations_used;
    let mut history = primary.history;
    history.extend_from_slice(&residual.history);
    Ok((
        output,
        SolveResult {
            motion_p: primary.motion,
            motion_f: residual.motion,
            history,
            primary_iterations,
            converged: primary.converged && residual.converged,
            iterations_used: primary_iterations + residual.iterations_used,
        },
    ))
}
