//! The composite rectangling objective and its analytic gradient.
//!
//! The total is `boundary + (intra + inter) + wa*appearance + wp*perception`.
//! Boundary and content terms sum the contributions of the primary and final
//! meshes; the two mesh-shape terms are averaged over the meshes so their
//! scale does not depend on how many meshes are constrained. All reductions
//! are per-element means, keeping weights meaningful across resolutions, and
//! run over fixed-size chunks so results are bit-identical regardless of
//! thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::EnergyConfig;
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureStack};
use crate::mesh::{apply_motion, MeshGrid, MeshMotion};
use crate::raster::{ImageBuffer, MaskBuffer};
use crate::warp::{position_adjoint, sample_plane, Border, SamplingPlan, PAR_CHUNK};

/// Guards edge-norm denominators so degenerate edges stay defined.
const EDGE_NORM_EPSILON: f64 = 1e-8;

/// Residuals at or below this level are numerical zeros; the L1 subgradient
/// there is taken as 0 so flat configurations report a zero field.
const DEFICIT_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub boundary: f64,
    pub mesh_intra: f64,
    pub mesh_inter: f64,
    pub content_appearance: f64,
    pub content_perception: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn assemble(
        boundary: f64,
        mesh_intra: f64,
        mesh_inter: f64,
        content_appearance: f64,
        content_perception: f64,
        cfg: &EnergyConfig,
    ) -> Self {
        let total = boundary
            + (mesh_intra + mesh_inter)
            + (cfg.omega_a * content_appearance + cfg.omega_p * content_perception);
        Self {
            boundary,
            mesh_intra,
            mesh_inter,
            content_appearance,
            content_perception,
            total,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

fn fixed_chunk_sum(values: impl IndexedParallelIterator<Item = f64>) -> f64 {
    let partials: Vec<f64> = values.collect();
    partials.iter().sum()
}

fn mean_deficit(warped_mask: &[f64]) -> f64 {
    let sum = fixed_chunk_sum(
        warped_mask
            .par_chunks(PAR_CHUNK)
            .map(|c| c.iter().map(|&v| (1.0 - v).abs()).sum::<f64>()),
    );
    sum / warped_mask.len() as f64
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let sum = fixed_chunk_sum(
        a.par_chunks(PAR_CHUNK)
            .zip(b.par_chunks(PAR_CHUNK))
            .map(|(ca, cb)| ca.iter().zip(cb).map(|(x, y)| (x - y).abs()).sum::<f64>()),
    );
    sum / a.len() as f64
}

fn mean_sq_stack_diff(a: &FeatureStack, b: &FeatureStack) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (pa, pb) in a.planes.iter().zip(&b.planes) {
        debug_assert_eq!(pa.data.len(), pb.data.len());
        sum += fixed_chunk_sum(
            pa.data
                .par_chunks(PAR_CHUNK)
                .zip(pb.data.par_chunks(PAR_CHUNK))
                .map(|(ca, cb)| {
                    ca.iter()
                        .zip(cb)
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                }),
        );
        count += pa.data.len();
    }
    sum / count as f64
}

/// Per-mesh intra-grid hinge: horizontal projections below `alpha*W/V` and
/// vertical projections below `alpha*H/U` are penalized linearly, normalized
/// by the respective edge counts.
fn intra_single(mesh: &MeshGrid, cfg: &EnergyConfig) -> f64 {
    let (tx, ty) = (cfg.threshold_x(), cfg.threshold_y());
    let (rows, cols) = (mesh.rows(), mesh.cols());
    let mut h_sum = 0.0;
    for i in 0..rows {
        for j in 0..cols - 1 {
            let proj = mesh.vertex(i, j + 1).x - mesh.vertex(i, j).x;
            if proj < tx {
                h_sum += tx - proj;
            }
        }
    }
    let mut v_sum = 0.0;
    for i in 0..rows - 1 {
        for j in 0..cols {
            let proj = mesh.vertex(i + 1, j).y - mesh.vertex(i, j).y;
            if proj < ty {
                v_sum += ty - proj;
            }
        }
    }
    h_sum / (rows * (cols - 1)) as f64 + v_sum / ((rows - 1) * cols) as f64
}

fn intra_single_grad(mesh: &MeshGrid, cfg: &EnergyConfig, scale: f64, gx: &mut [f64], gy: &mut [f64]) {
    let (tx, ty) = (cfg.threshold_x(), cfg.threshold_y());
    let (rows, cols) = (mesh.rows(), mesh.cols());
    let h_norm = scale / (rows * (cols - 1)) as f64;
    for i in 0..rows {
        for j in 0..cols - 1 {
            let proj = mesh.vertex(i, j + 1).x - mesh.vertex(i, j).x;
            if proj < tx {
                gx[i * cols + j + 1] -= h_norm;
                gx[i * cols + j] += h_norm;
            }
        }
    }
    let v_norm = scale / ((rows - 1) * cols) as f64;
    for i in 0..rows - 1 {
        for j in 0..cols {
            let proj = mesh.vertex(i + 1, j).y - mesh.vertex(i, j).y;
            if proj < ty {
                gy[(i + 1) * cols + j] -= v_norm;
                gy[i * cols + j] += v_norm;
            }
        }
    }
}

/// Per-mesh inter-grid co-linearity: mean of `1 - cos` over all tuples of two
/// successive edges (horizontal pairs within a row, vertical pairs within a
/// column).
fn inter_single(mesh: &MeshGrid) -> f64 {
    let (rows, cols) = (mesh.rows(), mesh.cols());
    let tuples = rows * cols.saturating_sub(2) + rows.saturating_sub(2) * cols;
    if tuples == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..rows {
        for j in 0..cols - 2 {
            sum += one_minus_cos(mesh, i, j, i, j + 1, i, j + 2);
        }
    }
    for j in 0..cols {
        for i in 0..rows - 2 {
            sum += one_minus_cos(mesh, i, j, i + 1, j, i + 2, j);
        }
    }
    sum / tuples as f64
}

#[inline]
fn one_minus_cos(
    mesh: &MeshGrid,
    ai: usize,
    aj: usize,
    bi: usize,
    bj: usize,
    ci: usize,
    cj: usize,
) -> f64 {
    let a = mesh.vertex(ai, aj);
    let b = mesh.vertex(bi, bj);
    let c = mesh.vertex(ci, cj);
    let e1 = (b.x - a.x, b.y - a.y);
    let e2 = (c.x - b.x, c.y - b.y);
    let n1 = (e1.0 * e1.0 + e1.1 * e1.1).sqrt() + EDGE_NORM_EPSILON;
    let n2 = (e2.0 * e2.0 + e2.1 * e2.1).sqrt() + EDGE_NORM_EPSILON;
    1.0 - (e1.0 * e2.0 + e1.1 * e2.1) / (n1 * n2)
}

fn inter_single_grad(mesh: &MeshGrid, scale: f64, gx: &mut [f64], gy: &mut [f64]) {
    let (rows, cols) = (mesh.rows(), mesh.cols());
    let tuples = rows * cols.saturating_sub(2) + rows.saturating_sub(2) * cols;
    if tuples == 0 {
        return;
    }
    let weight = scale / tuples as f64;
    let visit = |ai: usize, aj: usize, bi: usize, bj: usize, ci: usize, cj: usize,
                     gx: &mut [f64], gy: &mut [f64]| {
        let a = mesh.vertex(ai, aj);
        let b = mesh.vertex(bi, bj);
        let c = mesh.vertex(ci, cj);
        let e1 = (b.x - a.x, b.y - a.y);
        let e2 = (c.x - b.x, c.y - b.y);
        let l1 = (e1.0 * e1.0 + e1.1 * e1.1).sqrt();
        let l2 = (e2.0 * e2.0 + e2.1 * e2.1).sqrt();
        let n1 = l1 + EDGE_NORM_EPSILON;
        let n2 = l2 + EDGE_NORM_EPSILON;
        let dot = e1.0 * e2.0 + e1.1 * e2.1;
        let inv = 1.0 / (n1 * n2);
        // unit vectors; zero-length edges take subgradient 0
        let u1 = if l1 > 0.0 { (e1.0 / l1, e1.1 / l1) } else { (0.0, 0.0) };
        let u2 = if l2 > 0.0 { (e2.0 / l2, e2.1 / l2) } else { (0.0, 0.0) };
        // d(1 - dot/(n1 n2))/de1 = -e2/(n1 n2) + dot*u1/(n1^2 n2)
        let ge1 = (
            weight * (-e2.0 * inv + dot * u1.0 * inv / n1),
            weight * (-e2.1 * inv + dot * u1.1 * inv / n1),
        );
        let ge2 = (
            weight * (-e1.0 * inv + dot * u2.0 * inv / n2),
            weight * (-e1.1 * inv + dot * u2.1 * inv / n2),
        );
        let (ia, ib, ic) = (ai * cols + aj, bi * cols + bj, ci * cols + cj);
        gx[ia] -= ge1.0;
        gy[ia] -= ge1.1;
        gx[ib] += ge1.0 - ge2.0;
        gy[ib] += ge1.1 - ge2.1;
        gx[ic] += ge2.0;
        gy[ic] += ge2.1;
    };
    for i in 0..rows {
        for j in 0..cols - 2 {
            visit(i, j, i, j + 1, i, j + 2, gx, gy);
        }
    }
    for j in 0..cols {
        for i in 0..rows - 2 {
            visit(i, j, i + 1, j, i + 2, j, gx, gy);
        }
    }
}

/// Mean hinge penalty on edge projections, averaged over the given meshes.
pub fn intra_grid_loss(meshes: &[&MeshGrid], cfg: &EnergyConfig) -> f64 {
    if meshes.is_empty() {
        return 0.0;
    }
    meshes.iter().map(|m| intra_single(m, cfg)).sum::<f64>() / meshes.len() as f64
}

/// Mean `1 - cos` between successive edges, averaged over the given meshes.
pub fn inter_grid_loss(meshes: &[&MeshGrid]) -> f64 {
    if meshes.is_empty() {
        return 0.0;
    }
    meshes.iter().map(|m| inter_single(m)).sum::<f64>() / meshes.len() as f64
}

/// Mean absolute deviation of the warped mask from the all-one matrix.
pub fn boundary_loss(mask: &MaskBuffer, mesh: &MeshGrid, rigid: &MeshGrid) -> Result<f64> {
    let warped = crate::warp::warp_mask_to_rigid(mask, mesh, rigid)?;
    Ok(mean_deficit(warped.data()))
}

/// Sum over meshes of the mean absolute error between the warped image and
/// the label.
pub fn appearance_loss(
    image: &ImageBuffer,
    meshes: &[&MeshGrid],
    rigid: &MeshGrid,
    label: &ImageBuffer,
) -> Result<f64> {
    let mut total = 0.0;
    for mesh in meshes {
        let warped = crate::warp::warp_to_rigid(image, mesh, rigid)?;
        check_label_dims(&warped, label)?;
        total += mean_abs_diff(warped.data(), label.data());
    }
    Ok(total)
}

/// Sum over meshes of the mean squared feature distance between the warped
/// image and the label.
pub fn perception_loss(
    image: &ImageBuffer,
    meshes: &[&MeshGrid],
    rigid: &MeshGrid,
    label: &ImageBuffer,
    phi: &dyn FeatureExtractor,
) -> Result<f64> {
    let phi_label = phi.extract(label);
    let mut total = 0.0;
    for mesh in meshes {
        let warped = crate::warp::warp_to_rigid(image, mesh, rigid)?;
        check_label_dims(&warped, label)?;
        total += mean_sq_stack_diff(&phi.extract(&warped), &phi_label);
    }
    Ok(total)
}

fn check_label_dims(warped: &ImageBuffer, label: &ImageBuffer) -> Result<()> {
    if warped.width() != label.width()
        || warped.height() != label.height()
        || warped.channels() != label.channels()
    {
        return Err(Error::InvalidDimensions(format!(
            "label {}x{}x{} does not match the rigid raster {}x{}x{}",
            label.width(),
            label.height(),
            label.channels(),
            warped.width(),
            warped.height(),
            warped.channels(),
        )));
    }
    Ok(())
}

/// Full objective over the primary and final meshes.
#[allow(clippy::too_many_arguments)]
pub fn total_energy(
    image: &ImageBuffer,
    mask: &MaskBuffer,
    mesh_p: &MeshGrid,
    mesh_f: &MeshGrid,
    rigid: &MeshGrid,
    label: Option<&ImageBuffer>,
    cfg: &EnergyConfig,
    phi: &dyn FeatureExtractor,
) -> Result<EnergyBreakdown> {
    let eval = Evaluator::new(image, mask, rigid, label, cfg, phi)?;
    eval.energy_pair(mesh_p, mesh_f)
}

/// Analytic gradient of [`total_energy`] with respect to both motions.
#[allow(clippy::too_many_arguments)]
pub fn energy_gradient(
    image: &ImageBuffer,
    mask: &MaskBuffer,
    motion_p: &MeshMotion,
    motion_f: &MeshMotion,
    rigid: &MeshGrid,
    label: Option<&ImageBuffer>,
    cfg: &EnergyConfig,
    phi: &dyn FeatureExtractor,
) -> Result<(MeshMotion, MeshMotion)> {
    let eval = Evaluator::new(image, mask, rigid, label, cfg, phi)?;
    let mesh_p = apply_motion(rigid, motion_p)?;
    let mesh_f = apply_motion(rigid, motion_f)?;
    let nv = rigid.rows() * rigid.cols();
    let (mut gxp, mut gyp) = (vec![0.0; nv], vec![0.0; nv]);
    let (mut gxf, mut gyf) = (vec![0.0; nv], vec![0.0; nv]);
    eval.accumulate_mesh_gradient(&mesh_p, 1.0, 0.5, &mut gxp, &mut gyp)?;
    eval.accumulate_mesh_gradient(&mesh_f, 1.0, 0.5, &mut gxf, &mut gyf)?;
    Ok((
        MeshMotion::from_components(rigid.rows(), rigid.cols(), gxp, gyp)?,
        MeshMotion::from_components(rigid.rows(), rigid.cols(), gxf, gyf)?,
    ))
}

/// Per-mesh scalar contributions, cacheable when a mesh is frozen.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MeshTerms {
    pub boundary: f64,
    pub appearance: f64,
    pub perception: f64,
    pub intra: f64,
    pub inter: f64,
}

/// Shared state for repeated energy/gradient evaluations over one problem
/// instance: the sampling plan and label features are computed once.
pub(crate) struct Evaluator<'a> {
    image: &'a ImageBuffer,
    mask: &'a MaskBuffer,
    label: Option<&'a ImageBuffer>,
    cfg: &'a EnergyConfig,
    phi: &'a dyn FeatureExtractor,
    plan: SamplingPlan,
    phi_label: Option<FeatureStack>,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        image: &'a ImageBuffer,
        mask: &'a MaskBuffer,
        rigid: &'a MeshGrid,
        label: Option<&'a ImageBuffer>,
        cfg: &'a EnergyConfig,
        phi: &'a dyn FeatureExtractor,
    ) -> Result<Self> {
        cfg.validate()?;
        if image.width() != mask.width() || image.height() != mask.height() {
            return Err(Error::InvalidDimensions(format!(
                "mask {}x{} does not match image {}x{}",
                mask.width(),
                mask.height(),
                image.width(),
                image.height()
            )));
        }
        if rigid.rows() != cfg.mesh_u + 1 || rigid.cols() != cfg.mesh_v + 1 {
            return Err(Error::InvalidConfig(format!(
                "rigid mesh {}x{} does not match configured resolution {}x{}",
                rigid.rows() - 1,
                rigid.cols() - 1,
                cfg.mesh_u,
                cfg.mesh_v
            )));
        }
        let plan = SamplingPlan::new(rigid)?;
        if plan.out_w != cfg.image_w || plan.out_h != cfg.image_h {
            return Err(Error::InvalidConfig(format!(
                "rigid mesh spans {}x{} but the configured raster is {}x{}",
                plan.out_w, plan.out_h, cfg.image_w, cfg.image_h
            )));
        }
        if let Some(label) = label {
            if label.width() != plan.out_w
                || label.height() != plan.out_h
                || label.channels() != image.channels()
            {
                return Err(Error::InvalidDimensions(
                    "label does not match the rigid raster".into(),
                ));
            }
        }
        let phi_label = label.map(|l| phi.extract(l));
        Ok(Self { image, mask, label, cfg, phi, plan, phi_label })
    }

    /// Forward-only per-mesh scalar terms.
    pub fn mesh_terms(&self, mesh: &MeshGrid) -> Result<MeshTerms> {
        self.check_mesh(mesh)?;
        let n = self.plan.pixel_count();
        let mut qx = vec![0.0; n];
        let mut qy = vec![0.0; n];
        self.plan.map_points(mesh, &mut qx, &mut qy);

        let mut warped_mask = vec![0.0; n];
        sample_plane(
            self.mask.data(),
            self.mask.width(),
            self.mask.height(),
            1,
            &qx,
            &qy,
            Border::Zero,
            &mut warped_mask,
        );
        let boundary = mean_deficit(&warped_mask);

        let (appearance, perception) = if let Some(label) = self.label {
            let channels = self.image.channels();
            let mut warped = vec![0.0; n * channels];
            sample_plane(
                self.image.data(),
                self.image.width(),
                self.image.height(),
                channels,
                &qx,
                &qy,
                Border::Clamp,
                &mut warped,
            );
            let appearance = mean_abs_diff(&warped, label.data());
            let warped_img =
                ImageBuffer::from_convex_samples(self.plan.out_w, self.plan.out_h, channels, warped);
            let phi_warped = self.phi.extract(&warped_img);
            let perception =
                mean_sq_stack_diff(&phi_warped, self.phi_label.as_ref().expect("label features"));
            (appearance, perception)
        } else {
            (0.0, 0.0)
        };

        Ok(MeshTerms {
            boundary,
            appearance,
            perception,
            intra: intra_single(mesh, self.cfg),
            inter: inter_single(mesh),
        })
    }

    /// Per-mesh terms plus the gradient of this mesh's share of the total,
    /// accumulated into `gx`/`gy`. `content_weight` multiplies the boundary
    /// and content contributions (2 in single-mesh mode, 1 per mesh in pair
    /// mode); `mesh_term_weight` multiplies the intra/inter contributions
    /// (1 in single-mesh mode, 0.5 per mesh in pair mode).
    pub fn accumulate_mesh_gradient(
        &self,
        mesh: &MeshGrid,
        content_weight: f64,
        mesh_term_weight: f64,
        gx: &mut [f64],
        gy: &mut [f64],
    ) -> Result<MeshTerms> {
        self.check_mesh(mesh)?;
        let n = self.plan.pixel_count();
        let mut qx = vec![0.0; n];
        let mut qy = vec![0.0; n];
        self.plan.map_points(mesh, &mut qx, &mut qy);

        // Boundary: d mean|1 - wm| / d wm, then back through sampling.
        let mut warped_mask = vec![0.0; n];
        sample_plane(
            self.mask.data(),
            self.mask.width(),
            self.mask.height(),
            1,
            &qx,
            &qy,
            Border::Zero,
            &mut warped_mask,
        );
        let boundary = mean_deficit(&warped_mask);
        let scale = content_weight / n as f64;
        let mask_adjoint: Vec<f64> = warped_mask
            .iter()
            .map(|&v| if 1.0 - v > DEFICIT_EPSILON { -scale } else { 0.0 })
            .collect();
        let mut gqx = vec![0.0; n];
        let mut gqy = vec![0.0; n];
        position_adjoint(
            self.mask.data(),
            self.mask.width(),
            self.mask.height(),
            1,
            &qx,
            &qy,
            &mask_adjoint,
            Border::Zero,
            &mut gqx,
            &mut gqy,
        );

        let (appearance, perception) = if let Some(label) = self.label {
            let channels = self.image.channels();
            let mut warped = vec![0.0; n * channels];
            sample_plane(
                self.image.data(),
                self.image.width(),
                self.image.height(),
                channels,
                &qx,
                &qy,
                Border::Clamp,
                &mut warped,
            );
            let appearance = mean_abs_diff(&warped, label.data());

            // Image adjoint accumulates both content terms, pre-weighted so
            // the vertex gradient is the gradient of the *total*.
            let na = (n * channels) as f64;
            let wa = content_weight * self.cfg.omega_a / na;
            let mut img_adjoint: Vec<f64> = warped
                .iter()
                .zip(label.data())
                .map(|(&w, &r)| {
                    let d = r - w;
                    if d > DEFICIT_EPSILON {
                        -wa
                    } else if d < -DEFICIT_EPSILON {
                        wa
                    } else {
                        0.0
                    }
                })
                .collect();

            let warped_img = ImageBuffer::from_convex_samples(
                self.plan.out_w,
                self.plan.out_h,
                channels,
                warped,
            );
            let phi_warped = self.phi.extract(&warped_img);
            let phi_label = self.phi_label.as_ref().expect("label features");
            let perception = mean_sq_stack_diff(&phi_warped, phi_label);
            if self.cfg.omega_p > 0.0 {
                let nf = phi_warped.total_elements() as f64;
                let wp = content_weight * self.cfg.omega_p * 2.0 / nf;
                let upstream = FeatureStack {
                    planes: phi_warped
                        .planes
                        .iter()
                        .zip(&phi_label.planes)
                        .map(|(pw, pl)| crate::features::FeaturePlane {
                            width: pw.width,
                            height: pw.height,
                            data: pw
                                .data
                                .iter()
                                .zip(&pl.data)
                                .map(|(&w, &r)| wp * (w - r))
                                .collect(),
                        })
                        .collect(),
                };
                let pixel_adjoint = self.phi.backprop(&warped_img, &upstream);
                for (a, b) in img_adjoint.iter_mut().zip(&pixel_adjoint) {
                    *a += b;
                }
            }

            let mut igx = vec![0.0; n];
            let mut igy = vec![0.0; n];
            position_adjoint(
                self.image.data(),
                self.image.width(),
                self.image.height(),
                channels,
                &qx,
                &qy,
                &img_adjoint,
                Border::Clamp,
                &mut igx,
                &mut igy,
            );
            for (g, v) in gqx.iter_mut().zip(&igx) {
                *g += v;
            }
            for (g, v) in gqy.iter_mut().zip(&igy) {
                *g += v;
            }
            (appearance, perception)
        } else {
            (0.0, 0.0)
        };

        self.plan.accumulate_vertex_gradient(&gqx, &gqy, gx, gy);

        intra_single_grad(mesh, self.cfg, mesh_term_weight, gx, gy);
        inter_single_grad(mesh, mesh_term_weight, gx, gy);

        Ok(MeshTerms {
            boundary,
            appearance,
            perception,
            intra: intra_single(mesh, self.cfg),
            inter: inter_single(mesh),
        })
    }

    fn check_mesh(&self, mesh: &MeshGrid) -> Result<()> {
        if mesh.rows() != self.plan.rows || mesh.cols() != self.plan.cols {
            return Err(Error::ShapeMismatch {
                expected_rows: self.plan.rows,
                expected_cols: self.plan.cols,
                rows: mesh.rows(),
                cols: mesh.cols(),
            });
        }
        Ok(())
    }

    pub fn combine(&self, p: &MeshTerms, f: &MeshTerms) -> EnergyBreakdown {
        EnergyBreakdown::assemble(
            p.boundary + f.boundary,
            (p.intra + f.intra) / 2.0,
            (p.inter + f.inter) / 2.0,
            p.appearance + f.appearance,
            p.perception + f.perception,
            self.cfg,
        )
    }

    pub fn energy_pair(&self, mesh_p: &MeshGrid, mesh_f: &MeshGrid) -> Result<EnergyBreakdown> {
        let terms_p = self.mesh_terms(mesh_p)?;
        let terms_f = if std::ptr::eq(mesh_p, mesh_f) || mesh_p == mesh_f {
            terms_p
        } else {
            self.mesh_terms(mesh_f)?
        };
        Ok(self.combine(&terms_p, &terms_f))
    }

    /// Single-mesh mode: the final mesh is pinned to the primary one, so the
    /// mesh appears twice in the two-term sums.
    pub fn energy_and_grad_single(
        &self,
        mesh: &MeshGrid,
        gx: &mut [f64],
        gy: &mut [f64],
    ) -> Result<EnergyBreakdown> {
        let terms = self.accumulate_mesh_gradient(mesh, 2.0, 1.0, gx, gy)?;
        Ok(self.combine(&terms, &terms))
    }

    /// Pair mode with the primary mesh frozen: its cached terms enter the
    /// breakdown, the gradient covers only the final mesh.
    pub fn energy_pair_frozen(
        &self,
        frozen: &MeshTerms,
        mesh_f: &MeshGrid,
    ) -> Result<EnergyBreakdown> {
        let terms_f = self.mesh_terms(mesh_f)?;
        Ok(self.combine(frozen, &terms_f))
    }

    pub fn energy_and_grad_pair_frozen(
        &self,
        frozen: &MeshTerms,
        mesh_f: &MeshGrid,
        gx: &mut [f64],
        gy: &mut [f64],
    ) -> Result<EnergyBreakdown> {
        let terms_f = self.accumulate_mesh_gradient(mesh_f, 1.0, 0.5, gx, gy)?;
        Ok(self.combine(frozen, &terms_f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{IdentityExtractor, PyramidExtractor};
    use crate::mesh::build_rigid_mesh;
    use crate::rng::SplitMix64;
    use crate::warp::warp_to_rigid;

    fn noise_image(w: usize, h: usize, channels: usize, seed: u64) -> ImageBuffer {
        let mut rng = SplitMix64::new(seed);
        let data = (0..w * h * channels).map(|_| rng.next_f64()).collect();
        ImageBuffer::new(w, h, channels, data).unwrap()
    }

    fn scaled_about_center(rigid: &MeshGrid, factor: f64) -> MeshGrid {
        let cx = rigid.vertex(rigid.rows() - 1, rigid.cols() - 1).x / 2.0;
        let cy = rigid.vertex(rigid.rows() - 1, rigid.cols() - 1).y / 2.0;
        let verts: Vec<(f64, f64)> = (0..rigid.rows())
            .flat_map(|i| {
                (0..rigid.cols()).map(move |j| {
                    let v = rigid.vertex(i, j);
                    (cx + (v.x - cx) * factor, cy + (v.y - cy) * factor)
                })
            })
            .collect();
        MeshGrid::from_vertices(rigid.rows(), rigid.cols(), &verts).unwrap()
    }

    #[test]
    fn boundary_zero_half_and_area_ratio() {
        let rigid = build_rigid_mesh(64.0, 48.0, 4, 3).unwrap();
        let ones = MaskBuffer::ones(64, 48).unwrap();
        assert!(boundary_loss(&ones, &rigid, &rigid).unwrap() < 1e-12);

        let mut half = vec![1.0; 64 * 48];
        for y in 0..48 {
            for x in 0..32 {
                half[y * 64 + x] = 0.0;
            }
        }
        let half = MaskBuffer::new(64, 48, half).unwrap();
        let loss = boundary_loss(&half, &rigid, &rigid).unwrap();
        assert!((loss - 0.5).abs() < 1e-9, "got {loss}");

        // Area-ratio oracle: a mesh scaled 2x about the center samples void
        // outside the raster on 1 - 1/4 of the output, up to the
        // interpolation band along the footprint boundary.
        let doubled = scaled_about_center(&rigid, 2.0);
        let loss = boundary_loss(&ones, &doubled, &rigid).unwrap();
        assert!((loss - 0.75).abs() < 0.02, "got {loss}");

        let wrong_shape = build_rigid_mesh(64.0, 48.0, 2, 2).unwrap();
        assert!(matches!(
            boundary_loss(&ones, &wrong_shape, &rigid),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn intra_grid_values() {
        let cfg = EnergyConfig::default();
        let rigid = build_rigid_mesh(512.0, 384.0, 8, 6).unwrap();
        assert_eq!(intra_grid_loss(&[&rigid], &cfg), 0.0);

        // Collapse the horizontal projection of one edge to zero.
        let mut verts: Vec<(f64, f64)> = (0..9)
            .flat_map(|i| {
                let rigid = &rigid;
                (0..7).map(move |j| {
                    let v = rigid.vertex(i, j);
                    (v.x, v.y)
                })
            })
            .collect();
        verts[3 * 7 + 3].0 = verts[3 * 7 + 2].0; // edge (3,2)->(3,3) projects to 0
        let collapsed = MeshGrid::from_vertices(9, 7, &verts).unwrap();
        let expected = (0.125 * 512.0 / 6.0) / 54.0;
        let loss = intra_grid_loss(&[&collapsed], &cfg);
        assert!((loss - expected).abs() < 1e-12, "got {loss}, want {expected}");

        // Mirrored mesh: every horizontal projection is negative, so each
        // edge is penalized by more than the threshold itself.
        let mirrored: Vec<(f64, f64)> = (0..9)
            .flat_map(|i| {
                let rigid = &rigid;
                (0..7).map(move |j| {
                    let v = rigid.vertex(i, j);
                    (512.0 - v.x, v.y)
                })
            })
            .collect();
        let mirrored = MeshGrid::from_vertices(9, 7, &mirrored).unwrap();
        let loss = intra_grid_loss(&[&mirrored], &cfg);
        let threshold = cfg.threshold_x();
        let edge = 512.0 / 6.0;
        assert!((loss - (threshold + edge)).abs() < 1e-9, "got {loss}");
        assert!(loss > threshold);
    }

    #[test]
    fn inter_grid_angles() {
        let rigid = build_rigid_mesh(512.0, 384.0, 8, 6).unwrap();
        assert!(inter_grid_loss(&[&rigid]) < 1e-9);

        // Two tuples (one per row); row 0 bends 90 degrees, row 1 stays
        // straight, so the mean is (1 + 0) / 2.
        let bent = MeshGrid::from_vertices(
            2,
            3,
            &[(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 20.0), (10.0, 20.0), (20.0, 20.0)],
        )
        .unwrap();
        let loss = inter_grid_loss(&[&bent]);
        assert!((loss - 0.5).abs() < 1e-8, "got {loss}");

        // Fold-back contributes the maximum of 2 per tuple.
        let folded = MeshGrid::from_vertices(
            2,
            3,
            &[(0.0, 0.0), (10.0, 0.0), (0.0, 0.0), (0.0, 20.0), (10.0, 20.0), (20.0, 20.0)],
        )
        .unwrap();
        let loss = inter_grid_loss(&[&folded]);
        assert!((loss - 1.0).abs() < 1e-8, "got {loss}");

        // A single-cell mesh has no successive-edge tuples.
        let tiny = build_rigid_mesh(2.0, 2.0, 1, 1).unwrap();
        assert_eq!(inter_grid_loss(&[&tiny]), 0.0);
    }

    #[test]
    fn inter_grid_gradient_matches_hand_derived_three_vertex_formula() {
        // f = 1 - <e1,e2>/((|e1|+eps)(|e2|+eps)) on the chain A,B,C; the
        // closed-form partials are written out independently here.
        let mesh = MeshGrid::from_vertices(
            2,
            3,
            &[(0.0, 0.0), (11.0, 2.0), (19.0, 9.0), (0.0, 20.0), (10.0, 20.0), (20.0, 20.0)],
        )
        .unwrap();
        let nv = 6;
        let (mut gx, mut gy) = (vec![0.0; nv], vec![0.0; nv]);
        inter_single_grad(&mesh, 1.0, &mut gx, &mut gy);

        let (a, b, c) = (mesh.vertex(0, 0), mesh.vertex(0, 1), mesh.vertex(0, 2));
        let e1 = (b.x - a.x, b.y - a.y);
        let e2 = (c.x - b.x, c.y - b.y);
        let l1 = (e1.0 * e1.0 + e1.1 * e1.1).sqrt();
        let l2 = (e2.0 * e2.0 + e2.1 * e2.1).sqrt();
        let n1 = l1 + EDGE_NORM_EPSILON;
        let n2 = l2 + EDGE_NORM_EPSILON;
        let dot = e1.0 * e2.0 + e1.1 * e2.1;
        // dF/dA = e2/(n1 n2) - dot * (e1/l1) / (n1^2 n2)
        let da = (
            e2.0 / (n1 * n2) - dot * (e1.0 / l1) / (n1 * n1 * n2),
            e2.1 / (n1 * n2) - dot * (e1.1 / l1) / (n1 * n1 * n2),
        );
        // dF/dC = -e1/(n1 n2) + dot * (e2/l2) / (n1 n2^2)
        let dc = (
            -e1.0 / (n1 * n2) + dot * (e2.0 / l2) / (n1 * n2 * n2),
            -e1.1 / (n1 * n2) + dot * (e2.1 / l2) / (n1 * n2 * n2),
        );
        let db = (-da.0 - dc.0, -da.1 - dc.1);
        let n = 2.0; // tuples in this mesh
        for (idx, expect) in [(0, da), (1, db), (2, dc)] {
            assert!((gx[idx] - expect.0 / n).abs() < 1e-12, "gx[{idx}]");
            assert!((gy[idx] - expect.1 / n).abs() < 1e-12, "gy[{idx}]");
        }
    }

    #[test]
    fn appearance_examples() {
        let rigid = build_rigid_mesh(64.0, 48.0, 4, 3).unwrap();
        let img = noise_image(64, 48, 3, 5);
        let same = appearance_loss(&img, &[&rigid], &rigid, &img).unwrap();
        assert!(same < 1e-9, "got {same}");

        let warped_mesh = scaled_about_center(&rigid, 0.93);
        let label = warp_to_rigid(&img, &warped_mesh, &rigid).unwrap();
        let loss = appearance_loss(&img, &[&warped_mesh, &warped_mesh], &rigid, &label).unwrap();
        assert!(loss <= 1e-6, "got {loss}");

        let black = ImageBuffer::filled(64, 48, 3, 0.0).unwrap();
        let white = ImageBuffer::filled(64, 48, 3, 1.0).unwrap();
        let loss = appearance_loss(&black, &[&rigid], &rigid, &white).unwrap();
        assert!((loss - 1.0).abs() < 1e-12);

        let small_label = ImageBuffer::filled(32, 24, 3, 0.5).unwrap();
        assert!(matches!(
            appearance_loss(&img, &[&rigid], &rigid, &small_label),
            Err(Error::InvalidDimensions(_))
        ));
    }

    #[test]
    fn perception_reduces_to_mse_for_identity_extractor() {
        let rigid = build_rigid_mesh(48.0, 36.0, 4, 3).unwrap();
        let img = noise_image(48, 36, 3, 8);
        let label = noise_image(48, 36, 3, 9);
        let loss = perception_loss(&img, &[&rigid], &rigid, &label, &IdentityExtractor).unwrap();
        let mse: f64 = img
            .data()
            .iter()
            .zip(label.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / img.data().len() as f64;
        // identity warp leaves pixels within fp noise of the originals
        assert!((loss - mse).abs() < 1e-9, "{loss} vs {mse}");

        let warped_mesh = scaled_about_center(&rigid, 0.9);
        let label = warp_to_rigid(&img, &warped_mesh, &rigid).unwrap();
        let loss =
            perception_loss(&img, &[&warped_mesh], &rigid, &label, &PyramidExtractor::new())
                .unwrap();
        assert!(loss <= 1e-9, "got {loss}");
    }

    #[test]
    fn total_energy_assembly_and_zero_configuration() {
        // The default raster: at smaller cell sizes the epsilon guard in the
        // inter-grid denominator alone costs ~2*eps/|edge| per tuple.
        let cfg = EnergyConfig::default();
        let rigid = build_rigid_mesh(512.0, 384.0, 8, 6).unwrap();
        let img = noise_image(512, 384, 3, 12);
        let mask = MaskBuffer::ones(512, 384).unwrap();
        let phi = PyramidExtractor::new();

        let zero = total_energy(&img, &mask, &rigid, &rigid, &rigid, Some(&img), &cfg, &phi)
            .unwrap();
        for term in [
            zero.boundary,
            zero.mesh_intra,
            zero.mesh_inter,
            zero.content_appearance,
            zero.content_perception,
            zero.total,
        ] {
            assert!(term.abs() <= 1e-9, "term {term}");
            assert!(term >= 0.0);
        }

        // Non-trivial configuration: total must equal the recomputed weighted
        // sum of its parts.
        let moved = scaled_about_center(&rigid, 0.94);
        let label = noise_image(512, 384, 3, 13);
        let e = total_energy(&img, &mask, &moved, &rigid, &rigid, Some(&label), &cfg, &phi)
            .unwrap();
        let recomputed = e.boundary
            + (e.mesh_intra + e.mesh_inter)
            + cfg.omega_a * e.content_appearance
            + cfg.omega_p * e.content_perception;
        assert!((e.total - recomputed).abs() < 1e-12);
        assert!(e.content_appearance > 0.0);
        assert!(e.content_perception > 0.0);
    }

    #[test]
    fn gradient_is_zero_at_flat_configuration() {
        let cfg = EnergyConfig { image_w: 64, image_h: 48, ..EnergyConfig::default() };
        let rigid = build_rigid_mesh(64.0, 48.0, 8, 6).unwrap();
        let img = noise_image(64, 48, 3, 21);
        let mask = MaskBuffer::ones(64, 48).unwrap();
        let zero = MeshMotion::zeros(9, 7);
        let (gp, gf) = energy_gradient(
            &img,
            &mask,
            &zero,
            &zero,
            &rigid,
            Some(&img),
            &cfg,
            &PyramidExtractor::new(),
        )
        .unwrap();
        assert!(gp.max_abs() <= 1e-9, "primary gradient {}", gp.max_abs());
        assert!(gf.max_abs() <= 1e-9, "final gradient {}", gf.max_abs());
    }

    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        /// Cosines are preserved under global rotation and uniform scaling.
        #[test]
        fn inter_grid_is_rotation_and_scale_invariant(
            seed in 0u64..500,
            angle in 0.0f64..std::f64::consts::TAU,
            scale in 0.5f64..2.0,
        ) {
            let rigid = build_rigid_mesh(120.0, 90.0, 4, 3).unwrap();
            let mut rng = SplitMix64::new(seed);
            let n = rigid.rows() * rigid.cols();
            let dx: Vec<f64> = (0..n).map(|_| rng.range(-6.0, 6.0)).collect();
            let dy: Vec<f64> = (0..n).map(|_| rng.range(-6.0, 6.0)).collect();
            let mesh = apply_motion(
                &rigid,
                &MeshMotion::from_components(rigid.rows(), rigid.cols(), dx, dy).unwrap(),
            )
            .unwrap();
            let (sin, cos) = angle.sin_cos();
            let transformed: Vec<(f64, f64)> = (0..mesh.rows())
                .flat_map(|i| {
                    let mesh = &mesh;
                    (0..mesh.cols()).map(move |j| {
                        let v = mesh.vertex(i, j);
                        (scale * (cos * v.x - sin * v.y), scale * (sin * v.x + cos * v.y))
                    })
                })
                .collect();
            let transformed =
                MeshGrid::from_vertices(mesh.rows(), mesh.cols(), &transformed).unwrap();
            let a = inter_grid_loss(&[&mesh]);
            let b = inter_grid_loss(&[&transformed]);
            // only the epsilon guard breaks exact invariance
            prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
        }

        /// Translating every vertex leaves all edge projections unchanged.
        #[test]
        fn intra_grid_is_translation_invariant(
            seed in 0u64..500,
            tx in -40.0f64..40.0,
            ty in -40.0f64..40.0,
        ) {
            let cfg = EnergyConfig { image_w: 120, image_h: 90, ..EnergyConfig::default() };
            let rigid = build_rigid_mesh(120.0, 90.0, 8, 6).unwrap();
            let mut rng = SplitMix64::new(seed);
            let n = rigid.rows() * rigid.cols();
            // strong distortions so the hinge is often active
            let dx: Vec<f64> = (0..n).map(|_| rng.range(-15.0, 15.0)).collect();
            let dy: Vec<f64> = (0..n).map(|_| rng.range(-15.0, 15.0)).collect();
            let mesh = apply_motion(
                &rigid,
                &MeshMotion::from_components(rigid.rows(), rigid.cols(), dx, dy).unwrap(),
            )
            .unwrap();
            let shift = MeshMotion::from_components(
                mesh.rows(),
                mesh.cols(),
                vec![tx; n],
                vec![ty; n],
            )
            .unwrap();
            let moved = apply_motion(&mesh, &shift).unwrap();
            let a = intra_grid_loss(&[&mesh], &cfg);
            let b = intra_grid_loss(&[&moved], &cfg);
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{} vs {}", a, b);
        }
    }

    #[test]
    fn label_free_mode_zeroes_content_terms() {
        let cfg = EnergyConfig { image_w: 64, image_h: 48, ..EnergyConfig::default() };
        let rigid = build_rigid_mesh(64.0, 48.0, 8, 6).unwrap();
        let img = noise_image(64, 48, 3, 30);
        let mask = MaskBuffer::ones(64, 48).unwrap();
        let e = total_energy(&img, &mask, &rigid, &rigid, &rigid, None, &cfg, &PyramidExtractor::new())
            .unwrap();
        assert_eq!(e.content_appearance, 0.0);
        assert_eq!(e.content_perception, 0.0);
    }
}
