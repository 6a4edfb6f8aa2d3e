//! Warping between meshes.
//!
//! Two directions are provided. The rigid-destination backward warp maps each
//! output pixel to a source position through the deformed mesh and samples
//! bilinearly; because the destination grid is uniform, per-pixel cell lookup
//! is an integer division and the whole map reduces to a fixed sparse blend
//! of mesh vertices (`SamplingPlan`). The irregular-destination warp inverts
//! the bilinear cell map to synthesize stitched images from rectangular ones.
//!
//! Out-of-raster policy: images sample with border clamp so content does not
//! bleed black at the edges; masks sample as zero so uncovered area reads as
//! void.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{MeshGrid, Vec2};
use crate::raster::{ImageBuffer, MaskBuffer};

/// Fixed parallel chunk size (in pixels) so reductions are bit-identical
/// regardless of thread count.
pub(crate) const PAR_CHUNK: usize = 8192;

const RIGID_TOLERANCE: f64 = 1e-6;
const CELL_TOLERANCE: f64 = 1e-7;
const NEWTON_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Border {
    Clamp,
    Zero,
}

/// Precomputed per-pixel cell corner indices and bilinear weights for a
/// uniform destination grid. Depends only on the raster size and mesh shape,
/// so it is built once and reused across mesh iterates.
#[derive(Debug, Clone)]
pub(crate) struct SamplingPlan {
    pub out_w: usize,
    pub out_h: usize,
    pub rows: usize,
    pub cols: usize,
    base: Vec<u32>,
    w_tl: Vec<f64>,
    w_tr: Vec<f64>,
    w_bl: Vec<f64>,
    w_br: Vec<f64>,
}

impl SamplingPlan {
    /// Builds the plan for a rigid mesh, validating that it is a uniform grid
    /// spanning a positive integer raster.
    pub fn new(rigid: &MeshGrid) -> Result<Self> {
        let (rows, cols) = (rigid.rows(), rigid.cols());
        let span = rigid.vertex(rows - 1, cols - 1);
        let origin = rigid.vertex(0, 0);
        if origin.x.abs() > RIGID_TOLERANCE || origin.y.abs() > RIGID_TOLERANCE {
            return Err(Error::InvalidDimensions(
                "rigid mesh must start at the origin".into(),
            ));
        }
        let out_w = span.x.round();
        let out_h = span.y.round();
        if out_w < 1.0 || out_h < 1.0 {
            return Err(Error::InvalidDimensions(
                "rigid mesh spans a zero-sized output raster".into(),
            ));
        }
        if (span.x - out_w).abs() > RIGID_TOLERANCE || (span.y - out_h).abs() > RIGID_TOLERANCE {
            return Err(Error::InvalidDimensions(
                "rigid mesh span is not an integer raster size".into(),
            ));
        }
        let (u, v) = (rows - 1, cols - 1);
        for i in 0..rows {
            for j in 0..cols {
                let expect_x = out_w * (j as f64 / v as f64);
                let expect_y = out_h * (i as f64 / u as f64);
                let got = rigid.vertex(i, j);
                if (got.x - expect_x).abs() > RIGID_TOLERANCE
                    || (got.y - expect_y).abs() > RIGID_TOLERANCE
                {
                    return Err(Error::InvalidDimensions(
                        "rigid mesh is not a uniform grid".into(),
                    ));
                }
            }
        }
        let (out_w, out_h) = (out_w as usize, out_h as usize);
        let n = out_w * out_h;
        let mut base = vec![0u32; n];
        let mut w_tl = vec![0.0; n];
        let mut w_tr = vec![0.0; n];
        let mut w_bl = vec![0.0; n];
        let mut w_br = vec![0.0; n];
        let inv_cell_x = v as f64 / out_w as f64;
        let inv_cell_y = u as f64 / out_h as f64;
        for py in 0..out_h {
            let t_global = (py as f64 + 0.5) * inv_cell_y;
            let i = (t_global.floor() as usize).min(u - 1);
            let t = t_global - i as f64;
            for px in 0..out_w {
                let s_global = (px as f64 + 0.5) * inv_cell_x;
                let j = (s_global.floor() as usize).min(v - 1);
                let s = s_global - j as f64;
                let p = py * out_w + px;
                base[p] = (i * cols + j) as u32;
                w_tl[p] = (1.0 - s) * (1.0 - t);
                w_tr[p] = s * (1.0 - t);
                w_bl[p] = (1.0 - s) * t;
                w_br[p] = s * t;
            }
        }
        Ok(Self { out_w, out_h, rows, cols, base, w_tl, w_tr, w_bl, w_br })
    }

    pub fn pixel_count(&self) -> usize {
        self.out_w * self.out_h
    }

    /// Maps every output pixel to its source position under `mesh`: the
    /// sparse vertex blend, evaluated in parallel.
    pub fn map_points(&self, mesh: &MeshGrid, qx: &mut [f64], qy: &mut [f64]) {
        debug_assert_eq!(qx.len(), self.pixel_count());
        let cols = self.cols;
        let xs = mesh.xs();
        let ys = mesh.ys();
        qx.par_chunks_mut(PAR_CHUNK)
            .zip(qy.par_chunks_mut(PAR_CHUNK))
            .enumerate()
            .for_each(|(ci, (cqx, cqy))| {
                let off = ci * PAR_CHUNK;
                for k in 0..cqx.len() {
                    let p = off + k;
                    let b = self.base[p] as usize;
                    let (tl, tr, bl, br) = (self.w_tl[p], self.w_tr[p], self.w_bl[p], self.w_br[p]);
                    cqx[k] = tl * xs[b] + tr * xs[b + 1] + bl * xs[b + cols] + br * xs[b + cols + 1];
                    cqy[k] = tl * ys[b] + tr * ys[b + 1] + bl * ys[b + cols] + br * ys[b + cols + 1];
                }
            });
    }

    /// Scatters per-pixel source-position adjoints back onto mesh vertices:
    /// the transpose of `map_points`. Accumulates into `grad_x`/`grad_y`.
    pub fn accumulate_vertex_gradient(
        &self,
        gqx: &[f64],
        gqy: &[f64],
        grad_x: &mut [f64],
        grad_y: &mut [f64],
    ) {
        debug_assert_eq!(grad_x.len(), self.rows * self.cols);
        let cols = self.cols;
        let nv = self.rows * self.cols;
        let partials: Vec<(Vec<f64>, Vec<f64>)> = gqx
            .par_chunks(PAR_CHUNK)
            .zip(gqy.par_chunks(PAR_CHUNK))
            .enumerate()
            .map(|(ci, (cgx, cgy))| {
                let off = ci * PAR_CHUNK;
                let mut lx = vec![0.0; nv];
                let mut ly = vec![0.0; nv];
                for k in 0..cgx.len() {
                    let p = off + k;
                    let b = self.base[p] as usize;
                    let (gx, gy) = (cgx[k], cgy[k]);
                    lx[b] += self.w_tl[p] * gx;
                    ly[b] += self.w_tl[p] * gy;
                    lx[b + 1] += self.w_tr[p] * gx;
                    ly[b + 1] += self.w_tr[p] * gy;
                    lx[b + cols] += self.w_bl[p] * gx;
                    ly[b + cols] += self.w_bl[p] * gy;
                    lx[b + cols + 1] += self.w_br[p] * gx;
                    ly[b + cols + 1] += self.w_br[p] * gy;
                }
                (lx, ly)
            })
            .collect();
        for (lx, ly) in partials {
            for i in 0..nv {
                grad_x[i] += lx[i];
                grad_y[i] += ly[i];
            }
        }
    }
}

#[inline]
fn fetch<const ZERO_PAD: bool>(
    data: &[f64],
    w: usize,
    h: usize,
    channels: usize,
    c: usize,
    xi: i64,
    yi: i64,
) -> f64 {
    if ZERO_PAD {
        if xi < 0 || yi < 0 || xi >= w as i64 || yi >= h as i64 {
            return 0.0;
        }
        data[((yi as usize) * w + xi as usize) * channels + c]
    } else {
        let x = xi.clamp(0, w as i64 - 1) as usize;
        let y = yi.clamp(0, h as i64 - 1) as usize;
        data[(y * w + x) * channels + c]
    }
}

#[allow(clippy::too_many_arguments)]
fn sample_rows<const ZERO_PAD: bool>(
    data: &[f64],
    w: usize,
    h: usize,
    channels: usize,
    qx: &[f64],
    qy: &[f64],
    out: &mut [f64],
) {
    out.par_chunks_mut(PAR_CHUNK * channels)
        .enumerate()
        .for_each(|(ci, chunk)| {
            let off = ci * PAR_CHUNK;
            for k in 0..chunk.len() / channels {
                let p = off + k;
                let xf = qx[p] - 0.5;
                let yf = qy[p] - 0.5;
                let x0 = xf.floor();
                let y0 = yf.floor();
                let fx = xf - x0;
                let fy = yf - y0;
                let (x0, y0) = (x0 as i64, y0 as i64);
                for c in 0..channels {
                    let p00 = fetch::<ZERO_PAD>(data, w, h, channels, c, x0, y0);
                    let p10 = fetch::<ZERO_PAD>(data, w, h, channels, c, x0 + 1, y0);
                    let p01 = fetch::<ZERO_PAD>(data, w, h, channels, c, x0, y0 + 1);
                    let p11 = fetch::<ZERO_PAD>(data, w, h, channels, c, x0 + 1, y0 + 1);
                    let top = p00 + (p10 - p00) * fx;
                    let bot = p01 + (p11 - p01) * fx;
                    chunk[k * channels + c] = top + (bot - top) * fy;
                }
            }
        });
}

/// Bilinear sampling of an interleaved plane at continuous positions.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sample_plane(
    data: &[f64],
    w: usize,
    h: usize,
    channels: usize,
    qx: &[f64],
    qy: &[f64],
    border: Border,
    out: &mut [f64],
) {
    debug_assert_eq!(out.len(), qx.len() * channels);
    match border {
        Border::Clamp => sample_rows::<false>(data, w, h, channels, qx, qy, out),
        Border::Zero => sample_rows::<true>(data, w, h, channels, qx, qy, out),
    }
}

#[allow(clippy::too_many_arguments)]
fn position_adjoint_rows<const ZERO_PAD: bool>(
    data: &[f64],
    w: usize,
    h: usize,
    channels: usize,
    qx: &[f64],
    qy: &[f64],
    adjoint: &[f64],
    gqx: &mut [f64],
    gqy: &mut [f64],
) {
    gqx.par_chunks_mut(PAR_CHUNK)
        .zip(gqy.par_chunks_mut(PAR_CHUNK))
        .enumerate()
        .for_each(|(ci, (cgx, cgy))| {
            let off = ci * PAR_CHUNK;
            for k in 0..cgx.len() {
                let p = off + k;
                let xf = qx[p] - 0.5;
                let yf = qy[p] - 0.5;
                let x0 = xf.floor();
                let y0 = yf.floor();
                let fx = xf - x0;
                let fy = yf - y0;
                let (x0, y0) = (x0 as i64, y0 as i64);
                let mut ax = 0.0;
                let mut ay = 0.0;
                for c in 0..channels {
                    let g = adjoint[p * channels + c];
                    if g == 0.0 {
                        continue;
                    }
                    let p00 = fetch::<ZERO_PAD>(data, w, h, channels, c, x0, y0);
                    let p10 = fetch::<ZERO_PAD>(data, w, h, channels, c, x0 + 1, y0);
                    let p01 = fetch::<ZERO_PAD>(data, w, h, channels, c, x0, y0 + 1);
                    let p11 = fetch::<ZERO_PAD>(data, w, h, channels, c, x0 + 1, y0 + 1);
                    ax += g * ((1.0 - fy) * (p10 - p00) + fy * (p11 - p01));
                    ay += g * ((1.0 - fx) * (p01 - p00) + fx * (p11 - p10));
                }
                cgx[k] = ax;
                cgy[k] = ay;
            }
        });
}

/// Converts per-pixel sample adjoints into per-pixel source-position
/// adjoints: the chain through the bilinear sampling kernel.
#[allow(clippy::too_many_arguments)]
pub(crate) fn position_adjoint(
    data: &[f64],
    w: usize,
    h: usize,
    channels: usize,
    qx: &[f64],
    qy: &[f64],
    adjoint: &[f64],
    border: Border,
    gqx: &mut [f64],
    gqy: &mut [f64],
) {
    match border {
        Border::Clamp => {
            position_adjoint_rows::<false>(data, w, h, channels, qx, qy, adjoint, gqx, gqy)
        }
        Border::Zero => {
            position_adjoint_rows::<true>(data, w, h, channels, qx, qy, adjoint, gqx, gqy)
        }
    }
}

fn check_warp_inputs(src_mesh: &MeshGrid, rigid: &MeshGrid) -> Result<SamplingPlan> {
    if !src_mesh.same_shape(rigid) {
        return Err(rigid.shape_error(src_mesh.rows(), src_mesh.cols()));
    }
    SamplingPlan::new(rigid)
}

/// Backward warp of an image from `src_mesh` onto the uniform raster spanned
/// by `rigid`: each output pixel samples the source at the blend of its
/// cell's source-mesh corners.
pub fn warp_to_rigid(
    src: &ImageBuffer,
    src_mesh: &MeshGrid,
    rigid: &MeshGrid,
) -> Result<ImageBuffer> {
    let plan = check_warp_inputs(src_mesh, rigid)?;
    let n = plan.pixel_count();
    let mut qx = vec![0.0; n];
    let mut qy = vec![0.0; n];
    plan.map_points(src_mesh, &mut qx, &mut qy);
    let mut out = vec![0.0; n * src.channels()];
    sample_plane(
        src.data(),
        src.width(),
        src.height(),
        src.channels(),
        &qx,
        &qy,
        Border::Clamp,
        &mut out,
    );
    Ok(ImageBuffer::from_convex_samples(plan.out_w, plan.out_h, src.channels(), out))
}

/// As [`warp_to_rigid`] on a single channel, with void (zero) outside the
/// source raster.
pub fn warp_mask_to_rigid(
    mask: &MaskBuffer,
    src_mesh: &MeshGrid,
    rigid: &MeshGrid,
) -> Result<MaskBuffer> {
    let plan = check_warp_inputs(src_mesh, rigid)?;
    let n = plan.pixel_count();
    let mut qx = vec![0.0; n];
    let mut qy = vec![0.0; n];
    plan.map_points(src_mesh, &mut qx, &mut qy);
    let mut out = vec![0.0; n];
    sample_plane(
        mask.data(),
        mask.width(),
        mask.height(),
        1,
        &qx,
        &qy,
        Border::Zero,
        &mut out,
    );
    Ok(MaskBuffer::from_convex_samples(plan.out_w, plan.out_h, out))
}

#[derive(Debug, Clone, Copy)]
struct Quad {
    a: Vec2, // top-left
    e: Vec2, // top-right minus top-left
    f: Vec2, // bottom-left minus top-left
    g: Vec2, // twist term
}

impl Quad {
    fn from_cell(mesh: &MeshGrid, i: usize, j: usize) -> Self {
        let a = mesh.vertex(i, j);
        let b = mesh.vertex(i, j + 1);
        let c = mesh.vertex(i + 1, j);
        let d = mesh.vertex(i + 1, j + 1);
        Self {
            a,
            e: Vec2::new(b.x - a.x, b.y - a.y),
            f: Vec2::new(c.x - a.x, c.y - a.y),
            g: Vec2::new(d.x - b.x - c.x + a.x, d.y - b.y - c.y + a.y),
        }
    }

    fn point_at(&self, s: f64, t: f64) -> Vec2 {
        Vec2::new(
            self.a.x + s * self.e.x + t * self.f.x + s * t * self.g.x,
            self.a.y + s * self.e.y + t * self.f.y + s * t * self.g.y,
        )
    }

    /// Bilinear jacobian determinant; linear in each of (s,t), so corner
    /// positivity implies positivity over the whole cell.
    fn jacobian(&self, s: f64, t: f64) -> f64 {
        let dxs = Vec2::new(self.e.x + t * self.g.x, self.e.y + t * self.g.y);
        let dxt = Vec2::new(self.f.x + s * self.g.x, self.f.y + s * self.g.y);
        cross(dxs, dxt)
    }

    /// Analytic inverse of the bilinear map followed by Newton polish.
    /// Returns cell coordinates when `p` lies inside (within tolerance).
    fn invert(&self, p: Vec2) -> Result<Option<(f64, f64)>> {
        let h = Vec2::new(p.x - self.a.x, p.y - self.a.y);
        let qa = -cross(self.f, self.g);
        let qb = cross(h, self.g) + cross(self.e, self.f);
        let qc = cross(h, self.e);
        let scale = self.e.x.abs() + self.e.y.abs() + self.f.x.abs() + self.f.y.abs();
        let mut candidates: [Option<f64>; 2] = [None, None];
        if qa.abs() <= 1e-12 * scale * scale {
            if qb.abs() <= 1e-14 * scale * scale {
                return Ok(None);
            }
            candidates[0] = Some(-qc / qb);
        } else {
            let disc = qb * qb - 4.0 * qa * qc;
            if disc < 0.0 {
                return Ok(None);
            }
            let sq = disc.sqrt();
            let qq = -0.5 * (qb + qb.signum() * sq);
            candidates[0] = Some(qq / qa);
            if qq.abs() > 0.0 {
                candidates[1] = Some(qc / qq);
            }
        }
        for cand in candidates.into_iter().flatten() {
            let t = cand;
            if !(-CELL_TOLERANCE..=1.0 + CELL_TOLERANCE).contains(&t) {
                continue;
            }
            let den_x = self.e.x + t * self.g.x;
            let den_y = self.e.y + t * self.g.y;
            let s = if den_x.abs() >= den_y.abs() {
                (h.x - t * self.f.x) / den_x
            } else {
                (h.y - t * self.f.y) / den_y
            };
            if !(-CELL_TOLERANCE..=1.0 + CELL_TOLERANCE).contains(&s) {
                continue;
            }
            let (mut s, mut t) = (s, t);
            let mut converged = false;
            for _ in 0..5 {
                let r = self.point_at(s, t);
                let rx = r.x - p.x;
                let ry = r.y - p.y;
                let j00 = self.e.x + t * self.g.x;
                let j01 = self.f.x + s * self.g.x;
                let j10 = self.e.y + t * self.g.y;
                let j11 = self.f.y + s * self.g.y;
                let det = j00 * j11 - j01 * j10;
                if det.abs() < 1e-300 {
                    break;
                }
                let ds = (rx * j11 - ry * j01) / det;
                let dt = (ry * j00 - rx * j10) / det;
                s -= ds;
                t -= dt;
                if ds.abs().max(dt.abs()) <= NEWTON_TOLERANCE {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::InverseBilinearDiverged { row: 0, col: 0 });
            }
            if (-CELL_TOLERANCE..=1.0 + CELL_TOLERANCE).contains(&s)
                && (-CELL_TOLERANCE..=1.0 + CELL_TOLERANCE).contains(&t)
            {
                return Ok(Some((s.clamp(0.0, 1.0), t.clamp(0.0, 1.0))));
            }
        }
        Ok(None)
    }
}

#[inline]
fn cross(u: Vec2, v: Vec2) -> f64 {
    u.x * v.y - u.y * v.x
}

fn sample_point_clamped(
    data: &[f64],
    w: usize,
    h: usize,
    channels: usize,
    x: f64,
    y: f64,
    out: &mut [f64],
) {
    let xf = x - 0.5;
    let yf = y - 0.5;
    let x0 = xf.floor();
    let y0 = yf.floor();
    let fx = xf - x0;
    let fy = yf - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    for (c, slot) in out.iter_mut().enumerate() {
        let p00 = fetch::<false>(data, w, h, channels, c, x0, y0);
        let p10 = fetch::<false>(data, w, h, channels, c, x0 + 1, y0);
        let p01 = fetch::<false>(data, w, h, channels, c, x0, y0 + 1);
        let p11 = fetch::<false>(data, w, h, channels, c, x0 + 1, y0 + 1);
        let top = p00 + (p10 - p00) * fx;
        let bot = p01 + (p11 - p01) * fx;
        *slot = top + (bot - top) * fy;
    }
}

/// Validates that every cell of `mesh` is a positively oriented,
/// non-self-intersecting quad.
pub fn validate_cells(mesh: &MeshGrid) -> Result<()> {
    for i in 0..mesh.rows() - 1 {
        for j in 0..mesh.cols() - 1 {
            let quad = Quad::from_cell(mesh, i, j);
            for (s, t) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
                if quad.jacobian(s, t) <= 0.0 {
                    return Err(Error::DegenerateCell { row: i, col: j });
                }
            }
        }
    }
    Ok(())
}

/// Backward warp with an irregular destination: each output pixel inside a
/// `dst_mesh` quad is mapped back to the matching rigid-cell position and
/// sampled there; pixels outside every quad receive `fill` with mask 0,
/// covered pixels get mask 1.
pub fn warp_from_rigid(
    src: &ImageBuffer,
    rigid: &MeshGrid,
    dst_mesh: &MeshGrid,
    out_w: usize,
    out_h: usize,
    fill: f64,
) -> Result<(ImageBuffer, MaskBuffer)> {
    if !dst_mesh.same_shape(rigid) {
        return Err(rigid.shape_error(dst_mesh.rows(), dst_mesh.cols()));
    }
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidDimensions("output raster must be non-empty".into()));
    }
    if !(0.0..=1.0).contains(&fill) || !fill.is_finite() {
        return Err(Error::OutOfRange { context: "fill intensity" });
    }
    for i in 0..dst_mesh.rows() {
        for j in 0..dst_mesh.cols() {
            let v = dst_mesh.vertex(i, j);
            let slack = 1e-9;
            if v.x < -slack || v.y < -slack || v.x > out_w as f64 + slack || v.y > out_h as f64 + slack
            {
                return Err(Error::VertexOutOfBounds { row: i, col: j });
            }
        }
    }
    validate_cells(dst_mesh)?;

    let channels = src.channels();
    let mut out = vec![fill; out_w * out_h * channels];
    let mut mask = vec![0.0; out_w * out_h];

    // Row-major cell scan with first-claim ties keeps shared-edge pixels
    // deterministic.
    for i in 0..dst_mesh.rows() - 1 {
        for j in 0..dst_mesh.cols() - 1 {
            let quad = Quad::from_cell(dst_mesh, i, j);
            let rigid_quad = Quad::from_cell(rigid, i, j);
            let corners = [
                quad.point_at(0.0, 0.0),
                quad.point_at(1.0, 0.0),
                quad.point_at(0.0, 1.0),
                quad.point_at(1.0, 1.0),
            ];
            let min_x = corners.iter().map(|c| c.x).fold(f64::INFINITY, f64::min);
            let max_x = corners.iter().map(|c| c.x).fold(f64::NEG_INFINITY, f64::max);
            let min_y = corners.iter().map(|c| c.y).fold(f64::INFINITY, f64::min);
            let max_y = corners.iter().map(|c| c.y).fold(f64::NEG_INFINITY, f64::max);
            // Pixel centers (px + 0.5) covered by the bounding box.
            let px_lo = (min_x - 0.5).ceil().max(0.0) as i64;
            let px_hi = ((max_x - 0.5).floor() as i64).min(out_w as i64 - 1);
            let py_lo = (min_y - 0.5).ceil().max(0.0) as i64;
            let py_hi = ((max_y - 0.5).floor() as i64).min(out_h as i64 - 1);
            if px_hi < px_lo || py_hi < py_lo {
                continue;
            }
            for py in py_lo..=py_hi {
                for px in px_lo..=px_hi {
                    let p = py as usize * out_w + px as usize;
                    if mask[p] != 0.0 {
                        continue;
                    }
                    let center = Vec2::new(px as f64 + 0.5, py as f64 + 0.5);
                    let inverted = quad
                        .invert(center)
                        .map_err(|_| Error::InverseBilinearDiverged { row: i, col: j })?;
                    if let Some((s, t)) = inverted {
                        let srcq = rigid_quad.point_at(s, t);
                        sample_point_clamped(
                            src.data(),
                            src.width(),
                            src.height(),
                            channels,
                            srcq.x,
                            srcq.y,
                            &mut out[p * channels..(p + 1) * channels],
                        );
                        mask[p] = 1.0;
                    }
                }
            }
        }
    }

    Ok((
        ImageBuffer::from_convex_samples(out_w, out_h, channels, out),
        MaskBuffer::from_convex_samples(out_w, out_h, mask),
    ))
}
