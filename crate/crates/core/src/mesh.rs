//! Mesh geometry: the rigid target grid, motion-displaced meshes, and edge
//! accessors.
//!
//! Vertices live in continuous image pixel coordinates, origin at the top
//! left, y pointing down. A `(U+1)x(V+1)` grid is stored row-major with row
//! index `i` running along U (vertical) and column index `j` along V
//! (horizontal).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// A `(rows x cols)` grid of vertex positions.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshGrid {
    rows: usize,
    cols: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl MeshGrid {
    pub fn from_vertices(rows: usize, cols: usize, vertices: &[(f64, f64)]) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::InvalidDimensions(format!(
                "mesh must be at least 2x2, got {rows}x{cols}"
            )));
        }
        if vertices.len() != rows * cols {
            return Err(Error::InvalidDimensions(format!(
                "vertex count {} does not match {rows}x{cols}",
                vertices.len()
            )));
        }
        let mut xs = Vec::with_capacity(vertices.len());
        let mut ys = Vec::with_capacity(vertices.len());
        for &(x, y) in vertices {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::NonFinite { context: "mesh vertices" });
            }
            xs.push(x);
            ys.push(y);
        }
        Ok(Self { rows, cols, xs, ys })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Mesh resolution along the vertical axis (U = rows - 1).
    pub fn grid_u(&self) -> usize {
        self.rows - 1
    }

    /// Mesh resolution along the horizontal axis (V = cols - 1).
    pub fn grid_v(&self) -> usize {
        self.cols - 1
    }

    #[inline]
    pub fn vertex(&self, row: usize, col: usize) -> Vec2 {
        let idx = row * self.cols + col;
        Vec2::new(self.xs[idx], self.ys[idx])
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn same_shape(&self, other: &MeshGrid) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub(crate) fn shape_error(&self, rows: usize, cols: usize) -> Error {
        Error::ShapeMismatch {
            expected_rows: self.rows,
            expected_cols: self.cols,
            rows,
            cols,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&MeshGridRepr::from(self)).expect("mesh serialization")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let repr: MeshGridRepr = serde_json::from_str(text).map_err(|source| Error::Json {
            path: "<inline mesh json>".into(),
            source,
        })?;
        MeshGrid::from_vertices(
            repr.rows,
            repr.cols,
            &repr.vertices.iter().map(|v| (v[0], v[1])).collect::<Vec<_>>(),
        )
    }
}

/// Wire format: `{ "rows", "cols", "vertices": [[x,y],...] }`.
#[derive(Serialize, Deserialize)]
struct MeshGridRepr {
    rows: usize,
    cols: usize,
    vertices: Vec<[f64; 2]>,
}

impl From<&MeshGrid> for MeshGridRepr {
    fn from(mesh: &MeshGrid) -> Self {
        Self {
            rows: mesh.rows,
            cols: mesh.cols,
            vertices: mesh
                .xs
                .iter()
                .zip(&mesh.ys)
                .map(|(&x, &y)| [x, y])
                .collect(),
        }
    }
}

/// Per-vertex displacement field relative to a companion grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshMotion {
    rows: usize,
    cols: usize,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

impl MeshMotion {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            dx: vec![0.0; rows * cols],
            dy: vec![0.0; rows * cols],
        }
    }

    pub fn from_components(rows: usize, cols: usize, dx: Vec<f64>, dy: Vec<f64>) -> Result<Self> {
        if dx.len() != rows * cols || dy.len() != rows * cols {
            return Err(Error::InvalidDimensions(format!(
                "motion component length {}/{} does not match {rows}x{cols}",
                dx.len(),
                dy.len()
            )));
        }
        if dx.iter().chain(dy.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "mesh motion" });
        }
        Ok(Self { rows, cols, dx, dy })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dx(&self) -> &[f64] {
        &self.dx
    }

    pub fn dy(&self) -> &[f64] {
        &self.dy
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> Vec2 {
        let idx = row * self.cols + col;
        Vec2::new(self.dx[idx], self.dy[idx])
    }

    pub fn max_abs(&self) -> f64 {
        self.dx
            .iter()
            .chain(self.dy.iter())
            .fold(0.0_f64, |acc, &v| acc.max(v.abs()))
    }

    /// Componentwise sum with another motion of the same shape.
    pub fn add(&self, other: &MeshMotion) -> Result<MeshMotion> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                expected_rows: self.rows,
                expected_cols: self.cols,
                rows: other.rows,
                cols: other.cols,
            });
        }
        let dx = self.dx.iter().zip(&other.dx).map(|(a, b)| a + b).collect();
        let dy = self.dy.iter().zip(&other.dy).map(|(a, b)| a + b).collect();
        Ok(MeshMotion { rows: self.rows, cols: self.cols, dx, dy })
    }

    /// Scales displacements anisotropically; used when a mesh solved on a
    /// downsampled raster is lifted back to full resolution.
    pub fn scaled(&self, sx: f64, sy: f64) -> MeshMotion {
        MeshMotion {
            rows: self.rows,
            cols: self.cols,
            dx: self.dx.iter().map(|v| v * sx).collect(),
            dy: self.dy.iter().map(|v| v * sy).collect(),
        }
    }
}

/// Builds the predefined rigid target mesh: a uniform `(u+1)x(v+1)` grid with
/// vertex `(i,j)` at `(j*width/v, i*height/u)`, spanning `[0,width]x[0,height]`.
pub fn build_rigid_mesh(width: f64, height: f64, u: usize, v: usize) -> Result<MeshGrid> {
    if !width.is_finite() || !height.is_finite() || width <= 0.0 || height <= 0.0 {
        return Err(Error::InvalidDimensions(format!(
            "raster {width}x{height} must be positive and finite"
        )));
    }
    if u < 1 || v < 1 {
        return Err(Error::InvalidDimensions(format!(
            "grid counts {u}x{v} must be at least 1"
        )));
    }
    let rows = u + 1;
    let cols = v + 1;
    let mut xs = Vec::with_capacity(rows * cols);
    let mut ys = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let y = height * (i as f64 / u as f64);
        for j in 0..cols {
            xs.push(width * (j as f64 / v as f64));
            ys.push(y);
        }
    }
    Ok(MeshGrid { rows, cols, xs, ys })
}

/// Displaces every vertex of `base` by the matching motion entry.
pub fn apply_motion(base: &MeshGrid, motion: &MeshMotion) -> Result<MeshGrid> {
    if base.rows != motion.rows || base.cols != motion.cols {
        return Err(base.shape_error(motion.rows, motion.cols));
    }
    let xs = base.xs.iter().zip(&motion.dx).map(|(a, b)| a + b).collect();
    let ys = base.ys.iter().zip(&motion.dy).map(|(a, b)| a + b).collect();
    Ok(MeshGrid { rows: base.rows, cols: base.cols, xs, ys })
}

/// Edge vectors of a mesh: horizontal edges `v(i,j+1) - v(i,j)` (there are
/// `(U+1)*V` of them) and vertical edges `v(i+1,j) - v(i,j)` (`U*(V+1)`),
/// both row-major.
pub fn mesh_edges(mesh: &MeshGrid) -> (Vec<Vec2>, Vec<Vec2>) {
    let mut horizontal = Vec::with_capacity(mesh.rows * (mesh.cols - 1));
    let mut vertical = Vec::with_capacity((mesh.rows - 1) * mesh.cols);
    for i in 0..mesh.rows {
        for j in 0..mesh.cols - 1 {
            let a = mesh.vertex(i, j);
            let b = mesh.vertex(i, j + 1);
            horizontal.push(Vec2::new(b.x - a.x, b.y - a.y));
        }
    }
    for i in 0..mesh.rows - 1 {
        for j in 0..mesh.cols {
            let a = mesh.vertex(i, j);
            let b = mesh.vertex(i + 1, j);
            vertical.push(Vec2::new(b.x - a.x, b.y - a.y));
        }
    }
    (horizontal, vertical)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rigid_mesh_8x6_matches_expected_layout() {
        let mesh = build_rigid_mesh(512.0, 384.0, 8, 6).unwrap();
        assert_eq!(mesh.rows(), 9);
        assert_eq!(mesh.cols(), 7);
        assert_eq!(mesh.vertex(0, 0), Vec2::new(0.0, 0.0));
        assert_eq!(mesh.vertex(8, 6), Vec2::new(512.0, 384.0));
        assert_eq!(mesh.vertex(0, 6), Vec2::new(512.0, 0.0));
        assert_eq!(mesh.vertex(8, 0), Vec2::new(0.0, 384.0));
        let spacing = 512.0 / 6.0;
        for i in 0..9 {
            for j in 0..6 {
                let d = mesh.vertex(i, j + 1).x - mesh.vertex(i, j).x;
                assert!((d - spacing).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rigid_mesh_single_cell_and_ablation_sizes() {
        let tiny = build_rigid_mesh(2.0, 2.0, 1, 1).unwrap();
        assert_eq!(tiny.rows(), 2);
        assert_eq!(tiny.cols(), 2);
        assert_eq!(tiny.vertex(0, 0), Vec2::new(0.0, 0.0));
        assert_eq!(tiny.vertex(0, 1), Vec2::new(2.0, 0.0));
        assert_eq!(tiny.vertex(1, 0), Vec2::new(0.0, 2.0));
        assert_eq!(tiny.vertex(1, 1), Vec2::new(2.0, 2.0));

        let fine = build_rigid_mesh(512.0, 384.0, 16, 12).unwrap();
        assert_eq!(fine.rows(), 17);
        assert_eq!(fine.cols(), 13);
    }

    #[test]
    fn rigid_mesh_rejects_bad_inputs() {
        assert!(build_rigid_mesh(0.0, 384.0, 8, 6).is_err());
        assert!(build_rigid_mesh(512.0, -1.0, 8, 6).is_err());
        assert!(build_rigid_mesh(512.0, 384.0, 0, 6).is_err());
        assert!(build_rigid_mesh(512.0, 384.0, 8, 0).is_err());
    }

    #[test]
    fn apply_motion_identity_and_translation() {
        let rigid = build_rigid_mesh(512.0, 384.0, 8, 6).unwrap();
        let zero = MeshMotion::zeros(9, 7);
        assert_eq!(apply_motion(&rigid, &zero).unwrap(), rigid);

        let shift = MeshMotion::from_components(9, 7, vec![5.0; 63], vec![0.0; 63]).unwrap();
        let moved = apply_motion(&rigid, &shift).unwrap();
        for i in 0..9 {
            for j in 0..7 {
                assert_eq!(moved.vertex(i, j).x, rigid.vertex(i, j).x + 5.0);
                assert_eq!(moved.vertex(i, j).y, rigid.vertex(i, j).y);
            }
        }

        let wrong = MeshMotion::zeros(5, 5);
        assert!(matches!(
            apply_motion(&rigid, &wrong),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn edge_lists_have_expected_counts_and_values() {
        let rigid = build_rigid_mesh(512.0, 384.0, 8, 6).unwrap();
        let (h, v) = mesh_edges(&rigid);
        assert_eq!(h.len(), 54); // (U+1)*V = 9*6
        assert_eq!(v.len(), 56); // U*(V+1) = 8*7
        for e in &h {
            assert!((e.x - 512.0 / 6.0).abs() < 1e-9);
            assert!(e.y.abs() < 1e-12);
        }
        for e in &v {
            assert!(e.x.abs() < 1e-12);
            assert!((e.y - 48.0).abs() < 1e-9);
        }

        let tiny = build_rigid_mesh(2.0, 2.0, 1, 1).unwrap();
        let (h, v) = mesh_edges(&tiny);
        assert_eq!(h.len(), 2);
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn mesh_json_round_trip() {
        let mesh = build_rigid_mesh(512.0, 384.0, 2, 3).unwrap();
        let text = mesh.to_json();
        assert!(text.starts_with("{\"rows\":3,\"cols\":4,\"vertices\":[["));
        let back = MeshGrid::from_json(&text).unwrap();
        assert_eq!(mesh, back);
    }

    proptest! {
        #[test]
        fn rigid_spacing_is_uniform(
            w in 1.0f64..4096.0,
            h in 1.0f64..4096.0,
            u in 1usize..12,
            v in 1usize..12,
        ) {
            let mesh = build_rigid_mesh(w, h, u, v).unwrap();
            let dx = w / v as f64;
            let dy = h / u as f64;
            for i in 0..mesh.rows() {
                for j in 0..mesh.cols() - 1 {
                    let d = mesh.vertex(i, j + 1).x - mesh.vertex(i, j).x;
                    prop_assert!((d - dx).abs() <= 1e-12 * w.max(1.0));
                }
            }
            for i in 0..mesh.rows() - 1 {
                let d = mesh.vertex(i + 1, 0).y - mesh.vertex(i, 0).y;
                prop_assert!((d - dy).abs() <= 1e-12 * h.max(1.0));
            }
            prop_assert_eq!(mesh.vertex(u, v), Vec2::new(w, h));
        }

        #[test]
        fn motion_negation_inverts(
            seed in 0u64..1000,
        ) {
            let rigid = build_rigid_mesh(100.0, 80.0, 4, 3).unwrap();
            let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
            let mut next = move || {
                state ^= state >> 12;
                state ^= state << 25;
                state ^= state >> 27;
                (state.wrapping_mul(0x2545F4914F6CDD1D) >> 11) as f64 / (1u64 << 53) as f64
            };
            let n = rigid.rows() * rigid.cols();
            let dx: Vec<f64> = (0..n).map(|_| next() * 10.0 - 5.0).collect();
            let dy: Vec<f64> = (0..n).map(|_| next() * 10.0 - 5.0).collect();
            let motion = MeshMotion::from_components(rigid.rows(), rigid.cols(), dx, dy).unwrap();
            let neg = motion.scaled(-1.0, -1.0);
            let round = apply_motion(&apply_motion(&rigid, &motion).unwrap(), &neg).unwrap();
            for (a, b) in round.xs().iter().zip(rigid.xs()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in round.ys().iter().zip(rigid.ys()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
