//! Mesh-deformation rectangling for stitched images.
//!
//! Turns stitched images with irregular boundaries into rectangular images by
//! optimizing a content mesh against a predefined rigid target grid, and
//! synthesizes ground-truth evaluation triplets by inverse mesh warping.

pub mod config;
pub mod energy;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod mesh;
pub mod metrics;
pub mod optimizer;
pub mod raster;
pub mod rng;
pub mod synth;
pub mod warp;

pub use config::{EnergyConfig, OptimizerConfig};
pub use energy::{
    appearance_loss, boundary_loss, energy_gradient, inter_grid_loss, intra_grid_loss,
    perception_loss, total_energy, EnergyBreakdown,
};
pub use error::{Error, Result};
pub use features::{FeatureExtractor, FeatureStack, IdentityExtractor, PyramidExtractor};
pub use gradcheck::{run_gradient_check, GradCheckReport};
pub use mesh::{apply_motion, build_rigid_mesh, mesh_edges, MeshGrid, MeshMotion, Vec2};
pub use metrics::{evaluate_pairs, psnr, psnr_masked, ssim, EvalReport, ImageScore};
pub use optimizer::{rectangle_image, solve_primary, solve_residual, SolveResult, StageOutcome};
pub use raster::{ImageBuffer, MaskBuffer};
pub use synth::{build_dataset, random_deformation, synthesize_triplet, DatasetManifest, Triplet};
pub use warp::{validate_cells, warp_from_rigid, warp_mask_to_rigid, warp_to_rigid};
