//! Energy and optimizer configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Defaults: 8x6 mesh, weights (1, 5e-6), threshold fraction 0.125, and a
/// 512x384 working raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyConfig {
    pub mesh_u: usize,
    pub mesh_v: usize,
    pub omega_a: f64,
    pub omega_p: f64,
    pub alpha: f64,
    pub image_w: usize,
    pub image_h: usize,
    pub optimizer: OptimizerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Step size in pixels for the moment-based update.
    pub step: f64,
    /// Iteration budget per stage.
    pub max_iters: usize,
    /// Convergence threshold on |delta total| over 10 consecutive iterations.
    pub tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { step: 0.5, max_iters: 300, tol: 1e-6 }
    }
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            mesh_u: 8,
            mesh_v: 6,
            omega_a: 1.0,
            omega_p: 5e-6,
            alpha: 0.125,
            image_w: 512,
            image_h: 384,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl EnergyConfig {
    pub fn with_raster(width: usize, height: usize) -> Self {
        Self { image_w: width, image_h: height, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mesh_u < 1 || self.mesh_v < 1 {
            return Err(Error::InvalidConfig(format!(
                "mesh resolution {}x{} must be at least 1x1",
                self.mesh_u, self.mesh_v
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha {} must lie in (0,1)",
                self.alpha
            )));
        }
        if self.omega_a < 0.0 || self.omega_p < 0.0 {
            return Err(Error::InvalidConfig("loss weights must be non-negative".into()));
        }
        if self.image_w == 0 || self.image_h == 0 {
            return Err(Error::InvalidConfig("raster must be non-empty".into()));
        }
        if !self.optimizer.step.is_finite() || self.optimizer.step <= 0.0 || self.optimizer.max_iters == 0 {
            return Err(Error::InvalidConfig("optimizer step and budget must be positive".into()));
        }
        Ok(())
    }

    /// Minimal horizontal edge projection before the hinge activates.
    pub fn threshold_x(&self) -> f64 {
        self.alpha * self.image_w as f64 / self.mesh_v as f64
    }

    /// Minimal vertical edge projection before the hinge activates.
    pub fn threshold_y(&self) -> f64 {
        self.alpha * self.image_h as f64 / self.mesh_u as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_settings_are_stable() {
        let cfg = EnergyConfig::default();
        assert_eq!(cfg.mesh_u, 8);
        assert_eq!(cfg.mesh_v, 6);
        assert_eq!(cfg.omega_a, 1.0);
        assert_eq!(cfg.omega_p, 5e-6);
        assert_eq!(cfg.alpha, 0.125);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    #[allow(clippy::field_reassign_with_default)]
    fn validation_rejects_bad_values() {
        let mut cfg = EnergyConfig::default();
        cfg.alpha = 1.0;
        assert!(cfg.validate().is_err());
        cfg.alpha = 0.125;
        cfg.mesh_u = 0;
        assert!(cfg.validate().is_err());
        cfg.mesh_u = 8;
        cfg.omega_p = -1.0;
        assert!(cfg.validate().is_err());
    }
}
