//! Log-density abstraction shared by targets, intermediates, and models.

use std::sync::Arc;

/// An unnormalized log-density over `R^dim`.
///
/// Contract: `log_density` returns a finite value or `-inf` (a hard zero of
/// the density); `+inf` and NaN are bugs and are rejected wherever values
/// enter a buffer.
pub trait LogDensity: Send + Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> f64;
}

/// Shared handle to a log-density. Intermediates hold handles to their base
/// and target, so a handle must stay cheap to clone.
pub type DensityRef = Arc<dyn LogDensity>;

impl LogDensity for Arc<dyn LogDensity> {
    fn dim(&self) -> usize {
        self.as_ref().dim()
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        self.as_ref().log_density(x)
    }
}

/// Diagonal Gaussian used in tests and as a quadrature reference; the
/// mixture family covers the general case.
#[derive(Debug, Clone)]
pub struct DiagonalGaussian {
    pub mean: Vec<f64>,
    pub sigma: Vec<f64>,
    log_norm: f64,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, sigma: Vec<f64>) -> Self {
        assert_eq!(mean.len(), sigma.len());
        assert!(sigma.iter().all(|&s| s > 0.0));
        let log_norm = sigma
            .iter()
            .map(|s| -0.5 * (2.0 * std::f64::consts::PI).ln() - s.ln())
            .sum();
        Self { mean, sigma, log_norm }
    }

    pub fn isotropic(dim: usize, sigma: f64) -> Self {
        Self::new(vec![0.0; dim], vec![sigma; dim])
    }

    /// Differential entropy, 0.5 * log((2 pi e)^d * prod sigma_k^2).
    pub fn entropy(&self) -> f64 {
        let d = self.mean.len() as f64;
        0.5 * d * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()
            + self.sigma.iter().map(|s| s.ln()).sum::<f64>()
    }
}

impl LogDensity for DiagonalGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.mean.len());
        let mut quad = 0.0;
        for i in 0..x.len() {
            let z = (x[i] - self.mean[i]) / self.sigma[i];
            quad += z * z;
        }
        self.log_norm - 0.5 * quad
    }
}
