//! Deterministic composite-Simpson quadrature on fixed boxes, in log space.
//!
//! This is the exact-arithmetic counterpart of the Monte Carlo estimators:
//! an expectation over samples becomes a log-weighted sum over grid nodes,
//! so normalizers, entropies, KLs, and the dual functions can all be
//! computed to quadrature accuracy and used as oracles for the sampled
//! versions. Grids refine by doubling until the integral stabilizes.

use crate::density::LogDensity;
use crate::dual::MultiplierPair;
use crate::error::{Error, Result};
use crate::math::{kahan_sum, log_sum_exp};

/// Nodes plus log quadrature weights on a 1D interval or 2D box.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    dim: usize,
    points: Vec<f64>,
    log_w: Vec<f64>,
}

fn simpson_axis(lo: f64, hi: f64, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::contract(format!("bad quadrature interval [{lo}, {hi}]")));
    }
    if n < 3 || n % 2 == 0 {
        return Err(Error::contract(format!("Simpson needs odd n >= 3, got {n}")));
    }
    let h = (hi - lo) / (n - 1) as f64;
    let mut nodes = Vec::with_capacity(n);
    let mut log_w = Vec::with_capacity(n);
    let log_h3 = (h / 3.0).ln();
    for i in 0..n {
        nodes.push(lo + h * i as f64);
        let coef: f64 = if i == 0 || i == n - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        log_w.push(log_h3 + coef.ln());
    }
    Ok((nodes, log_w))
}

impl QuadratureGrid {
    pub fn simpson_1d(lo: f64, hi: f64, n: usize) -> Result<Self> {
        let (points, log_w) = simpson_axis(lo, hi, n)?;
        Ok(Self { dim: 1, points, log_w })
    }

    pub fn simpson_2d(lo: [f64; 2], hi: [f64; 2], n: [usize; 2]) -> Result<Self> {
        let (x, lwx) = simpson_axis(lo[0], hi[0], n[0])?;
        let (y, lwy) = simpson_axis(lo[1], hi[1], n[1])?;
        let mut points = Vec::with_capacity(x.len() * y.len() * 2);
        let mut log_w = Vec::with_capacity(x.len() * y.len());
        for (i, &xi) in x.iter().enumerate() {
            for (j, &yj) in y.iter().enumerate() {
                points.push(xi);
                points.push(yj);
                log_w.push(lwx[i] + lwy[j]);
            }
        }
        Ok(Self { dim: 2, points, log_w })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.log_w.len()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// Flat row-major node coordinates (n * dim values).
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_w
    }

    /// Log-density values at every node.
    pub fn eval_log(&self, f: &dyn LogDensity) -> Vec<f64> {
        (0..self.n()).map(|i| f.log_density(self.point(i))).collect()
    }

    /// log of integral of exp(log_vals) over the box.
    pub fn log_integral(&self, log_vals: &[f64]) -> Result<f64> {
        debug_assert_eq!(log_vals.len(), self.n());
        let terms: Vec<f64> = self
            .log_w
            .iter()
            .zip(log_vals)
            .map(|(&lw, &lv)| lw + lv)
            .collect();
        log_sum_exp(&terms)
    }

    /// Expectation of `values` under the normalized density exp(log_vals - log_z).
    pub fn expectation(&self, log_vals: &[f64], log_z: f64, values: &[f64]) -> f64 {
        debug_assert_eq!(log_vals.len(), self.n());
        debug_assert_eq!(values.len(), self.n());
        let terms: Vec<f64> = (0..self.n())
            .map(|i| {
                let p = (self.log_w[i] + log_vals[i] - log_z).exp();
                if p == 0.0 {
                    0.0
                } else {
                    p * values[i]
                }
            })
            .collect();
        kahan_sum(&terms)
    }
}

/// Differential entropy of the density with node values `log_vals` and
/// normalizer `log_z`: -E[log p] with log p = log_vals - log_z.
pub fn grid_entropy(grid: &QuadratureGrid, log_vals: &[f64], log_z: f64) -> f64 {
    let norm: Vec<f64> = log_vals.iter().map(|&v| v - log_z).collect();
    -grid.expectation(log_vals, log_z, &norm)
}

/// KL(a || b) for two unnormalized node-value vectors with their log-normalizers.
pub fn grid_kl(
    grid: &QuadratureGrid,
    log_a: &[f64],
    log_z_a: f64,
    log_b: &[f64],
    log_z_b: f64,
) -> f64 {
    let diff: Vec<f64> = log_a
        .iter()
        .zip(log_b)
        .map(|(&la, &lb)| (la - log_z_a) - (lb - log_z_b))
        .collect();
    grid.expectation(log_a, log_z_a, &diff)
}

/// Quadrature-exact log Z(lambda, eta) of the blend of a *normalized* base
/// (node values `log_q`) with the target (`log_p`):
/// log of integral of q^{lambda/s} p~^{1/s} = lse(log_w + (lambda log_q + log_p)/s).
pub fn grid_log_z(
    grid: &QuadratureGrid,
    log_q: &[f64],
    log_p: &[f64],
    mult: MultiplierPair,
) -> Result<f64> {
    let vals = grid_blend_log_vals(log_q, log_p, mult);
    grid.log_integral(&vals)
}

/// Unnormalized node values of the blended intermediate,
/// (lambda log_q + log_p) / (1+lambda+eta).
pub fn grid_blend_log_vals(log_q: &[f64], log_p: &[f64], mult: MultiplierPair) -> Vec<f64> {
    let inv_s = 1.0 / mult.scale();
    log_q
        .iter()
        .zip(log_p)
        .map(|(&lq, &lp)| {
            let base = if mult.lambda == 0.0 { 0.0 } else { mult.lambda * lq };
            (base + lp) * inv_s
        })
        .collect()
}

/// Quadrature-exact dual: -(1+lambda+eta) log Z(lambda, eta)
/// - lambda eps_tr - eta (h_q - eps_ent). `h_q` is the exact entropy of the
/// normalized base on the same grid. Exact counterpart of `dual::dual_tr_ent`.
pub fn grid_dual(
    grid: &QuadratureGrid,
    log_q: &[f64],
    log_p: &[f64],
    h_q: f64,
    mult: MultiplierPair,
    eps_tr: f64,
    eps_ent: f64,
) -> Result<f64> {
    let log_z = grid_log_z(grid, log_q, log_p, mult)?;
    Ok(-mult.scale() * log_z - mult.lambda * eps_tr - mult.eta * (h_q - eps_ent))
}

/// Refines a 1D log-integral by node doubling until two levels agree to
/// `tol`; returns the converged value and the per-level trace.
pub fn refine_log_integral_1d(
    f: &dyn LogDensity,
    lo: f64,
    hi: f64,
    n0: usize,
    tol: f64,
    max_levels: usize,
) -> Result<(f64, Vec<f64>)> {
    let mut n = n0;
    let mut trace = Vec::new();
    for _ in 0..max_levels {
        let grid = QuadratureGrid::simpson_1d(lo, hi, n)?;
        let vals = grid.eval_log(f);
        let v = grid.log_integral(&vals)?;
        if let Some(&prev) = trace.last() {
            trace.push(v);
            if (v - prev).abs() <= tol {
                return Ok((v, trace));
            }
        } else {
            trace.push(v);
        }
        n = 2 * n - 1;
    }
    Err(Error::QuadratureNonConvergence { trace })
}

/// 2D analogue of `refine_log_integral_1d`.
pub fn refine_log_integral_2d(
    f: &dyn LogDensity,
    lo: [f64; 2],
    hi: [f64; 2],
    n0: usize,
    tol: f64,
    max_levels: usize,
) -> Result<(f64, Vec<f64>)> {
    let mut n = n0;
    let mut trace = Vec::new();
    for _ in 0..max_levels {
        let grid = QuadratureGrid::simpson_2d(lo, hi, [n, n])?;
        let vals = grid.eval_log(f);
        let v = grid.log_integral(&vals)?;
        if let Some(&prev) = trace.last() {
            trace.push(v);
            if (v - prev).abs() <= tol {
                return Ok((v, trace));
            }
        } else {
            trace.push(v);
        }
        n = 2 * n - 1;
    }
    Err(Error::QuadratureNonConvergence { trace })
}
