//! Shared oracle helpers for the integration suites.
//!
//! Everything in this module is computed independently of the library under
//! test: Simpson quadrature over dense grids, a compensated log-sum-exp,
//! golden-section search, and closed-form Gaussian identities. Tests compare
//! library outputs against these, never the other way around.
#![allow(dead_code)]

use annealer::LogDensity;

/// Compensated (Neumaier) summation; the oracle for `log_sum_exp`.
pub fn lse_oracle(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &x in xs {
        let term = (x - m).exp();
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
    }
    m + (sum + comp).ln()
}

/// log of Simpson weights for `n` (odd) uniformly spaced nodes on [lo, hi].
pub fn simpson_log_weights(lo: f64, hi: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 3 && n % 2 == 1, "Simpson needs an odd node count");
    let h = (hi - lo) / (n - 1) as f64;
    let nodes: Vec<f64> = (0..n).map(|j| lo + h * j as f64).collect();
    let log_h3 = (h / 3.0).ln();
    let log_w = (0..n)
        .map(|j| {
            let c: f64 = if j == 0 || j == n - 1 {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            log_h3 + c.ln()
        })
        .collect();
    (nodes, log_w)
}

/// Quadrature atoms shared by the exact-dual and exact-KL oracles: log
/// integration weight, log model density, log target density per node.
pub struct QuadTable {
    pub log_w: Vec<f64>,
    pub lq: Vec<f64>,
    pub lp: Vec<f64>,
}

impl QuadTable {
    /// 1D table over [lo, hi] with `n` Simpson nodes.
    pub fn build_1d(
        lo: f64,
        hi: f64,
        n: usize,
        model: &dyn LogDensity,
        target: &dyn LogDensity,
    ) -> Self {
        let (nodes, log_w) = simpson_log_weights(lo, hi, n);
        let lq = nodes.iter().map(|&x| model.log_density(&[x])).collect();
        let lp = nodes.iter().map(|&x| target.log_density(&[x])).collect();
        Self { log_w, lq, lp }
    }

    /// 2D tensor-product table over [lo, hi]^2 with `n`^2 nodes.
    pub fn build_2d(
        lo: f64,
        hi: f64,
        n: usize,
        model: &dyn LogDensity,
        target: &dyn LogDensity,
    ) -> Self {
        let (nodes, lw1) = simpson_log_weights(lo, hi, n);
        let mut log_w = Vec::with_capacity(n * n);
        let mut lq = Vec::with_capacity(n * n);
        let mut lp = Vec::with_capacity(n * n);
        for (i, &x) in nodes.iter().enumerate() {
            for (j, &y) in nodes.iter().enumerate() {
                log_w.push(lw1[i] + lw1[j]);
                lq.push(model.log_density(&[x, y]));
                lp.push(target.log_density(&[x, y]));
            }
        }
        Self { log_w, lq, lp }
    }

    /// Exact log-normalizer of the blend exp((lambda lq + lp) / s).
    pub fn log_z(&self, lambda: f64, eta: f64) -> f64 {
        let s = 1.0 + lambda + eta;
        let terms: Vec<f64> = (0..self.log_w.len())
            .map(|j| self.log_w[j] + (lambda * self.lq[j] + self.lp[j]) / s)
            .collect();
        lse_oracle(&terms)
    }

    /// Exact differential entropy of the (normalized) model on the grid.
    pub fn model_entropy(&self) -> f64 {
        let terms: Vec<f64> = (0..self.log_w.len()).map(|j| self.log_w[j] + self.lq[j]).collect();
        let log_norm = lse_oracle(&terms);
        let mut h = 0.0;
        for j in 0..self.log_w.len() {
            let p = (terms[j] - log_norm).exp();
            if p > 0.0 {
                h -= p * self.lq[j];
            }
        }
        // Renormalization keeps the oracle honest if q integrates to 1-1e-12.
        h + log_norm
    }

    /// Exact dual: -s log Z - lambda eps_tr + eta (H(q_i) - eps_ent).
    pub fn dual(&self, lambda: f64, eta: f64, eps_tr: f64, eps_ent: f64) -> f64 {
        let s = 1.0 + lambda + eta;
        -s * self.log_z(lambda, eta) - lambda * eps_tr + eta * (self.model_entropy() - eps_ent)
    }

    /// Exact KL(q* || q_i) of the blend against the model, on the atoms.
    pub fn kl_next_vs_model(&self, lambda: f64, eta: f64) -> f64 {
        let s = 1.0 + lambda + eta;
        let log_z = self.log_z(lambda, eta);
        let lq_terms: Vec<f64> = (0..self.log_w.len()).map(|j| self.log_w[j] + self.lq[j]).collect();
        let log_norm_q = lse_oracle(&lq_terms);
        let mut kl = 0.0;
        for j in 0..self.log_w.len() {
            let log_star = (lambda * self.lq[j] + self.lp[j]) / s - log_z;
            let p = (self.log_w[j] + log_star).exp();
            if p > 0.0 {
                kl += p * (log_star - (self.lq[j] - log_norm_q));
            }
        }
        kl
    }

    /// Exact entropy of the blend q*(lambda, eta) on the atoms.
    pub fn next_entropy(&self, lambda: f64, eta: f64) -> f64 {
        let s = 1.0 + lambda + eta;
        let log_z = self.log_z(lambda, eta);
        let mut h = 0.0;
        for j in 0..self.log_w.len() {
            let log_star = (lambda * self.lq[j] + self.lp[j]) / s - log_z;
            let p = (self.log_w[j] + log_star).exp();
            if p > 0.0 {
                h -= p * log_star;
            }
        }
        h
    }
}

/// Golden-section maximization on [lo, hi]; `iters` of 200 pins the argmax
/// far below the tolerances any test asserts.
pub fn golden_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, iters: usize) -> f64 {
    let inv_phi = 0.618_033_988_749_894_9_f64;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Exact trust-region-only multiplier: argmax of the quadrature dual in
/// u = log1p(lambda) coordinates.
pub fn solve_lambda_exact(table: &QuadTable, eps_tr: f64, lambda_max: f64) -> f64 {
    // eps_ent never enters at eta = 0; pass 0 so the product stays finite.
    let u = golden_max(|u| table.dual(u.exp_m1(), 0.0, eps_tr, 0.0), 0.0, lambda_max.ln_1p(), 200);
    u.exp_m1()
}

/// Exact combined multipliers by coordinate ascent of the quadrature dual,
/// each pass a golden-section in log1p coordinates.
pub fn solve_pair_exact(
    table: &QuadTable,
    eps_tr: f64,
    eps_ent: f64,
    mult_max: f64,
) -> (f64, f64) {
    let u_max = mult_max.ln_1p();
    let (mut ul, mut ue) = (0.0f64, 0.0f64);
    for _ in 0..60 {
        let prev = (ul, ue);
        ul = golden_max(|u| table.dual(u.exp_m1(), ue.exp_m1(), eps_tr, eps_ent), 0.0, u_max, 200);
        ue = golden_max(|u| table.dual(ul.exp_m1(), u.exp_m1(), eps_tr, eps_ent), 0.0, u_max, 200);
        if (ul - prev.0).abs() < 1e-12 && (ue - prev.1).abs() < 1e-12 {
            break;
        }
    }
    (ul.exp_m1(), ue.exp_m1())
}

// ---------------------------------------------------------------------------
// Closed-form Gaussian identities (1D).
// ---------------------------------------------------------------------------

pub const LOG_TWO_PI: f64 = 1.837_877_066_409_345_5;

pub fn gauss_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LOG_TWO_PI + var.ln()) - 0.5 * (x - mean) * (x - mean) / var
}

/// KL(N(m0, v0) || N(m1, v1)).
pub fn gauss_kl(m0: f64, v0: f64, m1: f64, v1: f64) -> f64 {
    0.5 * (v0 / v1 + (m1 - m0) * (m1 - m0) / v1 - 1.0 + (v1 / v0).ln())
}

/// The blend exp((lambda log q + log p) / s) of two Gaussians is Gaussian;
/// returns its (mean, var) for model (m, v), target (mu, vp), s = 1+lambda+eta.
pub fn gauss_blend(m: f64, v: f64, mu: f64, vp: f64, lambda: f64, eta: f64) -> (f64, f64) {
    let s = 1.0 + lambda + eta;
    let prec = (lambda / v + 1.0 / vp) / s;
    let mean = (lambda * m / v + mu / vp) / (lambda / v + 1.0 / vp);
    (mean, 1.0 / prec)
}

// ---------------------------------------------------------------------------
// Small regression helper for entropy-trace linearity checks.
// ---------------------------------------------------------------------------

/// Least-squares line through (i, y_i); returns (slope, intercept, max |residual|).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_resid = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - (slope * x + intercept)).abs())
        .fold(0.0f64, f64::max);
    (slope, intercept, max_resid)
}

// ---------------------------------------------------------------------------
// Run-config scaffolding for runner-level tests.
// ---------------------------------------------------------------------------

use annealer::config::RunConfig;
use annealer::targets::TargetSpec;
use std::path::Path;

/// A small, fast run configuration writing into `dir`; callers adjust fields.
pub fn base_run_config(target: TargetSpec, dir: &Path, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::for_target(target);
    cfg.family.k_comp = 3;
    cfg.family.em_max_iters = 30;
    cfg.family.init_entropy_scale = 2.0;
    cfg.loop_.buffer_size = 20_000;
    cfg.loop_.max_steps = 30;
    cfg.loop_.seed = seed;
    cfg.output.run_dir = dir.to_path_buf();
    cfg
}
