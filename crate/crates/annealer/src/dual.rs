//! Dual objectives of the per-step constrained problems and the multiplier
//! search that maximizes them.
//!
//! Each annealing step solves, over densities q,
//!
//!   minimize KL(q || p)   subject to   KL(q || q_i) <= eps_tr
//!                                      H(q_i) - H(q) <= eps_ent
//!
//! (either constraint may be disabled). The solution for fixed multipliers
//! (lambda, eta) is the closed-form intermediate handled in `path`; what is
//! estimated here from the buffer is the normalizer of that intermediate,
//!
//!   Z(lambda, eta) = E_{q_i}[ (p~(x) / q_i(x)^{1+eta})^{1/(1+lambda+eta)} ],
//!
//! and the dual functions built on it. Both duals are exactly concave even
//! on a fixed sample set: -(1+lambda+eta) * logsumexp(.../(1+lambda+eta)) is
//! a negated perspective of logsumexp composed with maps affine in
//! (lambda, eta).

use serde::{Deserialize, Serialize};

use crate::buffer::WeightedBuffer;
use crate::error::{Error, Result};
use crate::math::{self, log_sum_exp};
use crate::opt::maximize_scalar;

/// Hard upper bound on either multiplier; the search interval is
/// `[0, multiplier_max]` with `multiplier_max <= MULTIPLIER_MAX`.
pub const MULTIPLIER_MAX: f64 = 1e10;

/// Trust-region multiplier `lambda` and entropy multiplier `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiplierPair {
    pub lambda: f64,
    pub eta: f64,
}

impl MultiplierPair {
    pub fn new(lambda: f64, eta: f64) -> Result<Self> {
        for (name, v) in [("lambda", lambda), ("eta", eta)] {
            if !v.is_finite() || v < 0.0 || v > MULTIPLIER_MAX {
                return Err(Error::contract(format!(
                    "{name}={v} outside [0, {MULTIPLIER_MAX:e}]"
                )));
            }
        }
        Ok(Self { lambda, eta })
    }

    pub fn zero() -> Self {
        Self { lambda: 0.0, eta: 0.0 }
    }

    /// The common denominator 1 + lambda + eta.
    pub fn scale(&self) -> f64 {
        1.0 + self.lambda + self.eta
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualConfig {
    /// Trust-region radius eps_tr (nats), required positive when enabled.
    pub eps_tr: f64,
    /// Per-step entropy decrease allowance eps_ent (nats), finite when enabled.
    pub eps_ent: f64,
    pub tr_enabled: bool,
    pub ent_enabled: bool,
    /// Upper bound of the multiplier search interval.
    pub multiplier_max: f64,
    /// Starting point of the coordinate ascent (effectively zero).
    pub init_guess: f64,
    /// Convergence tolerance on the multipliers, applied in the log1p search
    /// coordinate (a relative tolerance on 1 + multiplier).
    pub tol: f64,
}

impl Default for DualConfig {
    fn default() -> Self {
        Self {
            eps_tr: 0.3,
            eps_ent: 0.5,
            tr_enabled: true,
            ent_enabled: true,
            multiplier_max: MULTIPLIER_MAX,
            init_guess: 1e-20,
            tol: 1e-8,
        }
    }
}

impl DualConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tr_enabled && !(self.eps_tr > 0.0 && self.eps_tr.is_finite()) {
            return Err(Error::config(format!(
                "eps_tr must be positive and finite when the trust region is enabled, got {}",
                self.eps_tr
            )));
        }
        if self.ent_enabled && !self.eps_ent.is_finite() {
            return Err(Error::config(format!(
                "eps_ent must be finite when the entropy constraint is enabled, got {}",
                self.eps_ent
            )));
        }
        if !(self.multiplier_max > 0.0 && self.multiplier_max <= MULTIPLIER_MAX) {
            return Err(Error::config(format!(
                "multiplier_max must lie in (0, {MULTIPLIER_MAX:e}], got {}",
                self.multiplier_max
            )));
        }
        if !(self.init_guess >= 0.0 && self.init_guess <= self.multiplier_max) {
            return Err(Error::config(format!(
                "init_guess must lie in [0, multiplier_max], got {}",
                self.init_guess
            )));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::config(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Per-sample log summand of the Z estimator:
/// (log_p[n] - (1+eta) log_q[n]) / (1+lambda+eta).
///
/// The same kernel gives the unnormalized log importance weights of the
/// intermediate against the model, so `mixture::importance_weights` shares it.
pub(crate) fn log_z_summands(log_p: &[f64], log_q: &[f64], mult: MultiplierPair) -> Vec<f64> {
    let one_plus_eta = 1.0 + mult.eta;
    let inv_s = 1.0 / mult.scale();
    log_p
        .iter()
        .zip(log_q)
        .map(|(&lp, &lq)| (lp - one_plus_eta * lq) * inv_s)
        .collect()
}

/// Monte Carlo log of the intermediate's normalizer under the buffer's model:
/// logsumexp_n((log_p[n] - (1+eta) log_q[n]) / (1+lambda+eta)) - log N.
pub fn log_z_estimate(buffer: &WeightedBuffer, mult: MultiplierPair) -> Result<f64> {
    let t = log_z_summands(buffer.log_p(), buffer.log_q(), mult);
    let lse = log_sum_exp(&t)?;
    if lse == f64::NEG_INFINITY {
        return Err(Error::DegenerateBuffer);
    }
    Ok(lse - (buffer.n() as f64).ln())
}

/// Trust-region dual g(lambda) = -(1+lambda) log Z(lambda, 0) - lambda eps_tr.
pub fn dual_tr(buffer: &WeightedBuffer, lambda: f64, cfg: &DualConfig) -> Result<f64> {
    let mult = MultiplierPair::new(lambda, 0.0)?;
    let log_z = log_z_estimate(buffer, mult)?;
    Ok(-(1.0 + lambda) * log_z - lambda * cfg.eps_tr)
}

/// Combined dual
/// g(lambda, eta) = -(1+lambda+eta) log Z(lambda, eta)
///                  - lambda eps_tr + eta (H(q_i) - eps_ent),
/// with H(q_i) estimated from the same buffer. At eta = 0 this is
/// bit-identical to `dual_tr`: the scale, the summands, and the entropy term
/// all reduce exactly.
///
/// The sign of the entropy term follows from the Lagrangian: the constraint
/// H(q_i) - H(q) <= eps_ent contributes eta * (H(q_i) - eps_ent) plus the
/// -eta H(q) absorbed into the (1+lambda+eta) log q coefficient, so the
/// plugged-back constant keeps its positive sign. Its eta-gradient is then
/// (H(q_i) - H(intermediate)) - eps_ent: positive exactly when the proposed
/// step sheds more entropy than allowed.
pub fn dual_tr_ent(buffer: &WeightedBuffer, mult: MultiplierPair, cfg: &DualConfig) -> Result<f64> {
    let log_z = log_z_estimate(buffer, mult)?;
    let h_est = -math::mean(buffer.log_q());
    Ok(-mult.scale() * log_z - mult.lambda * cfg.eps_tr + mult.eta * (h_est - cfg.eps_ent))
}

#[derive(Debug, Clone, Copy)]
pub struct DualSolution {
    pub mult: MultiplierPair,
    /// Dual value at the returned multipliers.
    pub dual_value: f64,
    /// Coordinate-ascent rounds used (1 for single-constraint solves).
    pub rounds: usize,
    /// False only when the round budget ran out before stationarity.
    pub converged: bool,
}

const MAX_ROUNDS: usize = 50;

/// Maximizes the dual enabled by `cfg`, searching each multiplier in
/// u = log1p coordinates over [0, log1p(multiplier_max)].
///
/// Two enabled constraints are solved by bounded coordinate ascent (lambda
/// pass, then eta pass) from `init_guess`; convergence is both coordinates
/// moving at most `tol` in u, or the dual value stalling to machine
/// precision for two consecutive rounds. Running out of rounds logs a
/// warning and returns the last iterate with `converged = false`.
pub fn solve_multipliers(buffer: &WeightedBuffer, cfg: &DualConfig) -> Result<DualSolution> {
    cfg.validate()?;
    let u_max = cfg.multiplier_max.ln_1p();
    let from_u = |u: f64| u.exp_m1().min(cfg.multiplier_max);

    match (cfg.tr_enabled, cfg.ent_enabled) {
        (false, false) => {
            let mult = MultiplierPair::zero();
            let dual_value = dual_tr_ent(buffer, mult, cfg)?;
            Ok(DualSolution { mult, dual_value, rounds: 0, converged: true })
        }
        (true, false) => {
            let u = maximize_scalar(|u| dual_tr(buffer, from_u(u), cfg), 0.0, u_max, cfg.tol)?;
            let mult = MultiplierPair::new(from_u(u), 0.0)?;
            let dual_value = dual_tr(buffer, mult.lambda, cfg)?;
            Ok(DualSolution { mult, dual_value, rounds: 1, converged: true })
        }
        (false, true) => {
            let u = maximize_scalar(
                |u| dual_tr_ent(buffer, MultiplierPair { lambda: 0.0, eta: from_u(u) }, cfg),
                0.0,
                u_max,
                cfg.tol,
            )?;
            let mult = MultiplierPair::new(0.0, from_u(u))?;
            let dual_value = dual_tr_ent(buffer, mult, cfg)?;
            Ok(DualSolution { mult, dual_value, rounds: 1, converged: true })
        }
        (true, true) => {
            let mut u_l = cfg.init_guess.ln_1p();
            let mut u_e = cfg.init_guess.ln_1p();
            let mut g_prev = f64::NEG_INFINITY;
            let mut stall = 0usize;
            let mut rounds = 0usize;
            let mut converged = false;
            let mut dual_value = f64::NEG_INFINITY;
            while rounds < MAX_ROUNDS {
                rounds += 1;
                let eta = from_u(u_e);
                let u_l_new = maximize_scalar(
                    |u| dual_tr_ent(buffer, MultiplierPair { lambda: from_u(u), eta }, cfg),
                    0.0,
                    u_max,
                    cfg.tol,
                )?;
                let lambda = from_u(u_l_new);
                let u_e_new = maximize_scalar(
                    |u| dual_tr_ent(buffer, MultiplierPair { lambda, eta: from_u(u) }, cfg),
                    0.0,
                    u_max,
                    cfg.tol,
                )?;
                let moved = (u_l_new - u_l).abs().max((u_e_new - u_e).abs());
                u_l = u_l_new;
                u_e = u_e_new;
                dual_value = dual_tr_ent(
                    buffer,
                    MultiplierPair { lambda, eta: from_u(u_e) },
                    cfg,
                )?;
                if moved <= cfg.tol {
                    converged = true;
                    break;
                }
                if (dual_value - g_prev).abs() <= 1e-13 * (1.0 + dual_value.abs()) {
                    stall += 1;
                    if stall >= 2 {
                        converged = true;
                        break;
                    }
                } else {
                    stall = 0;
                }
                g_prev = dual_value;
            }
            if !converged {
                log::warn!(
                    "multiplier coordinate ascent hit the {MAX_ROUNDS}-round budget \
                     (lambda={}, eta={})",
                    from_u(u_l),
                    from_u(u_e)
                );
            }
            let mult = MultiplierPair::new(from_u(u_l), from_u(u_e))?;
            Ok(DualSolution { mult, dual_value, rounds, converged })
        }
    }
}
