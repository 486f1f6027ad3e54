//! Intermediate densities and the exponent ledger of the annealing path.
//!
//! One constrained step with multipliers (lambda, eta) maps the current
//! density q_i and target p~ to
//!
//!   log q_{i+1}(x) = (lambda log q_i(x) + log p~(x)) / (1+lambda+eta) - log Z.
//!
//! Folding the recursion gives the whole path in closed form,
//! q_i proportional to q_0^{1-beta_i} (p~^{alpha_i})^{beta_i}, where the
//! exponents obey, with r_i = lambda_i / (1+lambda_i+eta_i),
//!
//!   beta_{i+1}           = 1 - (1 - beta_i) r_i,
//!   alpha_{i+1} beta_{i+1} = alpha_i beta_i r_i + 1/(1+lambda_i+eta_i),
//!
//! from beta_0 = alpha_0 = 0. beta is how far q_0 has been forgotten, alpha
//! how much of the target's full power has been applied; both reach exactly
//! 1 on the terminal (0, 0) step. The ledger records one state per step and
//! is append-only, so the closed form can be rebuilt for any prefix.

use serde::{Deserialize, Serialize};

use crate::density::{DensityRef, LogDensity};
use crate::dual::MultiplierPair;
use crate::error::{Error, Result};

/// Geometric blend of a base density and the target with normalizer
/// correction; the closed-form solution of one constrained step.
pub struct IntermediateDensity {
    base: DensityRef,
    target: DensityRef,
    mult: MultiplierPair,
    log_z: f64,
}

impl IntermediateDensity {
    pub fn multipliers(&self) -> MultiplierPair {
        self.mult
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }
}

impl LogDensity for IntermediateDensity {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        // lambda = 0 must not evaluate 0 * (-inf) on a vanishing base.
        let weighted_base = if self.mult.lambda == 0.0 {
            0.0
        } else {
            self.mult.lambda * self.base.log_density(x)
        };
        (weighted_base + self.target.log_density(x)) / self.mult.scale() - self.log_z
    }
}

/// Builds q_{i+1} from the current density and the solved multipliers.
/// `log_z` is the (estimated) log-normalizer of the blend.
pub fn next_intermediate(
    base: DensityRef,
    target: DensityRef,
    mult: MultiplierPair,
    log_z: f64,
) -> Result<IntermediateDensity> {
    if base.dim() != target.dim() {
        return Err(Error::contract(format!(
            "base dim {} != target dim {}",
            base.dim(),
            target.dim()
        )));
    }
    if !log_z.is_finite() {
        return Err(Error::contract(format!("log_z must be finite, got {log_z}")));
    }
    Ok(IntermediateDensity { base, target, mult, log_z })
}

/// One completed annealing step: the multipliers used (None when the step
/// came from an external schedule), the exponents of the *resulting*
/// intermediate, and the step diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathState {
    pub step_index: usize,
    pub beta: f64,
    pub alpha: f64,
    pub multipliers: Option<MultiplierPair>,
    /// Entropy estimate of the model entering this step.
    pub entropy_est: f64,
    pub log_z_est: f64,
    pub step_ess_frac: f64,
}

/// Append-only record of the path. The initial state (beta = alpha = 0) is
/// implicit; entry k describes the intermediate produced by step k.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathLedger {
    entries: Vec<PathState>,
    closed_form_enabled: bool,
}

const BETA_SLACK: f64 = 1e-12;
const ALPHA_SLACK: f64 = 1e-9;

impl PathLedger {
    pub fn new(closed_form_enabled: bool) -> Self {
        Self { entries: Vec::new(), closed_form_enabled }
    }

    pub fn entries(&self) -> &[PathState] {
        &self.entries
    }

    /// Number of completed steps.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last(&self) -> Option<&PathState> {
        self.entries.last()
    }

    /// (beta_i, alpha_i) of intermediate i, for i in 0..=len.
    pub fn exponents(&self, i: usize) -> Result<(f64, f64)> {
        if i == 0 {
            return Ok((0.0, 0.0));
        }
        let state = self.entries.get(i - 1).ok_or_else(|| {
            Error::contract(format!("path index {i} out of range 0..={}", self.entries.len()))
        })?;
        Ok((state.beta, state.alpha))
    }

    /// Appends the state reached by one multiplier step, advancing the
    /// exponent recursions and enforcing their invariants.
    pub fn update(
        &mut self,
        mult: MultiplierPair,
        entropy_est: f64,
        log_z_est: f64,
        step_ess_frac: f64,
    ) -> Result<&PathState> {
        let (beta, alpha) = self.exponents(self.len())?;
        let s = mult.scale();
        let r = mult.lambda / s;
        let beta_next = 1.0 - (1.0 - beta) * r;
        let target_power = alpha * beta * r + 1.0 / s; // = alpha_{i+1} beta_{i+1}
        let alpha_next = if beta_next == 0.0 {
            0.0
        } else if mult.eta == 0.0 && (alpha == 1.0 || beta == 0.0) {
            // With no entropy constraint the target exponent stays saturated:
            // (alpha beta r + 1/s) / (1 - (1-beta) r) = 1 exactly when
            // s = 1 + lambda and the previous state was saturated (or the
            // path is at its start, where alpha beta = 0 regardless of alpha).
            1.0
        } else {
            target_power / beta_next
        };

        if !beta_next.is_finite() || beta_next < beta - BETA_SLACK {
            return Err(Error::InvariantViolation(format!(
                "beta decreased: {beta} -> {beta_next} at step {}",
                self.len()
            )));
        }
        // The ratio defining alpha divides by beta_next, which can be tiny
        // under aggressive trust regions; grant it proportionally more slack
        // than the additive beta recursion before calling foul.
        if !(0.0 - ALPHA_SLACK..=1.0 + ALPHA_SLACK).contains(&alpha_next) {
            return Err(Error::InvariantViolation(format!(
                "alpha {alpha_next} outside [0, 1] at step {}",
                self.len()
            )));
        }
        self.entries.push(PathState {
            step_index: self.entries.len(),
            beta: beta_next.clamp(0.0, 1.0),
            alpha: alpha_next.clamp(0.0, 1.0),
            multipliers: Some(mult),
            entropy_est,
            log_z_est,
            step_ess_frac,
        });
        Ok(self.entries.last().unwrap())
    }

    /// Appends a state whose exponents come from an external schedule
    /// (fixed-linear geometric path); no multipliers are recorded.
    pub fn push_scheduled(
        &mut self,
        beta: f64,
        alpha: f64,
        entropy_est: f64,
        log_z_est: f64,
        step_ess_frac: f64,
    ) -> Result<&PathState> {
        let (prev_beta, _) = self.exponents(self.len())?;
        if !beta.is_finite() || beta < prev_beta - BETA_SLACK {
            return Err(Error::InvariantViolation(format!(
                "scheduled beta decreased: {prev_beta} -> {beta}"
            )));
        }
        self.entries.push(PathState {
            step_index: self.entries.len(),
            beta,
            alpha,
            multipliers: None,
            entropy_est,
            log_z_est,
            step_ess_frac,
        });
        Ok(self.entries.last().unwrap())
    }
}

/// Unnormalized log-density of intermediate `i` reconstructed from the
/// ledger: (1 - beta_i) log q_0(x) + alpha_i beta_i log p~(x).
pub fn closed_form_log_density(
    ledger: &PathLedger,
    q0: &dyn LogDensity,
    target: &dyn LogDensity,
    i: usize,
    x: &[f64],
) -> Result<f64> {
    if !ledger.closed_form_enabled {
        return Err(Error::contract(
            "closed-form reconstruction disabled for this ledger",
        ));
    }
    let (beta, alpha) = ledger.exponents(i)?;
    let base_power = 1.0 - beta;
    let target_power = alpha * beta;
    // Zero exponents skip evaluation so a hard zero (-inf) never multiplies 0.
    let mut v = 0.0;
    if base_power != 0.0 {
        v += base_power * q0.log_density(x);
    }
    if target_power != 0.0 {
        v += target_power * target.log_density(x);
    }
    Ok(v)
}
