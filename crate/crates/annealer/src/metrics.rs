//! Run-quality metrics: effective sample sizes, evidence bounds, and
//! distribution distances against deterministic reference statistics.
//!
//! Conventions: `eubo` is estimated on reference (ground-truth) samples and
//! upper-bounds log Z in expectation; `elbo` is estimated on model samples
//! and lower-bounds it. Neither ordering is asserted pointwise on Monte
//! Carlo estimates — only within combined standard errors.

use serde::Serialize;

use crate::buffer::WeightedBuffer;
use crate::density::LogDensity;
use crate::error::{Error, Result};
use crate::math::{log_sum_exp, mean, std_err};
use crate::path::PathState;
use crate::targets::{nearest_center, Hist2d, ReferenceStats};

/// How many of the largest values the 0.01%-winsorization touches.
fn clip_count(n: usize) -> usize {
    (n / 10_000).max(1)
}

/// Winsorizes the top `clip_count(n)` values down to the smallest value
/// among them (the paper-style clip; a no-op when that set has one element
/// and it is the maximum).
fn clip_top(values: &[f64]) -> Vec<f64> {
    let m = clip_count(values.len());
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| b.partial_cmp(a).expect("no NaN in clip input"));
    let threshold = sorted[m - 1];
    values.iter().map(|&v| v.min(threshold)).collect()
}

/// Self-normalized effective-sample-size fraction
/// (sum w)^2 / (n * sum w^2), computed in log space; invariant to positive
/// rescaling of the unnormalized weights. With `clip` set, the top 0.01%
/// of weights (at least one) are first winsorized to the smallest among them.
pub fn ess_fraction(log_weights: &[f64], clip: bool) -> Result<f64> {
    if log_weights.is_empty() {
        return Err(Error::EmptyInput("ESS needs at least one weight"));
    }
    if log_weights.iter().any(|v| v.is_nan()) {
        return Err(Error::contract("NaN log-weight in ESS input"));
    }
    let lw = if clip { clip_top(log_weights) } else { log_weights.to_vec() };
    let n = lw.len() as f64;
    let lse1 = log_sum_exp(&lw)?;
    if lse1 == f64::NEG_INFINITY {
        return Err(Error::DegenerateBuffer);
    }
    let doubled: Vec<f64> = lw.iter().map(|&v| 2.0 * v).collect();
    let lse2 = log_sum_exp(&doubled)?;
    Ok((2.0 * lse1 - n.ln() - lse2).exp())
}

/// Evidence upper bound estimated on ground-truth samples.
#[derive(Debug, Clone, Serialize)]
pub struct EuboReport {
    /// Mean of log p~ - log q over reference points; +inf when the model
    /// assigns zero density to any of them (mode collapse detector).
    pub value: f64,
    pub std_err: f64,
    /// Indices of reference points where the model vanished.
    pub offending: Vec<usize>,
}

/// EUBO = E_p[log p~(x) - log q(x)] over `points` (row-major, drawn from the
/// normalized target). Model zeros do not abort: they flip the estimate to
/// +inf and are listed, because a vanished mode is a result, not an error.
pub fn eubo_estimate(
    points: &[f64],
    dim: usize,
    target: &dyn LogDensity,
    model: &dyn LogDensity,
) -> Result<EuboReport> {
    if dim == 0 || points.is_empty() || points.len() % dim != 0 {
        return Err(Error::contract("reference points must be non-empty row-major rows"));
    }
    let n = points.len() / dim;
    let mut diffs = Vec::with_capacity(n);
    let mut offending = Vec::new();
    for i in 0..n {
        let x = &points[i * dim..(i + 1) * dim];
        let lp = target.log_density(x);
        if lp.is_nan() || lp == f64::INFINITY {
            return Err(Error::BadTargetValue { index: i, value: lp, point: x.to_vec() });
        }
        let lq = model.log_density(x);
        if lq.is_nan() {
            return Err(Error::BadModelValue { index: i, value: lq, point: x.to_vec() });
        }
        if lq == f64::NEG_INFINITY {
            offending.push(i);
        }
        diffs.push(lp - lq);
    }
    if offending.is_empty() {
        Ok(EuboReport { value: mean(&diffs), std_err: std_err(&diffs), offending })
    } else {
        Ok(EuboReport { value: f64::INFINITY, std_err: f64::NAN, offending })
    }
}

/// Evidence lower bound and importance-sampling log-normalizer from a buffer
/// drawn from the model against the raw target.
#[derive(Debug, Clone, Serialize)]
pub struct ElboReport {
    /// Mean of log p~ - log q; -inf when the target vanishes at a sample.
    pub elbo: f64,
    pub elbo_std_err: f64,
    /// Same mean with the top 0.01% of log-ratios winsorized — the
    /// extreme-weight-sensitivity diagnostic, reported alongside, never
    /// substituted.
    pub elbo_clipped: f64,
    /// log-mean-exp of the log-ratios.
    pub log_z_hat: f64,
    /// Delta-method standard error of log_z_hat:
    /// sqrt((1/ess_frac - 1)/(n - 1)) with unclipped weights.
    pub log_z_std_err: f64,
}

pub fn elbo_and_logz(buffer: &WeightedBuffer) -> Result<ElboReport> {
    let n = buffer.n();
    let diffs: Vec<f64> =
        buffer.log_p().iter().zip(buffer.log_q()).map(|(&lp, &lq)| lp - lq).collect();
    let log_z_hat = log_sum_exp(&diffs)? - (n as f64).ln();
    if log_z_hat == f64::NEG_INFINITY {
        return Err(Error::DegenerateBuffer);
    }
    let finite = diffs.iter().all(|v| v.is_finite());
    let (elbo, elbo_std_err, elbo_clipped) = if finite {
        (mean(&diffs), std_err(&diffs), mean(&clip_top(&diffs)))
    } else {
        (f64::NEG_INFINITY, f64::NAN, f64::NEG_INFINITY)
    };
    let ess = ess_fraction(&diffs, false)?;
    let log_z_std_err = if n > 1 { ((1.0 / ess - 1.0) / (n as f64 - 1.0)).sqrt() } else { f64::NAN };
    Ok(ElboReport { elbo, elbo_std_err, elbo_clipped, log_z_hat, log_z_std_err })
}

/// Half L1 distance between empirical mode-basin masses of `samples`
/// (row-major) and the reference basin masses. Basins are Voronoi cells of
/// the reference mode centers.
pub fn mode_mass_tv(samples: &[f64], dim: usize, stats: &ReferenceStats) -> Result<f64> {
    if dim != stats.dim {
        return Err(Error::contract("sample/reference dim mismatch"));
    }
    if samples.is_empty() || samples.len() % dim != 0 {
        return Err(Error::contract("samples must be non-empty row-major rows"));
    }
    let n = samples.len() / dim;
    let mut emp = vec![0.0; stats.mode_centers.len()];
    for i in 0..n {
        let x = &samples[i * dim..(i + 1) * dim];
        emp[nearest_center(x, &stats.mode_centers)] += 1.0 / n as f64;
    }
    let tv: f64 =
        emp.iter().zip(&stats.mode_masses).map(|(&e, &r)| (e - r).abs()).sum::<f64>() * 0.5;
    Ok(tv)
}

/// Half L1 distance between the empirical 2D histogram of `samples` and the
/// reference cell masses; out-of-box samples fall into the nearest edge cell.
pub fn hist2d_tv(samples: &[f64], hist: &Hist2d) -> Result<f64> {
    if samples.is_empty() || samples.len() % 2 != 0 {
        return Err(Error::contract("hist2d_tv needs non-empty 2D rows"));
    }
    let n = samples.len() / 2;
    let mut emp = vec![0.0; hist.mass.len()];
    for i in 0..n {
        emp[hist.cell_of(&samples[i * 2..i * 2 + 2])] += 1.0 / n as f64;
    }
    Ok(emp.iter().zip(&hist.mass).map(|(&e, &r)| (e - r).abs()).sum::<f64>() * 0.5)
}

/// Final report of one annealing run.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetrics {
    /// Clipped ESS fraction of final-model importance weights against the target.
    pub ess_reverse_frac: f64,
    pub eubo: f64,
    pub eubo_std_err: f64,
    /// Reference points at which the final model vanished (count).
    pub eubo_zero_density_points: usize,
    pub elbo: f64,
    pub elbo_std_err: f64,
    pub elbo_clipped: f64,
    pub log_z_hat: f64,
    pub log_z_std_err: f64,
    /// Present when reference statistics exist for the target.
    pub mode_mass_tv: Option<f64>,
    /// Present for bounded 2D targets.
    pub hist2d_tv: Option<f64>,
    /// Entropy estimate of the final model on its own samples.
    pub final_entropy_est: f64,
    /// Annealing steps executed (including the terminal unconstrained fit).
    pub steps: usize,
    /// False when the loop stopped at max_steps instead of the fixed point.
    pub converged: bool,
    pub per_step: Vec<PathState>,
}
