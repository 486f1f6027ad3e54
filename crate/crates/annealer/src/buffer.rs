//! Sample buffers: points drawn from the current model together with the raw
//! log-densities both the model and the target assign to them.
//!
//! Raw logs are the only thing stored; every downstream quantity (duals,
//! importance weights, entropy, evidence) is exponentiated as late as
//! possible, so the buffer is the single place where density evaluation
//! errors can enter and they are rejected here.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::density::LogDensity;
use crate::error::{Error, Result};
use crate::math;

/// Densities the engine can draw from. Sampling takes an explicit ChaCha
/// stream so a run is a pure function of its seed.
pub trait ProposalDensity: LogDensity {
    /// Writes one draw into `out` (`out.len() == dim`).
    fn sample_point(&self, rng: &mut ChaCha8Rng, out: &mut [f64]);
}

#[derive(Debug, Clone)]
pub struct WeightedBuffer {
    dim: usize,
    /// Row-major `n x dim`.
    points: Vec<f64>,
    /// Model log-density at each point, always finite.
    log_q: Vec<f64>,
    /// Target log-density at each point, finite or `-inf`.
    log_p: Vec<f64>,
    /// Seed the buffer was drawn with; reused to derive deterministic
    /// sub-streams (e.g. EM component resets).
    seed: u64,
}

impl WeightedBuffer {
    /// Assembles a buffer from raw parts, enforcing the same value contracts
    /// as `draw_buffer`.
    pub fn from_parts(
        dim: usize,
        points: Vec<f64>,
        log_q: Vec<f64>,
        log_p: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::contract("buffer dim must be positive"));
        }
        let n = log_q.len();
        if n == 0 {
            return Err(Error::EmptyInput("buffer must hold at least one sample"));
        }
        if log_p.len() != n || points.len() != n * dim {
            return Err(Error::contract(format!(
                "buffer shape mismatch: {} points of dim {dim}, {} log_q, {} log_p",
                points.len() / dim,
                n,
                log_p.len()
            )));
        }
        for (i, &lq) in log_q.iter().enumerate() {
            if !lq.is_finite() {
                return Err(Error::BadModelValue {
                    index: i,
                    value: lq,
                    point: points[i * dim..(i + 1) * dim].to_vec(),
                });
            }
        }
        for (i, &lp) in log_p.iter().enumerate() {
            if lp.is_nan() || lp == f64::INFINITY {
                return Err(Error::BadTargetValue {
                    index: i,
                    value: lp,
                    point: points[i * dim..(i + 1) * dim].to_vec(),
                });
            }
        }
        Ok(Self { dim, points, log_q, log_p, seed })
    }

    pub fn n(&self) -> usize {
        self.log_q.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn log_q(&self) -> &[f64] {
        &self.log_q
    }

    pub fn log_p(&self) -> &[f64] {
        &self.log_p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Replaces the model logs (used when the buffer is reused across steps
    /// after the model changed but the points and target logs are still good).
    pub fn rescore_model(&mut self, model: &dyn LogDensity) -> Result<()> {
        for i in 0..self.n() {
            let lq = model.log_density(self.point(i));
            if !lq.is_finite() {
                return Err(Error::BadModelValue {
                    index: i,
                    value: lq,
                    point: self.point(i).to_vec(),
                });
            }
            self.log_q[i] = lq;
        }
        Ok(())
    }
}

/// Draws `n` points from `model`, scoring them under both `model` and
/// `target`. Evaluation is sequential, so the buffer is a deterministic
/// function of `(model, target, n, seed)`.
pub fn draw_buffer(
    model: &dyn ProposalDensity,
    target: &dyn LogDensity,
    n: usize,
    seed: u64,
) -> Result<WeightedBuffer> {
    if n == 0 {
        return Err(Error::EmptyInput("draw_buffer needs n >= 1"));
    }
    let dim = model.dim();
    if dim != target.dim() {
        return Err(Error::contract(format!(
            "model dim {} != target dim {}",
            dim,
            target.dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![0.0; n * dim];
    let mut log_q = vec![0.0; n];
    let mut log_p = vec![0.0; n];
    for i in 0..n {
        let row = &mut points[i * dim..(i + 1) * dim];
        model.sample_point(&mut rng, row);
        let lq = model.log_density(row);
        if !lq.is_finite() {
            return Err(Error::BadModelValue { index: i, value: lq, point: row.to_vec() });
        }
        let lp = target.log_density(row);
        if lp.is_nan() || lp == f64::INFINITY {
            return Err(Error::BadTargetValue { index: i, value: lp, point: row.to_vec() });
        }
        log_q[i] = lq;
        log_p[i] = lp;
    }
    Ok(WeightedBuffer { dim, points, log_q, log_p, seed })
}

/// Monte Carlo differential entropy of the model the buffer was drawn from:
/// H(q) ~= -mean(log q). No fresh evaluations, just the stored logs.
pub fn entropy_estimate(buffer: &WeightedBuffer) -> f64 {
    -math::mean(buffer.log_q())
}

/// Standard error of `entropy_estimate` from the same logs.
pub fn entropy_std_err(buffer: &WeightedBuffer) -> f64 {
    math::std_err(buffer.log_q())
}

impl ProposalDensity for crate::density::DiagonalGaussian {
    fn sample_point(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        use rand_distr::{Distribution, StandardNormal};
        for (i, o) in out.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            *o = self.mean[i] + self.sigma[i] * z;
        }
    }
}
