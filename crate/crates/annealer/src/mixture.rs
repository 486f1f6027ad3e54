//! Full-covariance Gaussian mixtures fitted by importance-weighted EM.
//!
//! The fit minimizes forward KL(q_{i+1} || q_theta) in its sampled form:
//! buffer points carry self-normalized weights w_n proportional to
//! q_{i+1}(x_n)/q_i(x_n), and EM ascends the weighted log-likelihood
//! sum_n w_n log q_theta(x_n). Forward KL is mass-covering, which is what
//! keeps far basins alive between annealing steps.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::buffer::{ProposalDensity, WeightedBuffer};
use crate::density::LogDensity;
use crate::dual::{log_z_summands, MultiplierPair};
use crate::error::{Error, Result};
use crate::math::log_sum_exp;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyConfig {
    /// Mixture components.
    pub k_comp: usize,
    /// Eigenvalue floor applied to every fitted covariance.
    pub var_floor: f64,
    /// Floor on mixture weights (simplex entries).
    pub weight_floor: f64,
    /// Relative weighted log-likelihood improvement below which EM stops.
    pub em_tol: f64,
    pub em_max_iters: usize,
    /// Standard deviation of the broad initial model; component means are
    /// jittered at the same scale when k_comp > 1.
    pub init_entropy_scale: f64,
    /// Reserved for stochastically fitted families; unused by closed-form EM.
    pub minibatch_size: usize,
    /// Reserved for stochastically fitted families; unused by closed-form EM.
    pub steps_per_fit: usize,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self {
            k_comp: 25,
            var_floor: 1e-6,
            weight_floor: 1e-8,
            em_tol: 1e-6,
            em_max_iters: 100,
            init_entropy_scale: 10.0,
            minibatch_size: 0,
            steps_per_fit: 0,
        }
    }
}

impl FamilyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_comp == 0 {
            return Err(Error::config("k_comp must be >= 1"));
        }
        if !(self.var_floor > 0.0 && self.var_floor.is_finite()) {
            return Err(Error::config(format!("var_floor must be positive, got {}", self.var_floor)));
        }
        if !(self.weight_floor > 0.0 && self.weight_floor <= 1.0 / self.k_comp as f64) {
            return Err(Error::config(format!(
                "weight_floor must lie in (0, 1/k_comp], got {}",
                self.weight_floor
            )));
        }
        if !(self.em_tol > 0.0 && self.em_tol.is_finite()) {
            return Err(Error::config(format!("em_tol must be positive, got {}", self.em_tol)));
        }
        if self.em_max_iters == 0 {
            return Err(Error::config("em_max_iters must be >= 1"));
        }
        if !(self.init_entropy_scale > 0.0 && self.init_entropy_scale.is_finite()) {
            return Err(Error::config(format!(
                "init_entropy_scale must be positive, got {}",
                self.init_entropy_scale
            )));
        }
        Ok(())
    }
}

/// Gaussian mixture with full covariances; Cholesky factors are cached so
/// evaluation and sampling never refactor.
#[derive(Debug, Clone)]
pub struct MixtureModel {
    dim: usize,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
    chol_l: Vec<DMatrix<f64>>,
    /// -0.5 d log(2 pi) - log det L per component.
    comp_log_norm: Vec<f64>,
}

/// Serialized form: weights, means, covariances in row-major order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureSnapshot {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<f64>>,
}

const LOG_TWO_PI: f64 = 1.837_877_066_409_345_5;

fn cholesky_lower(cov: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    nalgebra::Cholesky::new(cov.clone()).map(|c| c.l())
}

impl MixtureModel {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covs: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covs.len() != k {
            return Err(Error::contract("mixture needs matching weights/means/covs, k >= 1"));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::contract("mixture dim must be positive"));
        }
        let sum: f64 = weights.iter().sum();
        if !(sum.is_finite() && (sum - 1.0).abs() <= 1e-9) || weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::contract(format!(
                "mixture weights must be positive and sum to 1 (sum = {sum})"
            )));
        }
        let mut log_weights = Vec::with_capacity(k);
        let mut mean_vecs = Vec::with_capacity(k);
        let mut chol_l = Vec::with_capacity(k);
        let mut comp_log_norm = Vec::with_capacity(k);
        for c in 0..k {
            if means[c].len() != dim || covs[c].nrows() != dim || covs[c].ncols() != dim {
                return Err(Error::contract("mixture component shape mismatch"));
            }
            let l = cholesky_lower(&covs[c]).ok_or_else(|| {
                Error::contract(format!("component {c} covariance is not positive definite"))
            })?;
            let log_det_l: f64 = (0..dim).map(|i| l[(i, i)].ln()).sum();
            comp_log_norm.push(-0.5 * dim as f64 * LOG_TWO_PI - log_det_l);
            chol_l.push(l);
            mean_vecs.push(DVector::from_column_slice(&means[c]));
            log_weights.push((weights[c] / sum).ln());
        }
        let weights = weights.iter().map(|w| w / sum).collect();
        Ok(Self { dim, weights, log_weights, means: mean_vecs, covs, chol_l, comp_log_norm })
    }

    /// Broad seeded initialization: k_comp copies of an isotropic Gaussian
    /// with std `scale`; means are jittered N(0, scale^2 I) when k_comp > 1
    /// so the initial model carries seed-dependent asymmetry.
    pub fn init_broad(dim: usize, k_comp: usize, scale: f64, seed: u64) -> Result<Self> {
        if dim == 0 || k_comp == 0 || !(scale > 0.0) {
            return Err(Error::contract("init_broad needs dim >= 1, k_comp >= 1, scale > 0"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut means = Vec::with_capacity(k_comp);
        for _ in 0..k_comp {
            let mut m = vec![0.0; dim];
            if k_comp > 1 {
                for v in m.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = scale * z;
                }
            }
            means.push(m);
        }
        let cov = DMatrix::identity(dim, dim) * (scale * scale);
        let weights = vec![1.0 / k_comp as f64; k_comp];
        Self::new(weights, means, vec![cov; k_comp])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, c: usize) -> &DVector<f64> {
        &self.means[c]
    }

    pub fn cov(&self, c: usize) -> &DMatrix<f64> {
        &self.covs[c]
    }

    /// Log-density of component `c` at `x`; `z` is a dim-sized scratch slice.
    fn comp_log_density_into(&self, c: usize, x: &[f64], z: &mut [f64]) -> f64 {
        let d = self.dim;
        let l = &self.chol_l[c];
        let mu = &self.means[c];
        for i in 0..d {
            z[i] = x[i] - mu[i];
        }
        for i in 0..d {
            let mut acc = z[i];
            for j in 0..i {
                acc -= l[(i, j)] * z[j];
            }
            z[i] = acc / l[(i, i)];
        }
        let quad: f64 = z.iter().map(|v| v * v).sum();
        self.comp_log_norm[c] - 0.5 * quad
    }

    /// log q(x) = logsumexp_c(log w_c + log N_c(x)). Far tails come back very
    /// negative (possibly -inf after underflow) but never NaN.
    pub fn log_prob(&self, x: &[f64]) -> f64 {
        let mut z = vec![0.0; self.dim];
        let mut terms = Vec::with_capacity(self.k());
        for c in 0..self.k() {
            terms.push(self.log_weights[c] + self.comp_log_density_into(c, x, &mut z));
        }
        log_sum_exp(&terms).expect("component log-densities are never NaN")
    }

    /// Draws `n` points, row-major.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = vec![0.0; n * self.dim];
        for i in 0..n {
            let row = &mut out[i * self.dim..(i + 1) * self.dim];
            self.sample_point(&mut rng, row);
        }
        out
    }

    pub fn to_snapshot(&self) -> MixtureSnapshot {
        MixtureSnapshot {
            dim: self.dim,
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| m.as_slice().to_vec()).collect(),
            covariances: self
                .covs
                .iter()
                .map(|c| {
                    let mut flat = Vec::with_capacity(self.dim * self.dim);
                    for i in 0..self.dim {
                        for j in 0..self.dim {
                            flat.push(c[(i, j)]);
                        }
                    }
                    flat
                })
                .collect(),
        }
    }

    pub fn from_snapshot(s: &MixtureSnapshot) -> Result<Self> {
        let covs = s
            .covariances
            .iter()
            .map(|flat| {
                if flat.len() != s.dim * s.dim {
                    return Err(Error::contract("snapshot covariance has wrong length"));
                }
                Ok(DMatrix::from_row_slice(s.dim, s.dim, flat))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(s.weights.clone(), s.means.clone(), covs)
    }
}

impl LogDensity for MixtureModel {
    fn dim(&self) -> usize {
        self.dim
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        self.log_prob(x)
    }
}

impl ProposalDensity for MixtureModel {
    fn sample_point(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let u: f64 = rng.gen();
        let mut c = self.k() - 1;
        let mut acc = 0.0;
        for (idx, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                c = idx;
                break;
            }
        }
        let d = self.dim;
        let mut z = vec![0.0; d];
        for v in z.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let l = &self.chol_l[c];
        let mu = &self.means[c];
        for i in 0..d {
            let mut acc = mu[i];
            for j in 0..=i {
                acc += l[(i, j)] * z[j];
            }
            out[i] = acc;
        }
    }
}

/// Self-normalized weights of the intermediate q_{i+1} against the model the
/// buffer was drawn from: log w_n = (log_p[n] - (1+eta) log_q[n]) / (1+lambda+eta)
/// up to the constant `log_z`, which normalization removes. Returns weights
/// summing to 1.
pub fn importance_weights(
    buffer: &WeightedBuffer,
    mult: MultiplierPair,
    log_z: f64,
) -> Result<Vec<f64>> {
    if !log_z.is_finite() {
        return Err(Error::contract(format!("log_z must be finite, got {log_z}")));
    }
    let lw = log_z_summands(buffer.log_p(), buffer.log_q(), mult);
    let lse = log_sum_exp(&lw)?;
    if lse == f64::NEG_INFINITY {
        return Err(Error::DegenerateBuffer);
    }
    Ok(lw.iter().map(|&v| (v - lse).exp()).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    /// M-steps performed.
    pub em_iterations: usize,
    /// Weighted log-likelihood before each M-step and after the last one.
    pub weighted_loglik_trace: Vec<f64>,
    /// 1 / sum w_n^2 for the normalized importance weights.
    pub effective_weight_count: f64,
    pub degenerate_components_reset: usize,
}

/// Floors covariance eigenvalues at `var_floor`, symmetrizing first.
/// Returns None when the matrix is beyond repair (non-finite entries).
fn repair_covariance(cov: &DMatrix<f64>, var_floor: f64) -> Option<DMatrix<f64>> {
    if cov.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let sym = (cov + cov.transpose()) * 0.5;
    if let Some(l) = cholesky_lower(&sym) {
        let min_diag = (0..sym.nrows()).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
        if min_diag * min_diag >= var_floor * (1.0 - 1e-9) {
            return Some(sym);
        }
    }
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut vals = eig.eigenvalues;
    for v in vals.iter_mut() {
        if !v.is_finite() {
            return None;
        }
        if *v < var_floor {
            *v = var_floor;
        }
    }
    let q = eig.eigenvectors;
    Some(&q * DMatrix::from_diagonal(&vals) * q.transpose())
}

/// Importance-weighted EM refit, warm-started from `model`.
///
/// `weights` must be the normalized importance weights for the buffer.
/// The weighted log-likelihood sum_n w_n log q(x_n) is non-decreasing across
/// iterations except immediately after a component reset; EM stops when the
/// relative improvement drops below `em_tol` or after `em_max_iters` M-steps.
pub fn weighted_fit(
    model: &MixtureModel,
    buffer: &WeightedBuffer,
    weights: &[f64],
    cfg: &FamilyConfig,
) -> Result<(MixtureModel, FitReport)> {
    cfg.validate()?;
    let n = buffer.n();
    let d = buffer.dim();
    let k = model.k();
    if model.dim() != d {
        return Err(Error::contract("model/buffer dim mismatch"));
    }
    if weights.len() != n {
        return Err(Error::contract("one weight per buffer point required"));
    }
    let wsum: f64 = weights.iter().sum();
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) || (wsum - 1.0).abs() > 1e-6 {
        return Err(Error::contract(format!(
            "weights must be normalized and non-negative (sum = {wsum})"
        )));
    }
    let effective_weight_count = 1.0 / weights.iter().map(|&w| w * w).sum::<f64>();

    let mut cur = model.clone();
    let mut trace: Vec<f64> = Vec::new();
    let mut resets_total = 0usize;
    let mut reset_last_iter = false;
    let mut em_iterations = 0usize;

    // Deterministic stream for component resets, derived from the buffer seed.
    let mut reset_rng = ChaCha8Rng::seed_from_u64(buffer.seed() ^ 0xf17_ba5e_u64);

    // Scratch: responsibilities for one point, solver workspace.
    let mut comp_ld = vec![0.0; k];
    let mut z = vec![0.0; d];
    // Accumulators per component: mass, sum w x, sum w x x^T.
    let mut gamma = vec![0.0; k];
    let mut mean_acc = vec![DVector::<f64>::zeros(d); k];
    let mut m2_acc = vec![DMatrix::<f64>::zeros(d, d); k];

    let reset_floor = cfg.weight_floor.max(1e-12);

    loop {
        // E pass: weighted log-likelihood and sufficient statistics in one sweep.
        gamma.iter_mut().for_each(|g| *g = 0.0);
        mean_acc.iter_mut().for_each(|m| m.fill(0.0));
        m2_acc.iter_mut().for_each(|m| m.fill(0.0));
        let mut loglik = 0.0;
        for i in 0..n {
            let w = weights[i];
            if w == 0.0 {
                continue;
            }
            let x = buffer.point(i);
            for c in 0..k {
                comp_ld[c] = cur.log_weights[c] + cur.comp_log_density_into(c, x, &mut z);
            }
            let row_lse = log_sum_exp(&comp_ld)?;
            if row_lse == f64::NEG_INFINITY {
                return Err(Error::contract(format!(
                    "model assigns zero density to weighted buffer point {i}"
                )));
            }
            loglik += w * row_lse;
            for c in 0..k {
                let r = (comp_ld[c] - row_lse).exp();
                if r == 0.0 {
                    continue;
                }
                let cw = w * r;
                gamma[c] += cw;
                for a in 0..d {
                    mean_acc[c][a] += cw * x[a];
                    for b in 0..=a {
                        m2_acc[c][(a, b)] += cw * x[a] * x[b];
                    }
                }
            }
        }
        trace.push(loglik);

        // Convergence on relative improvement, never straight after a reset.
        if trace.len() >= 2 && !reset_last_iter {
            let prev = trace[trace.len() - 2];
            if loglik - prev <= cfg.em_tol * (1.0 + loglik.abs()) {
                break;
            }
        }
        if em_iterations >= cfg.em_max_iters {
            break;
        }

        // M pass.
        em_iterations += 1;
        reset_last_iter = false;
        let mut new_weights = vec![0.0; k];
        let mut new_means: Vec<DVector<f64>> = Vec::with_capacity(k);
        let mut new_covs: Vec<DMatrix<f64>> = Vec::with_capacity(k);
        let mut resets_this_iter: Vec<usize> = Vec::new();
        for c in 0..k {
            if gamma[c] <= reset_floor {
                resets_this_iter.push(c);
                new_weights[c] = 0.0; // assigned below
                new_means.push(cur.means[c].clone());
                new_covs.push(cur.covs[c].clone());
                continue;
            }
            let mu = &mean_acc[c] / gamma[c];
            let mut cov = DMatrix::<f64>::zeros(d, d);
            for a in 0..d {
                for b in 0..=a {
                    let v = m2_acc[c][(a, b)] / gamma[c] - mu[a] * mu[b];
                    cov[(a, b)] = v;
                    cov[(b, a)] = v;
                }
            }
            match repair_covariance(&cov, cfg.var_floor) {
                Some(cov) => {
                    new_weights[c] = gamma[c];
                    new_means.push(mu);
                    new_covs.push(cov);
                }
                None => {
                    resets_this_iter.push(c);
                    new_weights[c] = 0.0;
                    new_means.push(cur.means[c].clone());
                    new_covs.push(cur.covs[c].clone());
                }
            }
        }

        if !resets_this_iter.is_empty() {
            // Re-seed dead components on weighted buffer points with the
            // buffer's weighted spread; deterministic via the reset stream.
            let spread = global_weighted_diag_cov(buffer, weights, cfg.var_floor);
            for &c in &resets_this_iter {
                let idx = weighted_index(weights, reset_rng.gen::<f64>());
                new_means[c] = DVector::from_column_slice(buffer.point(idx));
                new_covs[c] = spread.clone();
                new_weights[c] = reset_floor.max(1e-6);
                resets_total += 1;
            }
            reset_last_iter = true;
        }

        // Simplex floor and renormalization.
        let mut total: f64 = new_weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::contract("all mixture mass vanished during EM"));
        }
        for w in new_weights.iter_mut() {
            *w = (*w / total).max(cfg.weight_floor);
        }
        total = new_weights.iter().sum();
        for w in new_weights.iter_mut() {
            *w /= total;
        }

        cur = MixtureModel::new(
            new_weights,
            new_means.iter().map(|m| m.as_slice().to_vec()).collect(),
            new_covs,
        )?;
    }

    let report = FitReport {
        em_iterations,
        weighted_loglik_trace: trace,
        effective_weight_count,
        degenerate_components_reset: resets_total,
    };
    Ok((cur, report))
}

fn global_weighted_diag_cov(
    buffer: &WeightedBuffer,
    weights: &[f64],
    var_floor: f64,
) -> DMatrix<f64> {
    let d = buffer.dim();
    let mut mean = vec![0.0; d];
    for i in 0..buffer.n() {
        let x = buffer.point(i);
        for a in 0..d {
            mean[a] += weights[i] * x[a];
        }
    }
    let mut var = vec![0.0; d];
    for i in 0..buffer.n() {
        let x = buffer.point(i);
        for a in 0..d {
            let c = x[a] - mean[a];
            var[a] += weights[i] * c * c;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for a in 0..d {
        cov[(a, a)] = var[a].max(var_floor);
    }
    cov
}

fn weighted_index(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}
