//! End-to-end annealing runs: the adaptive constrained loop, the fixed
//! geometric baseline, telemetry, reports, and parameter sweeps.
//!
//! Artifacts written into the run directory:
//! - `config.json`     resolved configuration (with derived constraint flags)
//! - `telemetry.jsonl` one record per annealing step
//! - `metrics.json`    final `RunMetrics`
//! - `final_model.json` fitted mixture snapshot (per-step snapshots optional)
//! - `report.csv` / `final_metrics.json` via `write_report` (idempotent)
//! - `abort_state.json` post-mortem state if a step fails hard
//!
//! Every random stream derives from `loop.seed`; re-running a config is
//! byte-identical everywhere except the `wall_ms` telemetry field, which is
//! the one intentionally non-deterministic value (see
//! `telemetry_determinism_digest`).

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::buffer::{draw_buffer, entropy_estimate, entropy_std_err, WeightedBuffer};
use crate::config::{RunConfig, ScheduleMode, SweepOverrides};
use crate::density::LogDensity;
use crate::dual::{log_z_estimate, log_z_summands, solve_multipliers, MultiplierPair};
use crate::error::{Error, Result};
use crate::math::log_sum_exp;
use crate::metrics::{
    elbo_and_logz, ess_fraction, eubo_estimate, hist2d_tv, mode_mass_tv, RunMetrics,
};
use crate::mixture::{importance_weights, weighted_fit, MixtureModel};
use crate::path::PathLedger;
use crate::targets::{make_target, reference_stats_cached, sample_reference};

pub const TELEMETRY_FILE: &str = "telemetry.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const FINAL_MODEL_FILE: &str = "final_model.json";
pub const CONFIG_FILE: &str = "config.json";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const FINAL_METRICS_FILE: &str = "final_metrics.json";
pub const ABORT_FILE: &str = "abort_state.json";
pub const SWEEP_INDEX_FILE: &str = "sweep_index.json";

const DOMAIN_INIT: u64 = 1;
const DOMAIN_STEP: u64 = 2;
const DOMAIN_FINAL: u64 = 3;
const DOMAIN_REF: u64 = 4;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent deterministic sub-seed for (domain, index) under a root seed.
fn derive_seed(root: u64, domain: u64, index: u64) -> u64 {
    splitmix64(splitmix64(root.wrapping_add(domain)).wrapping_add(index))
}

/// One telemetry line. `lambda`/`eta` are null for externally scheduled
/// steps; `wall_ms` is wall-clock and therefore not deterministic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lambda: Option<f64>,
    pub eta: Option<f64>,
    pub beta: f64,
    pub alpha: f64,
    /// Entropy estimate of the model entering the step, on its own buffer.
    pub entropy: f64,
    pub entropy_se: f64,
    /// Raw (unclipped) ESS fraction of the step's importance weights.
    pub step_ess: f64,
    /// Monte Carlo estimate of the intermediate's log-normalizer.
    pub log_z_hat: f64,
    pub em_iters: usize,
    pub wall_ms: u64,
}

/// Result of a completed run: the metrics, the fitted model, and where the
/// artifacts were written.
#[derive(Debug)]
pub struct RunOutcome {
    pub metrics: RunMetrics,
    pub final_model: MixtureModel,
    pub run_dir: PathBuf,
}

#[derive(Serialize)]
struct AbortState<'a> {
    step: usize,
    error: String,
    multipliers: Option<MultiplierPair>,
    model: &'a crate::mixture::MixtureSnapshot,
}

struct RunSession {
    run_dir: PathBuf,
    telemetry: BufWriter<fs::File>,
}

impl RunSession {
    fn create(config: &RunConfig) -> Result<Self> {
        let run_dir = config.output.run_dir.clone();
        fs::create_dir_all(&run_dir)?;
        fs::write(run_dir.join(CONFIG_FILE), serde_json::to_vec_pretty(config)?)?;
        // A fresh run invalidates any previous report and abort state.
        for stale in [REPORT_CSV_FILE, FINAL_METRICS_FILE, ABORT_FILE] {
            let _ = fs::remove_file(run_dir.join(stale));
        }
        let telemetry = BufWriter::new(fs::File::create(run_dir.join(TELEMETRY_FILE))?);
        Ok(Self { run_dir, telemetry })
    }

    fn record(&mut self, record: &StepRecord) -> Result<()> {
        serde_json::to_writer(&mut self.telemetry, record)?;
        self.telemetry.write_all(b"\n")?;
        Ok(())
    }

    fn snapshot_model(&self, config: &RunConfig, step: usize, model: &MixtureModel) -> Result<()> {
        if config.output.emit_model_snapshots {
            let path = self.run_dir.join(format!("model_step_{step:04}.json"));
            fs::write(path, serde_json::to_vec_pretty(&model.to_snapshot())?)?;
        }
        Ok(())
    }

    fn abort(&self, step: usize, mult: Option<MultiplierPair>, model: &MixtureModel, err: Error) -> Error {
        let snapshot = model.to_snapshot();
        let state = AbortState { step, error: err.to_string(), multipliers: mult, model: &snapshot };
        if let Ok(bytes) = serde_json::to_vec_pretty(&state) {
            let _ = fs::write(self.run_dir.join(ABORT_FILE), bytes);
        }
        Error::contract(format!(
            "run aborted at step {step}: {err} (state saved to {})",
            self.run_dir.join(ABORT_FILE).display()
        ))
    }
}

/// Executes the configured run: the constrained adaptive loop for
/// `combined` / `tr_only` / `ent_only`, or the fixed geometric schedule for
/// `fixed_linear`.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    match config.schedule_mode {
        ScheduleMode::FixedLinear => run_fixed_linear(config),
        _ => run_adaptive(config),
    }
}

/// Reconstructs the broad initial model a run starts from. The same seed
/// derivation as `run` itself, so a recorded run can be replayed or audited
/// from its `config.json` alone.
pub fn initial_model(config: &RunConfig) -> Result<MixtureModel> {
    config.validate()?;
    MixtureModel::init_broad(
        config.target.dim,
        config.family.k_comp,
        config.family.init_entropy_scale,
        derive_seed(config.loop_.seed, DOMAIN_INIT, 0),
    )
}

/// Draws the step buffer: fresh from the current model, or the retained
/// buffer rescored under it.
fn step_buffer(
    config: &RunConfig,
    model: &MixtureModel,
    target: &dyn LogDensity,
    retained: &mut Option<WeightedBuffer>,
    step: usize,
) -> Result<WeightedBuffer> {
    let seed = derive_seed(config.loop_.seed, DOMAIN_STEP, step as u64);
    if config.loop_.refresh_buffer_every_step || retained.is_none() {
        draw_buffer(model, target, config.loop_.buffer_size, seed)
    } else {
        let mut buf = retained.take().expect("retained buffer present");
        buf.rescore_model(model)?;
        Ok(buf)
    }
}

fn run_adaptive(config: &RunConfig) -> Result<RunOutcome> {
    let target = make_target(&config.target)?;
    let mut session = RunSession::create(config)?;
    let mut model = initial_model(config)?;
    let mut ledger = PathLedger::new(true);
    let mut retained: Option<WeightedBuffer> = None;
    let tol = config.loop_.terminal_multiplier_tol;
    let mut converged = false;
    let mut pending_terminal = false;
    let mut step = 0usize;

    // The terminal unconstrained fit may run one step past max_steps: it is
    // the closing step of an already-converged schedule.
    while step < config.loop_.max_steps || pending_terminal {
        let clock = Instant::now();
        let result: Result<(MixtureModel, StepRecord, WeightedBuffer, MultiplierPair)> = (|| {
            let buf = step_buffer(config, &model, target.as_ref(), &mut retained, step)?;
            let entropy = entropy_estimate(&buf);
            let entropy_se = entropy_std_err(&buf);
            let mult = if pending_terminal {
                MultiplierPair::zero()
            } else {
                solve_multipliers(&buf, &config.dual)?.mult
            };
            let log_z = log_z_estimate(&buf, mult)?;
            let lw = log_z_summands(buf.log_p(), buf.log_q(), mult);
            let step_ess = ess_fraction(&lw, false)?;
            let weights = importance_weights(&buf, mult, log_z)?;
            let (next_model, fit) = weighted_fit(&model, &buf, &weights, &config.family)?;
            let state = ledger.update(mult, entropy, log_z, step_ess)?;
            let record = StepRecord {
                step: state.step_index,
                lambda: Some(mult.lambda),
                eta: Some(mult.eta),
                beta: state.beta,
                alpha: state.alpha,
                entropy,
                entropy_se,
                step_ess,
                log_z_hat: log_z,
                em_iters: fit.em_iterations,
                wall_ms: clock.elapsed().as_millis() as u64,
            };
            Ok((next_model, record, buf, mult))
        })();
        let (next_model, record, buf, mult) = match result {
            Ok(v) => v,
            Err(e) => return Err(session.abort(step, None, &model, e)),
        };
        session.record(&record)?;
        session.snapshot_model(config, step, &next_model)?;
        model = next_model;
        if !config.loop_.refresh_buffer_every_step {
            retained = Some(buf);
        }
        step += 1;
        if pending_terminal {
            converged = true;
            break;
        }
        if mult.lambda <= tol && mult.eta <= tol {
            pending_terminal = true;
        }
    }
    session.telemetry.flush()?;
    finalize(config, target.as_ref(), model, ledger, converged, session.run_dir)
}

/// Geometric baseline: beta_i = i / max_steps toward the target, anchored at
/// the *initial* model, fitted with the same importance-weighted EM.
pub fn run_fixed_linear(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    if config.schedule_mode != ScheduleMode::FixedLinear {
        return Err(Error::config("run_fixed_linear requires schedule_mode = fixed_linear"));
    }
    let target = make_target(&config.target)?;
    let mut session = RunSession::create(config)?;
    let q0 = initial_model(config)?;
    let mut model = q0.clone();
    let mut ledger = PathLedger::new(false);
    let mut retained: Option<WeightedBuffer> = None;
    let i_max = config.loop_.max_steps;

    for i in 1..=i_max {
        let clock = Instant::now();
        let step = i - 1;
        let beta = i as f64 / i_max as f64;
        let result: Result<(MixtureModel, StepRecord, WeightedBuffer)> = (|| {
            let buf = step_buffer(config, &model, target.as_ref(), &mut retained, step)?;
            let entropy = entropy_estimate(&buf);
            let entropy_se = entropy_std_err(&buf);
            // Intermediate q0^{1-beta} p~^{beta} over the current model.
            let n = buf.n();
            let mut lw = Vec::with_capacity(n);
            for idx in 0..n {
                let lq0 = q0.log_prob(buf.point(idx));
                let v = if beta == 1.0 {
                    // Exact endpoint: plain importance weights against p~.
                    buf.log_p()[idx] - buf.log_q()[idx]
                } else {
                    (1.0 - beta) * lq0 + beta * buf.log_p()[idx] - buf.log_q()[idx]
                };
                lw.push(v);
            }
            let lse = log_sum_exp(&lw)?;
            if lse == f64::NEG_INFINITY {
                return Err(Error::DegenerateBuffer);
            }
            let log_z = lse - (n as f64).ln();
            let step_ess = ess_fraction(&lw, false)?;
            let weights: Vec<f64> = lw.iter().map(|&v| (v - lse).exp()).collect();
            let (next_model, fit) = weighted_fit(&model, &buf, &weights, &config.family)?;
            let state = ledger.push_scheduled(beta, 1.0, entropy, log_z, step_ess)?;
            let record = StepRecord {
                step: state.step_index,
                lambda: None,
                eta: None,
                beta,
                alpha: 1.0,
                entropy,
                entropy_se,
                step_ess,
                log_z_hat: log_z,
                em_iters: fit.em_iterations,
                wall_ms: clock.elapsed().as_millis() as u64,
            };
            Ok((next_model, record, buf))
        })();
        let (next_model, record, buf) = match result {
            Ok(v) => v,
            Err(e) => return Err(session.abort(step, None, &model, e)),
        };
        session.record(&record)?;
        session.snapshot_model(config, step, &next_model)?;
        model = next_model;
        if !config.loop_.refresh_buffer_every_step {
            retained = Some(buf);
        }
    }
    session.telemetry.flush()?;
    // A completed schedule is converged by construction.
    finalize(config, target.as_ref(), model, ledger, true, session.run_dir)
}

fn finalize(
    config: &RunConfig,
    target: &dyn LogDensity,
    model: MixtureModel,
    ledger: PathLedger,
    converged: bool,
    run_dir: PathBuf,
) -> Result<RunOutcome> {
    let dim = config.target.dim;
    let eval_buf = draw_buffer(
        &model,
        target,
        config.final_eval_size(),
        derive_seed(config.loop_.seed, DOMAIN_FINAL, 0),
    )?;
    let elbo_report = elbo_and_logz(&eval_buf)?;
    let diffs: Vec<f64> =
        eval_buf.log_p().iter().zip(eval_buf.log_q()).map(|(&lp, &lq)| lp - lq).collect();
    let ess_reverse_frac = ess_fraction(&diffs, true)?;

    let refs = sample_reference(
        &config.target,
        config.reference_size(),
        derive_seed(config.loop_.seed, DOMAIN_REF, 0),
    )?;
    let eubo_report = eubo_estimate(&refs, dim, target, &model)?;

    let stats = reference_stats_cached(&config.target, &run_dir.join("refstats"))?;
    let mode_tv = Some(mode_mass_tv(eval_buf.points(), dim, &stats)?);
    let hist_tv = match stats.hist2d.as_ref() {
        Some(hist) if dim == 2 => Some(hist2d_tv(eval_buf.points(), hist)?),
        _ => None,
    };

    let metrics = RunMetrics {
        ess_reverse_frac,
        eubo: eubo_report.value,
        eubo_std_err: eubo_report.std_err,
        eubo_zero_density_points: eubo_report.offending.len(),
        elbo: elbo_report.elbo,
        elbo_std_err: elbo_report.elbo_std_err,
        elbo_clipped: elbo_report.elbo_clipped,
        log_z_hat: elbo_report.log_z_hat,
        log_z_std_err: elbo_report.log_z_std_err,
        mode_mass_tv: mode_tv,
        hist2d_tv: hist_tv,
        final_entropy_est: entropy_estimate(&eval_buf),
        steps: ledger.len(),
        converged,
        per_step: ledger.entries().to_vec(),
    };
    fs::write(run_dir.join(METRICS_FILE), serde_json::to_vec_pretty(&metrics)?)?;
    fs::write(
        run_dir.join(FINAL_MODEL_FILE),
        serde_json::to_vec_pretty(&model.to_snapshot())?,
    )?;
    Ok(RunOutcome { metrics, final_model: model, run_dir })
}

/// Parses the telemetry of a completed run, validating structure.
pub fn read_telemetry(run_dir: &Path) -> Result<Vec<StepRecord>> {
    let path = run_dir.join(TELEMETRY_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Telemetry(format!("cannot read {}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: StepRecord = serde_json::from_str(line).map_err(|e| {
            Error::Telemetry(format!("{} line {}: {e}", path.display(), lineno + 1))
        })?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::Telemetry(format!("{} holds no records", path.display())));
    }
    for (i, r) in records.iter().enumerate() {
        if r.step != i {
            return Err(Error::Telemetry(format!(
                "{}: step {} found at position {i}",
                path.display(),
                r.step
            )));
        }
    }
    Ok(records)
}

/// The telemetry byte stream with the one non-deterministic field (wall_ms)
/// redacted; two runs of the same config and seed produce identical digests.
pub fn telemetry_determinism_digest(run_dir: &Path) -> Result<Vec<u8>> {
    let records = read_telemetry(run_dir)?;
    let mut out = Vec::new();
    for mut r in records {
        r.wall_ms = 0;
        out.extend_from_slice(&serde_json::to_vec(&r)?);
        out.push(b'\n');
    }
    Ok(out)
}

fn csv_cell(v: f64) -> String {
    format!("{v}")
}

/// Writes `report.csv` (header + one row per step) and `final_metrics.json`
/// from a completed run directory. Idempotent: identical inputs produce
/// byte-identical outputs.
pub fn write_report(run_dir: &Path) -> Result<()> {
    let records = read_telemetry(run_dir)?;
    let mut csv = String::from("step,lambda,eta,beta,alpha,entropy,step_ess,log_z_hat\n");
    for r in &records {
        let lambda = r.lambda.map(csv_cell).unwrap_or_default();
        let eta = r.eta.map(csv_cell).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.step,
            lambda,
            eta,
            csv_cell(r.beta),
            csv_cell(r.alpha),
            csv_cell(r.entropy),
            csv_cell(r.step_ess),
            csv_cell(r.log_z_hat),
        ));
    }
    let metrics_path = run_dir.join(METRICS_FILE);
    let metrics_bytes = fs::read(&metrics_path)
        .map_err(|e| Error::Telemetry(format!("cannot read {}: {e}", metrics_path.display())))?;
    serde_json::from_slice::<serde_json::Value>(&metrics_bytes)
        .map_err(|e| Error::Telemetry(format!("{} is corrupt: {e}", metrics_path.display())))?;
    fs::write(run_dir.join(REPORT_CSV_FILE), csv)?;
    fs::write(run_dir.join(FINAL_METRICS_FILE), metrics_bytes)?;
    Ok(())
}

#[derive(Serialize)]
struct SweepIndexEntry {
    index: usize,
    run_dir: String,
    overrides: SweepOverrides,
    converged: bool,
    steps: usize,
    log_z_hat: f64,
    ess_reverse_frac: f64,
    mode_mass_tv: Option<f64>,
}

/// Runs every combination of a Cartesian sweep under `out_root/sweep-NNNN`
/// and writes `sweep_index.json` mapping indices to overrides and headline
/// metrics.
pub fn run_sweep(base_text: &str, grid_text: &str, out_root: &Path) -> Result<Vec<RunOutcome>> {
    let combos = crate::config::sweep_configs(base_text, grid_text)?;
    fs::create_dir_all(out_root)?;
    let mut outcomes = Vec::with_capacity(combos.len());
    let mut index = Vec::with_capacity(combos.len());
    for (i, (mut cfg, overrides)) in combos.into_iter().enumerate() {
        let name = format!("sweep-{i:04}");
        cfg.output.run_dir = out_root.join(&name);
        log::info!("sweep {i}: {overrides:?}");
        let outcome = run(&cfg)?;
        index.push(SweepIndexEntry {
            index: i,
            run_dir: name,
            overrides,
            converged: outcome.metrics.converged,
            steps: outcome.metrics.steps,
            log_z_hat: outcome.metrics.log_z_hat,
            ess_reverse_frac: outcome.metrics.ess_reverse_frac,
            mode_mass_tv: outcome.metrics.mode_mass_tv,
        });
        outcomes.push(outcome);
    }
    fs::write(out_root.join(SWEEP_INDEX_FILE), serde_json::to_vec_pretty(&index)?)?;
    Ok(outcomes)
}
