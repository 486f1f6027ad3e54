//! Annealed variational sampling from unnormalized log-densities.
//!
//! The engine walks a variational model toward a target density through a
//! sequence of intermediate densities. Each step solves a constrained
//! problem in closed form: minimize KL(q || p) subject to a KL trust region
//! around the current model and/or a cap on how much differential entropy
//! may be lost in one step. The Lagrange multipliers of those constraints
//! are found by maximizing a concave dual estimated from the current sample
//! buffer, the resulting intermediate is fitted back into a Gaussian mixture
//! by importance-weighted EM, and the loop repeats until both multipliers
//! vanish, at which point the intermediate *is* the normalized target.
//!
//! Everything runs in log space end to end, every random draw is reproducible
//! from a single `u64` seed, and the multiplier history doubles as a ledger
//! from which every visited density can be reconstructed in closed form.

pub mod buffer;
pub mod config;
pub mod density;
pub mod dual;
pub mod error;
pub mod math;
pub mod metrics;
pub mod mixture;
pub mod opt;
pub mod path;
pub mod quadrature;
pub mod runner;
pub mod targets;

pub use buffer::{draw_buffer, entropy_estimate, entropy_std_err, WeightedBuffer};
pub use density::{DensityRef, LogDensity};
pub use config::{load_run_config, parse_run_config, LoopConfig, OutputConfig, RunConfig, ScheduleMode};
pub use dual::{
    dual_tr, dual_tr_ent, log_z_estimate, solve_multipliers, DualConfig, DualSolution,
    MultiplierPair, MULTIPLIER_MAX,
};
pub use error::{Error, Result};
pub use math::log_sum_exp;
pub use metrics::{elbo_and_logz, ess_fraction, eubo_estimate, hist2d_tv, mode_mass_tv, RunMetrics};
pub use mixture::{importance_weights, weighted_fit, FamilyConfig, FitReport, MixtureModel};
pub use opt::maximize_scalar;
pub use path::{closed_form_log_density, next_intermediate, IntermediateDensity, PathLedger, PathState};
pub use runner::{
    read_telemetry, run, run_fixed_linear, run_sweep, telemetry_determinism_digest, write_report,
    RunOutcome, StepRecord,
};
pub use targets::{
    make_target, reference_stats, reference_stats_cached, sample_reference, ReferenceStats,
    TargetSpec,
};
