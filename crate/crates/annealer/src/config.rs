//! Run configuration: TOML schema, validation, and sweep-grid expansion.
//!
//! Config files address fields by their `RunConfig` paths, either as TOML
//! tables (`[dual]` / `eps_tr = 0.3`) or dotted keys (`dual.eps_tr = 0.3`);
//! the two spellings are equivalent. Unknown keys are parse errors. The
//! constraint-enable flags inside `[dual]` are not user inputs: they are
//! derived from `schedule_mode`, which is the single source of truth for
//! which constraints participate.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dual::DualConfig;
use crate::error::{Error, Result};
use crate::mixture::FamilyConfig;
use crate::targets::TargetSpec;

/// Which constraints steer the annealing schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// Trust region and entropy decay together (the full method).
    #[default]
    Combined,
    /// Trust region only (eta = 0 throughout).
    TrOnly,
    /// Entropy decay only (lambda = 0 throughout).
    EntOnly,
    /// No constraints: geometric path with beta_i = i / max_steps, anchored
    /// at the initial model; the ablation baseline.
    FixedLinear,
}

fn d_buffer_size() -> usize {
    50_000
}
fn d_max_steps() -> usize {
    60
}
fn d_terminal_tol() -> f64 {
    1e-3
}
fn d_true() -> bool {
    true
}

/// Loop-level knobs: buffer sizes, step limits, termination, seeding.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    /// Samples drawn from the model per annealing step (N).
    pub buffer_size: usize,
    /// Hard cap on annealing steps (I_max); reaching it marks the run
    /// non-converged.
    pub max_steps: usize,
    /// Both multipliers at or below this value triggers the terminal
    /// unconstrained fit.
    pub terminal_multiplier_tol: f64,
    /// Draw a fresh buffer each step (default); otherwise the initial buffer
    /// is kept and only rescored under the current model.
    pub refresh_buffer_every_step: bool,
    /// Root seed; every random stream in the run derives from it.
    pub seed: u64,
    /// Model-side sample count for final metrics (defaults to buffer_size).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_eval_size: Option<usize>,
    /// Ground-truth sample count for the evidence upper bound (defaults to
    /// buffer_size).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_size: Option<usize>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            buffer_size: d_buffer_size(),
            max_steps: d_max_steps(),
            terminal_multiplier_tol: d_terminal_tol(),
            refresh_buffer_every_step: d_true(),
            seed: 0,
            final_eval_size: None,
            reference_size: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Directory receiving telemetry, metrics, and model files.
    pub run_dir: PathBuf,
    /// Also write the fitted model after every step.
    pub emit_model_snapshots: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { run_dir: PathBuf::from("out/run"), emit_model_snapshots: false }
    }
}

/// Complete description of one annealing run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub target: TargetSpec,
    #[serde(default)]
    pub family: FamilyConfig,
    #[serde(default)]
    pub dual: DualConfig,
    #[serde(rename = "loop", default)]
    pub loop_: LoopConfig,
    #[serde(default)]
    pub schedule_mode: ScheduleMode,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    /// Minimal config for a target with everything else defaulted.
    pub fn for_target(target: TargetSpec) -> Self {
        let mut cfg = Self {
            target,
            family: FamilyConfig::default(),
            dual: DualConfig::default(),
            loop_: LoopConfig::default(),
            schedule_mode: ScheduleMode::Combined,
            output: OutputConfig::default(),
        };
        cfg.apply_schedule_mode();
        cfg
    }

    /// Derives the dual-constraint enable flags from the schedule mode.
    /// Any flags found in a config file are overwritten here.
    pub fn apply_schedule_mode(&mut self) {
        let (tr, ent) = match self.schedule_mode {
            ScheduleMode::Combined => (true, true),
            ScheduleMode::TrOnly => (true, false),
            ScheduleMode::EntOnly => (false, true),
            ScheduleMode::FixedLinear => (false, false),
        };
        self.dual.tr_enabled = tr;
        self.dual.ent_enabled = ent;
    }

    pub fn buffer_size(&self) -> usize {
        self.loop_.buffer_size
    }

    pub fn final_eval_size(&self) -> usize {
        self.loop_.final_eval_size.unwrap_or(self.loop_.buffer_size)
    }

    pub fn reference_size(&self) -> usize {
        self.loop_.reference_size.unwrap_or(self.loop_.buffer_size)
    }

    pub fn validate(&self) -> Result<()> {
        self.target.validate()?;
        self.family.validate()?;
        if self.schedule_mode != ScheduleMode::FixedLinear {
            self.dual.validate()?;
        }
        let lc = &self.loop_;
        if lc.max_steps == 0 {
            return Err(Error::config("loop.max_steps must be >= 1"));
        }
        if !(lc.terminal_multiplier_tol > 0.0 && lc.terminal_multiplier_tol.is_finite()) {
            return Err(Error::config(format!(
                "loop.terminal_multiplier_tol must be positive, got {}",
                lc.terminal_multiplier_tol
            )));
        }
        // Weighted-EM identifiability floor.
        let floor = 10 * self.family.k_comp * self.target.dim;
        if lc.buffer_size < floor {
            return Err(Error::config(format!(
                "loop.buffer_size = {} is below the identifiability floor 10 * k_comp * dim = {floor}",
                lc.buffer_size
            )));
        }
        for (name, v) in [
            ("loop.final_eval_size", self.final_eval_size()),
            ("loop.reference_size", self.reference_size()),
        ] {
            if v < 2 {
                return Err(Error::config(format!("{name} must be >= 2, got {v}")));
            }
        }
        Ok(())
    }
}

/// Parses a TOML run config, derives the constraint flags, and validates.
pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let mut cfg: RunConfig =
        toml::from_str(text).map_err(|e| Error::config(format!("config parse error: {e}")))?;
    cfg.apply_schedule_mode();
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
    parse_run_config(&text)
        .map_err(|e| Error::config(format!("in config {}: {e}", path.display())))
}

/// One sweep point: the dotted-key overrides applied to the base config.
pub type SweepOverrides = BTreeMap<String, toml::Value>;

fn flatten_grid(prefix: &str, value: &toml::Value, out: &mut Vec<(String, Vec<toml::Value>)>) -> Result<()> {
    match value {
        toml::Value::Table(table) => {
            for (k, v) in table {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_grid(&path, v, out)?;
            }
            Ok(())
        }
        toml::Value::Array(values) => {
            if values.is_empty() {
                return Err(Error::config(format!("sweep grid key '{prefix}' has an empty array")));
            }
            out.push((prefix.to_string(), values.clone()));
            Ok(())
        }
        other => {
            // A scalar pins the key to a single value across the sweep.
            out.push((prefix.to_string(), vec![other.clone()]));
            Ok(())
        }
    }
}

fn set_dotted(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<()> {
    let mut node = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("sweep key '{path}' crosses a non-table")))?;
        if i + 1 == segments.len() {
            table.insert(seg.to_string(), value);
            return Ok(());
        }
        node = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
    }
    unreachable!("split('.') yields at least one segment")
}

/// Expands a Cartesian sweep: every combination of the grid arrays applied
/// to the base config. Keys iterate in sorted order with the last key
/// varying fastest; each produced config is validated.
pub fn sweep_configs(
    base_text: &str,
    grid_text: &str,
) -> Result<Vec<(RunConfig, SweepOverrides)>> {
    let base: toml::Value = toml::from_str(base_text)
        .map_err(|e| Error::config(format!("base config parse error: {e}")))?;
    let grid: toml::Value = toml::from_str(grid_text)
        .map_err(|e| Error::config(format!("sweep grid parse error: {e}")))?;
    let mut axes = Vec::new();
    flatten_grid("", &grid, &mut axes)?;
    if axes.is_empty() {
        return Err(Error::config("sweep grid defines no keys"));
    }
    axes.sort_by(|a, b| a.0.cmp(&b.0));

    let combos: usize = axes.iter().map(|(_, vals)| vals.len()).product();
    if combos > 10_000 {
        return Err(Error::config(format!("sweep grid expands to {combos} > 10000 runs")));
    }
    let mut out = Vec::with_capacity(combos);
    for index in 0..combos {
        let mut value = base.clone();
        let mut overrides = SweepOverrides::new();
        let mut rem = index;
        // Last axis varies fastest.
        for (key, vals) in axes.iter().rev() {
            let pick = rem % vals.len();
            rem /= vals.len();
            set_dotted(&mut value, key, vals[pick].clone())?;
            overrides.insert(key.clone(), vals[pick].clone());
        }
        let text = toml::to_string(&value)
            .map_err(|e| Error::config(format!("sweep combination {index} re-encode: {e}")))?;
        let cfg = parse_run_config(&text)
            .map_err(|e| Error::config(format!("sweep combination {index}: {e}")))?;
        out.push((cfg, overrides));
    }
    Ok(out)
}
