//! Scenario configuration: a flat `key = value` file in physical units.

use std::path::{Path, PathBuf};

use crate::control::{ObjectiveKind, ObjectiveSpec};
use crate::error::{Error, Result};
use crate::integrate::Interpolation;
use crate::keyvalue::{self, Entry};
use crate::model::{DimensionalParams, Frame, ScalingFactors, SystemState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegratorKind {
    Rk4,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    Direct,
    Sweep,
    /// Direct solve plus a sweep cross-check.
    Both,
}

/// Everything a subcommand needs. Populations are in cells, IL-2 and
/// chemotherapy in IU, radiotherapy in Gy and times in days.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub params: DimensionalParams,
    pub initial: SystemState,
    /// Frame the simulation is integrated in; output is always dimensional.
    pub frame: Frame,
    pub horizon_days: Option<f64>,
    pub integrator: IntegratorKind,
    pub step_days: Option<f64>,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Keep every n-th integration sample in the trajectory output.
    pub output_stride: usize,
    pub schedule: Option<PathBuf>,
    pub schedule_interpolation: Interpolation,
    pub objective: Option<ObjectiveKind>,
    pub w1: f64,
    pub w2: f64,
    pub u_reg: f64,
    /// Terminal tumor tolerance in cells.
    pub terminal_tolerance: f64,
    pub terminal_constraint: Option<bool>,
    pub dose_cap_weight: f64,
    pub solver: SolverChoice,
    pub mesh_size: Option<usize>,
    pub max_iterations: Option<usize>,
    pub sweep_intervals: Option<usize>,
    pub verify_tolerance: f64,
    pub nullcline_points: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            params: DimensionalParams::canonical(),
            initial: SystemState::untreated(6e8, 1e6, Frame::Dimensional),
            frame: Frame::Nondimensional,
            horizon_days: None,
            integrator: IntegratorKind::Rk4,
            step_days: None,
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            output_stride: 10,
            schedule: None,
            schedule_interpolation: Interpolation::PiecewiseLinear,
            objective: None,
            w1: ObjectiveSpec::DEFAULT_W1,
            w2: ObjectiveSpec::DEFAULT_W2,
            u_reg: ObjectiveSpec::DEFAULT_U_REG,
            terminal_tolerance: 100.0,
            terminal_constraint: None,
            dose_cap_weight: ObjectiveSpec::DEFAULT_DOSE_CAP_WEIGHT,
            solver: SolverChoice::Direct,
            mesh_size: None,
            max_iterations: None,
            sweep_intervals: None,
            verify_tolerance: 1e-3,
            nullcline_points: 401,
        }
    }
}

fn invalid(entry: &Entry, message: String) -> Error {
    Error::Config {
        line: entry.line,
        message,
    }
}

fn parse_choice<T: Copy>(entry: &Entry, choices: &[(&str, T)]) -> Result<T> {
    choices
        .iter()
        .find(|(name, _)| *name == entry.value)
        .map(|(_, v)| *v)
        .ok_or_else(|| {
            let names: Vec<&str> = choices.iter().map(|(n, _)| *n).collect();
            invalid(
                entry,
                format!(
                    "`{}` must be one of {}, got `{}`",
                    entry.key,
                    names.join(", "),
                    entry.value
                ),
            )
        })
}

fn parse_count(entry: &Entry) -> Result<usize> {
    entry
        .value
        .parse::<usize>()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| {
            invalid(
                entry,
                format!(
                    "`{}` must be a positive integer, got `{}`",
                    entry.key, entry.value
                ),
            )
        })
}

fn parse_positive(entry: &Entry) -> Result<f64> {
    let v = keyvalue::parse_f64(entry)?;
    if v <= 0.0 {
        return Err(invalid(
            entry,
            format!("`{}` must be positive, got {v}", entry.key),
        ));
    }
    Ok(v)
}

fn parse_nonnegative(entry: &Entry) -> Result<f64> {
    let v = keyvalue::parse_f64(entry)?;
    if v < 0.0 {
        return Err(invalid(
            entry,
            format!("`{}` must be nonnegative, got {v}", entry.key),
        ));
    }
    Ok(v)
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = Path::new(value);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ScenarioConfig {
    /// Parses a scenario file. Relative paths inside it resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let entries = keyvalue::parse(text)?;
        // a parameter file applies first so inline overrides win regardless of order
        if let Some(entry) = entries.iter().find(|e| e.key == "params") {
            let path = resolve(base, &entry.value);
            let text = std::fs::read_to_string(&path).map_err(|e| {
                invalid(
                    entry,
                    format!("cannot read parameter file {}: {e}", path.display()),
                )
            })?;
            cfg.params = cfg.params.with_overrides(&text)?;
        }
        for entry in &entries {
            let key = entry.key.as_str();
            if DimensionalParams::is_key(key) {
                cfg.params.set(key, keyvalue::parse_f64(entry)?)?;
                continue;
            }
            match key {
                "params" => {}
                "initial_n" => cfg.initial.n = parse_nonnegative(entry)?,
                "initial_e" => cfg.initial.e = parse_nonnegative(entry)?,
                "initial_i" => cfg.initial.i = parse_nonnegative(entry)?,
                "initial_c" => cfg.initial.c = parse_nonnegative(entry)?,
                "initial_r" => cfg.initial.r = parse_nonnegative(entry)?,
                "frame" => {
                    cfg.frame = parse_choice(
                        entry,
                        &[("dimensional", Frame::Dimensional), ("nondimensional", Frame::Nondimensional)],
                    )?
                }
                "horizon_days" => cfg.horizon_days = Some(parse_positive(entry)?),
                "integrator" => {
                    cfg.integrator =
                        parse_choice(entry, &[("rk4", IntegratorKind::Rk4), ("adaptive", IntegratorKind::Adaptive)])?
                }
                "step_days" => cfg.step_days = Some(parse_positive(entry)?),
                "rel_tol" => cfg.rel_tol = parse_positive(entry)?,
                "abs_tol" => cfg.abs_tol = parse_positive(entry)?,
                "output_stride" => cfg.output_stride = parse_count(entry)?,
                "schedule" => cfg.schedule = Some(resolve(base, &entry.value)),
                "schedule_interpolation" => {
                    cfg.schedule_interpolation = parse_choice(
                        entry,
                        &[("linear", Interpolation::PiecewiseLinear), ("constant", Interpolation::PiecewiseConstant)],
                    )?
                }
                "objective" => {
                    cfg.objective = Some(ObjectiveKind::parse(&entry.value).ok_or_else(|| {
                        invalid(
                            entry,
                            format!(
                                "`objective` must be final-tumor, average-tumor or total-treatment, got `{}`",
                                entry.value
                            ),
                        )
                    })?)
                }
                "w1" => cfg.w1 = parse_positive(entry)?,
                "w2" => cfg.w2 = keyvalue::parse_f64(entry)?,
                "u_reg" => cfg.u_reg = parse_nonnegative(entry)?,
                "terminal_tolerance" => cfg.terminal_tolerance = parse_positive(entry)?,
                "terminal_constraint" => {
                    cfg.terminal_constraint = Some(parse_choice(entry, &[("true", true), ("false", false)])?)
                }
                "dose_cap_weight" => cfg.dose_cap_weight = parse_nonnegative(entry)?,
                "solver" => {
                    cfg.solver = parse_choice(
                        entry,
                        &[("direct", SolverChoice::Direct), ("sweep", SolverChoice::Sweep), ("both", SolverChoice::Both)],
                    )?
                }
                "mesh_size" => cfg.mesh_size = Some(parse_count(entry)?),
                "max_iterations" => cfg.max_iterations = Some(parse_count(entry)?),
                "sweep_intervals" => cfg.sweep_intervals = Some(parse_count(entry)?),
                "verify_tolerance" => cfg.verify_tolerance = parse_positive(entry)?,
                "nullcline_points" => cfg.nullcline_points = parse_count(entry)?,
                _ => return Err(Error::UnknownKey(entry.key.clone())),
            }
        }
        cfg.params.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Applies a parameter override file on top of the configured set.
    pub fn apply_param_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.params = self.params.with_overrides(&text)?;
        Ok(())
    }

    pub fn scaling(&self) -> ScalingFactors {
        ScalingFactors::canonical(&self.params)
    }

    /// Objective in the nondimensional frame over `horizon_days`.
    pub fn objective_spec(&self, horizon_days: f64) -> Result<ObjectiveSpec> {
        let kind = self
            .objective
            .ok_or_else(|| Error::MissingKey("objective".into()))?;
        let scaling = self.scaling();
        let mut spec = ObjectiveSpec::new(kind, horizon_days / scaling.t0).with_signed_w2(self.w2);
        spec.w1 = self.w1;
        spec.u_reg = self.u_reg;
        spec.terminal_tolerance = self.terminal_tolerance / scaling.n0;
        spec.dose_cap_weight = self.dose_cap_weight;
        if let Some(on) = self.terminal_constraint {
            spec.include_terminal_constraint = on;
        }
        spec.validate()?;
        Ok(spec)
    }
}
