use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::config::{IntegratorKind, ScenarioConfig, SolverChoice};
use super::{VerifyArgs, EXIT_NUMERICAL, EXIT_OK};
use crate::analysis::{
    interior_equilibria, nullcline_samples, tumor_free_equilibrium, Equilibrium, EquilibriumKind,
};
use crate::control::{
    baseline_objective, evaluate_objective, natural_costates, solve_direct, solve_fbsm, verify_pmp,
    CostateTrajectory, DirectOptions, ObjectiveKind, ObjectiveValue, PmpResiduals, RegimenSolution,
    SweepOptions, VerifyOptions,
};
use crate::error::{Error, Result};
use crate::integrate::{
    integrate_adaptive, integrate_rk4, ControlSchedule, Interpolation, Trajectory, DEFAULT_STEP,
    DEFAULT_TREATMENT_FREE_HORIZON,
};
use crate::model::{
    nondimensionalize, DimensionalModel, Dynamics, Frame, NondimParams, ScalingFactors, SystemState,
};

const DEFAULT_OPTIMIZE_HORIZON_DAYS: f64 = 60.0;

/// Ordered `key = value` lines, printed to stdout and saved as `summary.txt`.
#[derive(Default)]
struct Summary(Vec<(String, String)>);

impl Summary {
    fn put(&mut self, key: &str, value: impl ToString) {
        self.0.push((key.to_string(), value.to_string()));
    }

    fn residuals(&mut self, prefix: &str, r: &PmpResiduals) {
        for (name, v) in r.entries() {
            self.put(&format!("{prefix}residual_{name}"), v);
        }
        self.put(&format!("{prefix}residual_max"), r.max());
    }

    fn objective(&mut self, prefix: &str, v: &ObjectiveValue) {
        self.put(&format!("{prefix}J"), v.j);
        self.put(&format!("{prefix}K"), v.k);
        self.put(&format!("{prefix}L"), v.l);
        self.put(&format!("{prefix}regularization"), v.regularization);
        self.put(&format!("{prefix}dose_cap_penalty"), v.dose_cap_penalty);
    }

    fn write(&self, mut w: impl Write) -> Result<()> {
        for (k, v) in &self.0 {
            writeln!(w, "{k} = {v}")?;
        }
        Ok(())
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Parse(format!("cannot open {}: {e}", path.display())))
}

fn smallest_interval(schedule: &ControlSchedule) -> f64 {
    schedule
        .grid()
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min)
}

/// Nondimensional trajectory in physical units (days, cells, IU, Gy).
fn to_dimensional(traj: &Trajectory, scaling: &ScalingFactors) -> Trajectory {
    let k = scaling.as_array();
    Trajectory {
        times: traj.times.iter().map(|t| t * scaling.t0).collect(),
        states: traj
            .states
            .iter()
            .map(|x| std::array::from_fn(|j| x[j] * k[j]))
            .collect(),
        controls: traj.controls.clone(),
        frame: Frame::Dimensional,
        clipped_mass: traj.clipped_mass,
    }
}

fn to_nondimensional(traj: &Trajectory, scaling: &ScalingFactors) -> Trajectory {
    let k = scaling.as_array();
    Trajectory {
        times: traj.times.iter().map(|t| t / scaling.t0).collect(),
        states: traj
            .states
            .iter()
            .map(|x| std::array::from_fn(|j| x[j] / k[j]))
            .collect(),
        controls: traj.controls.clone(),
        frame: Frame::Nondimensional,
        clipped_mass: traj.clipped_mass,
    }
}

fn thin(traj: &Trajectory, stride: usize) -> Trajectory {
    let last = traj.len() - 1;
    let keep: Vec<usize> = (0..traj.len())
        .filter(|k| k % stride == 0 || *k == last)
        .collect();
    Trajectory {
        times: keep.iter().map(|&k| traj.times[k]).collect(),
        states: keep.iter().map(|&k| traj.states[k]).collect(),
        controls: traj
            .controls
            .as_ref()
            .map(|c| keep.iter().map(|&k| c[k]).collect()),
        frame: traj.frame,
        clipped_mass: traj.clipped_mass,
    }
}

fn read_schedule(cfg: &ScenarioConfig, path: &Path) -> Result<ControlSchedule> {
    ControlSchedule::read_csv(open(path)?, cfg.schedule_interpolation)
}

/// Integral of each control channel over the schedule, in schedule time units.
fn control_integrals(schedule: &ControlSchedule) -> [f64; 3] {
    let grid = schedule.grid();
    let values = schedule.values();
    let mut total = [0.0; 3];
    for k in 0..grid.len() - 1 {
        let h = grid[k + 1] - grid[k];
        let a = values[k].to_array();
        let b = match schedule.mode() {
            Interpolation::PiecewiseConstant => a,
            Interpolation::PiecewiseLinear => values[k + 1].to_array(),
        };
        for j in 0..3 {
            total[j] += 0.5 * h * (a[j] + b[j]);
        }
    }
    total
}

fn integrate<D: Dynamics>(
    cfg: &ScenarioConfig,
    x0: &SystemState,
    schedule: &ControlSchedule,
    model: &D,
    t_f: f64,
    step: f64,
) -> Result<Trajectory> {
    match cfg.integrator {
        IntegratorKind::Rk4 => integrate_rk4(
            x0,
            schedule,
            model,
            t_f,
            step.min(smallest_interval(schedule)),
        ),
        IntegratorKind::Adaptive => {
            integrate_adaptive(x0, schedule, model, t_f, cfg.rel_tol, cfg.abs_tol)
        }
    }
}

fn all_equilibria(p: &NondimParams) -> Vec<Equilibrium> {
    let mut out = vec![tumor_free_equilibrium(p)];
    out.extend(interior_equilibria(p));
    out
}

fn kind_label(kind: EquilibriumKind) -> &'static str {
    match kind {
        EquilibriumKind::TumorFree => "tumor-free",
        EquilibriumKind::Interior => "interior",
    }
}

pub fn simulate(cfg: &ScenarioConfig, out: Option<&Path>, stdout: &mut dyn Write) -> Result<u8> {
    let scaling = cfg.scaling();
    let model = DimensionalModel::new(cfg.params, scaling)?;
    let nd = model.nondim()?;
    let t0 = scaling.t0;
    let given = cfg
        .schedule
        .as_deref()
        .map(|p| read_schedule(cfg, p))
        .transpose()?;
    let horizon = cfg
        .horizon_days
        .or_else(|| given.as_ref().map(|s| s.end()))
        .unwrap_or(DEFAULT_TREATMENT_FREE_HORIZON * t0);
    let schedule = match given {
        Some(s) => s,
        None => ControlSchedule::zero(horizon)?,
    };
    let step = cfg.step_days.unwrap_or(DEFAULT_STEP * t0);

    let traj = match cfg.frame {
        Frame::Dimensional => integrate(cfg, &cfg.initial, &schedule, &model, horizon, step),
        Frame::Nondimensional => {
            let x0 = scaling.to_nondim_state(&cfg.initial)?;
            let s = schedule.rescaled_time(1.0 / t0)?;
            integrate(cfg, &x0, &s, &nd, horizon / t0, step / t0)
                .map(|tr| to_dimensional(&tr, &scaling))
        }
    };
    let traj = traj.map_err(|e| match e {
        Error::BlowUp { time, detail } => {
            let days = if cfg.frame == Frame::Nondimensional {
                time * t0
            } else {
                time
            };
            Error::BlowUp {
                time: days,
                detail: format!("{detail} (time in days)"),
            }
        }
        other => other,
    })?;

    let last = traj.final_state();
    let x_end = scaling.to_nondim_state(&last)?;
    let nearest = all_equilibria(&nd)
        .into_iter()
        .map(|eq| (eq, (x_end.n - eq.x1).hypot(x_end.e - eq.x2)))
        .min_by(|a, b| a.1.total_cmp(&b.1));

    let mut summary = Summary::default();
    summary.put("frame", cfg.frame);
    summary.put("horizon_days", horizon);
    summary.put("steps", traj.len() - 1);
    summary.put("final_t_days", traj.end());
    for (name, v) in ["final_N", "final_E", "final_I", "final_C", "final_R"]
        .iter()
        .zip(last.to_array())
    {
        summary.put(name, v);
    }
    summary.put("clipped_mass", traj.clipped_mass);
    if let Some((eq, dist)) = nearest {
        summary.put("nearest_equilibrium", kind_label(eq.kind));
        summary.put("nearest_equilibrium_stability", eq.classification.label());
        summary.put("nearest_equilibrium_N", eq.x1 * scaling.n0);
        summary.put("nearest_equilibrium_E", eq.x2 * scaling.e0);
        summary.put("equilibrium_distance", dist);
    }
    summary.write(&mut *stdout)?;

    if let Some(dir) = out {
        let kept = thin(&traj, cfg.output_stride);
        kept.write_csv(create(dir, "trajectory.csv")?)?;
        let mut w = create(dir, "phase_plane.csv")?;
        writeln!(w, "N,E")?;
        for x in &kept.states {
            writeln!(w, "{},{}", x[0], x[1])?;
        }
        w.flush()?;
        summary.write(create(dir, "summary.txt")?)?;
    }
    Ok(EXIT_OK)
}

pub fn equilibria(cfg: &ScenarioConfig, out: Option<&Path>, stdout: &mut dyn Write) -> Result<u8> {
    let scaling = cfg.scaling();
    let nd = nondimensionalize(&cfg.params, &scaling)?;
    let eqs = all_equilibria(&nd);
    let eig = |z: num_complex::Complex64| format!("{:.6e}{:+.6e}i", z.re, z.im);
    writeln!(
        stdout,
        "{:<11} {:>14} {:>14} {:>28} {:>28}  classification",
        "kind", "x1", "x2", "eigenvalue_1", "eigenvalue_2"
    )?;
    for eq in &eqs {
        writeln!(
            stdout,
            "{:<11} {:>14.6e} {:>14.6e} {:>28} {:>28}  {}",
            kind_label(eq.kind),
            eq.x1,
            eq.x2,
            eig(eq.eigenvalues[0]),
            eig(eq.eigenvalues[1]),
            eq.classification.label()
        )?;
    }
    if let Some(dir) = out {
        let mut w = create(dir, "equilibria.csv")?;
        writeln!(w, "kind,x1,x2,N,E,re_1,im_1,re_2,im_2,classification")?;
        for eq in &eqs {
            let [a, b] = eq.eigenvalues;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                kind_label(eq.kind),
                eq.x1,
                eq.x2,
                eq.x1 * scaling.n0,
                eq.x2 * scaling.e0,
                a.re,
                a.im,
                b.re,
                b.im,
                eq.classification.label()
            )?;
        }
        w.flush()?;
        let mut w = create(dir, "nullclines.csv")?;
        writeln!(w, "x1,h,j")?;
        for s in nullcline_samples(&nd, 1.0 / nd.beta, cfg.nullcline_points) {
            let j = s.j.map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{}", s.x1, s.h, j)?;
        }
        w.flush()?;
    }
    Ok(EXIT_OK)
}

fn write_solution(dir: &Path, sol: &RegimenSolution, scaling: &ScalingFactors) -> Result<()> {
    let mut w = create(dir, "trajectory.csv")?;
    to_dimensional(&sol.states, scaling).write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(dir, "schedule.csv")?;
    sol.schedule.rescaled_time(scaling.t0)?.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(dir, "costates.csv")?;
    sol.costates.write_csv(&mut w, scaling.t0)?;
    w.flush()?;
    Ok(())
}

pub fn optimize(cfg: &ScenarioConfig, out: Option<&Path>, stdout: &mut dyn Write) -> Result<u8> {
    let scaling = cfg.scaling();
    let nd = nondimensionalize(&cfg.params, &scaling)?;
    let horizon = cfg.horizon_days.unwrap_or(DEFAULT_OPTIMIZE_HORIZON_DAYS);
    let spec = cfg.objective_spec(horizon)?;
    let x0 = scaling.to_nondim_state(&cfg.initial)?;
    let baseline = baseline_objective(&x0, &spec, &nd)?;

    let direct_options = || {
        let mut o = DirectOptions::default();
        // the stiff chemotherapy coupling of the average-tumor problem needs a finer mesh
        o.mesh_size = cfg
            .mesh_size
            .unwrap_or(if spec.kind == ObjectiveKind::AverageTumor {
                3200
            } else {
                o.mesh_size
            });
        if let Some(n) = cfg.max_iterations {
            o.max_iterations = n;
        }
        o
    };
    let sweep_options = || {
        let mut o = SweepOptions::default();
        if let Some(n) = cfg.sweep_intervals {
            o.intervals = n;
        }
        if let Some(n) = cfg.max_iterations {
            o.max_iterations = n;
        }
        o
    };
    let sol = match cfg.solver {
        SolverChoice::Direct | SolverChoice::Both => {
            solve_direct(&spec, &x0, &nd, &direct_options())?
        }
        SolverChoice::Sweep => solve_fbsm(&spec, &x0, &nd, &sweep_options())?,
    };

    let mut summary = Summary::default();
    summary.put("objective", spec.kind.label());
    summary.put("solver", sol.solver);
    summary.put("horizon_days", horizon);
    summary.objective("", &sol.objective);
    summary.put("baseline_J", baseline.j);
    summary.put("final_N", sol.states.final_state().n * scaling.n0);
    summary.put("terminal_constraint", spec.include_terminal_constraint);
    summary.put("terminal_tolerance", spec.terminal_tolerance * scaling.n0);
    let integrals = control_integrals(&sol.schedule);
    let caps = [cfg.params.i_max, cfg.params.c_max, cfg.params.r_max];
    for (j, name) in ["I", "C", "R"].iter().enumerate() {
        summary.put(&format!("integral_u_{name}"), integrals[j]);
        summary.put(&format!("dose_{name}"), integrals[j] * caps[j]);
    }
    summary.put("iterations", sol.iterations);
    summary.put("solver_log_length", sol.solver_log.len());
    summary.residuals("", &sol.pmp_residuals);
    summary.put("verify_tolerance", cfg.verify_tolerance);
    summary.put("verified", sol.pmp_residuals.within(cfg.verify_tolerance));

    if cfg.solver == SolverChoice::Both {
        match solve_fbsm(&spec, &x0, &nd, &sweep_options()) {
            Ok(check) => {
                summary.objective("sweep_", &check.objective);
                summary.put("sweep_iterations", check.iterations);
                summary.residuals("sweep_", &check.pmp_residuals);
                let gap =
                    (check.objective.j - sol.objective.j).abs() / sol.objective.j.abs().max(1e-300);
                summary.put("sweep_relative_gap", gap);
            }
            Err(e) => summary.put("sweep_error", e),
        }
    }
    summary.write(&mut *stdout)?;
    if let Some(dir) = out {
        write_solution(dir, &sol, &scaling)?;
        summary.write(create(dir, "summary.txt")?)?;
    }
    Ok(EXIT_OK)
}

pub fn verify(cfg: &ScenarioConfig, args: &VerifyArgs, stdout: &mut dyn Write) -> Result<u8> {
    let scaling = cfg.scaling();
    let nd = nondimensionalize(&cfg.params, &scaling)?;
    let t0 = scaling.t0;
    let schedule_days = read_schedule(cfg, &args.schedule)?;
    let horizon = cfg.horizon_days.unwrap_or(schedule_days.end());
    let spec = cfg.objective_spec(horizon)?;
    let schedule = schedule_days.rescaled_time(1.0 / t0)?;

    let states = match &args.trajectory {
        Some(path) => to_nondimensional(
            &Trajectory::read_csv(open(path)?, Frame::Dimensional)?,
            &scaling,
        ),
        None => {
            let x0 = scaling.to_nondim_state(&cfg.initial)?;
            let step = DEFAULT_STEP.min(smallest_interval(&schedule));
            integrate_rk4(&x0, &schedule, &nd, spec.t_f, step)?
        }
    };
    let costates = match &args.costates {
        Some(path) => CostateTrajectory::read_csv(open(path)?, t0)?,
        None => {
            let grid = schedule.grid();
            let times: Vec<f64> = if grid.len() > 100 {
                grid.to_vec()
            } else {
                (0..=2000).map(|k| spec.t_f * k as f64 / 2000.0).collect()
            };
            natural_costates(&states, &spec, &nd, &times)?
        }
    };
    let objective = evaluate_objective(&states, &spec)?;
    let mut candidate = RegimenSolution {
        schedule,
        states,
        costates,
        objective,
        pmp_residuals: PmpResiduals::default(),
        solver_log: Vec::new(),
        iterations: 0,
        solver: "candidate",
    };
    candidate.pmp_residuals = verify_pmp(&candidate, &spec, &nd, &VerifyOptions::default());

    let ok = candidate.pmp_residuals.within(cfg.verify_tolerance);
    let mut summary = Summary::default();
    summary.put("objective", spec.kind.label());
    summary.objective("", &candidate.objective);
    summary.residuals("", &candidate.pmp_residuals);
    summary.put("verify_tolerance", cfg.verify_tolerance);
    summary.put("verified", ok);
    summary.write(&mut *stdout)?;
    if let Some(dir) = &args.common.out {
        summary.write(create(dir, "verify.txt")?)?;
    }
    Ok(if ok { EXIT_OK } else { EXIT_NUMERICAL })
}
