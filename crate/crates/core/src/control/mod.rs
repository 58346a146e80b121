//! Fixed-final-time optimal control of the therapy inputs.
//!
//! The cost is `J = w1 K - |w2| L + u_reg * int |u|^2 dt` where `L` is the
//! average effector level and `K` is one of
//!
//! - final tumor burden `N(t_f)` (terminal, or Mayer, term),
//! - average tumor burden `(1/t_f) int N dt`,
//! - total delivered therapy `int (u_I + u_C + u_R) dt`, which must be paired
//!   with the terminal constraint `N(t_f) <= terminal_tolerance`.
//!
//! Everything here works in the nondimensional frame. Running costs enter
//! the Hamiltonian `H = l(x, u) + lambda . f(x, u)`; the Mayer term only
//! seeds the costates at `t_f`. An optional soft penalty
//! `dose_cap_weight * sum_j max(0, x_j - 1)^2` on the therapy levels keeps
//! `I, C, R` below their caps and is part of the running cost as well.

mod direct;
mod fbsm;
mod verify;

pub use direct::{solve_direct, DirectOptions, TerminalPenalty, Transcription};
pub use fbsm::{solve_fbsm, SweepOptions};
pub use verify::{natural_costates, verify_pmp, PmpResiduals, VerifyOptions};

use crate::error::{Error, Result};
use crate::integrate::{integrate_rk4, ControlSchedule, Interpolation, Trajectory, DEFAULT_STEP};
use crate::model::{
    ControlInput, ControlVec, Frame, NondimParams, StateVec, SystemState, N_CONTROLS, N_STATES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    FinalTumor,
    AverageTumor,
    TotalTreatment,
}

impl ObjectiveKind {
    pub fn label(self) -> &'static str {
        match self {
            ObjectiveKind::FinalTumor => "final-tumor",
            ObjectiveKind::AverageTumor => "average-tumor",
            ObjectiveKind::TotalTreatment => "total-treatment",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "final-tumor" => Some(ObjectiveKind::FinalTumor),
            "average-tumor" => Some(ObjectiveKind::AverageTumor),
            "total-treatment" => Some(ObjectiveKind::TotalTreatment),
            _ => None,
        }
    }
}

/// Direction in which the average-effector term is pushed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ImmuneTerm {
    /// `J` contains `-|w2| L`, rewarding a strong immune response.
    #[default]
    Maximize,
    /// `J` contains `+|w2| L`.
    Minimize,
}

impl ImmuneTerm {
    fn sign(self) -> f64 {
        match self {
            ImmuneTerm::Maximize => -1.0,
            ImmuneTerm::Minimize => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    pub include_terminal_constraint: bool,
    pub w1: f64,
    /// Magnitude of the effector weight; the sign lives in `immune_term`.
    pub w2: f64,
    pub immune_term: ImmuneTerm,
    /// Horizon in units of `t0`.
    pub t_f: f64,
    pub u_reg: f64,
    /// Admissible `N(t_f)` for the constrained variant (units of `N0`).
    pub terminal_tolerance: f64,
    pub dose_cap_weight: f64,
}

impl ObjectiveSpec {
    pub const DEFAULT_W1: f64 = 1.0;
    pub const DEFAULT_W2: f64 = 0.25;
    pub const DEFAULT_U_REG: f64 = 1e-3;
    pub const DEFAULT_TERMINAL_TOLERANCE: f64 = 1e-4;
    pub const DEFAULT_DOSE_CAP_WEIGHT: f64 = 100.0;
    /// Default horizon in days.
    pub const DEFAULT_HORIZON_DAYS: f64 = 60.0;

    /// Defaults: `w1 = 1`, `w2 = 0.25` (maximize effectors), `u_reg = 1e-3`,
    /// terminal tolerance `1e-4`, constraint on for total-treatment only.
    pub fn new(kind: ObjectiveKind, t_f: f64) -> Self {
        Self {
            kind,
            include_terminal_constraint: kind == ObjectiveKind::TotalTreatment,
            w1: Self::DEFAULT_W1,
            w2: Self::DEFAULT_W2,
            immune_term: ImmuneTerm::Maximize,
            t_f,
            u_reg: Self::DEFAULT_U_REG,
            terminal_tolerance: Self::DEFAULT_TERMINAL_TOLERANCE,
            dose_cap_weight: Self::DEFAULT_DOSE_CAP_WEIGHT,
        }
    }

    /// Accepts `w2` in either sign convention: a negative value (the
    /// "maximize L" reading of `J = w1 K + w2 L`) and a positive magnitude
    /// both mean the effector term is maximized.
    pub fn with_signed_w2(mut self, w2: f64) -> Self {
        self.w2 = w2.abs();
        self.immune_term = ImmuneTerm::Maximize;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if !(self.w1.is_finite() && self.w1 > 0.0) {
            return bad(format!("w1 must be positive, got {}", self.w1));
        }
        if !(self.w2.is_finite() && self.w2 >= 0.0) {
            return bad(format!(
                "w2 is a magnitude and must be >= 0, got {}",
                self.w2
            ));
        }
        if !(self.t_f.is_finite() && self.t_f > 0.0) {
            return bad(format!("t_f must be positive, got {}", self.t_f));
        }
        if !(self.u_reg.is_finite() && self.u_reg >= 0.0) {
            return bad(format!("u_reg must be >= 0, got {}", self.u_reg));
        }
        if !(self.dose_cap_weight.is_finite() && self.dose_cap_weight >= 0.0) {
            return bad(format!(
                "dose_cap_weight must be >= 0, got {}",
                self.dose_cap_weight
            ));
        }
        if self.kind == ObjectiveKind::TotalTreatment && !self.include_terminal_constraint {
            return bad("the total-treatment objective requires the terminal constraint".into());
        }
        if self.include_terminal_constraint
            && !(self.terminal_tolerance.is_finite() && self.terminal_tolerance > 0.0)
        {
            return bad(format!(
                "terminal_tolerance must be positive, got {}",
                self.terminal_tolerance
            ));
        }
        Ok(())
    }

    /// Coefficients `a` of the part of the running cost linear in `u`.
    fn linear_control_cost(&self) -> ControlVec {
        match self.kind {
            ObjectiveKind::TotalTreatment => [self.w1; N_CONTROLS],
            _ => [0.0; N_CONTROLS],
        }
    }

    /// Running cost `l(x, u)`.
    pub fn running_cost(&self, x: &StateVec, u: &ControlVec) -> f64 {
        let mut l = self.immune_term.sign() * self.w2 * x[1] / self.t_f;
        match self.kind {
            ObjectiveKind::AverageTumor => l += self.w1 * x[0] / self.t_f,
            ObjectiveKind::TotalTreatment => l += self.w1 * u.iter().sum::<f64>(),
            ObjectiveKind::FinalTumor => {}
        }
        l += self.u_reg * u.iter().map(|v| v * v).sum::<f64>();
        l + self.dose_cap_penalty(x)
    }

    pub fn dose_cap_penalty(&self, x: &StateVec) -> f64 {
        self.dose_cap_weight
            * x[2..]
                .iter()
                .map(|v| (v - 1.0).max(0.0).powi(2))
                .sum::<f64>()
    }

    /// Gradient of the running cost with respect to the state.
    pub fn running_cost_x(&self, x: &StateVec) -> StateVec {
        let mut g = [0.0; N_STATES];
        g[1] = self.immune_term.sign() * self.w2 / self.t_f;
        if self.kind == ObjectiveKind::AverageTumor {
            g[0] = self.w1 / self.t_f;
        }
        for j in 2..N_STATES {
            g[j] = 2.0 * self.dose_cap_weight * (x[j] - 1.0).max(0.0);
        }
        g
    }

    /// Gradient of the running cost with respect to the controls.
    pub fn running_cost_u(&self, u: &ControlVec) -> ControlVec {
        let a = self.linear_control_cost();
        std::array::from_fn(|i| a[i] + 2.0 * self.u_reg * u[i])
    }

    /// Terminal (Mayer) cost.
    pub fn terminal_cost(&self, x: &StateVec) -> f64 {
        match self.kind {
            ObjectiveKind::FinalTumor => self.w1 * x[0],
            _ => 0.0,
        }
    }

    /// Transversality value `lambda(t_f)` without any constraint multiplier.
    pub fn terminal_costate(&self) -> StateVec {
        let mut l = [0.0; N_STATES];
        if self.kind == ObjectiveKind::FinalTumor {
            l[0] = self.w1;
        }
        l
    }

    /// Minimizer of `H` over `u in [0, 1]^3` for `u_reg > 0`.
    pub fn hamiltonian_minimizer(&self, costate: &StateVec) -> ControlVec {
        let a = self.linear_control_cost();
        std::array::from_fn(|i| (-(costate[2 + i] + a[i]) / (2.0 * self.u_reg)).clamp(0.0, 1.0))
    }

    /// `H = l(x, u) + lambda . f(x, u)` on raw vectors.
    pub fn hamiltonian_raw(
        &self,
        x: &StateVec,
        u: &ControlVec,
        lambda: &StateVec,
        p: &NondimParams,
    ) -> f64 {
        let f = p.rhs_raw(x, u);
        self.running_cost(x, u) + (0..N_STATES).map(|j| lambda[j] * f[j]).sum::<f64>()
    }

    /// `-dH/dx` on raw vectors.
    pub fn costate_rhs_raw(&self, x: &StateVec, lambda: &StateVec, p: &NondimParams) -> StateVec {
        let jac = p.jacobian_raw(x);
        let lx = self.running_cost_x(x);
        std::array::from_fn(|k| {
            -(lx[k] + (0..N_STATES).map(|j| jac[j][k] * lambda[j]).sum::<f64>())
        })
    }

    /// `dH/du` on raw vectors. The dynamics enter `I, C, R` as `+u`.
    pub fn hamiltonian_u_raw(&self, u: &ControlVec, lambda: &StateVec) -> ControlVec {
        let lu = self.running_cost_u(u);
        std::array::from_fn(|i| lu[i] + lambda[2 + i])
    }
}

fn expect_nondim(state: &SystemState) -> Result<()> {
    state.expect_frame(Frame::Nondimensional)?;
    state.check_finite()
}

/// Hamiltonian of the chosen objective (running cost plus `lambda . f`).
pub fn hamiltonian(
    state: &SystemState,
    control: &ControlInput,
    costate: &StateVec,
    spec: &ObjectiveSpec,
    params: &NondimParams,
) -> Result<f64> {
    expect_nondim(state)?;
    control.validate()?;
    Ok(spec.hamiltonian_raw(&state.to_array(), &control.to_array(), costate, params))
}

/// Costate dynamics `lambda' = -dH/dx`.
pub fn costate_rhs(
    state: &SystemState,
    control: &ControlInput,
    costate: &StateVec,
    spec: &ObjectiveSpec,
    params: &NondimParams,
) -> Result<StateVec> {
    expect_nondim(state)?;
    control.validate()?;
    Ok(spec.costate_rhs_raw(&state.to_array(), costate, params))
}

/// Components of the objective evaluated on a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    /// `w1 K -/+ |w2| L + u_reg int |u|^2`.
    pub j: f64,
    pub k: f64,
    pub l: f64,
    pub regularization: f64,
    /// Dose-cap penalty integral (not part of `j`).
    pub dose_cap_penalty: f64,
}

/// Evaluates `J`, `K`, `L` with trapezoidal quadrature over the samples in `[0, t_f]`.
pub fn evaluate_objective(traj: &Trajectory, spec: &ObjectiveSpec) -> Result<ObjectiveValue> {
    spec.validate()?;
    if traj.frame != Frame::Nondimensional {
        return Err(Error::FrameMismatch {
            expected: Frame::Nondimensional,
            found: traj.frame,
        });
    }
    let t_f = spec.t_f;
    if traj.is_empty() || traj.end() < t_f * (1.0 - 1e-12) {
        return Err(Error::TrajectoryTooShort {
            end: if traj.is_empty() { 0.0 } else { traj.end() },
            t_f,
        });
    }
    let controls = match (&traj.controls, spec.kind) {
        (None, ObjectiveKind::TotalTreatment) => return Err(Error::MissingControls),
        (c, _) => c.as_ref(),
    };
    let start = traj.start();
    let mut times = Vec::with_capacity(traj.len());
    let mut xs = Vec::with_capacity(traj.len());
    let mut us = Vec::with_capacity(traj.len());
    for k in 0..traj.len() {
        let t = traj.times[k];
        if t > t_f * (1.0 + 1e-12) {
            // close the window with an interpolated sample at t_f
            times.push(t_f);
            xs.push(traj.sample_raw(t_f)?);
            us.push(
                controls
                    .map(|c| c[k].to_array())
                    .unwrap_or([0.0; N_CONTROLS]),
            );
            break;
        }
        times.push(t);
        xs.push(traj.states[k]);
        us.push(
            controls
                .map(|c| c[k].to_array())
                .unwrap_or([0.0; N_CONTROLS]),
        );
    }
    let span = times.last().unwrap() - start;
    let trap = |g: &dyn Fn(usize) -> f64| -> f64 {
        (0..times.len() - 1)
            .map(|k| 0.5 * (times[k + 1] - times[k]) * (g(k) + g(k + 1)))
            .sum()
    };
    let avg_e = trap(&|k| xs[k][1]) / t_f;
    let k_value = match spec.kind {
        ObjectiveKind::FinalTumor => xs.last().unwrap()[0],
        ObjectiveKind::AverageTumor => trap(&|k| xs[k][0]) / t_f,
        ObjectiveKind::TotalTreatment => trap(&|k| us[k].iter().sum::<f64>()),
    };
    let regularization = spec.u_reg * trap(&|k| us[k].iter().map(|v| v * v).sum::<f64>());
    let dose_cap_penalty = trap(&|k| spec.dose_cap_penalty(&xs[k]));
    debug_assert!(span > 0.0 || times.len() == 1);
    Ok(ObjectiveValue {
        j: spec.w1 * k_value + spec.immune_term.sign() * spec.w2 * avg_e + regularization,
        k: k_value,
        l: avg_e,
        regularization,
        dose_cap_penalty,
    })
}

/// Adjoint variables sampled in time (nondimensional).
#[derive(Debug, Clone, PartialEq)]
pub struct CostateTrajectory {
    pub times: Vec<f64>,
    pub lambda: Vec<StateVec>,
}

impl CostateTrajectory {
    pub fn terminal(&self) -> StateVec {
        *self.lambda.last().unwrap()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W, time_scale: f64) -> Result<()> {
        writeln!(w, "t,lambda_N,lambda_E,lambda_I,lambda_C,lambda_R")?;
        for (t, l) in self.times.iter().zip(&self.lambda) {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                t * time_scale,
                l[0],
                l[1],
                l[2],
                l[3],
                l[4]
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: std::io::BufRead>(r: R, time_scale: f64) -> Result<Self> {
        let rows = crate::integrate::read_numeric_csv(
            r,
            &[
                "t", "lambda_N", "lambda_E", "lambda_I", "lambda_C", "lambda_R",
            ],
        )?;
        Ok(Self {
            times: rows.iter().map(|row| row[0] / time_scale).collect(),
            lambda: rows
                .iter()
                .map(|row| [row[1], row[2], row[3], row[4], row[5]])
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimenSolution {
    /// Piecewise-linear schedule on the solver mesh (nondimensional time).
    pub schedule: ControlSchedule,
    /// Fixed-step re-integration of `schedule`.
    pub states: Trajectory,
    pub costates: CostateTrajectory,
    pub objective: ObjectiveValue,
    pub pmp_residuals: PmpResiduals,
    /// Value of the minimized merit function after every accepted iteration.
    pub solver_log: Vec<f64>,
    pub iterations: usize,
    pub solver: &'static str,
}

/// Integration step used to turn a mesh schedule into a state trajectory.
pub(crate) fn reintegration_step(schedule: &ControlSchedule) -> f64 {
    let smallest = schedule
        .grid()
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    DEFAULT_STEP.min(smallest)
}

pub(crate) fn node_schedule(t_f: f64, controls: &[ControlVec]) -> Result<ControlSchedule> {
    let m = controls.len() - 1;
    let grid = (0..=m).map(|k| t_f * k as f64 / m as f64).collect();
    let values = controls
        .iter()
        .map(|u| ControlInput::from_array(*u))
        .collect();
    ControlSchedule::new(grid, values, Interpolation::PiecewiseLinear)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn finalize(
    schedule: ControlSchedule,
    costates: CostateTrajectory,
    initial: &SystemState,
    spec: &ObjectiveSpec,
    params: &NondimParams,
    solver_log: Vec<f64>,
    iterations: usize,
    solver: &'static str,
) -> Result<RegimenSolution> {
    let states = integrate_rk4(
        initial,
        &schedule,
        params,
        spec.t_f,
        reintegration_step(&schedule),
    )?;
    let objective = evaluate_objective(&states, spec)?;
    let mut solution = RegimenSolution {
        schedule,
        states,
        costates,
        objective,
        pmp_residuals: PmpResiduals::default(),
        solver_log,
        iterations,
        solver,
    };
    solution.pmp_residuals = verify_pmp(&solution, spec, params, &VerifyOptions::default());
    Ok(solution)
}

/// Objective of `u = 0` over the horizon, evaluated like any solution.
pub fn baseline_objective(
    initial: &SystemState,
    spec: &ObjectiveSpec,
    params: &NondimParams,
) -> Result<ObjectiveValue> {
    let schedule = ControlSchedule::zero(spec.t_f)?;
    let traj = integrate_rk4(
        initial,
        &schedule,
        params,
        spec.t_f,
        DEFAULT_STEP.min(spec.t_f),
    )?;
    evaluate_objective(&traj, spec)
}
