//! Residuals of a candidate solution against the necessary conditions.

use super::{
    direct::stationarity, reintegration_step, CostateTrajectory, ObjectiveSpec, RegimenSolution,
};
use crate::error::{Error, Result};
use crate::integrate::{integrate_rk4, Trajectory};
use crate::model::{NondimParams, StateVec, N_STATES};

/// Largest violation of each necessary condition, in relative units.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PmpResiduals {
    /// Candidate states vs. an independent re-integration of the schedule,
    /// scaled by `max(1, max |x|)`.
    pub state: f64,
    /// Candidate costates vs. backward integration from the candidate
    /// terminal value, scaled by `max(1, max |lambda|)`.
    pub costate: f64,
    /// Projected-gradient residual `|u - clamp(u - dH/du / s, 0, 1)|`, with
    /// `s = max(1, max |dH/du|)` per channel.
    pub stationarity: f64,
    /// Largest excursion of a control value outside `[0, 1]`.
    pub bounds: f64,
    /// Mismatch of `lambda(t_f)` with the transversality conditions.
    pub transversality: f64,
}

impl PmpResiduals {
    pub fn max(&self) -> f64 {
        [
            self.state,
            self.costate,
            self.stationarity,
            self.bounds,
            self.transversality,
        ]
        .into_iter()
        .fold(
            0.0,
            |m, v| if v.is_nan() { f64::INFINITY } else { m.max(v) },
        )
    }

    pub fn within(&self, tolerance: f64) -> bool {
        self.max() <= tolerance
    }

    pub fn entries(&self) -> [(&'static str, f64); 5] {
        [
            ("state", self.state),
            ("costate", self.costate),
            ("stationarity", self.stationarity),
            ("bounds", self.bounds),
            ("transversality", self.transversality),
        ]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    /// Maximal step of the backward costate integration.
    pub costate_step: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { costate_step: 5e-4 }
    }
}

fn state_residual(candidate: &RegimenSolution, params: &NondimParams) -> f64 {
    let states = &candidate.states;
    if states.is_empty() {
        return f64::INFINITY;
    }
    let step = 0.5 * reintegration_step(&candidate.schedule);
    let Ok(reference) = integrate_rk4(
        &states.state(0),
        &candidate.schedule,
        params,
        states.end(),
        step,
    ) else {
        return f64::INFINITY;
    };
    let scale = states.max_component().max(1.0);
    let mut worst = 0.0_f64;
    for (t, x) in states.times.iter().zip(&states.states) {
        let Ok(y) = reference.sample_raw(*t) else {
            return f64::INFINITY;
        };
        for j in 0..N_STATES {
            worst = worst.max((x[j] - y[j]).abs() / scale);
        }
    }
    worst
}

/// Backward RK4 for the costates along `states`, starting from `terminal`
/// at `times.last()` and recording the value at every entry of `times`.
fn backward_costates(
    states: &Trajectory,
    spec: &ObjectiveSpec,
    params: &NondimParams,
    times: &[f64],
    terminal: StateVec,
    max_step: f64,
) -> Option<Vec<StateVec>> {
    let x_at = |t: f64| states.sample_raw(t.clamp(states.start(), states.end()));
    let g = |t: f64, l: &StateVec| -> Option<StateVec> {
        Some(spec.costate_rhs_raw(&x_at(t).ok()?, l, params))
    };
    let step = |l: &StateVec, d: &StateVec, c: f64| -> StateVec {
        std::array::from_fn(|i| l[i] - c * d[i])
    };
    let mut out = vec![terminal; times.len()];
    let mut lam = terminal;
    for k in (0..times.len().saturating_sub(1)).rev() {
        let (ta, tb) = (times[k], times[k + 1]);
        let n = ((tb - ta) / max_step).ceil().max(1.0) as usize;
        let h = (tb - ta) / n as f64;
        for s in 0..n {
            let t = tb - s as f64 * h;
            let k1 = g(t, &lam)?;
            let k2 = g(t - 0.5 * h, &step(&lam, &k1, 0.5 * h))?;
            let k3 = g(t - 0.5 * h, &step(&lam, &k2, 0.5 * h))?;
            let k4 = g(t - h, &step(&lam, &k3, h))?;
            lam = std::array::from_fn(|i| {
                lam[i] - h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            });
        }
        out[k] = lam;
    }
    out.iter()
        .all(|l| l.iter().all(|v| v.is_finite()))
        .then_some(out)
}

/// Costates of a given state trajectory, integrated backward from the
/// transversality value with no terminal multiplier, sampled at `times`.
pub fn natural_costates(
    states: &Trajectory,
    spec: &ObjectiveSpec,
    params: &NondimParams,
    times: &[f64],
) -> Result<CostateTrajectory> {
    if times.len() < 2 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidSchedule(
            "costate times must be strictly increasing".into(),
        ));
    }
    let lambda = backward_costates(
        states,
        spec,
        params,
        times,
        spec.terminal_costate(),
        VerifyOptions::default().costate_step,
    )
    .ok_or_else(|| Error::NonFinite("costates".into()))?;
    Ok(CostateTrajectory {
        times: times.to_vec(),
        lambda,
    })
}

fn costate_residual(
    candidate: &RegimenSolution,
    spec: &ObjectiveSpec,
    params: &NondimParams,
    opts: &VerifyOptions,
) -> f64 {
    let cs = &candidate.costates;
    if cs.times.len() < 2 || cs.times.len() != cs.lambda.len() || candidate.states.is_empty() {
        return f64::INFINITY;
    }
    let scale = cs
        .lambda
        .iter()
        .flat_map(|l| l.iter())
        .fold(1.0_f64, |m, v| m.max(v.abs()));
    let Some(reference) = backward_costates(
        &candidate.states,
        spec,
        params,
        &cs.times,
        cs.terminal(),
        opts.costate_step,
    ) else {
        return f64::INFINITY;
    };
    reference
        .iter()
        .zip(&cs.lambda)
        .flat_map(|(a, b)| (0..N_STATES).map(move |j| (a[j] - b[j]).abs() / scale))
        .fold(0.0, f64::max)
}

fn stationarity_residual(candidate: &RegimenSolution, spec: &ObjectiveSpec) -> f64 {
    let cs = &candidate.costates;
    let mut us = Vec::with_capacity(cs.times.len());
    let mut gs = Vec::with_capacity(cs.times.len());
    for (t, l) in cs.times.iter().zip(&cs.lambda) {
        let u = candidate.schedule.at(*t).to_array();
        gs.push(spec.hamiltonian_u_raw(&u, l));
        us.push(u);
    }
    stationarity(&us, &gs)
}

fn bound_residual(candidate: &RegimenSolution) -> f64 {
    candidate
        .schedule
        .values()
        .iter()
        .flat_map(|u| u.to_array())
        .fold(0.0_f64, |m, v| m.max(-v).max(v - 1.0))
        + 0.0
}

fn transversality_residual(candidate: &RegimenSolution, spec: &ObjectiveSpec) -> f64 {
    if candidate.costates.lambda.is_empty() || candidate.states.is_empty() {
        return f64::INFINITY;
    }
    let lam = candidate.costates.terminal();
    let expected = spec.terminal_costate();
    let scale = expected.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let mut worst = (1..N_STATES)
        .map(|j| (lam[j] - expected[j]).abs())
        .fold(0.0, f64::max)
        / scale;
    let gap = lam[0] - expected[0];
    if spec.include_terminal_constraint {
        // lambda_1(t_f) carries a multiplier nu >= 0 with nu (N(t_f) - tol) = 0
        let nu = gap;
        let slack =
            (spec.terminal_tolerance - candidate.states.final_state().n) / spec.terminal_tolerance;
        worst = worst.max((-nu).max(0.0) / scale);
        worst = worst.max(nu.max(0.0) / nu.abs().max(1.0) * slack.abs());
        worst = worst.max((-slack).max(0.0));
    } else {
        worst = worst.max(gap.abs() / scale);
    }
    worst
}

/// Checks a candidate against the necessary conditions. Never fails; missing
/// or inconsistent data shows up as infinite residuals.
pub fn verify_pmp(
    candidate: &RegimenSolution,
    spec: &ObjectiveSpec,
    params: &NondimParams,
    options: &VerifyOptions,
) -> PmpResiduals {
    PmpResiduals {
        state: state_residual(candidate, params),
        costate: costate_residual(candidate, spec, params, options),
        stationarity: stationarity_residual(candidate, spec),
        bounds: bound_residual(candidate),
        transversality: transversality_residual(candidate, spec),
    }
}
