//! Time integration of the model under a control schedule.
//!
//! Both integrators restart at every schedule breakpoint, so a control that
//! jumps (piecewise constant) or kinks (piecewise linear) never sits inside
//! a step. After each accepted step a nonnegativity guard clips tiny
//! undershoots to zero and keeps a running total of what it removed.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::model::{ControlInput, ControlVec, Dynamics, Frame, StateVec, SystemState, N_STATES};

/// Undershoot below zero that the guard clips silently (nondimensional units).
pub const CLIP_EPSILON: f64 = 1e-12;

/// Default fixed step, in units of `t0`.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Default treatment-free horizon, in units of `t0`.
pub const DEFAULT_TREATMENT_FREE_HORIZON: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    /// `values[k]` holds on `[grid[k], grid[k+1])`.
    PiecewiseConstant,
    /// `values[k]` is the value at `grid[k]`, linear in between.
    PiecewiseLinear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSchedule {
    grid: Vec<f64>,
    values: Vec<ControlInput>,
    mode: Interpolation,
}

impl ControlSchedule {
    pub fn new(grid: Vec<f64>, values: Vec<ControlInput>, mode: Interpolation) -> Result<Self> {
        if grid.len() < 2 {
            return Err(Error::InvalidSchedule(
                "grid needs at least two points".into(),
            ));
        }
        if grid.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("schedule grid".into()));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSchedule(
                "grid must be strictly increasing".into(),
            ));
        }
        let expected = match mode {
            Interpolation::PiecewiseConstant => grid.len() - 1,
            Interpolation::PiecewiseLinear => grid.len(),
        };
        if values.len() != expected {
            return Err(Error::InvalidSchedule(format!(
                "{mode:?} schedule on {} grid points needs {expected} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        for v in &values {
            v.validate()?;
        }
        Ok(Self { grid, values, mode })
    }

    /// A single constant value over `[0, t_f]`.
    pub fn constant(t_f: f64, value: ControlInput) -> Result<Self> {
        Self::new(
            vec![0.0, t_f],
            vec![value],
            Interpolation::PiecewiseConstant,
        )
    }

    pub fn zero(t_f: f64) -> Result<Self> {
        Self::constant(t_f, ControlInput::ZERO)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[ControlInput] {
        &self.values
    }

    pub fn mode(&self) -> Interpolation {
        self.mode
    }

    pub fn start(&self) -> f64 {
        self.grid[0]
    }

    pub fn end(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    /// Same schedule on a grid multiplied by `factor` (e.g. days to `t0` units).
    pub fn rescaled_time(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.grid.iter().map(|t| t * factor).collect(),
            self.values.clone(),
            self.mode,
        )
    }

    fn interval_index(&self, t: f64) -> usize {
        // last k with grid[k] <= t, clamped to a valid interval
        let k = self.grid.partition_point(|g| *g <= t);
        k.saturating_sub(1).min(self.grid.len() - 2)
    }

    /// Control value at `t`. Outside the grid the nearest end value is used.
    pub fn at(&self, t: f64) -> ControlInput {
        let k = self.interval_index(t);
        match self.mode {
            Interpolation::PiecewiseConstant => self.values[k],
            Interpolation::PiecewiseLinear => {
                let (t0, t1) = (self.grid[k], self.grid[k + 1]);
                let s = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
                let a = self.values[k].to_array();
                let b = self.values[k + 1].to_array();
                ControlInput::from_array(std::array::from_fn(|j| a[j] + s * (b[j] - a[j])))
            }
        }
    }

    /// Value on `[a, b]` seen from inside the interval (left-continuous at `b`).
    fn on_interval(&self, k: usize, t: f64) -> ControlVec {
        match self.mode {
            Interpolation::PiecewiseConstant => self.values[k].to_array(),
            Interpolation::PiecewiseLinear => {
                let (t0, t1) = (self.grid[k], self.grid[k + 1]);
                let s = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
                let a = self.values[k].to_array();
                let b = self.values[k + 1].to_array();
                std::array::from_fn(|j| a[j] + s * (b[j] - a[j]))
            }
        }
    }

    /// Writes `t,u_I,u_C,u_R`, one row per grid point. For piecewise-constant
    /// schedules the last row repeats the final value and only marks the end.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,u_I,u_C,u_R")?;
        for (k, t) in self.grid.iter().enumerate() {
            let u = self.values[k.min(self.values.len() - 1)];
            writeln!(w, "{t},{},{},{}", u.u_i, u.u_c, u.u_r)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, mode: Interpolation) -> Result<Self> {
        let rows = read_numeric_csv(r, &["t", "u_I", "u_C", "u_R"])?;
        let grid: Vec<f64> = rows.iter().map(|row| row[0]).collect();
        let mut values = rows
            .iter()
            .map(|row| ControlInput::new(row[1], row[2], row[3]))
            .collect::<Result<Vec<_>>>()?;
        if mode == Interpolation::PiecewiseConstant {
            values.pop();
        }
        Self::new(grid, values, mode)
    }

    /// Pieces `(k, a, b)` of `[start, t_f]` between consecutive breakpoints.
    fn pieces(&self, t_f: f64) -> Vec<(usize, f64, f64)> {
        let mut out = Vec::new();
        for k in 0..self.grid.len() - 1 {
            let a = self.grid[k];
            let b = if k == self.grid.len() - 2 {
                t_f.max(self.grid[k + 1])
            } else {
                self.grid[k + 1]
            };
            if a >= t_f {
                break;
            }
            out.push((k, a, b.min(t_f)));
        }
        out
    }
}

/// Sampled solution of an integration run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVec>,
    pub controls: Option<Vec<ControlInput>>,
    pub frame: Frame,
    /// Total mass removed by the nonnegativity guard.
    pub clipped_mass: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn state(&self, k: usize) -> SystemState {
        SystemState::from_array(self.states[k], self.frame)
    }

    pub fn final_state(&self) -> SystemState {
        self.state(self.len() - 1)
    }

    /// Largest absolute state component over the whole run.
    pub fn max_component(&self) -> f64 {
        self.states
            .iter()
            .flat_map(|x| x.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Interpolated state at `t` (monotone cubic per component).
    pub fn sample_at(&self, t: f64) -> Result<SystemState> {
        Ok(SystemState::from_array(self.sample_raw(t)?, self.frame))
    }

    pub fn sample_raw(&self, t: f64) -> Result<StateVec> {
        let (start, end) = (self.start(), self.end());
        if !(t >= start && t <= end) {
            return Err(Error::OutOfRange { t, start, end });
        }
        let k = self.times.partition_point(|s| *s <= t).saturating_sub(1);
        if self.times[k] == t || k + 1 >= self.len() {
            return Ok(self.states[k]);
        }
        Ok(std::array::from_fn(|j| {
            monotone_cubic(&self.times, &self.states, j, k, t)
        }))
    }

    /// Writes `t,N,E,I,C,R,u_I,u_C,u_R` with shortest round-trip float formatting.
    /// Missing controls are written as zeros.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,N,E,I,C,R,u_I,u_C,u_R")?;
        for (k, (t, x)) in self.times.iter().zip(&self.states).enumerate() {
            let u = self
                .controls
                .as_ref()
                .map(|c| c[k])
                .unwrap_or(ControlInput::ZERO);
            writeln!(
                w,
                "{t},{},{},{},{},{},{},{},{}",
                x[0], x[1], x[2], x[3], x[4], u.u_i, u.u_c, u.u_r
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, frame: Frame) -> Result<Self> {
        let rows = read_numeric_csv(r, &["t", "N", "E", "I", "C", "R", "u_I", "u_C", "u_R"])?;
        let mut times = Vec::with_capacity(rows.len());
        let mut states = Vec::with_capacity(rows.len());
        let mut controls = Vec::with_capacity(rows.len());
        for row in rows {
            times.push(row[0]);
            states.push([row[1], row[2], row[3], row[4], row[5]]);
            controls.push(ControlInput::from_array([row[6], row[7], row[8]]));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parse(
                "trajectory times are not strictly increasing".into(),
            ));
        }
        Ok(Self {
            times,
            states,
            controls: Some(controls),
            frame,
            clipped_mass: 0.0,
        })
    }
}

/// Parses a CSV with an exact header and all-numeric rows of matching width.
pub fn read_numeric_csv<R: BufRead>(r: R, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut lines = r.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Parse("empty CSV".into()))??;
    let got: Vec<&str> = first.trim().split(',').map(str::trim).collect();
    if got != header {
        return Err(Error::Parse(format!(
            "expected header `{}`, got `{}`",
            header.join(","),
            first.trim()
        )));
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(Error::Parse(format!(
                "row {} has {} fields, expected {}",
                idx + 2,
                fields.len(),
                header.len()
            )));
        }
        let row = fields
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse(format!("row {}: bad number `{f}`", idx + 2)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("CSV has a header but no rows".into()));
    }
    Ok(rows)
}

fn monotone_cubic(times: &[f64], states: &[StateVec], j: usize, k: usize, t: f64) -> f64 {
    let n = times.len();
    let y = |i: usize| states[i][j];
    let h = times[k + 1] - times[k];
    let delta = |i: usize| (y(i + 1) - y(i)) / (times[i + 1] - times[i]);
    let dk = delta(k);
    // Fritsch-Carlson tangents: zero at local extrema, harmonic mean otherwise.
    let tangent = |i: usize| -> f64 {
        if i == 0 {
            return delta(0);
        }
        if i == n - 1 {
            return delta(n - 2);
        }
        let (d0, d1) = (delta(i - 1), delta(i));
        if d0 * d1 <= 0.0 {
            0.0
        } else {
            let (h0, h1) = (times[i] - times[i - 1], times[i + 1] - times[i]);
            let (w0, w1) = (2.0 * h1 + h0, h1 + 2.0 * h0);
            (w0 + w1) / (w0 / d0 + w1 / d1)
        }
    };
    let (mut m0, mut m1) = (tangent(k), tangent(k + 1));
    if dk == 0.0 {
        m0 = 0.0;
        m1 = 0.0;
    } else {
        // keep the endpoint tangents inside the monotonicity region
        if m0 * dk < 0.0 {
            m0 = 0.0;
        }
        if m1 * dk < 0.0 {
            m1 = 0.0;
        }
        let a = m0 / dk;
        let b = m1 / dk;
        let s = a * a + b * b;
        if s > 9.0 {
            let tau = 3.0 / s.sqrt();
            m0 = tau * a * dk;
            m1 = tau * b * dk;
        }
    }
    let s = (t - times[k]) / h;
    let (s2, s3) = (s * s, s * s * s);
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    h00 * y(k) + h10 * h * m0 + h01 * y(k + 1) + h11 * h * m1
}

struct Guard {
    scale: StateVec,
    clipped: f64,
}

impl Guard {
    fn apply(&mut self, t: f64, x: &mut StateVec) -> Result<()> {
        for (j, slot) in x.iter_mut().enumerate() {
            let v = *slot;
            if !v.is_finite() {
                return Err(Error::BlowUp {
                    time: t,
                    detail: format!("component {j} is {v}"),
                });
            }
            if v < 0.0 {
                let eps = CLIP_EPSILON * self.scale[j];
                if v <= -eps {
                    return Err(Error::BlowUp {
                        time: t,
                        detail: format!("component {j} went negative ({v:e})"),
                    });
                }
                self.clipped += -v;
                *slot = 0.0;
            }
        }
        Ok(())
    }
}

fn axpy(x: &StateVec, h: f64, k: &StateVec) -> StateVec {
    std::array::from_fn(|j| x[j] + h * k[j])
}

fn check_start(
    initial: &SystemState,
    schedule: &ControlSchedule,
    t_f: f64,
    frame: Frame,
) -> Result<()> {
    initial.expect_frame(frame)?;
    initial.validate()?;
    if !(t_f.is_finite() && t_f > schedule.start()) {
        return Err(Error::InvalidSchedule(format!(
            "horizon {t_f} must exceed the schedule start {}",
            schedule.start()
        )));
    }
    if t_f > schedule.end() * (1.0 + 1e-12) + 1e-300 {
        return Err(Error::InvalidSchedule(format!(
            "schedule ends at {} before the horizon {t_f}",
            schedule.end()
        )));
    }
    Ok(())
}

/// Classical fixed-step RK4 from `schedule.start()` to `t_f`.
///
/// Each breakpoint interval is split into `ceil(len / step)` equal steps.
pub fn integrate_rk4<D: Dynamics + ?Sized>(
    initial: &SystemState,
    schedule: &ControlSchedule,
    model: &D,
    t_f: f64,
    step: f64,
) -> Result<Trajectory> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidSchedule(format!(
            "step must be positive, got {step}"
        )));
    }
    check_start(initial, schedule, t_f, model.frame())?;
    let pieces = schedule.pieces(t_f);
    let smallest = pieces
        .iter()
        .map(|(_, a, b)| b - a)
        .fold(f64::INFINITY, f64::min);
    if step > smallest * (1.0 + 1e-9) {
        return Err(Error::StepTooLarge {
            step,
            interval: smallest,
        });
    }

    let mut guard = Guard {
        scale: model.component_scale(),
        clipped: 0.0,
    };
    let mut x = initial.to_array();
    let mut times = vec![schedule.start()];
    let mut states = vec![x];
    let mut controls = vec![ControlInput::from_array(
        schedule.on_interval(pieces[0].0, schedule.start()),
    )];

    for &(k, a, b) in &pieces {
        let n = ((b - a) / step - 1e-9).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        for s in 0..n {
            let t = a + s as f64 * h;
            let t_next = if s + 1 == n {
                b
            } else {
                a + (s + 1) as f64 * h
            };
            let u0 = schedule.on_interval(k, t);
            let um = schedule.on_interval(k, t + 0.5 * h);
            let u1 = schedule.on_interval(k, t_next);
            let k1 = model.rhs(&x, &u0);
            let k2 = model.rhs(&axpy(&x, 0.5 * h, &k1), &um);
            let k3 = model.rhs(&axpy(&x, 0.5 * h, &k2), &um);
            let k4 = model.rhs(&axpy(&x, h, &k3), &u1);
            x = std::array::from_fn(|j| {
                x[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            });
            guard.apply(t_next, &mut x)?;
            times.push(t_next);
            states.push(x);
            controls.push(ControlInput::from_array(u1));
        }
    }
    Ok(Trajectory {
        times,
        states,
        controls: Some(controls),
        frame: model.frame(),
        clipped_mass: guard.clipped,
    })
}

// Dormand-Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Error-controlled Dormand-Prince 5(4) integration. Every accepted step is
/// recorded; breakpoints are always hit exactly.
pub fn integrate_adaptive<D: Dynamics + ?Sized>(
    initial: &SystemState,
    schedule: &ControlSchedule,
    model: &D,
    t_f: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<Trajectory> {
    if !(rel_tol > 0.0 && abs_tol > 0.0 && rel_tol.is_finite() && abs_tol.is_finite()) {
        return Err(Error::InvalidSchedule("tolerances must be positive".into()));
    }
    check_start(initial, schedule, t_f, model.frame())?;
    let pieces = schedule.pieces(t_f);
    let scale = model.component_scale();
    let abs_tol_vec: StateVec = std::array::from_fn(|j| abs_tol * scale[j]);

    let mut guard = Guard {
        scale,
        clipped: 0.0,
    };
    let mut x = initial.to_array();
    let mut times = vec![schedule.start()];
    let mut states = vec![x];
    let mut controls = vec![ControlInput::from_array(
        schedule.on_interval(pieces[0].0, schedule.start()),
    )];
    let mut h = ((pieces[0].2 - pieces[0].1) * 1e-3).max(1e-10);

    for &(k, a, b) in &pieces {
        let mut t = a;
        let min_step = 1e-14 * (1.0 + b.abs());
        while t < b {
            let last = h >= b - t;
            let hs = if last { b - t } else { h };
            let mut stages = [[0.0; N_STATES]; 7];
            for s in 0..7 {
                let mut xs = x;
                for (p, a_sp) in DP_A[s].iter().enumerate().take(s) {
                    for j in 0..N_STATES {
                        xs[j] += hs * a_sp * stages[p][j];
                    }
                }
                stages[s] = model.rhs(&xs, &schedule.on_interval(k, t + DP_C[s] * hs));
            }
            let mut x5 = x;
            let mut err = 0.0;
            for j in 0..N_STATES {
                let mut d5 = 0.0;
                let mut d4 = 0.0;
                for s in 0..7 {
                    d5 += DP_B5[s] * stages[s][j];
                    d4 += DP_B4[s] * stages[s][j];
                }
                x5[j] = x[j] + hs * d5;
                let sc = abs_tol_vec[j] + rel_tol * x[j].abs().max(x5[j].abs());
                let e = hs * (d5 - d4) / sc;
                err += e * e;
            }
            let err = (err / N_STATES as f64).sqrt();
            if !err.is_finite() {
                h = hs * 0.1;
                if h < min_step {
                    return Err(Error::BlowUp {
                        time: t,
                        detail: "non-finite stage values".into(),
                    });
                }
                continue;
            }
            if err <= 1.0 {
                t = if last { b } else { t + hs };
                x = x5;
                guard.apply(t, &mut x)?;
                times.push(t);
                states.push(x);
                controls.push(ControlInput::from_array(schedule.on_interval(k, t)));
                let factor = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                if !last || factor < 1.0 {
                    h = hs * factor;
                }
            } else {
                h = hs * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                if h < min_step {
                    return Err(Error::StepUnderflow { time: t, step: h });
                }
            }
        }
    }
    Ok(Trajectory {
        times,
        states,
        controls: Some(controls),
        frame: model.frame(),
        clipped_mass: guard.clipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DimensionalModel, NondimParams};

    fn nd(n: f64, e: f64, i: f64) -> SystemState {
        SystemState::new(n, e, i, 0.0, 0.0, Frame::Nondimensional)
    }

    #[test]
    fn schedule_validation() {
        let u = ControlInput::ZERO;
        assert!(ControlSchedule::new(vec![0.0], vec![], Interpolation::PiecewiseConstant).is_err());
        assert!(
            ControlSchedule::new(vec![0.0, 0.0], vec![u], Interpolation::PiecewiseConstant)
                .is_err()
        );
        assert!(
            ControlSchedule::new(vec![0.0, 1.0], vec![u, u], Interpolation::PiecewiseConstant)
                .is_err()
        );
        let bad = ControlInput {
            u_i: 2.0,
            u_c: 0.0,
            u_r: 0.0,
        };
        assert!(
            ControlSchedule::new(vec![0.0, 1.0], vec![bad], Interpolation::PiecewiseConstant)
                .is_err()
        );
        let s = ControlSchedule::new(
            vec![0.0, 1.0, 2.0],
            vec![ControlInput::ZERO, ControlInput::FULL, ControlInput::ZERO],
            Interpolation::PiecewiseLinear,
        )
        .unwrap();
        assert_eq!(s.at(0.5).u_r, 0.5);
        assert_eq!(s.at(1.0).u_c, 1.0);
        assert_eq!(s.at(1.75).u_i, 0.25);
    }

    #[test]
    fn exponential_decay_of_il2() {
        let q = NondimParams::canonical();
        let traj = integrate_rk4(
            &nd(0.0, 0.0, 1.0),
            &ControlSchedule::zero(1.0).unwrap(),
            &q,
            1.0,
            2e-4,
        )
        .unwrap();
        let exact = (-q.tau).exp();
        let got = traj.final_state().i;
        assert!(((got - exact) / exact).abs() <= 1e-6, "{got} vs {exact}");
        assert_eq!(traj.end(), 1.0);
    }

    #[test]
    fn dimensional_il2_decay() {
        let m = DimensionalModel::canonical();
        let s = SystemState::new(0.0, 0.0, 5e4, 0.0, 0.0, Frame::Dimensional);
        let traj = integrate_rk4(&s, &ControlSchedule::zero(2.0).unwrap(), &m, 2.0, 1e-4).unwrap();
        let exact = 5e4 * (-m.params.tau * 2.0).exp();
        assert!(((traj.final_state().i - exact) / exact).abs() < 1e-8);
    }

    #[test]
    fn step_larger_than_interval_is_rejected() {
        let q = NondimParams::canonical();
        let s = ControlSchedule::new(
            vec![0.0, 0.01, 1.0],
            vec![ControlInput::ZERO, ControlInput::ZERO],
            Interpolation::PiecewiseConstant,
        )
        .unwrap();
        let err = integrate_rk4(&nd(1.0, 1.0, 0.0), &s, &q, 1.0, 0.1).unwrap_err();
        assert!(matches!(err, Error::StepTooLarge { .. }));
    }

    #[test]
    fn breakpoints_are_sampled_exactly() {
        let q = NondimParams::canonical();
        let s = ControlSchedule::new(
            vec![0.0, 0.3337, 1.0],
            vec![ControlInput::FULL, ControlInput::ZERO],
            Interpolation::PiecewiseConstant,
        )
        .unwrap();
        let traj = integrate_rk4(&nd(5.0, 1.0, 0.0), &s, &q, 1.0, 0.01).unwrap();
        assert!(traj.times.contains(&0.3337));
        let traj = integrate_adaptive(&nd(5.0, 1.0, 0.0), &s, &q, 1.0, 1e-8, 1e-10).unwrap();
        assert!(traj.times.contains(&0.3337));
    }

    #[test]
    fn blow_up_reports_time() {
        struct Explode;
        impl Dynamics for Explode {
            fn frame(&self) -> Frame {
                Frame::Nondimensional
            }
            fn rhs(&self, x: &StateVec, _u: &ControlVec) -> StateVec {
                [x[0] * x[0], 0.0, 0.0, 0.0, 0.0]
            }
            fn component_scale(&self) -> StateVec {
                [1.0; N_STATES]
            }
        }
        let err = integrate_rk4(
            &nd(1.0, 0.0, 0.0),
            &ControlSchedule::zero(2.0).unwrap(),
            &Explode,
            2.0,
            1e-3,
        )
        .unwrap_err();
        match err {
            Error::BlowUp { time, .. } => assert!(time > 0.9 && time < 1.1, "{time}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_overshoot_aborts_but_tiny_one_is_clipped() {
        struct Drain(f64);
        impl Dynamics for Drain {
            fn frame(&self) -> Frame {
                Frame::Nondimensional
            }
            fn rhs(&self, _x: &StateVec, _u: &ControlVec) -> StateVec {
                [-self.0, 0.0, 0.0, 0.0, 0.0]
            }
            fn component_scale(&self) -> StateVec {
                [1.0; N_STATES]
            }
        }
        let sched = ControlSchedule::zero(1.0).unwrap();
        let traj =
            integrate_rk4(&nd(1.0 - 1e-13, 0.0, 0.0), &sched, &Drain(1.0), 1.0, 0.5).unwrap();
        assert_eq!(traj.final_state().n, 0.0);
        assert!(traj.clipped_mass > 0.0 && traj.clipped_mass < 1e-12);
        assert!(integrate_rk4(&nd(0.5, 0.0, 0.0), &sched, &Drain(1.0), 1.0, 0.5).is_err());
    }

    #[test]
    fn adaptive_matches_fine_rk4() {
        let q = NondimParams::canonical();
        let s = ControlSchedule::new(
            vec![0.0, 0.5, 1.5, 3.0],
            vec![
                ControlInput::new(0.2, 0.6, 0.1).unwrap(),
                ControlInput::ZERO,
                ControlInput::new(1.0, 0.0, 0.3).unwrap(),
            ],
            Interpolation::PiecewiseConstant,
        )
        .unwrap();
        let x0 = nd(60.0, 1.0, 0.0);
        let fine = integrate_rk4(&x0, &s, &q, 3.0, 1e-4)
            .unwrap()
            .final_state()
            .to_array();
        let rel_tol = 1e-8;
        let ad = integrate_adaptive(&x0, &s, &q, 3.0, rel_tol, 1e-12)
            .unwrap()
            .final_state()
            .to_array();
        for j in 0..N_STATES {
            assert!(
                (ad[j] - fine[j]).abs() <= 10.0 * rel_tol * fine[j].abs().max(1e-6),
                "component {j}"
            );
        }
    }

    #[test]
    fn adaptive_exponential_decay() {
        let q = NondimParams::canonical();
        let rel_tol = 1e-9;
        let sched = ControlSchedule::zero(1.0).unwrap();
        let traj = integrate_adaptive(&nd(0.0, 0.0, 1.0), &sched, &q, 1.0, rel_tol, 1e-12).unwrap();
        assert!((traj.final_state().i - (-q.tau).exp()).abs() <= 10.0 * rel_tol);
        // relative accuracy over ~9 e-folds
        let traj =
            integrate_adaptive(&nd(0.0, 0.0, 1.0), &sched, &q, 0.1, rel_tol, 1e-300).unwrap();
        let exact = (-0.1 * q.tau).exp();
        let got = traj.final_state().i;
        assert!(
            (got - exact).abs() <= 10.0 * rel_tol * exact,
            "{got:e} vs {exact:e}"
        );
    }

    #[test]
    fn sample_at_contract() {
        let traj = Trajectory {
            times: vec![0.0, 1.0, 2.0, 3.0],
            states: vec![
                [1.0, 2.0, 0.0, 0.0, 0.0],
                [2.0, 2.0, 0.0, 0.0, 0.0],
                [4.0, 2.0, 1.0, 0.0, 0.0],
                [4.5, 2.0, 0.0, 0.0, 0.0],
            ],
            controls: None,
            frame: Frame::Nondimensional,
            clipped_mass: 0.0,
        };
        assert_eq!(traj.sample_at(2.0).unwrap().n, 4.0);
        assert_eq!(traj.sample_at(1.5).unwrap().e, 2.0);
        let v = traj.sample_at(2.5).unwrap();
        assert!(v.n >= 4.0 && v.n <= 4.5);
        assert!(v.i >= 0.0 && v.i <= 1.0);
        assert!(matches!(traj.sample_at(3.5), Err(Error::OutOfRange { .. })));
        assert!(traj.sample_at(-0.1).is_err());
    }

    #[test]
    fn csv_rejects_truncated_rows() {
        let text = "t,N,E,I,C,R,u_I,u_C,u_R\n0,1,1,0,0,0,0,0,0\n1,2,1,0\n";
        assert!(Trajectory::read_csv(text.as_bytes(), Frame::Dimensional).is_err());
        assert!(Trajectory::read_csv("t,N\n".as_bytes(), Frame::Dimensional).is_err());
    }
}
