//! Five-population tumor / effector / therapy model.
//!
//! The state is `(N, E, I, C, R)`: tumor cells, effector cells, and the
//! circulating levels of IL-2 immunotherapy, chemotherapy and radiotherapy.
//! The dynamics are
//!
//! ```text
//! N' = a N (1 - b N) - g N E - d N (1 - exp(-C/C_max)) - N (eps R + kap R^2)
//! E' = z - l E + eta E N / (theta + N) + nu E I / (rho + I)
//!        - mu E (1 - exp(-C/C_max)) - E (sig R + phi R^2)
//! I' = U_I - tau I,   C' = U_C - omega C,   R' = U_R - chi R
//! ```
//!
//! Controls are dimensionless infusion rates `u` in `[0, 1]`; in physical
//! units `U = u * cap / t0`, so `u = 1` delivers one maximum tolerable dose
//! per characteristic time `t0 = 1 / (g N0)`.
//!
//! The nondimensional form rescales every population by its scaling factor
//! and time by `t0`, which removes `g`. The parameter transforms follow from
//! requiring both frames to produce the same trajectories; see
//! `docs/nondimensionalization.md` for the derivation.

use std::fmt;

use crate::error::{Error, Result};
use crate::keyvalue;

pub const N_STATES: usize = 5;
pub const N_CONTROLS: usize = 3;

pub type StateVec = [f64; N_STATES];
pub type ControlVec = [f64; N_CONTROLS];
pub type StateJacobian = [[f64; N_STATES]; N_STATES];

/// Labels of the state components, in storage order.
pub const STATE_NAMES: [&str; N_STATES] = ["N", "E", "I", "C", "R"];

/// Canonical parameter file, shipped with the crate.
pub const CANONICAL_PARAMS_TEXT: &str = include_str!("../params/canonical.params");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Dimensional,
    Nondimensional,
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frame::Dimensional => f.write_str("dimensional"),
            Frame::Nondimensional => f.write_str("nondimensional"),
        }
    }
}

/// Physical parameter set. Rates are per day, populations in cells,
/// radiotherapy in Gy and drug levels in IU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimensionalParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub kappa: f64,
    pub zeta: f64,
    pub eta: f64,
    pub theta: f64,
    pub lambda: f64,
    pub nu: f64,
    pub rho: f64,
    pub mu: f64,
    pub sigma: f64,
    pub phi: f64,
    pub tau: f64,
    pub omega: f64,
    pub chi: f64,
    pub i_max: f64,
    pub c_max: f64,
    pub r_max: f64,
}

impl Default for DimensionalParams {
    fn default() -> Self {
        Self::canonical()
    }
}

impl DimensionalParams {
    pub const FIELD_NAMES: [&'static str; 21] = [
        "alpha", "beta", "gamma", "delta", "epsilon", "kappa", "zeta", "eta", "theta", "lambda",
        "nu", "rho", "mu", "sigma", "phi", "tau", "omega", "chi", "i_max", "c_max", "r_max",
    ];

    /// The literature-derived parameter set used throughout the crate.
    pub fn canonical() -> Self {
        Self {
            alpha: 1.80e-1,
            beta: 2.00e-9,
            gamma: 1.101e-7,
            delta: 9.00e-1,
            epsilon: 3.98e-2,
            kappa: 3.98e-3,
            zeta: 1.30e4,
            eta: 1.245e-1,
            theta: 2.019e7,
            lambda: 4.12e-2,
            nu: 1.245e-1,
            rho: 2.00e7,
            mu: 6.00e-1,
            sigma: 3.98e-2,
            phi: 3.98e-3,
            tau: 1.00e1,
            omega: 9.00e-1,
            chi: 1.1e-2,
            i_max: 7.20e5,
            c_max: 3.00e4,
            r_max: 4.50e1,
        }
    }

    fn slot(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "alpha" => &mut self.alpha,
            "beta" => &mut self.beta,
            "gamma" => &mut self.gamma,
            "delta" => &mut self.delta,
            "epsilon" => &mut self.epsilon,
            "kappa" => &mut self.kappa,
            "zeta" => &mut self.zeta,
            "eta" => &mut self.eta,
            "theta" => &mut self.theta,
            "lambda" | "lambda_" => &mut self.lambda,
            "nu" => &mut self.nu,
            "rho" => &mut self.rho,
            "mu" => &mut self.mu,
            "sigma" => &mut self.sigma,
            "phi" => &mut self.phi,
            "tau" => &mut self.tau,
            "omega" => &mut self.omega,
            "chi" => &mut self.chi,
            "i_max" => &mut self.i_max,
            "c_max" => &mut self.c_max,
            "r_max" => &mut self.r_max,
            _ => return None,
        })
    }

    pub fn is_key(key: &str) -> bool {
        Self::canonical().slot(key).is_some()
    }

    /// Overrides one field by name. Does not validate positivity; call
    /// [`DimensionalParams::validate`] once all overrides are applied.
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        let slot = self
            .slot(key)
            .ok_or_else(|| Error::UnknownKey(key.to_string()))?;
        *slot = value;
        Ok(())
    }

    pub fn values(&self) -> [(&'static str, f64); 21] {
        let p = self;
        [
            ("alpha", p.alpha),
            ("beta", p.beta),
            ("gamma", p.gamma),
            ("delta", p.delta),
            ("epsilon", p.epsilon),
            ("kappa", p.kappa),
            ("zeta", p.zeta),
            ("eta", p.eta),
            ("theta", p.theta),
            ("lambda", p.lambda),
            ("nu", p.nu),
            ("rho", p.rho),
            ("mu", p.mu),
            ("sigma", p.sigma),
            ("phi", p.phi),
            ("tau", p.tau),
            ("omega", p.omega),
            ("chi", p.chi),
            ("i_max", p.i_max),
            ("c_max", p.c_max),
            ("r_max", p.r_max),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in self.values() {
            check_positive(name, value)?;
        }
        Ok(())
    }

    /// Starts from `self` and applies every entry of a `key = value` file.
    pub fn with_overrides(mut self, text: &str) -> Result<Self> {
        for entry in keyvalue::parse(text)? {
            let value = keyvalue::parse_f64(&entry)?;
            if self.slot(&entry.key).is_none() {
                return Err(Error::UnknownKey(entry.key));
            }
            self.set(&entry.key, value)?;
        }
        self.validate()?;
        Ok(self)
    }

    /// Parses a complete or partial parameter file on top of the canonical set.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        Self::canonical().with_overrides(text)
    }
}

fn check_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: name.to_string(),
            value,
        })
    }
}

/// Reference scales of the nondimensionalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingFactors {
    pub n0: f64,
    pub e0: f64,
    pub i0: f64,
    pub c0: f64,
    pub r0: f64,
    pub t0: f64,
}

impl ScalingFactors {
    pub const CANONICAL_POPULATION_SCALE: f64 = 1e6;

    /// `N0 = E0 = 1e6` cells, dose scales equal to the caps, `t0 = 1/(gamma N0)`.
    pub fn canonical(params: &DimensionalParams) -> Self {
        Self::with_population_scale(params, Self::CANONICAL_POPULATION_SCALE)
    }

    pub fn with_population_scale(params: &DimensionalParams, scale: f64) -> Self {
        Self {
            n0: scale,
            e0: scale,
            i0: params.i_max,
            c0: params.c_max,
            r0: params.r_max,
            t0: 1.0 / (params.gamma * scale),
        }
    }

    pub fn as_array(&self) -> StateVec {
        [self.n0, self.e0, self.i0, self.c0, self.r0]
    }

    /// Checks positivity and consistency with `params`: `t0 = 1/(gamma N0)`,
    /// `E0 = N0` (otherwise `gamma` is not eliminated) and dose scales equal
    /// to the dose caps (so `u = 1` is the maximum tolerable infusion).
    pub fn validate_for(&self, params: &DimensionalParams) -> Result<()> {
        for (name, v) in [
            ("n0", self.n0),
            ("e0", self.e0),
            ("i0", self.i0),
            ("c0", self.c0),
            ("r0", self.r0),
            ("t0", self.t0),
        ] {
            check_positive(name, v)?;
        }
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
        if !close(self.t0 * params.gamma * self.n0, 1.0) {
            return Err(Error::InconsistentScaling(format!(
                "t0 = {} but 1/(gamma*n0) = {}",
                self.t0,
                1.0 / (params.gamma * self.n0)
            )));
        }
        if !close(self.e0, self.n0) {
            return Err(Error::InconsistentScaling(format!(
                "e0 = {} must equal n0 = {} for gamma to drop out",
                self.e0, self.n0
            )));
        }
        for (name, scale, cap) in [
            ("i0", self.i0, params.i_max),
            ("c0", self.c0, params.c_max),
            ("r0", self.r0, params.r_max),
        ] {
            if !close(scale, cap) {
                return Err(Error::InconsistentScaling(format!(
                    "{name} = {scale} must equal the dose cap {cap}"
                )));
            }
        }
        Ok(())
    }

    pub fn to_nondim_state(&self, s: &SystemState) -> Result<SystemState> {
        s.expect_frame(Frame::Dimensional)?;
        let x = s.to_array();
        let k = self.as_array();
        Ok(SystemState::from_array(
            std::array::from_fn(|j| x[j] / k[j]),
            Frame::Nondimensional,
        ))
    }

    pub fn to_dim_state(&self, s: &SystemState) -> Result<SystemState> {
        s.expect_frame(Frame::Nondimensional)?;
        let x = s.to_array();
        let k = self.as_array();
        Ok(SystemState::from_array(
            std::array::from_fn(|j| x[j] * k[j]),
            Frame::Dimensional,
        ))
    }
}

/// Dimensionless parameters (`gamma` is eliminated, dose caps live in the scaling).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NondimParams {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub kappa: f64,
    pub zeta: f64,
    pub eta: f64,
    pub theta: f64,
    pub lambda: f64,
    pub nu: f64,
    pub rho: f64,
    pub mu: f64,
    pub sigma: f64,
    pub phi: f64,
    pub tau: f64,
    pub omega: f64,
    pub chi: f64,
}

impl NondimParams {
    pub fn canonical() -> Self {
        let p = DimensionalParams::canonical();
        nondimensionalize(&p, &ScalingFactors::canonical(&p))
            .expect("canonical parameters are valid")
    }

    pub fn values(&self) -> [(&'static str, f64); 17] {
        let p = self;
        [
            ("alpha", p.alpha),
            ("beta", p.beta),
            ("delta", p.delta),
            ("epsilon", p.epsilon),
            ("kappa", p.kappa),
            ("zeta", p.zeta),
            ("eta", p.eta),
            ("theta", p.theta),
            ("lambda", p.lambda),
            ("nu", p.nu),
            ("rho", p.rho),
            ("mu", p.mu),
            ("sigma", p.sigma),
            ("phi", p.phi),
            ("tau", p.tau),
            ("omega", p.omega),
            ("chi", p.chi),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in self.values() {
            check_positive(name, value)?;
        }
        Ok(())
    }

    /// Right-hand side on a raw state vector. `x` and `u` are assumed finite.
    pub fn rhs_raw(&self, x: &StateVec, u: &ControlVec) -> StateVec {
        let p = self;
        let [n, e, i, c, r] = *x;
        let chemo = -(-c).exp_m1();
        let radio_n = p.epsilon * r + p.kappa * r * r;
        let radio_e = p.sigma * r + p.phi * r * r;
        [
            p.alpha * n * (1.0 - p.beta * n) - n * e - p.delta * n * chemo - n * radio_n,
            p.zeta - p.lambda * e + p.eta * e * n / (p.theta + n) + p.nu * e * i / (p.rho + i)
                - p.mu * e * chemo
                - e * radio_e,
            u[0] - p.tau * i,
            u[1] - p.omega * c,
            u[2] - p.chi * r,
        ]
    }

    /// Analytic state Jacobian `df/dx` (rows are equations, columns states).
    /// Controls enter additively, so the Jacobian does not depend on `u`.
    pub fn jacobian_raw(&self, x: &StateVec) -> StateJacobian {
        let p = self;
        let [n, e, i, c, r] = *x;
        let ec = (-c).exp();
        let chemo = -(-c).exp_m1();
        let tn = p.theta + n;
        let ri = p.rho + i;
        let mut jac = [[0.0; N_STATES]; N_STATES];
        jac[0][0] = p.alpha * (1.0 - 2.0 * p.beta * n)
            - e
            - p.delta * chemo
            - (p.epsilon * r + p.kappa * r * r);
        jac[0][1] = -n;
        jac[0][3] = -p.delta * n * ec;
        jac[0][4] = -n * (p.epsilon + 2.0 * p.kappa * r);
        jac[1][0] = p.eta * e * p.theta / (tn * tn);
        jac[1][1] = -p.lambda + p.eta * n / tn + p.nu * i / ri
            - p.mu * chemo
            - (p.sigma * r + p.phi * r * r);
        jac[1][2] = p.nu * e * p.rho / (ri * ri);
        jac[1][3] = -p.mu * e * ec;
        jac[1][4] = -e * (p.sigma + 2.0 * p.phi * r);
        jac[2][2] = -p.tau;
        jac[3][3] = -p.omega;
        jac[4][4] = -p.chi;
        jac
    }
}

/// Populations and therapy levels at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemState {
    pub n: f64,
    pub e: f64,
    pub i: f64,
    pub c: f64,
    pub r: f64,
    pub frame: Frame,
}

impl SystemState {
    pub fn new(n: f64, e: f64, i: f64, c: f64, r: f64, frame: Frame) -> Self {
        Self {
            n,
            e,
            i,
            c,
            r,
            frame,
        }
    }

    /// Tumor and effector populations only, no therapy on board.
    pub fn untreated(n: f64, e: f64, frame: Frame) -> Self {
        Self::new(n, e, 0.0, 0.0, 0.0, frame)
    }

    pub fn to_array(&self) -> StateVec {
        [self.n, self.e, self.i, self.c, self.r]
    }

    pub fn from_array(x: StateVec, frame: Frame) -> Self {
        Self::new(x[0], x[1], x[2], x[3], x[4], frame)
    }

    pub fn expect_frame(&self, frame: Frame) -> Result<()> {
        if self.frame == frame {
            Ok(())
        } else {
            Err(Error::FrameMismatch {
                expected: frame,
                found: self.frame,
            })
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.to_array().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("state {self:?}")))
        }
    }

    /// Finite and component-wise nonnegative.
    pub fn validate(&self) -> Result<()> {
        self.check_finite()?;
        for (name, v) in STATE_NAMES.iter().zip(self.to_array()) {
            if v < 0.0 {
                return Err(Error::InvalidState(format!("{name} = {v} is negative")));
            }
        }
        Ok(())
    }
}

/// Dimensionless infusion rates of IL-2, chemotherapy and radiotherapy.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput {
    pub u_i: f64,
    pub u_c: f64,
    pub u_r: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput {
        u_i: 0.0,
        u_c: 0.0,
        u_r: 0.0,
    };
    pub const FULL: ControlInput = ControlInput {
        u_i: 1.0,
        u_c: 1.0,
        u_r: 1.0,
    };

    /// Checked constructor: every rate must lie in `[0, 1]`.
    pub fn new(u_i: f64, u_c: f64, u_r: f64) -> Result<Self> {
        let u = Self { u_i, u_c, u_r };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("u_I", self.u_i), ("u_C", self.u_c), ("u_R", self.u_r)] {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("control {name}")));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidControl(format!(
                    "{name} = {v} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn to_array(&self) -> ControlVec {
        [self.u_i, self.u_c, self.u_r]
    }

    pub fn from_array(u: ControlVec) -> Self {
        Self {
            u_i: u[0],
            u_c: u[1],
            u_r: u[2],
        }
    }
}

/// Maps dimensional parameters to the dimensionless set.
///
/// Rates are multiplied by `t0`; saturation constants are divided by the
/// population scale they are compared against; radiotherapy coefficients
/// absorb `R0` (linear) or `R0^2` (quadratic) in addition to `t0`.
pub fn nondimensionalize(
    params: &DimensionalParams,
    scaling: &ScalingFactors,
) -> Result<NondimParams> {
    params.validate()?;
    scaling.validate_for(params)?;
    let p = params;
    let ScalingFactors {
        n0, e0, i0, r0, t0, ..
    } = *scaling;
    let out = NondimParams {
        alpha: p.alpha * t0,
        beta: p.beta * n0,
        delta: p.delta * t0,
        epsilon: p.epsilon * r0 * t0,
        kappa: p.kappa * r0 * r0 * t0,
        zeta: p.zeta * t0 / e0,
        eta: p.eta * t0,
        theta: p.theta / n0,
        lambda: p.lambda * t0,
        nu: p.nu * t0,
        rho: p.rho / i0,
        mu: p.mu * t0,
        sigma: p.sigma * r0 * t0,
        phi: p.phi * r0 * r0 * t0,
        tau: p.tau * t0,
        omega: p.omega * t0,
        chi: p.chi * t0,
    };
    out.validate()?;
    Ok(out)
}

/// Inverse of [`nondimensionalize`]. `gamma` is recovered from
/// `t0 = 1/(gamma N0)` and the dose caps from the dose scales.
pub fn redimensionalize(
    params: &NondimParams,
    scaling: &ScalingFactors,
) -> Result<DimensionalParams> {
    params.validate()?;
    let ScalingFactors {
        n0,
        e0,
        i0,
        c0,
        r0,
        t0,
    } = *scaling;
    for (name, v) in [
        ("n0", n0),
        ("e0", e0),
        ("i0", i0),
        ("c0", c0),
        ("r0", r0),
        ("t0", t0),
    ] {
        check_positive(name, v)?;
    }
    let q = params;
    let out = DimensionalParams {
        alpha: q.alpha / t0,
        beta: q.beta / n0,
        gamma: 1.0 / (t0 * n0),
        delta: q.delta / t0,
        epsilon: q.epsilon / (r0 * t0),
        kappa: q.kappa / (r0 * r0 * t0),
        zeta: q.zeta * e0 / t0,
        eta: q.eta / t0,
        theta: q.theta * n0,
        lambda: q.lambda / t0,
        nu: q.nu / t0,
        rho: q.rho * i0,
        mu: q.mu / t0,
        sigma: q.sigma / (r0 * t0),
        phi: q.phi / (r0 * r0 * t0),
        tau: q.tau / t0,
        omega: q.omega / t0,
        chi: q.chi / t0,
        i_max: i0,
        c_max: c0,
        r_max: r0,
    };
    scaling.validate_for(&out)?;
    Ok(out)
}

fn check_inputs(state: &SystemState, control: &ControlInput, frame: Frame) -> Result<()> {
    state.expect_frame(frame)?;
    state.check_finite()?;
    control.validate()
}

/// Time derivatives of the dimensionless system (time unit `t0`).
/// The returned value reuses [`SystemState`] to carry the five rates.
pub fn rhs_nondimensional(
    state: &SystemState,
    control: &ControlInput,
    params: &NondimParams,
) -> Result<SystemState> {
    check_inputs(state, control, Frame::Nondimensional)?;
    let d = params.rhs_raw(&state.to_array(), &control.to_array());
    Ok(SystemState::from_array(d, Frame::Nondimensional))
}

/// Time derivatives in physical units (per day). `control` is scaled by
/// `cap / t0` for each channel.
pub fn rhs_dimensional(
    state: &SystemState,
    control: &ControlInput,
    model: &DimensionalModel,
) -> Result<SystemState> {
    check_inputs(state, control, Frame::Dimensional)?;
    let d = model.rhs_raw(&state.to_array(), &control.to_array());
    Ok(SystemState::from_array(d, Frame::Dimensional))
}

/// A right-hand side the integrators can drive.
pub trait Dynamics {
    fn frame(&self) -> Frame;
    fn rhs(&self, x: &StateVec, u: &ControlVec) -> StateVec;
    /// Per-component magnitude used to scale the nonnegativity guard.
    fn component_scale(&self) -> StateVec;
}

impl Dynamics for NondimParams {
    fn frame(&self) -> Frame {
        Frame::Nondimensional
    }
    fn rhs(&self, x: &StateVec, u: &ControlVec) -> StateVec {
        self.rhs_raw(x, u)
    }
    fn component_scale(&self) -> StateVec {
        [1.0; N_STATES]
    }
}

/// Dimensional parameters together with the scaling that fixes `t0` and the
/// physical meaning of `u = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimensionalModel {
    pub params: DimensionalParams,
    pub scaling: ScalingFactors,
}

impl DimensionalModel {
    pub fn new(params: DimensionalParams, scaling: ScalingFactors) -> Result<Self> {
        params.validate()?;
        scaling.validate_for(&params)?;
        Ok(Self { params, scaling })
    }

    pub fn canonical() -> Self {
        let p = DimensionalParams::canonical();
        Self {
            params: p,
            scaling: ScalingFactors::canonical(&p),
        }
    }

    pub fn nondim(&self) -> Result<NondimParams> {
        nondimensionalize(&self.params, &self.scaling)
    }

    pub fn rhs_raw(&self, x: &StateVec, u: &ControlVec) -> StateVec {
        let p = &self.params;
        let t0 = self.scaling.t0;
        let [n, e, i, c, r] = *x;
        let chemo = -(-c / p.c_max).exp_m1();
        let radio_n = p.epsilon * r + p.kappa * r * r;
        let radio_e = p.sigma * r + p.phi * r * r;
        [
            p.alpha * n * (1.0 - p.beta * n) - p.gamma * n * e - p.delta * n * chemo - n * radio_n,
            p.zeta - p.lambda * e + p.eta * e * n / (p.theta + n) + p.nu * e * i / (p.rho + i)
                - p.mu * e * chemo
                - e * radio_e,
            u[0] * p.i_max / t0 - p.tau * i,
            u[1] * p.c_max / t0 - p.omega * c,
            u[2] * p.r_max / t0 - p.chi * r,
        ]
    }
}

impl Dynamics for DimensionalModel {
    fn frame(&self) -> Frame {
        Frame::Dimensional
    }
    fn rhs(&self, x: &StateVec, u: &ControlVec) -> StateVec {
        self.rhs_raw(x, u)
    }
    fn component_scale(&self) -> StateVec {
        self.scaling.as_array()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn embedded_file_matches_canonical_set() {
        let parsed = DimensionalParams::from_kv_str(CANONICAL_PARAMS_TEXT).unwrap();
        assert_eq!(parsed, DimensionalParams::canonical());
        let p = DimensionalParams::canonical();
        assert!((p.epsilon / p.kappa - 10.0).abs() < 1e-12);
        assert!((p.sigma / p.phi - 10.0).abs() < 1e-12);
    }

    #[test]
    fn canonical_nondimensional_values() {
        let p = DimensionalParams::canonical();
        let s = ScalingFactors::canonical(&p);
        // t0 = 1 / (1.101e-7 * 1e6)
        assert!(rel(s.t0, 9.082_652_134_423_25) < 1e-12);
        let q = nondimensionalize(&p, &s).unwrap();
        assert!((q.alpha - 1.6349).abs() < 5e-5);
        assert!((q.zeta - 0.11808).abs() < 1e-5);
        assert!(rel(q.alpha, 0.18 * s.t0) < 1e-15);
        assert!(rel(q.zeta, 1.3e4 * s.t0 / 1e6) < 1e-15);
        assert!(rel(q.theta, 20.19) < 1e-15);
        assert!(rel(q.rho, 2e7 / 7.2e5) < 1e-15);
        // fastest rate resolved by the default fixed step
        assert!((q.tau - 90.83).abs() < 0.01);
    }

    #[test]
    fn redimensionalize_inverts() {
        let p = DimensionalParams::canonical();
        let s = ScalingFactors::canonical(&p);
        let back = redimensionalize(&nondimensionalize(&p, &s).unwrap(), &s).unwrap();
        for ((name, a), (_, b)) in p.values().iter().zip(back.values()) {
            assert!(rel(b, *a) <= 1e-12, "{name}: {a} vs {b}");
        }
        let mut q = NondimParams::canonical();
        q.alpha = 0.18 * s.t0;
        assert!(rel(redimensionalize(&q, &s).unwrap().alpha, 0.18) < 1e-14);
    }

    #[test]
    fn scaling_consistency_checks() {
        let p = DimensionalParams::canonical();
        let mut s = ScalingFactors::canonical(&p);
        s.t0 *= 1.01;
        assert!(matches!(
            nondimensionalize(&p, &s),
            Err(Error::InconsistentScaling(_))
        ));
        let mut s = ScalingFactors::canonical(&p);
        s.e0 = 2e6;
        assert!(matches!(
            nondimensionalize(&p, &s),
            Err(Error::InconsistentScaling(_))
        ));
        let mut s = ScalingFactors::canonical(&p);
        s.r0 = -1.0;
        assert!(matches!(
            nondimensionalize(&p, &s),
            Err(Error::InvalidParameter { .. })
        ));
    }

    #[test]
    fn nondimensional_rhs_examples() {
        let q = NondimParams::canonical();
        let xi1 = SystemState::untreated(0.0, q.zeta / q.lambda, Frame::Nondimensional);
        let d = rhs_nondimensional(&xi1, &ControlInput::ZERO, &q).unwrap();
        assert_eq!(d.n, 0.0);
        assert!(d.e.abs() < 1e-15);
        assert_eq!([d.i, d.c, d.r], [0.0; 3]);

        let s = SystemState::untreated(1.0, 0.0, Frame::Nondimensional);
        let d = rhs_nondimensional(&s, &ControlInput::ZERO, &q).unwrap();
        assert!(rel(d.n, q.alpha * (1.0 - q.beta)) < 1e-15);

        let s = SystemState::untreated(3.0, 0.7, Frame::Nondimensional);
        let d = rhs_nondimensional(&s, &ControlInput::ZERO, &q).unwrap();
        assert_eq!([d.i, d.c, d.r], [0.0; 3]);
    }

    #[test]
    fn rhs_rejects_bad_inputs() {
        let q = NondimParams::canonical();
        let dim = SystemState::untreated(1.0, 1.0, Frame::Dimensional);
        assert!(matches!(
            rhs_nondimensional(&dim, &ControlInput::ZERO, &q),
            Err(Error::FrameMismatch { .. })
        ));
        let nan = SystemState::untreated(f64::NAN, 1.0, Frame::Nondimensional);
        assert!(matches!(
            rhs_nondimensional(&nan, &ControlInput::ZERO, &q),
            Err(Error::NonFinite(_))
        ));
        let m = DimensionalModel::canonical();
        let nd = SystemState::untreated(1.0, 1.0, Frame::Nondimensional);
        assert!(rhs_dimensional(&nd, &ControlInput::ZERO, &m).is_err());
        assert!(ControlInput::new(1.5, 0.0, 0.0).is_err());
        assert!(ControlInput::new(0.0, -0.1, 0.0).is_err());
    }

    #[test]
    fn dimensional_rhs_examples() {
        let m = DimensionalModel::canonical();
        let at_capacity = SystemState::untreated(5e8, 0.0, Frame::Dimensional);
        let d = rhs_dimensional(&at_capacity, &ControlInput::ZERO, &m).unwrap();
        assert!(d.n.abs() < 1e-6 * 5e8 * 0.18);
        let empty = SystemState::untreated(0.0, 0.0, Frame::Dimensional);
        let d = rhs_dimensional(&empty, &ControlInput::ZERO, &m).unwrap();
        assert_eq!(d.e, 1.3e4);
        // u = 1 delivers one dose cap per t0
        let d = rhs_dimensional(&empty, &ControlInput::FULL, &m).unwrap();
        assert!(rel(d.r, 45.0 / m.scaling.t0) < 1e-15);
    }

    #[test]
    fn frames_agree_pointwise() {
        let m = DimensionalModel::canonical();
        let q = m.nondim().unwrap();
        let s = m.scaling;
        let x_nd = [37.0, 0.8, 0.02, 0.3, 0.6];
        let u = [0.3, 0.9, 0.1];
        let x_dim: StateVec = std::array::from_fn(|j| x_nd[j] * s.as_array()[j]);
        let f_nd = q.rhs_raw(&x_nd, &u);
        let f_dim = m.rhs_raw(&x_dim, &u);
        for j in 0..N_STATES {
            let mapped = f_dim[j] * s.t0 / s.as_array()[j];
            assert!(
                (mapped - f_nd[j]).abs() <= 1e-12 * (1.0 + f_nd[j].abs()),
                "component {j}"
            );
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let q = NondimParams::canonical();
        let x = [12.0, 0.9, 0.05, 0.4, 0.3];
        let u = [0.2, 0.5, 0.7];
        let jac = q.jacobian_raw(&x);
        for k in 0..N_STATES {
            let h = 1e-6 * (1.0 + x[k].abs());
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let fp = q.rhs_raw(&xp, &u);
            let fm = q.rhs_raw(&xm, &u);
            for j in 0..N_STATES {
                let fd = (fp[j] - fm[j]) / (2.0 * h);
                assert!(
                    (fd - jac[j][k]).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "d f{j} / d x{k}"
                );
            }
        }
    }

    #[test]
    fn unknown_parameter_key_is_named() {
        let err = DimensionalParams::from_kv_str("alpha = 0.2\nbogus = 1").unwrap_err();
        assert!(matches!(err, Error::UnknownKey(ref k) if k == "bogus"));
        let err = DimensionalParams::from_kv_str("alpha = -0.2").unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { .. }));
    }
}
