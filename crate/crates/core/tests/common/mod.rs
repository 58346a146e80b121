#![allow(dead_code)]

use tumor_immune::control::{ObjectiveKind, ObjectiveSpec};
use tumor_immune::model::{DimensionalParams, Frame, ScalingFactors, SystemState};

pub fn scaling() -> ScalingFactors {
    ScalingFactors::canonical(&DimensionalParams::canonical())
}

pub fn days(d: f64) -> f64 {
    d / scaling().t0
}

/// `(N, E)` starting points of the untreated phase portrait, in cells.
pub const PORTRAIT_STARTS: [(f64, f64); 4] = [(6e7, 1e6), (5e7, 2.5e6), (1.5e8, 1e6), (6e8, 1e6)];

pub fn nondim_start(n_cells: f64, e_cells: f64) -> SystemState {
    scaling()
        .to_nondim_state(&SystemState::untreated(
            n_cells,
            e_cells,
            Frame::Dimensional,
        ))
        .unwrap()
}

/// Treatment scenario: `(6e8, 1e6)` cells, 60 days, `w1 = 1`, `w2 = 0.25`.
pub fn treatment_start() -> SystemState {
    nondim_start(6e8, 1e6)
}

pub fn treatment_spec(kind: ObjectiveKind) -> ObjectiveSpec {
    ObjectiveSpec::new(kind, days(ObjectiveSpec::DEFAULT_HORIZON_DAYS))
}

pub fn non_increasing(log: &[f64]) -> bool {
    log.windows(2)
        .all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0))
}
