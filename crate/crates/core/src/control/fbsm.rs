//! Forward-backward sweep on the necessary conditions.

use super::{finalize, node_schedule, CostateTrajectory, ObjectiveSpec, RegimenSolution};
use crate::error::{Error, Result};
use crate::integrate::ControlSchedule;
use crate::model::{ControlVec, Frame, NondimParams, StateVec, SystemState, N_CONTROLS, N_STATES};

#[derive(Debug, Clone)]
pub struct SweepOptions {
    /// Number of RK4 intervals of the sweep grid.
    pub intervals: usize,
    pub max_iterations: usize,
    /// Sup-norm threshold on `u* - u` between the control and its update.
    pub tolerance: f64,
    /// Accepted residual when the objective no longer changes beyond
    /// rounding along the update direction.
    pub stall_tolerance: f64,
    /// Initial weight of the new control in the relaxed update.
    pub relaxation: f64,
    pub initial_guess: Option<ControlSchedule>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            intervals: 2000,
            max_iterations: 2000,
            tolerance: 1e-6,
            stall_tolerance: 1e-3,
            relaxation: 0.5,
            initial_guess: None,
        }
    }
}

/// Upper limit for the relaxation weight; values above one extrapolate
/// along `u* - u` (clamped to the box), which speeds up slow sweeps.
const MAX_RELAXATION: f64 = 8.0;

struct Sweep<'a> {
    params: &'a NondimParams,
    spec: &'a ObjectiveSpec,
    x0: StateVec,
    h: f64,
    m: usize,
}

fn axpy(a: &StateVec, s: f64, b: &StateVec) -> StateVec {
    std::array::from_fn(|i| a[i] + s * b[i])
}

impl Sweep<'_> {
    /// RK4 states at the nodes and the objective, with the running cost
    /// integrated as an extra quadrature state.
    fn forward(&self, u: &[ControlVec]) -> Option<(Vec<StateVec>, f64)> {
        let mut xs = Vec::with_capacity(self.m + 1);
        xs.push(self.x0);
        let h = self.h;
        let mut cost = 0.0;
        for k in 0..self.m {
            let x = xs[k];
            let um: ControlVec = std::array::from_fn(|i| 0.5 * (u[k][i] + u[k + 1][i]));
            let f = |y: &StateVec, v: &ControlVec| {
                (self.params.rhs_raw(y, v), self.spec.running_cost(y, v))
            };
            let (k1, q1) = f(&x, &u[k]);
            let (k2, q2) = f(&axpy(&x, 0.5 * h, &k1), &um);
            let (k3, q3) = f(&axpy(&x, 0.5 * h, &k2), &um);
            let (k4, q4) = f(&axpy(&x, h, &k3), &u[k + 1]);
            let next: StateVec = std::array::from_fn(|i| {
                x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            });
            if !next.iter().all(|v| v.is_finite()) {
                return None;
            }
            cost += h / 6.0 * (q1 + 2.0 * q2 + 2.0 * q3 + q4);
            xs.push(next);
        }
        cost += self.spec.terminal_cost(&xs[self.m]);
        Some((xs, cost))
    }

    fn backward(&self, u: &[ControlVec], xs: &[StateVec]) -> Vec<StateVec> {
        let h = self.h;
        let mut lam = vec![[0.0; N_STATES]; self.m + 1];
        lam[self.m] = self.spec.terminal_costate();
        let g = |x: &StateVec, l: &StateVec| self.spec.costate_rhs_raw(x, l, self.params);
        for k in (0..self.m).rev() {
            let fa = self.params.rhs_raw(&xs[k], &u[k]);
            let fb = self.params.rhs_raw(&xs[k + 1], &u[k + 1]);
            // cubic Hermite midpoint keeps the backward sweep fourth order
            let xm: StateVec = std::array::from_fn(|i| {
                0.5 * (xs[k][i] + xs[k + 1][i]) + h / 8.0 * (fa[i] - fb[i])
            });
            let l = lam[k + 1];
            let k1 = g(&xs[k + 1], &l);
            let k2 = g(&xm, &axpy(&l, -0.5 * h, &k1));
            let k3 = g(&xm, &axpy(&l, -0.5 * h, &k2));
            let k4 = g(&xs[k], &axpy(&l, -h, &k3));
            lam[k] = std::array::from_fn(|i| {
                l[i] - h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            });
        }
        lam
    }

    fn update(&self, lam: &[StateVec]) -> Vec<ControlVec> {
        lam.iter()
            .map(|l| self.spec.hamiltonian_minimizer(l))
            .collect()
    }
}

fn sup_distance(a: &[ControlVec], b: &[ControlVec]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| (0..N_CONTROLS).map(move |i| (x[i] - y[i]).abs()))
        .fold(0.0, f64::max)
}

/// Solves the unconstrained problem with a relaxed forward-backward sweep.
///
/// The relaxation weight grows after updates that lower the objective and is
/// halved otherwise, which damps the oscillations plain sweeps show for
/// strongly coupled problems.
pub fn solve_fbsm(
    spec: &ObjectiveSpec,
    initial: &SystemState,
    params: &NondimParams,
    options: &SweepOptions,
) -> Result<RegimenSolution> {
    spec.validate()?;
    params.validate()?;
    initial.expect_frame(Frame::Nondimensional)?;
    initial.validate()?;
    if spec.u_reg <= 0.0 {
        return Err(Error::InvalidSpec(
            "the sweep needs u_reg > 0 for a unique Hamiltonian minimizer; use the direct solver for u_reg = 0".into(),
        ));
    }
    if spec.include_terminal_constraint {
        return Err(Error::InvalidSpec(
            "the sweep does not handle the terminal constraint; use the direct solver".into(),
        ));
    }
    if options.intervals < 16 || !(options.relaxation > 0.0 && options.relaxation <= 1.0) {
        return Err(Error::InvalidSpec(
            "sweep needs at least 16 intervals and relaxation in (0, 1]".into(),
        ));
    }
    let m = options.intervals;
    let sweep = Sweep {
        params,
        spec,
        x0: initial.to_array(),
        h: spec.t_f / m as f64,
        m,
    };
    let grid: Vec<f64> = (0..=m).map(|k| spec.t_f * k as f64 / m as f64).collect();
    let mut u: Vec<ControlVec> = match &options.initial_guess {
        Some(s) => grid.iter().map(|t| s.at(*t).to_array()).collect(),
        None => vec![[0.0; N_CONTROLS]; m + 1],
    };
    let blow_up = |iterations| Error::NotConverged {
        solver: "sweep",
        iterations,
        residual: f64::INFINITY,
    };
    let (xs, mut j) = sweep.forward(&u).ok_or_else(|| blow_up(0))?;
    let mut log = vec![j];
    let mut relax = options.relaxation;

    let mut lam = sweep.backward(&u, &xs);
    let mut target = sweep.update(&lam);
    let mut residual = sup_distance(&u, &target);
    for it in 0..options.max_iterations {
        if residual <= options.tolerance {
            let schedule = node_schedule(spec.t_f, &u)?;
            let costates = CostateTrajectory {
                times: grid,
                lambda: lam,
            };
            return finalize(schedule, costates, initial, spec, params, log, it, "sweep");
        }
        // Armijo test against the first-order change of J along u* - u. Once
        // that change drops to rounding level, a smaller fixed-point residual
        // is required instead.
        let slope: f64 = (0..=m)
            .map(|k| {
                let w = if k == 0 || k == m {
                    0.5 * sweep.h
                } else {
                    sweep.h
                };
                let g = spec.hamiltonian_u_raw(&u[k], &lam[k]);
                w * (0..N_CONTROLS)
                    .map(|i| g[i] * (target[k][i] - u[k][i]))
                    .sum::<f64>()
            })
            .sum();
        let noise = 1e-13 * j.abs().max(1.0);
        loop {
            let trial: Vec<ControlVec> = u
                .iter()
                .zip(&target)
                .map(|(a, b)| {
                    std::array::from_fn(|i| (a[i] + relax * (b[i] - a[i])).clamp(0.0, 1.0))
                })
                .collect();
            if let Some((trial_xs, trial_j)) = sweep.forward(&trial) {
                let predicted = relax * slope;
                let sufficient = -predicted > noise && trial_j <= j + 1e-4 * predicted;
                if sufficient || trial_j <= j + noise {
                    let trial_lam = sweep.backward(&trial, &trial_xs);
                    let trial_target = sweep.update(&trial_lam);
                    let trial_residual = sup_distance(&trial, &trial_target);
                    if sufficient || trial_residual < residual {
                        u = trial;
                        j = trial_j;
                        lam = trial_lam;
                        target = trial_target;
                        residual = trial_residual;
                        log.push(j);
                        relax = (relax * 1.5).min(MAX_RELAXATION);
                        break;
                    }
                }
            }
            relax *= 0.5;
            if relax < 1e-10 {
                if -slope <= noise * 1e3 && residual <= options.stall_tolerance {
                    let schedule = node_schedule(spec.t_f, &u)?;
                    let costates = CostateTrajectory {
                        times: grid,
                        lambda: lam,
                    };
                    return finalize(schedule, costates, initial, spec, params, log, it, "sweep");
                }
                return Err(Error::NotConverged {
                    solver: "sweep",
                    iterations: it,
                    residual,
                });
            }
        }
    }
    Err(Error::NotConverged {
        solver: "sweep",
        iterations: options.max_iterations,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ObjectiveKind;

    fn setup(kind: ObjectiveKind) -> (ObjectiveSpec, SystemState, NondimParams) {
        let spec = ObjectiveSpec::new(kind, ObjectiveSpec::DEFAULT_HORIZON_DAYS / 9.0827);
        (
            spec,
            SystemState::untreated(600.0, 1.0, Frame::Nondimensional),
            NondimParams::canonical(),
        )
    }

    #[test]
    fn rejects_unregularized_and_constrained_specs() {
        let (mut spec, s, p) = setup(ObjectiveKind::FinalTumor);
        spec.u_reg = 0.0;
        assert!(matches!(
            solve_fbsm(&spec, &s, &p, &SweepOptions::default()),
            Err(Error::InvalidSpec(_))
        ));
        let (spec, s, p) = setup(ObjectiveKind::TotalTreatment);
        assert!(matches!(
            solve_fbsm(&spec, &s, &p, &SweepOptions::default()),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn costates_start_from_transversality() {
        let (spec, s, p) = setup(ObjectiveKind::FinalTumor);
        let opts = SweepOptions::default();
        let sol = solve_fbsm(&spec, &s, &p, &opts).unwrap();
        assert_eq!(sol.costates.terminal(), [spec.w1, 0.0, 0.0, 0.0, 0.0]);
        assert!(sol.pmp_residuals.within(1e-4), "{:?}", sol.pmp_residuals);

        let (spec, s, p) = setup(ObjectiveKind::AverageTumor);
        let sol = solve_fbsm(&spec, &s, &p, &opts).unwrap();
        assert_eq!(sol.costates.terminal(), [0.0; N_STATES]);
    }
}
