//! Direct transcription: trapezoidal collocation with piecewise-linear
//! controls, discrete adjoint gradients and a projected-gradient optimizer
//! inside an augmented-Lagrangian loop for the terminal constraint.

use nalgebra::{Matrix5, Vector5};

use super::{finalize, node_schedule, CostateTrajectory, ObjectiveSpec, RegimenSolution};
use crate::error::{Error, Result};
use crate::integrate::ControlSchedule;
use crate::model::{
    ControlVec, Frame, NondimParams, StateJacobian, StateVec, SystemState, N_CONTROLS, N_STATES,
};

#[derive(Debug, Clone)]
pub struct DirectOptions {
    /// Number of mesh intervals (at least 16).
    pub mesh_size: usize,
    /// Budget of projected-gradient iterations over all outer rounds.
    pub max_iterations: usize,
    /// Stop when the scaled projected-gradient residual drops below this.
    pub tolerance: f64,
    pub max_outer_iterations: usize,
    /// Quadratic weight of the augmented-Lagrangian term.
    pub penalty: f64,
    /// Optional warm start, sampled at the mesh nodes.
    pub initial_guess: Option<ControlSchedule>,
}

impl Default for DirectOptions {
    fn default() -> Self {
        Self {
            mesh_size: 800,
            max_iterations: 20000,
            tolerance: 1e-6,
            max_outer_iterations: 60,
            penalty: 1e-3,
            initial_guess: None,
        }
    }
}

const ARMIJO: f64 = 1e-4;
const MAX_MULTIPLIER: f64 = 1e10;
const MIN_MULTIPLIER: f64 = 1e-12;
/// Accept the multiplier once `|ln(N(t_f) / target)|` is below this.
const MULTIPLIER_TOLERANCE: f64 = 1e-4;
const NEWTON_MAX: usize = 50;

/// Augmented-Lagrangian term for `c = (N - target) / target <= 0`.
#[derive(Debug, Clone, Copy)]
pub struct TerminalPenalty {
    pub target: f64,
    pub mu: f64,
    pub rho: f64,
}

impl TerminalPenalty {
    fn violation(&self, n: f64) -> f64 {
        (n - self.target) / self.target
    }

    fn value(&self, n: f64) -> f64 {
        let shifted = (self.mu + self.rho * self.violation(n)).max(0.0);
        (shifted * shifted - self.mu * self.mu) / (2.0 * self.rho)
    }

    /// Derivative with respect to `N`, which is also the current estimate of
    /// the constraint multiplier `nu`.
    fn slope(&self, n: f64) -> f64 {
        (self.mu + self.rho * self.violation(n)).max(0.0) / self.target
    }
}

/// Trapezoidal transcription of the problem on a fixed mesh, with node
/// controls as decision variables.
pub struct Transcription<'a> {
    pub params: &'a NondimParams,
    pub spec: &'a ObjectiveSpec,
    pub x0: StateVec,
    pub grid: Vec<f64>,
}

fn to_matrix(j: &StateJacobian) -> Matrix5<f64> {
    Matrix5::from_fn(|r, c| j[r][c])
}

impl<'a> Transcription<'a> {
    pub fn uniform(
        params: &'a NondimParams,
        spec: &'a ObjectiveSpec,
        x0: StateVec,
        mesh: usize,
    ) -> Self {
        let grid = (0..=mesh)
            .map(|k| spec.t_f * k as f64 / mesh as f64)
            .collect();
        Self {
            params,
            spec,
            x0,
            grid,
        }
    }

    fn intervals(&self) -> usize {
        self.grid.len() - 1
    }

    fn h(&self, k: usize) -> f64 {
        self.grid[k + 1] - self.grid[k]
    }

    /// Quadrature weight of node `j`.
    fn weight(&self, j: usize) -> f64 {
        let m = self.intervals();
        let left = if j > 0 { self.h(j - 1) } else { 0.0 };
        let right = if j < m { self.h(j) } else { 0.0 };
        0.5 * (left + right)
    }

    /// Solves the trapezoidal collocation equations interval by interval.
    pub fn forward(&self, u: &[ControlVec]) -> Option<Vec<StateVec>> {
        let m = self.intervals();
        let mut xs = Vec::with_capacity(m + 1);
        xs.push(self.x0);
        for k in 0..m {
            let h = self.h(k);
            let xk = xs[k];
            let fk = self.params.rhs_raw(&xk, &u[k]);
            let base = Vector5::from_fn(|i, _| xk[i] + 0.5 * h * fk[i]);
            let mut y = xk;
            let mut converged = false;
            for _ in 0..NEWTON_MAX {
                let fy = self.params.rhs_raw(&y, &u[k + 1]);
                let g = Vector5::from_fn(|i, _| y[i] - 0.5 * h * fy[i] - base[i]);
                let jac = Matrix5::identity() - 0.5 * h * to_matrix(&self.params.jacobian_raw(&y));
                let delta = jac.lu().solve(&g)?;
                let mut size = 0.0_f64;
                for i in 0..N_STATES {
                    y[i] -= delta[i];
                    size = size.max(delta[i].abs() / (1.0 + y[i].abs()));
                }
                if !y.iter().all(|v| v.is_finite()) {
                    return None;
                }
                if size < 1e-14 {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return None;
            }
            xs.push(y);
        }
        Some(xs)
    }

    /// Discrete merit: quadrature of the running cost, Mayer term and the
    /// optional terminal penalty.
    pub fn merit(
        &self,
        u: &[ControlVec],
        xs: &[StateVec],
        penalty: Option<&TerminalPenalty>,
    ) -> f64 {
        let m = self.intervals();
        let mut total: f64 = (0..=m)
            .map(|j| self.weight(j) * self.spec.running_cost(&xs[j], &u[j]))
            .sum();
        total += self.spec.terminal_cost(&xs[m]);
        if let Some(p) = penalty {
            total += p.value(xs[m][0]);
        }
        total
    }

    /// Gradient of `merit` with respect to the node controls via the
    /// discrete adjoint, together with node costate estimates.
    pub fn gradient(
        &self,
        u: &[ControlVec],
        xs: &[StateVec],
        penalty: Option<&TerminalPenalty>,
    ) -> (Vec<ControlVec>, Vec<StateVec>) {
        let m = self.intervals();
        let jacs: Vec<Matrix5<f64>> = xs
            .iter()
            .map(|x| to_matrix(&self.params.jacobian_raw(x)))
            .collect();
        let id = Matrix5::<f64>::identity();
        let lx = |j: usize| Vector5::from(self.spec.running_cost_x(&xs[j]));

        let mut terminal = self.weight(m) * lx(m);
        let mut psi_x = Vector5::from(self.spec.terminal_costate());
        if let Some(p) = penalty {
            psi_x[0] += p.slope(xs[m][0]);
        }
        terminal += psi_x;

        // p[k] multiplies the collocation defect of interval k
        let mut p = vec![Vector5::zeros(); m];
        let lhs = (id - 0.5 * self.h(m - 1) * jacs[m]).transpose();
        p[m - 1] = lhs.lu().solve(&(-terminal)).unwrap_or_else(Vector5::zeros);
        for j in (1..m).rev() {
            let lhs = (id - 0.5 * self.h(j - 1) * jacs[j]).transpose();
            let rhs = (id + 0.5 * self.h(j) * jacs[j]).transpose() * p[j] - self.weight(j) * lx(j);
            p[j - 1] = lhs.lu().solve(&rhs).unwrap_or_else(Vector5::zeros);
        }

        // Nodal costates: the adjoint recursion makes
        // -(I - h/2 A_j)' p_{j-1} - h/2 l_x(j) and -(I + h/2 A_j)' p_j + h/2 l_x(j)
        // coincide, and at t_f the first form equals the terminal gradient.
        let mut grad = Vec::with_capacity(m + 1);
        let mut lambda = Vec::with_capacity(m + 1);
        for j in 0..=m {
            let (hl, pl) = if j > 0 {
                (self.h(j - 1), p[j - 1])
            } else {
                (0.0, Vector5::zeros())
            };
            let (hr, pr) = if j < m {
                (self.h(j), p[j])
            } else {
                (0.0, Vector5::zeros())
            };
            let lam = if j > 0 {
                -(id - 0.5 * hl * jacs[j]).transpose() * pl - 0.5 * hl * lx(j)
            } else {
                -(id + 0.5 * hr * jacs[j]).transpose() * pr + 0.5 * hr * lx(j)
            };
            let lu = self.spec.running_cost_u(&u[j]);
            let w = self.weight(j);
            grad.push(std::array::from_fn(|i| {
                w * lu[i] - 0.5 * (hl * pl[2 + i] + hr * pr[2 + i])
            }));
            lambda.push(std::array::from_fn(|i| lam[i]));
        }
        (grad, lambda)
    }
}

/// Scaled first-order residual: per channel, `|u - clamp(u - G / scale)|`
/// with `scale = max(1, max |G|)`. It vanishes exactly when `G = 0` in the
/// interior and `G` points out of the box at an active bound.
pub(crate) fn stationarity(u: &[ControlVec], g: &[ControlVec]) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..N_CONTROLS {
        let scale = g.iter().map(|v| v[i].abs()).fold(1.0_f64, f64::max);
        for (uj, gj) in u.iter().zip(g) {
            let projected = (uj[i] - gj[i] / scale).clamp(0.0, 1.0);
            worst = worst.max((uj[i] - projected).abs());
        }
    }
    worst
}

struct Iterate {
    u: Vec<ControlVec>,
    xs: Vec<StateVec>,
    merit: f64,
    /// Gradient divided by the node weights.
    g: Vec<ControlVec>,
    lambda: Vec<StateVec>,
}

struct ProjectedGradient<'t, 'a> {
    tr: &'t Transcription<'a>,
    weights: Vec<f64>,
    iterations: usize,
    budget: usize,
    log: Vec<f64>,
}

impl<'t, 'a> ProjectedGradient<'t, 'a> {
    fn evaluate(&self, u: Vec<ControlVec>, penalty: Option<&TerminalPenalty>) -> Option<Iterate> {
        let xs = self.tr.forward(&u)?;
        let merit = self.tr.merit(&u, &xs, penalty);
        if !merit.is_finite() {
            return None;
        }
        let (grad, lambda) = self.tr.gradient(&u, &xs, penalty);
        let g = grad
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| v.map(|c| c / w))
            .collect();
        Some(Iterate {
            u,
            xs,
            merit,
            g,
            lambda,
        })
    }

    fn dot(&self, a: &[ControlVec], b: &[ControlVec]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.weights)
            .map(|((x, y), w)| w * (0..N_CONTROLS).map(|i| x[i] * y[i]).sum::<f64>())
            .sum()
    }

    /// Minimizes the merit for a fixed penalty. Returns the final iterate and
    /// whether the stationarity tolerance was met.
    fn run(
        &mut self,
        start: Iterate,
        penalty: Option<&TerminalPenalty>,
        tolerance: f64,
    ) -> (Iterate, bool) {
        let mut cur = start;
        let mut step = {
            let gmax = cur
                .g
                .iter()
                .flat_map(|v| v.iter())
                .fold(0.0_f64, |m, v| m.max(v.abs()));
            if gmax > 0.0 {
                0.1 / gmax
            } else {
                1.0
            }
        };
        let mut stalls = 0;
        loop {
            if stationarity(&cur.u, &cur.g) <= tolerance {
                return (cur, true);
            }
            if self.iterations >= self.budget {
                return (cur, false);
            }
            let mut trial_step = step;
            let mut accepted = None;
            for _ in 0..60 {
                let u_new: Vec<ControlVec> = cur
                    .u
                    .iter()
                    .zip(&cur.g)
                    .map(|(u, g)| {
                        std::array::from_fn(|i| (u[i] - trial_step * g[i]).clamp(0.0, 1.0))
                    })
                    .collect();
                let du: Vec<ControlVec> = u_new
                    .iter()
                    .zip(&cur.u)
                    .map(|(a, b)| std::array::from_fn(|i| a[i] - b[i]))
                    .collect();
                let decrease = self.dot(&cur.g, &du);
                if decrease == 0.0 {
                    break;
                }
                if let Some(next) = self.evaluate(u_new, penalty) {
                    if next.merit <= cur.merit + ARMIJO * decrease {
                        accepted = Some((next, du));
                        break;
                    }
                }
                trial_step *= 0.5;
            }
            self.iterations += 1;
            let Some((next, du)) = accepted else {
                stalls += 1;
                if stalls > 3 {
                    return (cur, false);
                }
                step = trial_step.max(1e-12) * 1e-2;
                continue;
            };
            stalls = 0;
            let dg: Vec<ControlVec> = next
                .g
                .iter()
                .zip(&cur.g)
                .map(|(a, b)| std::array::from_fn(|i| a[i] - b[i]))
                .collect();
            let ss = self.dot(&du, &du);
            let sy = self.dot(&du, &dg);
            step = if sy > 0.0 {
                (ss / sy).clamp(1e-10, 1e10)
            } else {
                trial_step * 4.0
            };
            let improvement = cur.merit - next.merit;
            self.log.push(next.merit);
            let tiny = improvement.abs() <= 1e-15 * (1.0 + cur.merit.abs());
            cur = next;
            if tiny {
                stalls += 1;
                if stalls > 20 {
                    return (cur, false);
                }
            }
        }
    }
}

fn initial_controls(options: &DirectOptions, grid: &[f64]) -> Vec<ControlVec> {
    match &options.initial_guess {
        Some(s) => grid.iter().map(|t| s.at(*t).to_array()).collect(),
        None => vec![[0.0; N_CONTROLS]; grid.len()],
    }
}

/// Solves the optimal-control problem by direct transcription.
pub fn solve_direct(
    spec: &ObjectiveSpec,
    initial: &SystemState,
    params: &NondimParams,
    options: &DirectOptions,
) -> Result<RegimenSolution> {
    spec.validate()?;
    params.validate()?;
    initial.expect_frame(Frame::Nondimensional)?;
    initial.validate()?;
    if options.mesh_size < 16 {
        return Err(Error::InvalidSpec(format!(
            "mesh_size must be at least 16, got {}",
            options.mesh_size
        )));
    }
    let tr = Transcription::uniform(params, spec, initial.to_array(), options.mesh_size);
    let weights: Vec<f64> = (0..=options.mesh_size).map(|j| tr.weight(j)).collect();
    let mut pg = ProjectedGradient {
        tr: &tr,
        weights,
        iterations: 0,
        budget: options.max_iterations,
        log: Vec::new(),
    };
    let u0 = initial_controls(options, &tr.grid);

    if !spec.include_terminal_constraint {
        let start = pg.evaluate(u0, None).ok_or(Error::NotConverged {
            solver: "direct",
            iterations: 0,
            residual: f64::NAN,
        })?;
        pg.log.push(start.merit);
        let (best, converged) = pg.run(start, None, options.tolerance);
        let residual = stationarity(&best.u, &best.g);
        if !converged && residual > options.tolerance.max(1e-4) {
            return Err(Error::NotConverged {
                solver: "direct",
                iterations: pg.iterations,
                residual,
            });
        }
        let costates = CostateTrajectory {
            times: tr.grid.clone(),
            lambda: best.lambda.clone(),
        };
        let schedule = node_schedule(spec.t_f, &best.u)?;
        let log = pg.log.clone();
        return finalize(
            schedule,
            costates,
            initial,
            spec,
            params,
            log,
            pg.iterations,
            "direct",
        );
    }

    solve_constrained(spec, initial, params, options, &tr, &mut pg, u0)
}

/// Terminal-constraint variant. Each outer round minimizes the augmented
/// Lagrangian for a fixed multiplier; the multiplier is then moved by a
/// safeguarded secant step on `ln N(t_f) - ln target` as a function of
/// `ln mu`. The quadratic term stays tiny, so every subproblem is about as
/// well conditioned as a final-tumor problem.
fn solve_constrained(
    spec: &ObjectiveSpec,
    initial: &SystemState,
    params: &NondimParams,
    options: &DirectOptions,
    tr: &Transcription<'_>,
    pg: &mut ProjectedGradient<'_, '_>,
    u0: Vec<ControlVec>,
) -> Result<RegimenSolution> {
    let tol = spec.terminal_tolerance;
    let mut target = tol;
    let mut mu = 1.0_f64;
    let mut u = u0;
    // (ln mu, ln N(t_f)) on either side of the target
    let mut above: Option<(f64, f64)> = None;
    let mut below: Option<(f64, f64)> = None;
    let mut refinements = 0;
    let mut n_end = f64::NAN;
    let stalled = |iterations| Error::NotConverged {
        solver: "direct",
        iterations,
        residual: f64::NAN,
    };

    for _ in 0..options.max_outer_iterations {
        let penalty = TerminalPenalty {
            target,
            mu,
            rho: options.penalty,
        };
        pg.log.clear();
        let start = pg
            .evaluate(u, Some(&penalty))
            .ok_or_else(|| stalled(pg.iterations))?;
        pg.log.push(start.merit);
        let (best, converged) = pg.run(start, Some(&penalty), options.tolerance);
        n_end = best.xs.last().unwrap()[0];
        let c = (n_end.max(f64::MIN_POSITIVE) / target).ln();
        if !converged {
            if below.is_some() || c <= 0.0 {
                return Err(Error::NotConverged {
                    solver: "direct",
                    iterations: pg.iterations,
                    residual: stationarity(&best.u, &best.g),
                });
            }
            return Err(Error::Infeasible {
                terminal_tumor: n_end,
                tolerance: tol,
            });
        }
        u = best.u.clone();

        if c.abs() <= MULTIPLIER_TOLERANCE || (c < 0.0 && mu <= MIN_MULTIPLIER) {
            let schedule = node_schedule(spec.t_f, &best.u)?;
            let costates = CostateTrajectory {
                times: tr.grid.clone(),
                lambda: best.lambda.clone(),
            };
            let solution = finalize(
                schedule,
                costates,
                initial,
                spec,
                params,
                pg.log.clone(),
                pg.iterations,
                "direct",
            )?;
            let n_fine = solution.states.final_state().n;
            if n_fine <= tol {
                return Ok(solution);
            }
            // the collocated N(t_f) is slightly optimistic; aim a bit lower
            refinements += 1;
            if refinements > 6 {
                return Err(Error::Infeasible {
                    terminal_tumor: n_fine,
                    tolerance: tol,
                });
            }
            target *= (tol / n_fine) * (1.0 - 1e-4);
            continue;
        }

        let point = (mu.ln(), n_end.max(f64::MIN_POSITIVE).ln());
        if c > 0.0 {
            above = Some(point);
        } else {
            below = Some(point);
        }
        let ln_target = target.ln();
        mu = match (above, below) {
            (Some((xa, ya)), Some((xb, yb))) => {
                let (ya, yb) = (ya - ln_target, yb - ln_target);
                let secant = xa - ya * (xb - xa) / (yb - ya);
                let (lo, hi) = (xa.min(xb), xa.max(xb));
                let inside = lo + 0.05 * (hi - lo) <= secant && secant <= hi - 0.05 * (hi - lo);
                if inside {
                    secant.exp()
                } else {
                    (0.5 * (xa + xb)).exp()
                }
            }
            (Some(_), None) => mu * 10.0,
            (None, Some(_)) => mu / 10.0,
            (None, None) => unreachable!(),
        };
        if mu > MAX_MULTIPLIER {
            return Err(Error::Infeasible {
                terminal_tumor: n_end,
                tolerance: tol,
            });
        }
    }
    if below.is_some() {
        return Err(Error::NotConverged {
            solver: "direct",
            iterations: pg.iterations,
            residual: f64::NAN,
        });
    }
    Err(Error::Infeasible {
        terminal_tumor: n_end,
        tolerance: tol,
    })
}
