mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tumor_immune::analysis::{
    dulac_expression, interior_equilibria, jacobian, nullcline_h, nullcline_j, nullcline_j_pole,
    treatment_free_rhs, tumor_free_equilibrium, QuadraticCoefficients, Stability,
};
use tumor_immune::integrate::{integrate_rk4, ControlSchedule, DEFAULT_TREATMENT_FREE_HORIZON};
use tumor_immune::model::{Frame, NondimParams, SystemState};

fn random_params(rng: &mut ChaCha8Rng) -> NondimParams {
    let mut p = NondimParams::canonical();
    for v in [
        &mut p.alpha,
        &mut p.beta,
        &mut p.zeta,
        &mut p.eta,
        &mut p.theta,
        &mut p.lambda,
    ] {
        *v *= 10f64.powf(rng.gen_range(-1.5..1.5));
    }
    p
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn quadratic_roots_agree_with_bracketing() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut printed_fails = 0;
    for _ in 0..1000 {
        let p = random_params(&mut rng);
        let found: Vec<f64> = interior_equilibria(&p).iter().map(|e| e.x1).collect();
        let mut roots = QuadraticCoefficients::derived(&p).admissible_roots(&p);
        roots.sort_by(f64::total_cmp);
        assert_eq!(found.len(), roots.len(), "{p:?}: {found:?} vs {roots:?}");
        for (a, b) in found.iter().zip(&roots) {
            assert!(rel(*a, *b) <= 1e-8, "{a} vs {b}");
        }
        let printed = QuadraticCoefficients::with_printed_b(&p).real_roots();
        let substitutes = printed.iter().filter(|x| **x > 0.0).all(|x| {
            nullcline_j(*x, &p)
                .map(|j| rel(nullcline_h(*x, &p), j) <= 1e-6)
                .unwrap_or(false)
        });
        if printed.is_empty() || !substitutes || printed.len() != roots.len() {
            printed_fails += 1;
        }
    }
    assert!(printed_fails > 0);
}

#[test]
fn root_count_matches_a_brute_force_sign_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    while checked < 200 {
        let p = random_params(&mut rng);
        if !(p.eta < p.lambda && p.zeta / p.alpha > p.lambda) {
            continue;
        }
        checked += 1;
        let upper = 1.0 / p.beta;
        let n = 200_000;
        let g = |x: f64| nullcline_h(x, &p) - nullcline_j(x, &p).unwrap();
        let mut changes = 0;
        let mut prev = g(1e-12);
        for k in 1..=n {
            let x = 1e-12 * (upper / 1e-12).powf(k as f64 / n as f64);
            let cur = g(x);
            if prev.signum() != cur.signum() && cur != 0.0 {
                changes += 1;
            }
            prev = cur;
        }
        let found = interior_equilibria(&p).len();
        assert_eq!(found, changes, "{p:?}");
    }
}

#[test]
fn planar_jacobian_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = NondimParams::canonical();
    for _ in 0..100 {
        let x1 = rng.gen_range(1e-3..500.0);
        let x2 = rng.gen_range(1e-3..10.0);
        let jac = jacobian(x1, x2, &p);
        for (col, h) in [(0, 1e-6 * x1.max(1.0)), (1, 1e-6 * x2.max(1.0))] {
            let shift = |s: f64| {
                if col == 0 {
                    treatment_free_rhs(x1 + s, x2, &p)
                } else {
                    treatment_free_rhs(x1, x2 + s, &p)
                }
            };
            let (up, dn) = (shift(h), shift(-h));
            for row in 0..2 {
                let fd = (up[row] - dn[row]) / (2.0 * h);
                let scale = jac[row][col].abs().max(1.0);
                assert!(
                    (fd - jac[row][col]).abs() <= 1e-5 * scale,
                    "({row},{col}) at ({x1},{x2}): {fd} vs {}",
                    jac[row][col]
                );
            }
        }
    }
}

#[test]
fn tumor_free_jacobian_has_the_expected_structure() {
    let p = NondimParams::canonical();
    let x2 = p.zeta / p.lambda;
    let jac = jacobian(0.0, x2, &p);
    assert_eq!(jac[0][1], 0.0);
    assert!((jac[1][0] - p.eta * p.zeta / (p.theta * p.lambda)).abs() < 1e-14);
    assert_eq!(jacobian(0.0, 0.0, &p)[1][1], -p.lambda);
}

#[test]
fn nullcline_j_pole_and_limits() {
    let mut p = NondimParams::canonical();
    assert!((nullcline_j(0.0, &p).unwrap() - p.zeta / p.lambda).abs() < 1e-15);
    p.eta = 2.0 * p.lambda;
    let pole = nullcline_j_pole(&p).unwrap();
    assert!((pole - p.theta * p.lambda / (p.eta - p.lambda)).abs() <= 1e-12 * pole);
    assert!(nullcline_j(pole, &p).is_err());
    let mut q = NondimParams::canonical();
    q.eta = 0.5 * q.lambda;
    let far = nullcline_j(1e12, &q).unwrap();
    assert!(rel(far, q.zeta / (q.lambda - q.eta)) < 1e-9);
}

fn run(p: &NondimParams, x1: f64, x2: f64, t_f: f64) -> (f64, f64) {
    let s = SystemState::untreated(x1, x2, Frame::Nondimensional);
    let end = integrate_rk4(&s, &ControlSchedule::zero(t_f).unwrap(), p, t_f, 1e-3)
        .unwrap()
        .final_state();
    (end.n, end.e)
}

#[test]
fn equilibria_are_rest_points_with_the_predicted_local_behaviour() {
    let p = NondimParams::canonical();
    let interior = interior_equilibria(&p);
    assert_eq!(interior.len(), 1);
    let xi2 = interior[0];
    assert!(xi2.residual(&p) <= 1e-10);
    assert!(xi2.classification.is_stable());
    let (n, e) = run(&p, xi2.x1, xi2.x2, 10.0);
    assert!((n - xi2.x1).hypot(e - xi2.x2) <= 1e-6);

    let xi1 = tumor_free_equilibrium(&p);
    assert!(xi1.residual(&p) <= 1e-10);
    assert_eq!(xi1.classification, Stability::Saddle);
    let mu = p.alpha - p.zeta / p.lambda;
    let v = [1.0, p.eta * p.zeta / (p.theta * p.lambda * (p.lambda + mu))];
    let norm = v[0].hypot(v[1]);
    let (x1, x2) = (1e-6 * v[0] / norm, xi1.x2 + 1e-6 * v[1] / norm);
    let (n, e) = run(&p, x1, x2, 10.0);
    assert!((n - xi1.x1).hypot(e - xi1.x2) > 1e-3);
}

#[test]
fn dulac_expression_is_negative_at_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1000 {
        let p = random_params(&mut rng);
        let (x1, x2) = (
            10f64.powf(rng.gen_range(-6.0..3.0)),
            10f64.powf(rng.gen_range(-6.0..3.0)),
        );
        assert!(dulac_expression(x1, x2, &p) < 0.0);
    }
    let p = NondimParams::canonical();
    assert!(rel(dulac_expression(1.0, 1.0, &p), -(p.alpha * p.beta + p.zeta)) < 1e-15);
}

#[test]
fn untreated_portrait_converges_to_the_dormant_state() {
    let p = NondimParams::canonical();
    let xi2 = interior_equilibria(&p)[0];
    for (n0, e0) in common::PORTRAIT_STARTS {
        let s = common::nondim_start(n0, e0);
        let (n, e) = run(&p, s.n, s.e, DEFAULT_TREATMENT_FREE_HORIZON);
        let d = (n - xi2.x1).hypot(e - xi2.x2);
        assert!(d <= 1e-4, "start ({n0}, {e0}): distance {d}");
    }
}
