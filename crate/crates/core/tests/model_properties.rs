use proptest::prelude::*;
use tumor_immune::integrate::{integrate_rk4, ControlSchedule, Interpolation};
use tumor_immune::model::{
    nondimensionalize, redimensionalize, ControlInput, DimensionalModel, DimensionalParams, Frame,
    NondimParams, ScalingFactors, SystemState, N_STATES,
};

fn perturbed(factors: &[f64]) -> DimensionalParams {
    let mut p = DimensionalParams::canonical();
    for ((name, v), f) in DimensionalParams::canonical().values().iter().zip(factors) {
        p.set(name, v * 10f64.powf(*f)).unwrap();
    }
    p
}

fn factors() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 21)
}

fn state() -> impl Strategy<Value = [f64; N_STATES]> {
    prop::array::uniform5(0.0f64..600.0).prop_map(|mut x| {
        x[2] /= 100.0;
        x[3] /= 100.0;
        x[4] /= 100.0;
        x
    })
}

fn control() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(0.0f64..=1.0)
}

proptest! {
    #[test]
    fn nonnegative_orthant_is_forward_invariant(x in state(), u in control(), j in 0usize..N_STATES, f in factors()) {
        let p = nondimensionalize(&perturbed(&f), &ScalingFactors::canonical(&perturbed(&f))).unwrap();
        let mut x = x;
        x[j] = 0.0;
        prop_assert!(p.rhs_raw(&x, &u)[j] >= 0.0);
    }

    #[test]
    fn saturating_activation_is_bounded(n in 0.0f64..1e6, e in 0.0f64..100.0, i in 0.0f64..1e6) {
        let p = NondimParams::canonical();
        let d = p.rhs_raw(&[n, e, i, 0.0, 0.0], &[0.0; 3])[1];
        prop_assert!(d <= p.zeta - p.lambda * e + p.eta * e + p.nu * e + 1e-12 * e.max(1.0));
        prop_assert!(d >= p.zeta - p.lambda * e - 1e-12 * e.max(1.0));
    }

    #[test]
    fn chemo_kill_fraction_stays_below_one(n in 1e-3f64..500.0, c in 0.0f64..30.0) {
        let p = NondimParams::canonical();
        let without = p.rhs_raw(&[n, 0.0, 0.0, 0.0, 0.0], &[0.0; 3])[0];
        let with = p.rhs_raw(&[n, 0.0, 0.0, c, 0.0], &[0.0; 3])[0];
        let fraction = (without - with) / (p.delta * n);
        prop_assert!((-1e-12..1.0).contains(&fraction), "fraction {}", fraction);
    }

    #[test]
    fn nondimensionalization_round_trips(f in factors(), scale in 1e3f64..1e9) {
        let p = perturbed(&f);
        let s = ScalingFactors::with_population_scale(&p, scale);
        let back = redimensionalize(&nondimensionalize(&p, &s).unwrap(), &s).unwrap();
        for ((name, a), (_, b)) in p.values().iter().zip(back.values()) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs(), "{}: {} vs {}", name, a, b);
        }
    }

    #[test]
    fn frames_agree_after_rescaling(
        n in 1e6f64..5e8,
        e in 1e5f64..5e6,
        levels in prop::collection::vec(control(), 3),
        f in prop::collection::vec(-0.3f64..0.3, 21),
    ) {
        let p = perturbed(&f);
        let scaling = ScalingFactors::canonical(&p);
        let model = DimensionalModel::new(p, scaling).unwrap();
        let nd = model.nondim().unwrap();
        let t_f = 2.0;
        let grid = vec![0.0, 0.5, 1.2, t_f];
        let values: Vec<ControlInput> = levels.iter().map(|u| ControlInput::from_array(*u)).collect();
        let schedule = ControlSchedule::new(grid, values, Interpolation::PiecewiseConstant).unwrap();
        let x0 = SystemState::untreated(n, e, Frame::Dimensional);
        let dim = integrate_rk4(&x0, &schedule.rescaled_time(scaling.t0).unwrap(), &model, t_f * scaling.t0, 1e-3 * scaling.t0).unwrap();
        let x0_nd = scaling.to_nondim_state(&x0).unwrap();
        let ndim = integrate_rk4(&x0_nd, &schedule, &nd, t_f, 1e-3).unwrap();
        prop_assert_eq!(dim.len(), ndim.len());
        let k = scaling.as_array();
        for j in 0..N_STATES {
            let peak = ndim.states.iter().map(|x| x[j].abs()).fold(0.0, f64::max);
            for (a, b) in dim.states.iter().zip(&ndim.states) {
                let err = (a[j] / k[j] - b[j]).abs();
                prop_assert!(err <= 1e-8 * peak.max(1e-300), "component {}: {} vs {}", j, a[j] / k[j], b[j]);
            }
        }
    }
}

#[test]
fn tumor_free_point_is_a_rest_point() {
    let p = NondimParams::canonical();
    let d = p.rhs_raw(&[0.0, p.zeta / p.lambda, 0.0, 0.0, 0.0], &[0.0; 3]);
    assert!(d.iter().all(|v| v.abs() < 1e-15), "{d:?}");
}

#[test]
fn carrying_capacity_and_effector_source_in_physical_units() {
    let m = DimensionalModel::canonical();
    assert!(m.rhs_raw(&[5e8, 0.0, 0.0, 0.0, 0.0], &[0.0; 3])[0].abs() < 1e-6);
    assert_eq!(m.rhs_raw(&[0.0; 5], &[0.0; 3])[1], 1.3e4);
}

#[test]
fn canonical_scaled_values() {
    let p = NondimParams::canonical();
    let t0 = ScalingFactors::canonical(&DimensionalParams::canonical()).t0;
    assert!((t0 - 9.0827).abs() < 1e-4);
    assert!((p.alpha - 1.6349).abs() < 1e-4);
    assert!((p.zeta - 0.11808).abs() < 1e-5);
    let d = p.rhs_raw(&[1.0, 0.0, 0.0, 0.0, 0.0], &[0.0; 3]);
    assert!((d[0] - p.alpha * (1.0 - p.beta)).abs() < 1e-15);
}
