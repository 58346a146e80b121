mod common;

use tumor_immune::control::{
    baseline_objective, solve_direct, solve_fbsm, verify_pmp, DirectOptions, ObjectiveKind,
    SweepOptions, VerifyOptions,
};
use tumor_immune::error::Error;
use tumor_immune::integrate::{integrate_rk4, ControlSchedule};
use tumor_immune::model::{ControlInput, NondimParams};

fn direct(kind: ObjectiveKind, mesh_size: usize) -> tumor_immune::control::RegimenSolution {
    let opts = DirectOptions {
        mesh_size,
        ..Default::default()
    };
    solve_direct(
        &common::treatment_spec(kind),
        &common::treatment_start(),
        &NondimParams::canonical(),
        &opts,
    )
    .unwrap()
}

#[test]
fn final_tumor_schedule_beats_no_treatment_and_verifies() {
    let p = NondimParams::canonical();
    let spec = common::treatment_spec(ObjectiveKind::FinalTumor);
    let sol = direct(ObjectiveKind::FinalTumor, 800);
    let baseline = baseline_objective(&common::treatment_start(), &spec, &p).unwrap();
    assert!(sol.objective.j < baseline.j);
    assert!(common::non_increasing(&sol.solver_log));
    assert!(sol
        .schedule
        .values()
        .iter()
        .flat_map(|u| u.to_array())
        .all(|v| (0.0..=1.0).contains(&v)));
    assert!(sol.pmp_residuals.within(1e-3), "{:?}", sol.pmp_residuals);
    assert_eq!(
        sol.pmp_residuals,
        verify_pmp(&sol, &spec, &p, &VerifyOptions::default())
    );
}

#[test]
fn mesh_refinement_settles_the_objective() {
    let values: Vec<f64> = [100, 200, 400, 800]
        .iter()
        .map(|m| direct(ObjectiveKind::FinalTumor, *m).objective.j)
        .collect();
    let steps: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    assert!(steps.windows(2).all(|s| s[1] < s[0]), "{values:?}");
}

#[test]
fn average_tumor_verifies_on_a_fine_mesh() {
    let p = NondimParams::canonical();
    let spec = common::treatment_spec(ObjectiveKind::AverageTumor);
    let sol = direct(ObjectiveKind::AverageTumor, 3200);
    let baseline = baseline_objective(&common::treatment_start(), &spec, &p).unwrap();
    assert!(sol.objective.j < baseline.j);
    assert!(common::non_increasing(&sol.solver_log));
    assert!(sol.pmp_residuals.within(1e-3), "{:?}", sol.pmp_residuals);
}

#[test]
fn sweep_agrees_with_direct_transcription() {
    let p = NondimParams::canonical();
    let spec = common::treatment_spec(ObjectiveKind::FinalTumor);
    let sweep = solve_fbsm(
        &spec,
        &common::treatment_start(),
        &p,
        &SweepOptions::default(),
    )
    .unwrap();
    let direct = direct(ObjectiveKind::FinalTumor, 800);
    assert!((sweep.objective.j - direct.objective.j).abs() <= 0.02 * direct.objective.j.abs());
    assert!(
        sweep.pmp_residuals.within(1e-4),
        "{:?}",
        sweep.pmp_residuals
    );
    assert_eq!(sweep.costates.terminal(), [spec.w1, 0.0, 0.0, 0.0, 0.0]);
}

#[test]
fn terminal_constraint_out_of_reach_is_reported_as_infeasible() {
    let p = NondimParams::canonical();
    let mut spec = common::treatment_spec(ObjectiveKind::TotalTreatment);
    spec.t_f = common::days(2.0);
    let s = common::treatment_start();
    let full = integrate_rk4(
        &s,
        &ControlSchedule::constant(spec.t_f, ControlInput::FULL).unwrap(),
        &p,
        spec.t_f,
        1e-3,
    )
    .unwrap();
    assert!(full.final_state().n > spec.terminal_tolerance);
    let err = solve_direct(&spec, &s, &p, &DirectOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Infeasible { .. }), "{err}");
    assert!(err
        .to_string()
        .contains("one of the previous two objective functions must be used instead"));
}
