use std::f64::consts::{FRAC_PI_4, TAU};

use nalgebra::{DMatrix, DVector};
use sphs_core::audit::{self, ImpactBoundData, InvarianceConfig, Verdict};
use sphs_core::linalg::rotation_generator;
use sphs_core::sim::{self, EventLog, IntegratorConfig, Trajectory};
use sphs_core::{
    ClosedLoopSystem, InputSignal, Load, PhasePIController, QuadraticForm, SineComponent,
    SingularPHSystem, StaticLoad, Variant,
};

fn x(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn b1() -> DMatrix<f64> {
    DMatrix::from_column_slice(2, 1, &[1.0, 0.0])
}

fn plant(variant: Variant, r: f64, omega: f64, bbar: DMatrix<f64>) -> SingularPHSystem {
    SingularPHSystem::builder(QuadraticForm::identity(2))
        .r(DMatrix::identity(2, 2) * r)
        .jbar(rotation_generator(omega))
        .bbar(bbar)
        .variant(variant)
        .build()
        .unwrap()
}

fn sine(amplitude: f64, omega: f64) -> InputSignal {
    InputSignal::Sines {
        m: 1,
        components: vec![SineComponent {
            amplitude: x(&[amplitude]),
            omega,
            phase: 0.0,
        }],
    }
}

fn example1(variant: Variant, k: f64) -> ClosedLoopSystem {
    let load = Load::Static(StaticLoad::scalar(k, 1).unwrap());
    ClosedLoopSystem::new(plant(variant, 1.0, TAU, b1()), load, None).unwrap()
}

fn run(cl: &ClosedLoopSystem, x0: &[f64], cfg: &IntegratorConfig) -> (Trajectory, EventLog) {
    sim::integrate(cl, &cl.initial_state(&x(x0)).unwrap(), cfg).unwrap()
}

fn zero_input(sys: SingularPHSystem) -> ClosedLoopSystem {
    ClosedLoopSystem::open_loop(sys, InputSignal::Zero { m: 1 }).unwrap()
}

#[test]
fn zero_input_storage_is_monotone_for_every_variant() {
    for variant in [Variant::Exact, Variant::Saturated { m: 3.0 }, Variant::Linear { m: 3.0 }] {
        let cl = zero_input(plant(variant, 1.0, TAU, b1()));
        for x0 in [[2.0, 0.0], [0.1, 0.1], [-1.5, 1.5]] {
            let (traj, _) = run(&cl, &x0, &IntegratorConfig::rk4(1e-3, 3.0));
            let c = audit::check_zero_input_monotone(&traj, 10.0);
            assert_eq!(c.verdict, Verdict::Pass, "{variant} {x0:?}: {c:?}");
        }
    }
}

#[test]
fn zero_input_check_refuses_forced_runs() {
    let cl = ClosedLoopSystem::open_loop(plant(Variant::Linear { m: 3.0 }, 1.0, TAU, b1()), sine(0.3, 2.0)).unwrap();
    let (traj, _) = run(&cl, &[1.2, 0.0], &IntegratorConfig::rk4(1e-3, 1.0));
    assert_eq!(audit::check_zero_input_monotone(&traj, 10.0).verdict, Verdict::Inconclusive);
}

#[test]
fn example1_closed_loop_is_passive() {
    for variant in [Variant::Saturated { m: 3.0 }, Variant::Linear { m: 3.0 }] {
        let (traj, _) = run(&example1(variant, 1.0), &[2.0, 0.0], &IntegratorConfig::rk4(1e-4, 10.0));
        let c = audit::check_passivity(&traj);
        assert_eq!(c.verdict, Verdict::Pass, "{variant}: {c:?}");
        assert_eq!(c.metric("violations"), Some(0.0));
    }
}

#[test]
fn constant_state_on_s_has_zero_storage_and_supply() {
    let sys = SingularPHSystem::builder(QuadraticForm::identity(2))
        .r(DMatrix::identity(2, 2))
        .jbar(DMatrix::zeros(2, 2))
        .bbar(b1())
        .variant(Variant::Exact)
        .build()
        .unwrap();
    let (traj, _) = run(&zero_input(sys), &[1.0, 0.0], &IntegratorConfig::rk4(1e-3, 1.0));
    for s in traj.samples() {
        assert_eq!(s.x, x(&[1.0, 0.0]));
        assert_eq!((s.h, s.supply, s.diss_rate), (0.0, 0.0, 0.0));
        assert_eq!(s.storage_rate, Some(0.0));
    }
}

#[test]
fn unforced_cycle_outside_layer_has_zero_supply() {
    let cl = zero_input(plant(Variant::Linear { m: 3.0 }, 1e-4, TAU, b1()));
    let (traj, _) = run(&cl, &[3f64.sqrt(), 0.0], &IntegratorConfig::rk4(1e-3, 1.5));
    let c = audit::check_cycle_supply(&traj, &QuadraticForm::identity(2), 1e-3);
    assert_eq!(c.verdict, Verdict::Pass, "{c:?}");
    assert_eq!(c.metric("integral"), Some(0.0));
}

#[test]
fn forced_cycle_outside_layer_has_nonnegative_supply() {
    let cl = ClosedLoopSystem::open_loop(plant(Variant::Linear { m: 3.0 }, 1e-3, TAU, b1()), sine(0.05, TAU)).unwrap();
    let (traj, _) = run(&cl, &[3f64.sqrt(), 0.0], &IntegratorConfig::rk4(1e-3, 3.0));
    assert!(traj.samples().iter().all(|s| s.sigma > 1.0 / 3.0));
    let c = audit::check_cycle_supply(&traj, &QuadraticForm::identity(2), 1e-2);
    assert_eq!(c.verdict, Verdict::Pass, "{c:?}");
    assert!(c.metric("closure_distance").unwrap() <= 1e-2);
}

#[test]
fn cycle_on_s_carries_no_supply() {
    let base = plant(Variant::Exact, 1.0, TAU, b1());
    let tol = 4.0 * audit::stage_excursion_bound(&base, 1e-3).unwrap();
    let cl = ClosedLoopSystem::open_loop(base.with_tol_s(tol).unwrap(), sine(0.5, 3.0)).unwrap();
    let (traj, _) = run(&cl, &[1.0, 0.0], &IntegratorConfig::rk4(1e-3, 2.0));
    let c = audit::check_cycle_supply(&traj, &QuadraticForm::identity(2), 1e-3);
    assert_eq!(c.verdict, Verdict::Pass, "{c:?}");
    assert_eq!(c.metric("integral"), Some(0.0));
}

#[test]
fn cycle_check_without_closed_segment_is_inconclusive() {
    let (traj, _) = run(&example1(Variant::Linear { m: 3.0 }, 1.0), &[2.0, 0.0], &IntegratorConfig::rk4(1e-3, 0.2));
    let c = audit::check_cycle_supply(&traj, &QuadraticForm::identity(2), 1e-6);
    assert_eq!(c.verdict, Verdict::Inconclusive);
}

#[test]
fn rotation_started_on_s_stays_on_s() {
    let base = plant(Variant::Exact, 1.0, TAU, b1());
    let tol = 4.0 * audit::stage_excursion_bound(&base, 1e-3).unwrap();
    let cl = ClosedLoopSystem::open_loop(base.with_tol_s(tol).unwrap(), sine(1.0, 2.0)).unwrap();
    let (traj, _) = run(&cl, &[0.0, 1.0], &IntegratorConfig::rk4(1e-3, 10.0));
    let worst = traj.samples().iter().map(|s| s.sigma.abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-6, "{worst}");
}

#[test]
fn forward_invariance_check_passes_with_resolved_band() {
    let base = plant(Variant::Exact, 1.0, TAU, b1());
    let cfg = InvarianceConfig {
        n_points: 3,
        seed: 5,
        ..InvarianceConfig::default()
    };
    let tol = 4.0 * audit::stage_excursion_bound(&base, cfg.dt).unwrap();
    let c = audit::check_forward_invariance(&base.with_tol_s(tol).unwrap(), &cfg).unwrap();
    assert_eq!(c.verdict, Verdict::Pass, "{c:?}");
    assert_eq!(c.metric("max_input_effect"), Some(0.0));
}

#[test]
fn forward_invariance_with_no_points_is_vacuous() {
    let base = plant(Variant::Exact, 1.0, TAU, b1());
    let cfg = InvarianceConfig {
        n_points: 0,
        ..InvarianceConfig::default()
    };
    let tol = 4.0 * audit::stage_excursion_bound(&base, cfg.dt).unwrap();
    let c = audit::check_forward_invariance(&base.with_tol_s(tol).unwrap(), &cfg).unwrap();
    assert_eq!(c.verdict, Verdict::Pass);
    assert_eq!(c.usable, 0);
}

#[test]
fn forward_invariance_requires_exact_variant() {
    let sys = plant(Variant::Linear { m: 3.0 }, 1.0, TAU, b1());
    assert!(audit::check_forward_invariance(&sys, &InvarianceConfig::default()).is_err());
}

#[test]
fn unforced_offset_decays_monotonically() {
    let q = QuadraticForm::identity(2);
    let x0 = q.scale_to_level(&x(&[1.0, 0.0]), 0.1).unwrap();
    let (traj, _) = run(
        &zero_input(plant(Variant::Exact, 1.0, TAU, b1())),
        x0.as_slice(),
        &IntegratorConfig::rk4(1e-3, 5.0),
    );
    let sig: Vec<f64> = traj.step_samples().map(|s| s.sigma.abs()).collect();
    assert!((sig[0] - 0.1).abs() < 1e-12);
    assert!(sig.windows(2).all(|w| w[1] <= w[0]));
    assert!(*sig.last().unwrap() < 1e-3);
}

#[test]
fn impact_bound_reference_values() {
    let data = ImpactBoundData::new(0.5, 1.0, QuadraticForm::identity(2), DMatrix::identity(2, 2)).unwrap();
    assert_eq!(data.d_min(), 0.25);
    let (d_min, t_bound) = audit::compute_impact_bound(&x(&[2.0, 0.0]), &data).unwrap();
    assert_eq!(d_min, 0.25);
    assert!((t_bound - 4.5).abs() < 1e-12);
}

#[test]
fn impact_bound_rejects_bad_data() {
    let q = QuadraticForm::identity(2);
    let id = DMatrix::identity(2, 2);
    assert!(ImpactBoundData::new(1.0, 1.0, q.clone(), id.clone()).is_err());
    assert!(ImpactBoundData::new(0.0, 1.0, q.clone(), id.clone()).is_err());
    assert!(ImpactBoundData::new(0.5, 1.0, q.clone(), DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])).is_err());
    assert!(ImpactBoundData::new(0.5, 1.0, q.clone(), b1()).is_err());
    let data = ImpactBoundData::new(0.5, 1.0, q, id).unwrap();
    assert!(audit::compute_impact_bound(&x(&[1.0, 0.0]), &data).is_err());
    assert!(audit::compute_impact_bound(&x(&[0.2, 0.0]), &data).is_err());
}

#[test]
fn simulated_impact_respects_bound() {
    let sys = plant(Variant::Exact, 1.0, TAU, DMatrix::identity(2, 2));
    let load = StaticLoad::constant(DMatrix::identity(2, 2) * 1.5, 1.0, 2.0).unwrap();
    let cl = ClosedLoopSystem::new(sys, Load::Static(load), None).unwrap();
    let cfg = IntegratorConfig {
        stop_on_impact: true,
        ..IntegratorConfig::rk45(1e-9, 1e-12, 1e-2, 10.0)
    };
    let (traj, log) = run(&cl, &[2.0, 0.0], &cfg);
    let data = ImpactBoundData::new(0.5, 1.0, QuadraticForm::identity(2), DMatrix::identity(2, 2)).unwrap();
    let c = audit::check_impact_bound(&traj, &log, &data).unwrap();
    assert_eq!(c.verdict, Verdict::Pass, "{c:?}");
    assert!(c.metric("t_impact").unwrap() <= 4.5);
}

#[test]
fn example1_converges_to_s() {
    for (k, x0) in [(1.0, [2.0, 0.0]), (5.0, [0.1, 0.1])] {
        let (traj, _) = run(&example1(Variant::Linear { m: 3.0 }, k), &x0, &IntegratorConfig::rk4(1e-4, 10.0));
        let c = audit::check_convergence_to_s(&traj, 0.02, 0.5).unwrap();
        assert_eq!(c.verdict, Verdict::Pass, "K={k} {x0:?}: {c:?}");
        assert!((c.metric("window_start").unwrap() - 5.0).abs() < 1e-9);
    }
}

#[test]
fn convergence_rejects_origin_start() {
    let (traj, _) = run(&example1(Variant::Linear { m: 3.0 }, 1.0), &[0.0, 0.0], &IntegratorConfig::rk4(1e-3, 0.1));
    assert!(audit::check_convergence_to_s(&traj, 0.02, 0.5).is_err());
}

#[test]
fn convergence_fails_for_short_horizon() {
    let (traj, _) = run(&example1(Variant::Linear { m: 3.0 }, 1.0), &[2.0, 0.0], &IntegratorConfig::rk4(1e-3, 0.2));
    assert_eq!(audit::check_convergence_to_s(&traj, 0.02, 0.5).unwrap().verdict, Verdict::Fail);
}

#[test]
fn phase_tracking_passes_at_a_resting_point() {
    let phi = 0.7;
    let ctrl = PhasePIController {
        omega0: 0.0,
        kp: 50.0,
        ki: 200.0,
        phi_ref: phi,
    };
    let sys = plant(Variant::Linear { m: 3.0 }, 1.0, 0.0, b1());
    let cl = ClosedLoopSystem::new(sys, Load::OpenLoop(InputSignal::Zero { m: 1 }), Some(ctrl)).unwrap();
    let (traj, _) = run(&cl, &[phi.cos(), phi.sin()], &IntegratorConfig::rk4(1e-3, 1.0));
    let c = audit::check_phase_tracking(&traj, phi, 0.05, 0.02).unwrap();
    assert_eq!(c.verdict, Verdict::Pass, "{c:?}");
    assert!(c.metric("mean_phase_error").unwrap() < 1e-12);
}

#[test]
fn phase_tracking_fails_away_from_reference() {
    let ctrl = PhasePIController {
        omega0: 0.0,
        kp: 0.0,
        ki: 0.0,
        phi_ref: 3.0 * FRAC_PI_4,
    };
    let sys = plant(Variant::Linear { m: 3.0 }, 1.0, 0.0, b1());
    let cl = ClosedLoopSystem::new(sys, Load::OpenLoop(InputSignal::Zero { m: 1 }), Some(ctrl)).unwrap();
    let (traj, _) = run(&cl, &[1.0, 0.0], &IntegratorConfig::rk4(1e-3, 1.0));
    let c = audit::check_phase_tracking(&traj, 3.0 * FRAC_PI_4, 0.05, 0.02).unwrap();
    assert_eq!(c.verdict, Verdict::Fail);
    assert!(c.worst_margin < 0.0);
}

#[test]
fn excursion_trend_cases() {
    let pass = audit::check_excursion_trend(&[(10.0, 0.1), (1.0, 0.5), (5.0, 0.3)]);
    assert_eq!(pass.verdict, Verdict::Pass);
    assert_eq!(pass.metric("excursion_0"), Some(0.5));
    assert_eq!(pass.metric("excursion_2"), Some(0.1));

    let fail = audit::check_excursion_trend(&[(1.0, 0.5), (5.0, 0.6)]);
    assert_eq!(fail.verdict, Verdict::Fail);
    assert!(fail.worst_margin < 0.0);

    assert_eq!(audit::check_excursion_trend(&[(1.0, 0.5)]).verdict, Verdict::Inconclusive);
    assert_eq!(
        audit::check_excursion_trend(&[(1.0, 0.5), (1.0, 0.4)]).verdict,
        Verdict::Inconclusive
    );
}

#[test]
fn storage_branches_join_and_shrink() {
    let c = audit::check_storage_continuity(&[1.0, 3.0, 10.0, 100.0, 1e4], 1e-12);
    assert_eq!(c.verdict, Verdict::Pass);
    assert!(c.metric("max_rel_gap").unwrap() <= 1e-12);
    assert_eq!(audit::check_storage_limit(&[10.0, 100.0, 1000.0]).verdict, Verdict::Pass);
    assert_eq!(audit::check_storage_limit(&[1000.0, 100.0, 10.0]).verdict, Verdict::Inconclusive);
}

#[test]
fn dissipation_identity_holds_on_forced_linear_run() {
    let sys = SingularPHSystem::builder(QuadraticForm::identity(2))
        .r(DMatrix::identity(2, 2) * 0.5)
        .jbar(rotation_generator(TAU))
        .bbar(DMatrix::from_column_slice(2, 1, &[1.0, 0.5]))
        .variant(Variant::Linear { m: 3.0 })
        .build()
        .unwrap();
    let cl = ClosedLoopSystem::open_loop(sys, sine(0.4, 3.0)).unwrap();
    let (traj, _) = run(&cl, &[1.5, 0.3], &IntegratorConfig::rk4(1e-3, 4.0));
    let c = audit::check_dissipation_identity(&traj, 1e-3, 0.99);
    assert_eq!(c.verdict, Verdict::Pass, "{c:?}");
    assert!(c.usable >= audit::MIN_USABLE);
}

#[test]
fn report_lists_every_check() {
    let (traj, _) = run(&example1(Variant::Linear { m: 3.0 }, 1.0), &[2.0, 0.0], &IntegratorConfig::rk4(1e-3, 3.0));
    let mut report = audit::AuditReport::new(traj.tol_s);
    report.push(audit::check_passivity(&traj));
    report.push(audit::check_convergence_to_s(&traj, 0.02, 0.5).unwrap());
    let text = report.to_text();
    assert!(text.contains("passivity") && text.contains("convergence_to_s"));
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 3);
}
