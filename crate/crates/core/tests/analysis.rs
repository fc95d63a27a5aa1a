use flexcraft_core::analysis::convergence::{scenario_convergence_reports, ConvergenceOptions};
use flexcraft_core::analysis::lyapunov::{
    check_gain_conditions, search_certificate, solve_lyapunov_pair, LyapunovCertificate, LyapunovEvaluator,
};
use flexcraft_core::analysis::pe::{pe_check, y_signal, PESignalConfig};
use flexcraft_core::exosystem::exosystem_state;
use flexcraft_core::internal_model::{true_r, ControllerState, InternalModelDesign};
use flexcraft_core::plant::SpacecraftParams;
use flexcraft_core::quat::Quaternion;
use flexcraft_core::scenario::example_scenario;
use flexcraft_core::sim::{run_scenario_with_design, Scenario};
use nalgebra::{DMatrix, DVector, Vector3};

fn quiet(mut sc: Scenario, t_final: f64) -> Scenario {
    sc.t_final = t_final;
    sc.events.clear();
    for ax in sc.disturbance.axes.iter_mut() {
        for t in ax.tones.iter_mut() {
            t.amplitude = 0.0;
        }
    }
    sc
}

fn damped_example() -> Scenario {
    let mut sc = example_scenario();
    sc.events.clear();
    sc.disturbance.axes[2].tones[0].frequency = 1.0;
    sc.spacecraft = SpacecraftParams::new(
        sc.spacecraft.inertia,
        &sc.spacecraft.coupling * 0.03,
        &sc.spacecraft.damping * 10.0,
        sc.spacecraft.stiffness.clone(),
    )
    .unwrap();
    sc
}

fn sym_err(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

#[test]
fn lyapunov_pair_solves_both_equations() {
    let sc = example_scenario();
    let d = sc.synthesize().unwrap();
    let (p, s) = solve_lyapunov_pair(&sc.spacecraft, &d, 2.0, 3.0).unwrap();
    let a = flexcraft_core::analysis::lyapunov::auxiliary_matrix(&sc.spacecraft);
    let rp = &p * &a + a.transpose() * &p + DMatrix::identity(8, 8) * 2.0;
    let rs = &s * &d.m + d.m.transpose() * &s + DMatrix::identity(6, 6) * 3.0;
    assert!(rp.amax() < 1e-9 * p.amax(), "{}", rp.amax());
    assert!(rs.amax() < 1e-9 * s.amax(), "{}", rs.amax());
    assert!(sym_err(&p) < 1e-12 * p.amax());
    assert!(sym_err(&s) < 1e-12 * s.amax());
}

#[test]
fn lyapunov_solutions_scale_linearly() {
    let sc = example_scenario();
    let d = sc.synthesize().unwrap();
    let (p1, s1) = solve_lyapunov_pair(&sc.spacecraft, &d, 1.0, 1.0).unwrap();
    let (p5, s5) = solve_lyapunov_pair(&sc.spacecraft, &d, 5.0, 0.5).unwrap();
    assert!((&p1 * 5.0 - p5).amax() < 1e-9 * p1.amax());
    assert!((&s1 * 0.5 - s5).amax() < 1e-9 * s1.amax());
}

#[test]
fn nonpositive_weights_are_rejected() {
    let sc = example_scenario();
    let d = sc.synthesize().unwrap();
    assert!(solve_lyapunov_pair(&sc.spacecraft, &d, 0.0, 1.0).is_err());
    assert!(LyapunovCertificate::new(&sc.spacecraft, &d, &[0.2], 1.0, 1.0, [1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0])
        .is_err());
}

#[test]
fn gain_margin_on_k2_is_linear() {
    let sc = example_scenario();
    let d = sc.synthesize().unwrap();
    let cert = LyapunovCertificate::new(&sc.spacecraft, &d, &[0.2], 1.0, 1.0, [1.0; 8]).unwrap();
    let a = check_gain_conditions(&cert, 10.0, 50.0, &sc.spacecraft);
    let b = check_gain_conditions(&cert, 10.0, 150.0, &sc.spacecraft);
    let k2 = |r: &flexcraft_core::analysis::lyapunov::GainReport| r.inequalities[3].margin;
    assert!((k2(&b) - k2(&a) - 100.0).abs() < 1e-9);
    assert_eq!(a.inequalities[0], b.inequalities[0]);
    assert_eq!(a.inequalities[1], b.inequalities[1]);
}

#[test]
fn k1_below_one_violates_its_condition() {
    let sc = damped_example();
    let d = sc.synthesize().unwrap();
    let cert = LyapunovCertificate::new(&sc.spacecraft, &d, &[1.0], 1.0, 1.0, [1.0; 8]).unwrap();
    let r = check_gain_conditions(&cert, 0.5, 1e6, &sc.spacecraft);
    assert!(!r.satisfied);
    assert!((r.inequalities[2].margin + 0.5).abs() < 1e-15);
}

#[test]
fn certificate_found_for_damped_spacecraft() {
    let sc = damped_example();
    let d = sc.synthesize().unwrap();
    let (cert, rep) = search_certificate(&sc.spacecraft, &d, &[1.0], 10.0, 50.0).unwrap();
    assert!(rep.satisfied, "worst margin {}", rep.worst_margin());
    assert!(rep.inequalities.iter().all(|q| q.margin >= 0.0));
    assert!(rep.beta1 > 0.0 && rep.beta2 >= rep.beta1);
    assert_eq!(cert.p, rep.p);
    let again = check_gain_conditions(&cert, 10.0, 50.0, &sc.spacecraft);
    assert_eq!(again, rep);
}

#[test]
fn search_never_worse_than_unit_epsilons() {
    let sc = example_scenario();
    let d = sc.synthesize().unwrap();
    let unit = LyapunovCertificate::new(&sc.spacecraft, &d, &[0.2], 1.0, 1.0, [1.0; 8]).unwrap();
    let base = check_gain_conditions(&unit, 10.0, 50.0, &sc.spacecraft);
    let (_, best) = search_certificate(&sc.spacecraft, &d, &[0.2], 10.0, 50.0).unwrap();
    let rel = |r: &flexcraft_core::analysis::lyapunov::GainReport| {
        r.inequalities.iter().map(|q| q.margin / q.rhs.abs().max(1.0)).fold(f64::INFINITY, f64::min)
    };
    assert!(rel(&best) >= rel(&base) - 1e-12);
}

fn evaluator(sc: &Scenario, d: &InternalModelDesign) -> LyapunovEvaluator {
    let (p, s) = solve_lyapunov_pair(&sc.spacecraft, d, 1.0, 1.0).unwrap();
    LyapunovEvaluator::new(p, s, d, &sc.spacecraft, &sc.inertia, &[0.2], sc.gains.k1, sc.gains.k).unwrap()
}

#[test]
fn lyapunov_vanishes_at_the_closed_loop_equilibrium() {
    let sc = quiet(example_scenario(), 1.0);
    let d = sc.synthesize().unwrap();
    let ev = evaluator(&sc, &d);
    let mut ctrl = ControllerState::zeros(&d, 1);
    ctrl.r_hat = true_r(&[0.2], &sc.inertia.mu_true, &d.basis);
    let varrho = exosystem_state(&sc.disturbance, &d.structure.orders(), 3.0).unwrap();
    assert!(varrho.amax() == 0.0);
    let v = ev.eval(&Quaternion::identity(), &Vector3::zeros(), &DVector::zeros(4), &ctrl, &DVector::zeros(8), &varrho);
    assert_eq!((v.v, v.v1, v.v2, v.v3), (0.0, 0.0, 0.0, 0.0));
}

#[test]
fn lyapunov_parts_are_nonnegative_and_additive() {
    let sc = example_scenario();
    let d = sc.synthesize().unwrap();
    let ev = evaluator(&sc, &d);
    let mut ctrl = ControllerState::zeros(&d, 1);
    ctrl.v = DVector::from_fn(6, |i, _| 0.1 * i as f64 - 0.2);
    ctrl.r_hat = DVector::from_vec(vec![1.0, -2.0, 3.0]);
    let q = Quaternion::new_normalized([0.3, -0.2, 0.1, 0.9]).unwrap();
    let varrho = exosystem_state(&sc.disturbance, &d.structure.orders(), 1.7).unwrap();
    let z = DVector::from_fn(8, |i, _| (i as f64).sin());
    let v = ev.eval(&q, &Vector3::new(0.01, 0.02, -0.03), &DVector::from_element(4, 0.05), &ctrl, &z, &varrho);
    assert!(v.v1 > 0.0 && v.v2 > 0.0 && v.v3 > 0.0);
    assert!((v.v - (v.v1 + v.v2 + v.v3)).abs() <= 1e-15 * v.v);
    // V₂ grows with the parameter error as 1/(2k)
    let mut off = ctrl.clone();
    off.r_hat[0] += 1.0;
    let w = ev.eval(&q, &Vector3::new(0.01, 0.02, -0.03), &DVector::from_element(4, 0.05), &off, &z, &varrho);
    let expected = ((&off.r_hat - &ev.r_true).norm_squared() - (&ctrl.r_hat - &ev.r_true).norm_squared()) / 20.0;
    assert!((w.v2 - v.v2 - expected).abs() < 1e-12);
}

#[test]
fn y_signal_third_block_at_unit_frequency() {
    let mut sc = example_scenario();
    sc.disturbance.axes[2].tones[0].frequency = 1.0;
    let d = sc.synthesize().unwrap();
    let t_sigma = d.t_of(&[1.0]).unwrap();
    let mu = sc.inertia.mu_true.clone();
    let a0 = DMatrix::zeros(6, 1);
    let y = y_signal(0.0, 0.0, &a0, &d, &t_sigma, &sc.disturbance, &mu).unwrap();
    // one unknown frequency: [B | E∘A | E∘(Tϱ − Aμ)] is 3 x (1 + 1 + 1)
    assert_eq!(y.shape(), (3, 3));
    // with A₀ = 0 only the exosystem term survives
    assert!(y.columns(0, 2).amax() == 0.0);
    assert!((y[(2, 2)] - 1.5).abs() < 1e-9, "{y}");
    assert!(y.column(2).rows(0, 2).amax() < 1e-12);
}

#[test]
fn y_signal_rejects_wrong_a0_shape() {
    let sc = example_scenario();
    let d = sc.synthesize().unwrap();
    let t_sigma = d.t_of(&[0.2]).unwrap();
    let a0 = DMatrix::zeros(5, 1);
    assert!(y_signal(0.0, 0.0, &a0, &d, &t_sigma, &sc.disturbance, &sc.inertia.mu_true).is_err());
}

#[test]
fn slow_tone_is_pe_over_its_own_period() {
    let cfg = PESignalConfig {
        a0: None,
        window: 2.0 * std::f64::consts::PI / 0.2,
        theta: 0.1,
        t0: 0.0,
        dt: 1e-2,
    };
    let n = 10_000;
    let times: Vec<f64> = (0..=n).map(|k| k as f64 * cfg.dt).collect();
    let w: Vec<DMatrix<f64>> = times
        .iter()
        .map(|&t| DMatrix::from_element(1, 1, 1.5 * ((0.2 * t).cos() - (0.2 * t).sin())))
        .collect();
    let rep = pe_check(&times, &w, &cfg).unwrap();
    assert!(rep.is_pe);
    // the window mean of 2.25 (cos − sin)² is 2.25 whatever the frequency
    let expected = 2.25;
    assert!((rep.min_window_gram_eig - expected).abs() < 1e-3 * expected, "{}", rep.min_window_gram_eig);
}

#[test]
fn zero_signal_is_not_pe() {
    let cfg = PESignalConfig { a0: None, window: 1.0, theta: 1e-6, t0: 0.0, dt: 1e-2 };
    let times: Vec<f64> = (0..=500).map(|k| k as f64 * 1e-2).collect();
    let w = vec![DMatrix::zeros(3, 2); times.len()];
    let rep = pe_check(&times, &w, &cfg).unwrap();
    assert!(!rep.is_pe);
    assert_eq!(rep.min_window_gram_eig, 0.0);
}

#[test]
fn resting_spacecraft_leaves_estimate_untouched() {
    let mut sc = quiet(example_scenario(), 20.0);
    sc.initial.q = sc.q_desired;
    sc.gains.adaptation_enabled = true;
    sc.analysis = None;
    let d = sc.synthesize().unwrap();
    let traj = run_scenario_with_design(&sc, &d).unwrap();
    let first = &traj.records[0].r_hat;
    assert!(traj.records.iter().all(|r| r.r_hat == *first && r.omega_e == Vector3::zeros()));
    let opts = ConvergenceOptions::default();
    let reports = scenario_convergence_reports(&traj, &sc, &d, &opts).unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0].r_hat_variation, 0.0);
    assert!(!reports[0].y_pe.is_pe);
}
