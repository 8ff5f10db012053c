use std::sync::Arc;

use gravdec::bounds::*;
use gravdec::noise::{AmplitudeLaw, FieldRealization, ModeSet, ModeSetSpec, PowerFamilySpec, RadialMeasure};
use gravdec::{Error, PhysicalConstants};

fn scaled() -> PhysicalConstants {
    PhysicalConstants::new(1.0, 1.0, 1.0).unwrap()
}

fn single_mode(amplitude: f64) -> FieldRealization {
    let k = scaled();
    let ms = ModeSet::from_wavevectors(&[[0.3, -0.1, 0.2]], 1.0, &k).unwrap();
    let f = FieldRealization::new(Arc::new(ms), 17, 0, AmplitudeLaw::FixedModulus);
    let c0 = f.gamma([0.0; 3], 0.0);
    f.scaled(amplitude / c0.abs().max(1e-300))
}

/// Third-order series of c∫(sqrt(1+γ) − 1) for γ = C cos(θ − ωt),
/// integrated term by term in closed form.
fn single_mode_series(f: &FieldRealization, t_end: f64) -> f64 {
    let omega = f.mode_set().modes[0].norm();
    let g0 = f.gamma([0.0; 3], 0.0);
    let gq = f.gamma([0.0; 3], std::f64::consts::FRAC_PI_2 / omega);
    let amp = g0.hypot(gq);
    let th = gq.atan2(g0);
    let u1 = th - omega * t_end;
    let i1 = (th.sin() - u1.sin()) / omega;
    let i2 = t_end / 2.0 + ((2.0 * th).sin() - (2.0 * u1).sin()) / (4.0 * omega);
    let prim3 = |u: f64| 0.75 * u.sin() + (3.0 * u).sin() / 12.0;
    let i3 = (prim3(th) - prim3(u1)) / omega;
    amp * i1 / 2.0 - amp * amp * i2 / 8.0 + amp.powi(3) * i3 / 16.0
}

#[test]
fn single_mode_worldline_matches_series() {
    let f = single_mode(1e-5);
    for rule in [TimeRule::Simpson, TimeRule::Boole] {
        let q = WorldlineQuadrature { rule, max_phase_step: 0.01, min_intervals: 64 };
        for t in [3.0, 40.0, 517.0] {
            let got = worldline_excess(&f, [0.0; 3], t, &q).unwrap();
            let want = single_mode_series(&f, t);
            assert!((got - want).abs() < 1e-8 * want.abs().max(1e-5 * 1e-3), "{rule:?} T={t}: {got} vs {want}");
            let total = worldline_length(&f, [0.0; 3], t, &q).unwrap();
            assert!((total - t - got).abs() < 1e-12 * t);
        }
    }
}

#[test]
fn nonperturbative_field_is_rejected() {
    let f = single_mode(1.5);
    let err = worldline_excess(&f, [0.0; 3], 10.0, &WorldlineQuadrature::default()).unwrap_err();
    assert!(matches!(err, Error::Perturbativity(v) if v >= 1.0));
}

fn k_experiment(durations: Vec<f64>, n: usize, smearing: Smearing) -> WorldlineExperiment {
    WorldlineExperiment {
        durations,
        n_realizations: n,
        source: FieldSource::Resampled(ModeSetSpec::isotropic(3e-6, 0.3, 48, 11, RadialMeasure::Logarithmic)),
        smearing,
        quadrature: WorldlineQuadrature::default(),
        law: AmplitudeLaw::FixedModulus,
        x0: [0.0; 3],
        master_seed: 99,
        constants: scaled(),
    }
}

#[test]
fn k_bound_small_ensemble_has_cube_root_scaling() {
    let exp = k_experiment(vec![1e2, 1e3, 1e4, 1e5], 200, Smearing::SelfConsistent { tol: 1e-3, max_iter: 20 });
    let rep = k_bound_mc(&exp).unwrap();
    assert!((rep.fitted_exponent - 1.0 / 3.0).abs() < 0.08, "{rep:?}");
    assert!(rep.points.iter().all(|p| p.iterations >= 2 && (p.radius / p.delta_s - 1.0).abs() < 2e-3));
    assert!(rep.warnings.is_empty());
    assert!(rep.to_csv().lines().count() == 5);
}

#[test]
fn k_bound_is_seed_deterministic() {
    let exp = k_experiment(vec![1e2, 1e3], 16, Smearing::None);
    let a = k_bound_mc(&exp).unwrap();
    let b = k_bound_mc(&exp).unwrap();
    assert_eq!(a, b);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let c = pool.install(|| k_bound_mc(&exp).unwrap());
    assert_eq!(a, c);
}

#[test]
fn single_realization_is_low_confidence() {
    let rep = k_bound_mc(&k_experiment(vec![1e2, 1e3], 1, Smearing::None)).unwrap();
    assert!(rep.low_confidence);
    assert!(rep.points.iter().all(|p| p.delta_s_stderr.is_none()));
}

#[test]
fn short_ladder_warns() {
    let rep = k_bound_mc(&k_experiment(vec![1e2, 1e3], 4, Smearing::None)).unwrap();
    assert!(rep.warnings.iter().any(|w| w.contains("decades")));
}

fn white(durations: Vec<f64>, smearing: Smearing) -> WorldlineExperiment {
    WorldlineExperiment { source: FieldSource::WhiteBall { steps: 32 }, ..k_experiment(durations, 2000, smearing) }
}

#[test]
fn white_potential_fixed_smear_scales_as_sqrt_s() {
    let rep = k_bound_mc(&white(vec![1e2, 1e3, 1e4, 1e5], Smearing::Fixed { radius: 3.0 })).unwrap();
    assert!((rep.fitted_exponent - 0.5).abs() < 0.03, "{}", rep.fitted_exponent);
    // Δs² = (6/5) s / R in Planck units
    for p in &rep.points {
        let want = (1.2 * p.s / 3.0).sqrt();
        assert!((p.delta_s / want - 1.0).abs() < 5.0 * p.delta_s_stderr.unwrap() / want);
    }
}

#[test]
fn white_potential_closure_gives_cube_root() {
    let rep = k_bound_mc(&white(vec![1e2, 1e4, 1e6], Smearing::SelfConsistent { tol: 1e-6, max_iter: 100 })).unwrap();
    assert!((rep.fitted_exponent - 1.0 / 3.0).abs() < 0.02, "{}", rep.fitted_exponent);
}

#[test]
fn white_potential_needs_radius() {
    let err = k_bound_mc(&white(vec![1e2, 1e3], Smearing::None)).unwrap_err();
    assert!(matches!(err, Error::RegularizationRequired(_)));
}

#[test]
fn sphere_integral_monte_carlo() {
    let r = 2.5;
    let exact = sphere_double_integral(r, DoubleIntegralMethod::ClosedForm).unwrap().value;
    assert!((exact - 32.0 * std::f64::consts::PI.powi(2) / 15.0 * r.powi(5)).abs() < 1e-12 * exact);
    let mc = sphere_double_integral(r, DoubleIntegralMethod::MonteCarlo { pairs: 1_000_000, seed: 4 }).unwrap();
    let se = mc.stderr.unwrap();
    assert!(se < 2e-3 * exact);
    assert!((mc.value - exact).abs() < 4.0 * se, "{} vs {exact} ± {se}", mc.value);
}

#[test]
fn averaged_bound_prefactor_is_six_fifths() {
    let k = PhysicalConstants::cgs();
    for r in [1e-20, 1e-10, 1.0, 1e5] {
        let b = averaged_potential_bound(r, 1.0, &k, DoubleIntegralMethod::ClosedForm).unwrap();
        assert!((b.prefactor - 1.2).abs() < 1e-12);
        assert!((b.closure_ratio - 1.2).abs() < 1e-12);
    }
}

#[test]
fn probe_terms_balance_at_optimal_mass() {
    let k = PhysicalConstants::cgs();
    let p = ProbeSpec::new(1e-3, 10.0, &k).unwrap();
    let d = d_min_uncertainty(&p, &k);
    assert!((d.quantum_term / d.self_field_term - 1.0).abs() < 1e-12);
    // any other mass does worse
    for f in [0.5, 2.0] {
        let m = p.optimal_mass * f;
        assert!(quantum_term(&p, m, &k) + self_field_term(&p, m, &k) > d.quantum_term + d.self_field_term);
    }
    assert!(ProbeSpec::new(-1.0, 1.0, &k).is_err());
}

#[test]
fn dl_relation_closure() {
    let k = scaled();
    let d = dl_relation(1e6, 7.0, &k).unwrap();
    assert!((d.delta_s2 - 1e6 / 7.0).abs() < 1e-9);
    assert!((d.closure_delta_s - 100.0).abs() < 1e-10);
    assert!(d.closure_residual < 1e-14);
}

#[test]
fn family_check_on_satisfied_and_violated_specs() {
    let k = scaled();
    let opts = FamilyCheckOptions::default();
    let ok = PowerFamilySpec::new(0.0, -4.0 / 3.0, 0.0, 0.0, 1.0).unwrap();
    let r = family_check(&ok, &opts, &k).unwrap();
    assert!(r.predicate && r.satisfies_bound);
    assert!((r.closed_form_exponent - 1.0 / 3.0).abs() < 1e-10);
    assert!((r.mc_exponent.unwrap() - 1.0 / 3.0).abs() < 0.02);
    let bad = PowerFamilySpec::new(0.0, 0.0, 0.0, 0.0, 1.0).unwrap();
    let r = family_check(&bad, &opts, &k).unwrap();
    assert!(!r.predicate && !r.satisfies_bound);
    assert!((r.algebraic_exponent - 1.0).abs() < 1e-12);
    let asym = PowerFamilySpec::new(-0.5, -2.0, 0.5, -0.5, 1.0).unwrap();
    assert!(family_check(&asym, &opts, &k).unwrap().mc_exponent.is_none());
    assert!(family_check(&PowerFamilySpec { j: 1.0, m: 0.0, n1: 0.0, n2: 0.0, k_const: 1.0 }, &opts, &k).is_err());
}
