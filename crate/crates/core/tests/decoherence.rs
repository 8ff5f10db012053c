use std::f64::consts::PI;

use gravdec::bounds::WorldlineQuadrature;
use gravdec::decoherence::*;
use gravdec::noise::AmplitudeLaw;
use gravdec::quadrature::{adaptive, oscillatory_tail, Tolerance, Trig};
use gravdec::{Error, PhysicalConstants, UnitSystem};
use proptest::prelude::*;

const PROTON: f64 = 1.6726e-24;

fn scaled() -> PhysicalConstants {
    PhysicalConstants::new(1.0, 1.0, 1.0).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn form_factor_normalization_and_limits() {
    let ball = MassDensity::UniformBall { mass: 3.0, radius: 2.0 };
    let gauss = MassDensity::Gaussian { mass: 3.0, sigma: 0.5 };
    for d in [&ball, &gauss, &MassDensity::PointMass { mass: 3.0 }] {
        assert_eq!(d.form_factor(0.0), 3.0);
    }
    // ball: m(1 − (kR)²/10 + (kR)⁴/280)
    let kr: f64 = 1e-2;
    let want = 3.0 * (1.0 - kr * kr / 10.0 + kr.powi(4) / 280.0);
    assert!(rel(ball.form_factor(kr / 2.0), want) < 1e-12);
    let half = (2.0 * 2f64.ln()).sqrt() / 0.5;
    assert!(rel(gauss.form_factor(half), 1.5) < 1e-14);
}

#[test]
fn composite_form_factor_is_direction_average() {
    let d = MassDensity::Composite {
        parts: vec![
            Component { mass: 1.0, offset: [0.0, 0.0, 0.0], shape: Shape::Ball { radius: 0.3 } },
            Component { mass: 2.0, offset: [0.4, -0.2, 0.5], shape: Shape::Gaussian { sigma: 0.2 } },
        ],
    };
    assert!((d.form_factor_vec([0.0; 3]).re - 3.0).abs() < 1e-14);
    // average |ĝ(k n̂)|² over the sphere by a product Gauss rule in (cos θ, φ)
    let gl = gravdec::quadrature::gauss_legendre(40);
    for k in [0.5, 2.0, 7.0] {
        let mut avg = 0.0;
        for (x, w) in gl.nodes.iter().zip(&gl.weights) {
            let s = (1.0 - x * x).sqrt();
            let nphi = 80;
            for j in 0..nphi {
                let phi = 2.0 * PI * j as f64 / nphi as f64;
                let g = d.form_factor_vec([k * s * phi.cos(), k * s * phi.sin(), k * x]);
                avg += w * g.norm_sqr() / (2.0 * nphi as f64);
            }
        }
        assert!(rel(d.form_factor_sq(k), avg) < 1e-10, "k={k}: {} vs {avg}", d.form_factor_sq(k));
    }
}

#[test]
fn smooth_densities_integrate_to_mass() {
    for d in [MassDensity::UniformBall { mass: 2.5, radius: 0.7 }, MassDensity::Gaussian { mass: 2.5, sigma: 0.7 }] {
        let radial = |r: f64| 4.0 * PI * r * r * d.density_at([0.0, 0.0, r]);
        let hi = if matches!(d, MassDensity::UniformBall { .. }) { 0.7 } else { 20.0 };
        let v = adaptive(radial, 0.0, hi, Tolerance::rel(1e-12)).unwrap().value;
        assert!(rel(v, 2.5) < 1e-8, "{d:?}: {v}");
    }
}

proptest! {
    #[test]
    fn form_factor_bounded_by_mass(k in 0.0f64..1e3, r in 1e-3f64..10.0, m in 1e-3f64..1e3) {
        for d in [MassDensity::UniformBall { mass: m, radius: r }, MassDensity::Gaussian { mass: m, sigma: r }] {
            prop_assert!(d.form_factor(k).abs() <= d.form_factor(0.0) * (1.0 + 1e-12));
        }
    }
}

/// ∫₀^∞ u^{-5/3}(1 − sinc u)(1 − cos wu) du by brute-force quadrature:
/// finite part to U, then the tail term by term.
fn point_integral_by_quadrature(w: f64) -> f64 {
    let f = |u: f64| {
        let oms = if u < 1e-2 { u * u / 6.0 * (1.0 - u * u / 20.0) } else { 1.0 - u.sin() / u };
        let s = (0.5 * w * u).sin();
        u.powf(-5.0 / 3.0) * oms * 2.0 * s * s
    };
    let big = 200.0 * (1.0 + 1.0 / w);
    let period = 2.0 * PI / w.max(1.0);
    let mut breaks = vec![1e-12];
    let mut x = 1e-11;
    while x < period {
        breaks.push(x);
        x *= 10.0;
    }
    let mut x = period;
    while x < big {
        breaks.push(x);
        x += period;
    }
    breaks.push(big);
    let head = gravdec::quadrature::adaptive_breaks(f, &breaks, Tolerance { abs: 0.0, rel: 1e-12, max_intervals: 400_000 })
        .unwrap()
        .value;
    // tail: u^{-5/3} − u^{-5/3}cos wu − u^{-8/3} sin u + ½u^{-8/3}[sin (1+w)u + sin (1−w)u]
    let p53 = |u: f64| u.powf(-5.0 / 3.0);
    let p83 = |u: f64| u.powf(-8.0 / 3.0);
    let tail_cos = oscillatory_tail(p53, w, big, Trig::Cos, 1e-12, 0.0).unwrap().value;
    let tail_sin = oscillatory_tail(p83, 1.0, big, Trig::Sin, 1e-12, 0.0).unwrap().value;
    let tail_plus = oscillatory_tail(p83, 1.0 + w, big, Trig::Sin, 1e-12, 0.0).unwrap().value;
    let tail_minus = if (1.0 - w).abs() > 1e-12 {
        (1.0 - w).signum() * oscillatory_tail(p83, (1.0 - w).abs(), big, Trig::Sin, 1e-12, 0.0).unwrap().value
    } else {
        0.0
    };
    head + 1.5 * big.powf(-2.0 / 3.0) - tail_cos - tail_sin + 0.5 * (tail_plus + tail_minus)
}

#[test]
fn point_kernel_closed_form_matches_quadrature() {
    for w in [0.05, 0.7, 1.0, 2.5, 40.0] {
        let closed = point_kernel_integral(w);
        let quad = point_integral_by_quadrature(w);
        assert!(rel(closed, quad) < 1e-7, "w={w}: {closed} vs {quad}");
    }
    // large-w series joins the direct formula and tends to ½Γ(−5/3)
    assert!(rel(point_kernel_integral(1e3 * (1.0 - 1e-12)), point_kernel_integral(1e3 * (1.0 + 1e-12))) < 1e-9);
    let limit = 0.5 * libm::tgamma(-5.0 / 3.0);
    assert!(rel(point_kernel_integral(1e40), limit) < 1e-15);
    assert!((limit - 1.205_522_340_618_486).abs() < 1e-14);
}

#[test]
fn k_variance_vanishes_at_zero_separation() {
    let k = scaled();
    for d in [MassDensity::PointMass { mass: 1.0 }, MassDensity::UniformBall { mass: 1.0, radius: 0.3 }] {
        assert_eq!(k_phase_variance(&d, 0.0, 3.0, None, &k).unwrap(), 0.0);
        assert_eq!(k_phase_variance(&d, 1.0, 0.0, None, &k).unwrap(), 0.0);
    }
}

#[test]
fn k_variance_asymptotic_and_direct_paths_join() {
    // ω = ct crosses the switch at 10³·max(a, σ)
    let k = scaled();
    let d = MassDensity::Gaussian { mass: 1.0, sigma: 0.01 };
    let a = 0.02;
    let below = k_phase_variance(&d, a, 20.0 * (1.0 - 1e-9), None, &k).unwrap();
    let above = k_phase_variance(&d, a, 20.0 * (1.0 + 1e-9), None, &k).unwrap();
    assert!(rel(below, above) < 1e-7, "{below} vs {above}");
}

#[test]
fn k_variance_band_pieces_add_up() {
    let k = scaled();
    let d = MassDensity::PointMass { mass: 1.0 };
    let (a, t) = (0.8, 1.7);
    let full = k_phase_variance(&d, a, t, None, &k).unwrap();
    let low = k_phase_variance(&d, a, t, Some((0.0, 5.0)), &k).unwrap();
    let high = k_phase_variance(&d, a, t, Some((5.0, f64::INFINITY)), &k).unwrap();
    assert!(rel(low + high, full) < 1e-8);
}

#[test]
fn k_variance_matches_ensemble_oracle() {
    let k = scaled();
    let cases = [
        (MassDensity::PointMass { mass: 1.0 }, 0.7, 2.0),
        (MassDensity::PointMass { mass: 0.3 }, 2.5, 0.6),
        (MassDensity::UniformBall { mass: 1.0, radius: 0.4 }, 1.1, 1.3),
        (MassDensity::UniformBall { mass: 2.0, radius: 1.0 }, 0.5, 4.0),
        (MassDensity::Gaussian { mass: 1.0, sigma: 0.3 }, 1.9, 0.9),
        (MassDensity::Gaussian { mass: 0.5, sigma: 0.8 }, 3.0, 2.2),
        (MassDensity::UniformBall { mass: 1.5, radius: 0.2 }, 0.3, 0.5),
        (MassDensity::PointMass { mass: 2.0 }, 4.0, 3.0),
        (MassDensity::Gaussian { mass: 1.0, sigma: 0.1 }, 0.9, 1.1),
        (MassDensity::UniformBall { mass: 1.0, radius: 0.6 }, 2.0, 0.7),
    ];
    for (i, (d, a, t)) in cases.iter().enumerate() {
        let opts = PhaseMcOptions {
            n_realizations: 1000,
            n_modes: 48,
            k_min: 0.05,
            k_max: 8.0,
            seed: 1000 + i as u64,
            quadrature: WorldlineQuadrature { max_phase_step: 0.25, ..Default::default() },
            law: AmplitudeLaw::FixedModulus,
        };
        let mc = k_phase_variance_mc(d, *a, *t, &opts, &k).unwrap();
        let quad = k_phase_variance(d, *a, *t, Some((0.05, 8.0)), &k).unwrap();
        assert!((mc.value - quad).abs() < 3.0 * mc.stderr, "{d:?} a={a} t={t}: mc {} ± {} vs {quad}", mc.value, mc.stderr);
    }
}

#[test]
fn variance_grid_signs_and_monotonicity() {
    let k = scaled();
    let a: Vec<f64> = (0..20).map(|i| 0.02 * 1.3f64.powi(i)).collect();
    let t: Vec<f64> = (0..20).map(|i| 0.05 * 1.3f64.powi(i)).collect();
    let densities = [
        (Model::K, MassDensity::PointMass { mass: 1.0 }),
        (Model::D, MassDensity::UniformBall { mass: 1.0, radius: 0.5 }),
        (Model::D, MassDensity::Gaussian { mass: 1.0, sigma: 0.5 }),
    ];
    for (model, d) in densities {
        let c = phase_variance_curve(model, &d, &a, &t, None, &k).unwrap();
        assert!(phase_variance(model, &d, 0.0, 1.0, None, &k).unwrap() == 0.0);
        for i in 0..a.len() {
            for j in 0..t.len() {
                let v = c.variance[i][j];
                assert!(v > 0.0);
                if i > 0 {
                    assert!(v >= c.variance[i - 1][j] * (1.0 - 1e-12), "{model:?} not monotone in a");
                }
                // the K variance is monotone in t only until the light cone ct = a
                let inside = model == Model::D || k.c * t[j] <= 0.9 * a[i];
                if j > 0 && inside {
                    assert!(v >= c.variance[i][j - 1] * (1.0 - 1e-12), "{model:?} not monotone in t");
                }
            }
        }
    }
}

#[test]
fn k_variance_overshoots_at_light_cone() {
    // the exact point-mass integral peaks near ct ≈ 0.95a and relaxes to ½Γ(−5/3)
    let (lo, hi) = (0.5f64, 1.5f64);
    let peak = (0..=2000).map(|i| point_kernel_integral(lo + (hi - lo) * i as f64 / 2000.0)).fold(0.0, f64::max);
    let late = point_kernel_integral(1e8);
    assert!(peak / late > 1.08 && peak / late < 1.09, "{}", peak / late);
    let k = scaled();
    let d = MassDensity::UniformBall { mass: 1.0, radius: 0.05 };
    let at_cone = k_phase_variance(&d, 1.0, 0.95, None, &k).unwrap();
    let after = k_phase_variance(&d, 1.0, 50.0, None, &k).unwrap();
    assert!(at_cone > after);
}

#[test]
fn d_variance_disjoint_balls() {
    let k = PhysicalConstants::cgs();
    let (m, r) = (2.0, 0.5);
    let d = MassDensity::UniformBall { mass: m, radius: r };
    for a in [1.0, 1.7, 10.0] {
        let want = 2.0 * (1.2 * m * m / r - m * m / a);
        assert!(rel(d_decoherence_delta(&d, a).unwrap(), want) < 1e-13);
        let v = d_phase_variance(&d, a, 3.0, &k).unwrap();
        assert!(rel(v, 3.0 * k.g / k.hbar * want) < 1e-13);
        assert!(rel(d_phase_variance(&d, a, 6.0, &k).unwrap(), 2.0 * v) < 1e-14);
    }
    assert_eq!(d_phase_variance(&d, 0.0, 3.0, &k).unwrap(), 0.0);
}

#[test]
fn d_variance_small_separation_is_quadratic() {
    // 2[W(0) − W(a)] → m² a²/R³ as a → 0
    let d = MassDensity::UniformBall { mass: 4.0, radius: 1.0 };
    for a in [1e-12, 1e-6] {
        assert!(rel(d_decoherence_delta(&d, a).unwrap(), 16.0 * a * a) < 1e-5);
    }
}

#[test]
fn d_point_mass_needs_radius() {
    let err = d_phase_variance(&MassDensity::PointMass { mass: 1.0 }, 1.0, 1.0, &scaled()).unwrap_err();
    assert!(matches!(err, Error::RegularizationRequired(_)));
}

#[test]
fn gaussian_self_energy() {
    let d = MassDensity::Gaussian { mass: 2.0, sigma: 0.3 };
    let w0 = mutual_integral(&d, 0.0).unwrap();
    assert!(rel(w0, 4.0 / (0.3 * PI.sqrt())) < 1e-14);
}

#[test]
fn concentric_balls_mutual_energy() {
    // inner ball R1 sits in the interior potential m2(3R2² − r²)/(2R2³)
    let (m1, r1, m2, r2) = (1.0, 0.4, 3.0, 1.0);
    let d = MassDensity::Composite {
        parts: vec![
            Component { mass: m1, offset: [0.0; 3], shape: Shape::Ball { radius: r1 } },
            Component { mass: m2, offset: [0.0; 3], shape: Shape::Ball { radius: r2 } },
        ],
    };
    let cross = m1 * m2 * (3.0 * r2 * r2 - 0.6 * r1 * r1) / (2.0 * r2.powi(3));
    let want = 1.2 * m1 * m1 / r1 + 1.2 * m2 * m2 / r2 + 2.0 * cross;
    assert!(rel(mutual_integral(&d, 0.0).unwrap(), want) < 1e-8);
}

#[test]
fn closure_and_regime() {
    let k = PhysicalConstants::cgs();
    let o = LocalizationOptions::default();
    let b = MassDensity::ball_with_density(1.0, 1.0).unwrap();
    for model in [Model::K, Model::D] {
        let r = solve_localization(model, &b, &o, &k).unwrap();
        assert!(rel(r.tau_c, b.total_mass() * r.a_c * r.a_c / k.hbar) < 1e-10);
        assert!(r.residual.abs() < 1e-9);
        assert_eq!(r.regime, Regime::Macro);
    }
    assert_eq!(classify_regime(&MassDensity::PointMass { mass: PROTON }, &k), Regime::Micro);
    assert_eq!(classify_regime(&MassDensity::UniformBall { mass: PROTON, radius: 1e-13 }, &k), Regime::Micro);
    let tr = transition_point(1.0, &k).unwrap();
    assert_eq!(classify_regime(&MassDensity::ball_with_density(1.0, tr.a_tr).unwrap(), &k), Regime::Transition);
}

#[test]
fn k_point_crossing_matches_closed_form() {
    // with threshold θ and ct/a → ∞: a_c = (θ/½Γ(−5/3))^{3/2} π³ ħ²/(G m³)
    let k = PhysicalConstants::cgs();
    let m = PROTON;
    for theta in [1.0, PI * PI] {
        let o = LocalizationOptions { threshold: theta, ..Default::default() };
        let r = solve_localization(Model::K, &MassDensity::PointMass { mass: m }, &o, &k).unwrap();
        let s = 0.5 * libm::tgamma(-5.0 / 3.0);
        let want = (theta / s).powf(1.5) * PI.powi(3) * k.hbar * k.hbar / (k.g * m.powi(3));
        assert!(rel(r.a_c, want) < 1e-9, "{} vs {want}", r.a_c);
    }
}

#[test]
fn saturation_is_out_of_range() {
    let k = PhysicalConstants::cgs();
    let o = LocalizationOptions { a_max: 1e10, ..Default::default() };
    let err = solve_localization(Model::K, &MassDensity::PointMass { mass: PROTON }, &o, &k).unwrap_err();
    assert!(matches!(err, Error::OutOfRange(_)));
}

#[test]
fn transition_point_self_consistency_and_density_scaling() {
    let k = PhysicalConstants::cgs();
    let t1 = transition_point(1.0, &k).unwrap();
    assert!(rel(t1.micro_a, t1.a_tr) < 1e-6 && rel(t1.macro_a, t1.a_tr) < 1e-6);
    // R^{10/3} ∝ 1/ρ
    let t2 = transition_point(1e4, &k).unwrap();
    let slope = (t2.a_tr / t1.a_tr).log10() / 4.0;
    assert!((slope + 0.3).abs() < 1e-12, "{slope}");
}

#[test]
fn solved_transition_sits_near_bare_law() {
    let k = PhysicalConstants::cgs();
    let bare = transition_point(1.0, &k).unwrap();
    let solved = transition_point_solved(Model::K, 1.0, &LocalizationOptions::default(), &k).unwrap();
    let ball = MassDensity::ball_with_density(1.0, solved.a_tr).unwrap();
    let r = solve_localization(Model::K, &ball, &LocalizationOptions::default(), &k).unwrap();
    assert!(rel(r.a_c, solved.a_tr) < 1e-8);
    assert!((solved.a_tr / bare.a_tr).log10().abs() < 1.0);
}

#[test]
fn survey_detects_mixed_regimes() {
    let k = PhysicalConstants::cgs();
    let grid = SurveyGrid::BallFixedDensity { density: 1.0, radii: vec![1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2] };
    let s = scaling_survey(Model::D, &grid, &LocalizationOptions::default(), &k).unwrap();
    assert!(s.warnings.iter().any(|w| w.contains("mixes regimes")));
    assert!(s.fit(Regime::Micro).is_some() && s.fit(Regime::Macro).is_some());
    let short = SurveyGrid::PointMass { masses: vec![1.0, 10.0] };
    assert!(scaling_survey(Model::K, &short, &LocalizationOptions::default(), &k).is_err());
}

#[test]
fn localization_is_unit_invariant() {
    let phys = PhysicalConstants::cgs();
    let us = UnitSystem::scaled(&phys);
    let internal = us.internal_constants(&phys);
    let cases = [
        (Model::K, MassDensity::PointMass { mass: PROTON }),
        (Model::K, MassDensity::UniformBall { mass: 4.18879, radius: 1.0 }),
        (Model::D, MassDensity::UniformBall { mass: PROTON, radius: 1e-13 }),
    ];
    for (model, d) in cases {
        let cgs = solve_localization(model, &d, &LocalizationOptions::default(), &phys).unwrap();
        let conv = match d {
            MassDensity::PointMass { mass } => MassDensity::PointMass { mass: us.mass(mass) },
            MassDensity::UniformBall { mass, radius } => MassDensity::UniformBall { mass: us.mass(mass), radius: us.length(radius) },
            _ => unreachable!(),
        };
        let o = LocalizationOptions { a_min: us.length(1e-30), a_max: us.length(1e30), ..Default::default() };
        let sc = solve_localization(model, &conv, &o, &internal).unwrap();
        assert!(rel(sc.a_c / us.length(1.0), cgs.a_c) < 1e-8, "{model:?}");
        assert!(rel(sc.tau_c / us.time(1.0), cgs.tau_c) < 1e-8);
    }
}
