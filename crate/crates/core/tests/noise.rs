use std::f64::consts::PI;
use std::sync::Arc;

use gravdec::noise::*;
use gravdec::{Error, PhysicalConstants};
use proptest::prelude::*;

fn unit() -> PhysicalConstants {
    PhysicalConstants::new(1.0, 1.0, 1.0).unwrap()
}

fn isotropic(n: usize, seed: u64) -> Arc<ModeSet> {
    let spec = ModeSetSpec::isotropic(0.05, 5.0, n, seed, RadialMeasure::Logarithmic);
    Arc::new(ModeSet::build(&spec, &unit()).unwrap())
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn amplitudes_follow_power_law() {
    assert_eq!(spectral_amplitude(1.0, 1.0), 1.0);
    assert!((spectral_amplitude(4.0, 1.0) / spectral_amplitude(1.0, 1.0) - 4f64.powf(-5.0 / 6.0)).abs() < 1e-15);
    assert!((4f64.powf(-5.0 / 6.0) - 0.315).abs() < 1e-3);
    let p = PhysicalConstants::cgs();
    let ms = ModeSet::build(&ModeSetSpec::isotropic(1e3, 1e6, 200, 1, RadialMeasure::Volume), &p).unwrap();
    for m in &ms.modes {
        let k = m.norm();
        assert!(k >= 1e3 && k <= 1e6);
        assert!((m.amplitude / (p.planck_length().powf(2.0 / 3.0) * k.powf(-5.0 / 6.0)) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn lattice_holds_integer_vectors() {
    let ms = ModeSet::build(&ModeSetSpec::lattice(1.0, 3.0, 2.0 * PI), &unit()).unwrap();
    // integer vectors with 1 <= |k|^2 <= 9, counted directly
    let mut expected = 0;
    for i in -3i32..=3 {
        for j in -3i32..=3 {
            for k in -3i32..=3 {
                let n2 = i * i + j * j + k * k;
                if (1..=9).contains(&n2) {
                    expected += 1;
                }
            }
        }
    }
    assert_eq!(ms.len(), expected);
    for m in &ms.modes {
        for c in m.k {
            assert!((c - c.round()).abs() < 1e-12);
        }
        assert!(m.norm() >= 1.0 - 1e-12 && m.norm() <= 3.0 + 1e-12);
    }
}

#[test]
fn build_rejects_bad_input() {
    let c = unit();
    let bad = ModeSetSpec::isotropic(0.0, 1.0, 10, 1, RadialMeasure::Volume);
    assert!(matches!(ModeSet::build(&bad, &c), Err(Error::Domain(_))));
    let bad = ModeSetSpec::isotropic(1.0, 1.0, 10, 1, RadialMeasure::Volume);
    assert!(matches!(ModeSet::build(&bad, &c), Err(Error::Domain(_))));
    let mut big = ModeSetSpec::isotropic(0.1, 1.0, 1000, 1, RadialMeasure::Volume);
    big.max_modes = 100;
    assert!(matches!(ModeSet::build(&big, &c), Err(Error::Resource(_))));
    let mut lat = ModeSetSpec::lattice(0.1, 10.0, 2.0 * PI);
    lat.max_modes = 1000;
    assert!(matches!(ModeSet::build(&lat, &c), Err(Error::Resource(_))));
}

#[test]
fn single_mode_translates_along_its_wavevector() {
    let ms = Arc::new(ModeSet::from_wavevectors(&[[0.6, 0.0, 0.8]], 1.0, &unit()).unwrap());
    let f = FieldRealization::new(ms, 9, 0, AmplitudeLaw::FixedModulus);
    let khat = [0.6, 0.0, 0.8];
    for d in [0.3, 1.7, 12.5] {
        let x = [0.2, -1.0, 0.4];
        let y = [x[0] + d * khat[0], x[1] + d * khat[1], x[2] + d * khat[2]];
        assert!((f.gamma(x, 0.5) - f.gamma(y, 0.5 + d)).abs() < 1e-12);
    }
}

#[test]
fn ensemble_mean_vanishes_and_variance_matches_quadrature() {
    let ms = isotropic(2048, 5);
    let n = 10_000;
    let x = [1.0, 2.0, -0.5];
    let g: Vec<f64> = (0..n)
        .map(|i| FieldRealization::new(ms.clone(), derive_seed(11, i), i, AmplitudeLaw::FixedModulus).gamma(x, 3.0))
        .collect();
    let (m, v) = mean_var(&g);
    assert!(m.abs() < 3.0 * (v / n as f64).sqrt(), "mean {m}");
    // (2/(2π)³)∫f² d³k by composite Simpson in ln k
    let (a, b) = (0.05f64.ln(), 5.0f64.ln());
    let steps = 2000;
    let h = (b - a) / steps as f64;
    let integrand = |u: f64| {
        let k = u.exp();
        2.0 / (8.0 * PI.powi(3)) * 4.0 * PI * k * k * k.powf(-5.0 / 3.0) * k
    };
    let mut oracle = integrand(a) + integrand(b);
    for i in 1..steps {
        oracle += integrand(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    oracle *= h / 3.0;
    assert!((oracle / ms.band_variance() - 1.0).abs() < 1e-9);
    let sigma = v * (2.0 / n as f64).sqrt();
    assert!((v - oracle).abs() < 3.0 * sigma, "{v} vs {oracle}");
}

#[test]
fn many_modes_give_gaussian_values() {
    let ms = isotropic(1024, 8);
    let n = 10_000;
    let g: Vec<f64> = (0..n)
        .map(|i| FieldRealization::new(ms.clone(), derive_seed(4, i), i, AmplitudeLaw::FixedModulus).gamma([0.0; 3], 0.0))
        .collect();
    let (m, v) = mean_var(&g);
    let k4 = g.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n as f64 / (v * v) - 3.0;
    assert!(k4.abs() < 3.0 * (24.0 / n as f64).sqrt(), "excess kurtosis {k4}");
}

#[test]
fn phase_statistics() {
    // <c> = 0 and <c²> = 0 for uniform phases: check via cos/sin moments of
    // a one-mode field at two spacetime points a quarter period apart
    let ms = Arc::new(ModeSet::from_wavevectors(&[[1.0, 0.0, 0.0]], 1.0, &unit()).unwrap());
    let n = 20_000;
    let (mut re, mut im, mut re2, mut cross) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        let f = FieldRealization::new(ms.clone(), derive_seed(2, i), i, AmplitudeLaw::FixedModulus);
        let a = f.gamma([0.0; 3], 0.0) / 2.0;
        let b = f.gamma([PI / 2.0, 0.0, 0.0], 0.0) / 2.0;
        re += a;
        im += b;
        re2 += a * a - b * b;
        cross += a * b;
    }
    let n = n as f64;
    let tol = 3.0 / n.sqrt();
    for v in [re / n, im / n, re2 / n, cross / n] {
        assert!(v.abs() < tol, "{v}");
    }
}

#[test]
fn correlation_is_stationary() {
    let ms = isotropic(512, 21);
    let n = 4000;
    let pairs = [([0.0, 0.0, 0.0], 0.0), ([10.0, -4.0, 7.0], 25.0)];
    let d = [1.0, 0.5, -0.5];
    let mut est = vec![];
    for (x, t) in pairs {
        let y = [x[0] + d[0], x[1] + d[1], x[2] + d[2]];
        let p: Vec<f64> = (0..n)
            .map(|i| {
                let f = FieldRealization::new(ms.clone(), derive_seed(6, i), i, AmplitudeLaw::FixedModulus);
                f.gamma(x, t) * f.gamma(y, t + 0.7)
            })
            .collect();
        est.push(mean_var(&p));
    }
    let se = ((est[0].1 + est[1].1) / n as f64).sqrt();
    assert!((est[0].0 - est[1].0).abs() < 3.0 * se);
}

#[test]
fn ensemble_record_round_trips_through_json() {
    let ms = isotropic(32, 1);
    let rec = EnsembleRecord {
        mode_set: (*ms).clone(),
        law: AmplitudeLaw::ComplexGaussian,
        seeds: (0..4).map(|i| derive_seed(1, i)).collect(),
    };
    let back: EnsembleRecord = serde_json::from_str(&serde_json::to_string(&rec).unwrap()).unwrap();
    assert_eq!(back, rec);
    let a = rec.realizations();
    let b = back.realizations();
    for (f, g) in a.iter().zip(&b) {
        assert_eq!(f.gamma([0.3, 0.1, 2.0], 4.0).to_bits(), g.gamma([0.3, 0.1, 2.0], 4.0).to_bits());
    }
}

#[test]
fn static_series_matches_pointwise() {
    let ms = isotropic(37, 3);
    let f = FieldRealization::new(ms, 5, 0, AmplitudeLaw::FixedModulus);
    let s = f.static_series([1.0, 0.0, 2.0], 0.5, 0.01, 5000);
    for i in [0usize, 1, 999, 4095, 4096, 4999] {
        assert!((s[i] - f.gamma([1.0, 0.0, 2.0], 0.5 + i as f64 * 0.01)).abs() < 1e-9);
    }
}

#[test]
fn white_potential_kernel_and_time_structure() {
    let c = unit();
    let w = WhiteNoisePotential::new(1.0, [4, 1, 1], 0.5, 13, &c).unwrap();
    assert!(matches!(w.sample([4, 0, 0], 0), Err(Error::Domain(_))));
    let n = 100_000u64;
    let (mut c02, mut c03, mut lag, mut var) = (0.0, 0.0, 0.0, 0.0);
    let mut prev = w.sample_step(0);
    for s in 1..=n {
        let v = w.sample_step(s);
        c02 += v[0] * v[2];
        c03 += v[0] * v[3];
        lag += v[1] * prev[1];
        var += v[1] * v[1];
        prev = v;
    }
    let n = n as f64;
    let dt = w.dt;
    assert!((c02 / n * dt / 0.5 - 1.0).abs() < 0.1);
    assert!((c03 / n * dt / (1.0 / 3.0) - 1.0).abs() < 0.1);
    let var = var / n;
    assert!((lag / n).abs() < 3.0 * var / n.sqrt());
    assert!((var * dt / unit_cube_mean_inverse_distance() - 1.0).abs() < 0.03);

    let w2 = WhiteNoisePotential::new(1.0, [4, 1, 1], 1.0, 13, &c).unwrap();
    let v2: f64 = (0..20_000).map(|s| w2.sample_step(s)[1].powi(2)).sum::<f64>() / 20_000.0;
    assert!((v2 / var - 0.5).abs() < 0.05, "{}", v2 / var);
    assert!(matches!(WhiteNoisePotential::new(1.0, [20, 20, 20], 1.0, 1, &c), Err(Error::Resource(_))));
}

#[test]
fn family_variance_examples() {
    let c = 1.0;
    let s1 = PowerFamilySpec::new(-0.5, -1.0, 0.0, 0.0, 1.0).unwrap();
    let a = family_sample_variance(&s1, 2.0, 10.0, c).unwrap();
    let b = family_sample_variance(&s1, 4.0, 40.0, c).unwrap();
    assert!((b / a - 2.0).abs() < 1e-12, "T/R scaling");
    let s2 = PowerFamilySpec::new(0.0, -4.0 / 3.0, 0.0, 0.0, 1.0).unwrap();
    let r = family_sample_variance(&s2, 1.0, 8.0, c).unwrap() / family_sample_variance(&s2, 1.0, 1.0, c).unwrap();
    assert!((r - 4.0).abs() < 1e-12);
    let mut s3 = s1;
    s3.k_const = 2.0;
    assert!((family_sample_variance(&s3, 2.0, 10.0, c).unwrap() / a - 4.0).abs() < 1e-12);
    assert!(matches!(PowerFamilySpec::new(0.0, 0.0, -1.0, 0.0, 1.0), Err(Error::Domain(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn realizations_are_pure(seed in any::<u64>(), x in prop::array::uniform3(-50.0f64..50.0), t in -10.0f64..10.0) {
        let ms = isotropic(64, 2);
        let a = FieldRealization::new(ms.clone(), seed, 0, AmplitudeLaw::FixedModulus);
        let b = FieldRealization::new(ms, seed, 0, AmplitudeLaw::FixedModulus);
        prop_assert_eq!(a.gamma(x, t).to_bits(), b.gamma(x, t).to_bits());
    }

    #[test]
    fn sampled_norms_stay_in_band(lo in 1e-3f64..1.0, ratio in 1.5f64..1e4, n in 1usize..300, seed in any::<u64>()) {
        for radial in [RadialMeasure::Volume, RadialMeasure::Logarithmic] {
            let ms = ModeSet::build(&ModeSetSpec::isotropic(lo, lo * ratio, n, seed, radial), &unit()).unwrap();
            prop_assert_eq!(ms.len(), n);
            for m in &ms.modes {
                prop_assert!(m.norm() >= lo * (1.0 - 1e-12) && m.norm() <= lo * ratio * (1.0 + 1e-12));
                prop_assert!(m.weight > 0.0);
            }
        }
    }
}
