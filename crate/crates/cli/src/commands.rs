use std::sync::Arc;

use gravdec::bounds::*;
use gravdec::correlation::*;
use gravdec::decoherence::*;
use gravdec::master::*;
use gravdec::noise::*;
use gravdec::{PhysicalConstants, UnitMode, UnitSystem};
use serde_json::json;

use crate::artifact::Output;
use crate::config::{RunConfig, SmearKind, SourceKind};
use crate::plot::{loglog, Series};
use crate::Failure;

fn internal(mode: UnitMode) -> (UnitSystem, PhysicalConstants) {
    let phys = PhysicalConstants::cgs();
    let u = UnitSystem::new(mode, &phys);
    (u, u.internal_constants(&phys))
}

fn logspace(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, Failure> {
    if !(lo > 0.0 && hi > lo && n >= 2) {
        return Err(Failure::Config(format!("need 0 < min < max and at least 2 points, got [{lo}, {hi}] × {n}")));
    }
    let (a, b) = (lo.log10(), hi.log10());
    Ok((0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

pub fn bound_mc(cfg: &RunConfig) -> Result<Output, Failure> {
    let b = &cfg.bound_mc;
    let (_, k) = internal(cfg.units);
    let s = logspace(b.s_min, b.s_max, b.points)?;
    let source = match b.source {
        SourceKind::Colored => {
            let seed = derive_seed(cfg.master_seed, 0x6d6f646573);
            FieldSource::Resampled(ModeSetSpec::isotropic(b.k_min, b.k_max, b.n_modes, seed, b.radial))
        }
        SourceKind::White => FieldSource::WhiteBall { steps: b.white_steps },
    };
    let smearing = match b.smearing {
        SmearKind::None => Smearing::None,
        SmearKind::Fixed => Smearing::Fixed { radius: b.radius },
        SmearKind::SelfConsistent => Smearing::SelfConsistent { tol: b.tol, max_iter: b.max_iter },
    };
    let exp = WorldlineExperiment {
        durations: s.iter().map(|v| v / k.c).collect(),
        n_realizations: b.n_realizations,
        source,
        smearing,
        quadrature: WorldlineQuadrature { rule: b.rule, max_phase_step: b.max_phase_step, min_intervals: 64 },
        law: AmplitudeLaw::FixedModulus,
        x0: [0.0; 3],
        master_seed: cfg.master_seed,
        constants: k,
    };
    let rep = k_bound_mc(&exp)?;
    let a = rep.fitted_exponent;
    let class = if (a - 1.0 / 3.0).abs() <= 0.05 {
        "cube_root"
    } else if (a - 0.5).abs() <= 0.05 {
        "square_root"
    } else {
        "other"
    };
    let mut summary = json!({
        "fitted_exponent": a,
        "fitted_prefactor": rep.fitted_prefactor,
        "exponent_class": class,
        "decades": rep.decades,
        "low_confidence": rep.low_confidence,
        "n_realizations": b.n_realizations,
        "warnings": rep.warnings,
    });
    if let Some(se) = rep.exponent_stderr {
        summary["exponent_stderr"] = json!(se);
    }
    let pts: Vec<(f64, f64)> = rep.points.iter().map(|p| (p.s, p.delta_s)).collect();
    let fit: Vec<(f64, f64)> = rep.points.iter().map(|p| (p.s, rep.fitted_prefactor * p.s.powf(a))).collect();
    let plot = loglog(
        "worldline length uncertainty",
        "s",
        "Δs",
        &[
            Series { label: "Monte Carlo".into(), points: pts, line: false },
            Series { label: format!("fit, exponent {a:.3}"), points: fit, line: true },
        ],
    );
    Ok(Output { tables: vec![("bound.csv".into(), rep.to_csv())], summary, plots: vec![("bound.svg".into(), plot)] })
}

/// Converts a CGS body into internal units.
fn body(u: &UnitSystem, d: &MassDensity) -> MassDensity {
    match *d {
        MassDensity::PointMass { mass } => MassDensity::PointMass { mass: u.mass(mass) },
        MassDensity::UniformBall { mass, radius } => MassDensity::UniformBall { mass: u.mass(mass), radius: u.length(radius) },
        MassDensity::Gaussian { mass, sigma } => MassDensity::Gaussian { mass: u.mass(mass), sigma: u.length(sigma) },
        MassDensity::Composite { ref parts } => MassDensity::Composite {
            parts: parts
                .iter()
                .map(|p| Component {
                    mass: u.mass(p.mass),
                    offset: p.offset.map(|x| u.length(x)),
                    shape: match p.shape {
                        Shape::Point => Shape::Point,
                        Shape::Ball { radius } => Shape::Ball { radius: u.length(radius) },
                        Shape::Gaussian { sigma } => Shape::Gaussian { sigma: u.length(sigma) },
                    },
                })
                .collect(),
        },
    }
}

pub fn localize(cfg: &RunConfig) -> Result<Output, Failure> {
    let l = &cfg.localize;
    let (u, k) = internal(cfg.units);
    let opts = LocalizationOptions { threshold: l.threshold, a_min: u.length(l.a_min_cm), a_max: u.length(l.a_max_cm), ..Default::default() };
    let ball = MassDensity::ball_with_density(l.ball_density, l.ball_radius)?;
    let bodies = [
        ("k_proton", Model::K, MassDensity::PointMass { mass: l.proton_mass }),
        ("k_ball", Model::K, ball.clone()),
        ("d_proton", Model::D, MassDensity::UniformBall { mass: l.proton_mass, radius: l.proton_radius }),
        ("d_ball", Model::D, ball),
    ];
    let mut csv = String::from("row,model,mass_g,radius_cm,a_c_cm,tau_c_s,regime\n");
    let mut rows = Vec::new();
    for (name, model, d) in bodies {
        let r = solve_localization(model, &body(&u, &d), &opts, &k)?;
        let (a, t) = (r.a_c * u.length_scale, r.tau_c * u.time_scale);
        csv.push_str(&format!("{name},{model:?},{:e},{:e},{a:e},{t:e},{}\n", d.total_mass(), d.size(), r.regime));
        rows.push(json!({"row": name, "a_c_cm": a, "tau_c_s": t, "regime": r.regime.to_string()}));
    }
    let rho = u.density(l.transition_density);
    let mut transitions = vec![("transition_bare", transition_point(rho, &k)?)];
    if l.solve_transition {
        transitions.push(("transition_solved_k", transition_point_solved(Model::K, rho, &opts, &k)?));
    }
    for (name, tp) in transitions {
        let (a, m, t) = (tp.a_tr * u.length_scale, tp.m_tr * u.mass_scale, tp.tau_tr * u.time_scale);
        csv.push_str(&format!("{name},K,{m:e},{a:e},{a:e},{t:e},transition\n"));
        rows.push(json!({"row": name, "a_c_cm": a, "m_g": m, "tau_c_s": t}));
    }
    let mut out = Output { tables: vec![("localization.csv".into(), csv)], ..Default::default() };
    let mut fits = Vec::new();
    if l.surveys {
        let n = l.survey_points;
        let surveys = [
            ("k_micro_mass", Model::K, "mass (g)", SurveyGrid::PointMass { masses: logspace(1e-24, 1e-21, n)? }),
            ("k_macro_radius", Model::K, "radius (cm)", SurveyGrid::BallFixedMass { mass: 1.0, radii: logspace(1e-2, 10.0, n)? }),
            ("k_macro_mass", Model::K, "mass (g)", SurveyGrid::BallFixedRadius { radius: 1.0, masses: logspace(0.1, 100.0, n)? }),
            ("d_macro_radius", Model::D, "radius (cm)", SurveyGrid::BallFixedMass { mass: 1.0, radii: logspace(1e-2, 10.0, n)? }),
            (
                "d_micro_radius",
                Model::D,
                "radius (cm)",
                SurveyGrid::BallFixedMass { mass: l.proton_mass, radii: logspace(1e-16, 1e-13, n)? },
            ),
        ];
        for (name, model, xlabel, grid) in surveys {
            let (ig, xs) = match &grid {
                SurveyGrid::PointMass { masses } => (SurveyGrid::PointMass { masses: masses.iter().map(|m| u.mass(*m)).collect() }, u.mass_scale),
                SurveyGrid::BallFixedRadius { radius, masses } => (
                    SurveyGrid::BallFixedRadius { radius: u.length(*radius), masses: masses.iter().map(|m| u.mass(*m)).collect() },
                    u.mass_scale,
                ),
                SurveyGrid::BallFixedMass { mass, radii } => (
                    SurveyGrid::BallFixedMass { mass: u.mass(*mass), radii: radii.iter().map(|r| u.length(*r)).collect() },
                    u.length_scale,
                ),
                SurveyGrid::BallFixedDensity { density, radii } => (
                    SurveyGrid::BallFixedDensity { density: u.density(*density), radii: radii.iter().map(|r| u.length(*r)).collect() },
                    u.length_scale,
                ),
            };
            let res = scaling_survey(model, &ig, &opts, &k)?;
            let mut table = String::from("x,mass_g,radius_cm,a_c_cm,tau_c_s,regime\n");
            let mut pts = Vec::new();
            for r in &res.rows {
                let (x, a) = (r.x * xs, r.a_c * u.length_scale);
                table.push_str(&format!(
                    "{x:e},{:e},{:e},{a:e},{:e},{}\n",
                    r.mass * u.mass_scale,
                    r.radius * u.length_scale,
                    r.tau_c * u.time_scale,
                    r.regime
                ));
                pts.push((x, a));
            }
            for f in &res.fits {
                fits.push(json!({"survey": name, "regime": f.regime.to_string(), "slope": f.slope, "slope_stderr": f.slope_stderr, "n": f.n}));
            }
            out.tables.push((format!("survey_{name}.csv"), table));
            out.plots.push((
                format!("survey_{name}.svg"),
                loglog(&format!("{model:?} model, {name}"), xlabel, "a_c (cm)", &[Series { label: "a_c".into(), points: pts, line: false }]),
            ));
        }
    }
    out.summary = json!({"threshold_rad2": l.threshold, "rows": rows, "survey_fits": fits});
    Ok(out)
}

pub fn correlation(cfg: &RunConfig) -> Result<Output, Failure> {
    let c = &cfg.correlation;
    let (_, k) = internal(cfg.units);
    let ensemble: Vec<FieldRealization> = (0..c.n_realizations as u64)
        .map(|i| {
            let spec = ModeSetSpec::isotropic(c.k_min, c.k_max, c.n_modes, derive_seed(cfg.master_seed, 2 * i), RadialMeasure::Logarithmic);
            Ok(FieldRealization::new(
                Arc::new(ModeSet::build(&spec, &k)?),
                derive_seed(cfg.master_seed, 2 * i + 1),
                i,
                AmplitudeLaw::FixedModulus,
            ))
        })
        .collect::<Result<_, gravdec::Error>>()?;
    let mut lags = Vec::new();
    for &r in &c.r_values {
        for &tau in &c.tau_values {
            lags.push(Lag { r, tau });
        }
    }
    let eopts = EstimatorOptions {
        points_per_realization: c.points_per_realization,
        region: c.region,
        seed: derive_seed(cfg.master_seed, u64::MAX),
        band_factor: c.band_factor,
    };
    let est = estimate_correlation(&ensemble, &lags, &eopts)?;
    let mut csv = String::from("r,tau,analytic,oracle,band_expectation,estimate,stderr,n,in_band,z\n");
    let (mut worst_oracle, mut worst_z) = (0.0f64, 0.0f64);
    for (i, lag) in lags.iter().enumerate() {
        let off_cone = lag.r > 0.0 && (lag.r - k.c * lag.tau.abs()).abs() > 1e-9 * lag.r;
        let analytic = if off_cone { Some(k_kernel(lag.r, lag.tau, &k)?) } else { None };
        let oracle = if off_cone { Some(k_kernel_oracle(lag.r, lag.tau, &k)?) } else { None };
        if let (Some(a), Some(o)) = (analytic, oracle) {
            worst_oracle = worst_oracle.max((a / o - 1.0).abs());
        }
        let band = k_kernel_band(lag.r, lag.tau, c.k_min, c.k_max, &k)?;
        let z = match (est.values[i], est.stderr[i]) {
            (Some(v), Some(se)) if se > 0.0 => Some((v - band) / se),
            _ => None,
        };
        if let Some(z) = z {
            worst_z = worst_z.max(z.abs());
        }
        csv.push_str(&format!(
            "{:e},{:e},{},{},{band:e},{},{},{},{},{}\n",
            lag.r,
            lag.tau,
            opt(analytic),
            opt(oracle),
            opt(est.values[i]),
            opt(est.stderr[i]),
            est.n_realizations,
            est.in_band[i],
            opt(z)
        ));
    }
    let curve: Vec<(f64, f64)> = (0..60)
        .map(|i| {
            let r = est.band.lo * (est.band.hi / est.band.lo).powf(i as f64 / 59.0);
            (r, k_kernel(r, 0.0, &k).unwrap_or(f64::NAN))
        })
        .collect();
    let marks: Vec<(f64, f64)> = lags
        .iter()
        .zip(&est.values)
        .filter(|(l, v)| l.tau == 0.0 && v.is_some())
        .map(|(l, v)| (l.r, v.unwrap()))
        .collect();
    let plot = loglog(
        "equal-time correlation",
        "r",
        "C(r, 0)",
        &[
            Series { label: "analytic".into(), points: curve, line: true },
            Series { label: "ensemble".into(), points: marks, line: false },
        ],
    );
    Ok(Output {
        tables: vec![("correlation.csv".into(), csv)],
        summary: json!({
            "band": {"lo": est.band.lo, "hi": est.band.hi},
            "n_realizations": est.n_realizations,
            "in_band_lags": est.in_band.iter().filter(|b| **b).count(),
            "worst_oracle_relative": worst_oracle,
            "worst_in_band_z": worst_z,
        }),
        plots: vec![("correlation.svg".into(), plot)],
    })
}

pub fn master(cfg: &RunConfig) -> Result<Output, Failure> {
    let m = &cfg.master;
    let (_, k) = internal(cfg.units);
    if m.grid_points < 2 {
        return Err(Failure::Config("master.grid_points must be at least 2".into()));
    }
    let x: Vec<f64> = (0..m.grid_points).map(|i| m.spacing * i as f64).collect();
    let mut markov = String::from("density,separation,lambda,decay_rate,variance_rate,ratio\n");
    let mut memory = String::from("density,t,separation,ln_ratio,minus_half_variance,relative_deviation\n");
    let mut ratios = Vec::new();
    let mut worst = 0.0f64;
    let mut warnings = Vec::new();
    let mut monitors_ok = true;
    let mut series = Vec::new();
    for (idx, d) in m.densities.iter().enumerate() {
        let s0 = DensityMatrixGrid::uniform(x.clone(), d.clone())?;
        let f = d_decoherence_functional(&x, d, &k)?;
        let dt = m.markov_step_fraction / f.max_rate();
        let ev = evolve_markovian(&s0, &f, m.hamiltonian, dt, m.markov_steps, &EvolveOptions::default(), &k)?;
        monitors_ok &= ev.monitor.ok();
        warnings.extend(ev.monitor.warnings.iter().map(|w| format!("density {idx}, Markovian: {w}")));
        let t = ev.state.t;
        for j in 1..x.len() {
            let rate = -(ev.state.rho[(0, j)].norm() / s0.rho[(0, j)].norm()).ln() / t;
            let vr = d_phase_variance(d, x[j], t, &k)? / t;
            ratios.push(rate / vr);
            markov.push_str(&format!("{idx},{:e},{:e},{rate:e},{vr:e},{:e}\n", x[j], f.lambda[0][j], rate / vr));
        }
        let mopts = MemoryOptions { snapshots: m.snapshots, ..Default::default() };
        let mem = evolve_nonmarkovian_k(&s0, m.hamiltonian, m.t_final, m.dt, &mopts, &k)?;
        monitors_ok &= mem.evolution.monitor.ok();
        warnings.extend(mem.evolution.monitor.warnings.iter().map(|w| format!("density {idx}, memory: {w}")));
        let mut last = Vec::new();
        for snap in &mem.evolution.snapshots {
            for j in 1..x.len() {
                let got = (snap.rho[(0, j)].norm() / s0.rho[(0, j)].norm()).ln();
                let want = -0.5 * k_phase_variance(d, x[j], snap.t, None, &k)?;
                let dev = (got / want - 1.0).abs();
                worst = worst.max(dev);
                memory.push_str(&format!("{idx},{:e},{:e},{got:e},{want:e},{dev:e}\n", snap.t, x[j]));
                last.push((x[j], -got));
            }
            if snap.t < mem.evolution.state.t {
                last.clear();
            }
        }
        series.push(Series { label: format!("density {idx}"), points: last, line: true });
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len().max(1) as f64;
    let spread = ratios.iter().map(|r| (r / mean - 1.0).abs()).fold(0.0, f64::max);
    let verdict = if worst <= m.conjecture_tolerance { "holds" } else { "fails" };
    let plot = loglog("memory evolution at the final time", "separation", "−ln|ρ(a,t)/ρ(a,0)|", &series);
    Ok(Output {
        tables: vec![("markovian.csv".into(), markov), ("memory.csv".into(), memory)],
        summary: json!({
            "equivalence": {"mean_ratio": mean, "max_relative_spread": spread, "convention": "Lambda t = Var/2"},
            "conjecture": {"max_relative_deviation": worst, "tolerance": m.conjecture_tolerance, "verdict": verdict},
            "monitors_ok": monitors_ok,
            "warnings": warnings,
        }),
        plots: vec![("memory.svg".into(), plot)],
    })
}

pub fn family(cfg: &RunConfig) -> Result<Output, Failure> {
    let f = &cfg.family;
    let (_, k) = internal(cfg.units);
    let opts = FamilyCheckOptions {
        s_values: logspace(f.s_min, f.s_max, f.points)?,
        mc_samples: f.mc_samples,
        seed: cfg.master_seed,
        tolerance: f.tolerance,
    };
    let mut csv = String::from(
        "j,m,n1,n2,k_const,algebraic_exponent,predicate,closed_form_exponent,mc_exponent,fitted_exponent,satisfies_bound\n",
    );
    let mut mismatches = 0;
    for spec in &f.specs {
        let r = family_check(spec, &opts, &k)?;
        if r.predicate != r.satisfies_bound {
            mismatches += 1;
        }
        csv.push_str(&format!(
            "{},{},{},{},{},{:e},{},{:e},{},{:e},{}\n",
            spec.j,
            spec.m,
            spec.n1,
            spec.n2,
            spec.k_const,
            r.algebraic_exponent,
            r.predicate,
            r.closed_form_exponent,
            opt(r.mc_exponent),
            r.fitted_exponent,
            r.satisfies_bound
        ));
    }
    // m on the constraint surface 1 − j = (3/2)(m + n1 + n2 + 2) for n1 = n2 = 0
    let mut surface = String::from("j,m_required\n");
    for i in 0..=20 {
        let j = -1.0 + 0.1 * i as f64;
        surface.push_str(&format!("{j:.1},{:e}\n", (1.0 - j) / 1.5 - 2.0));
    }
    Ok(Output {
        tables: vec![("family.csv".into(), csv), ("constraint_surface.csv".into(), surface)],
        summary: json!({"specs": f.specs.len(), "flag_predicate_mismatches": mismatches}),
        plots: Vec::new(),
    })
}
