//! Mass densities, phase-variance engines for both models, and the
//! localization solver.

use std::f64::consts::PI;
use std::sync::{Arc, LazyLock};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::WorldlineQuadrature;
use crate::error::{domain, ensure_positive, Error, Result};
use crate::noise::{ball_form_factor, derive_seed, sinc, AmplitudeLaw, FieldRealization, ModeSet, ModeSetSpec, RadialMeasure};
use crate::quadrature::{adaptive_breaks, integrate_log, Tolerance};
use crate::stats::{fit_power_law, jackknife, variance, NeumaierSum};
use crate::units::PhysicalConstants;

static GAMMA_M53: LazyLock<f64> = LazyLock::new(|| libm::tgamma(-5.0 / 3.0));
static GAMMA_43: LazyLock<f64> = LazyLock::new(|| libm::tgamma(4.0 / 3.0));

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Point,
    Ball { radius: f64 },
    Gaussian { sigma: f64 },
}

impl Shape {
    /// Normalized form factor (1 at k = 0).
    pub fn factor(&self, k: f64) -> f64 {
        match *self {
            Shape::Point => 1.0,
            Shape::Ball { radius } => ball_form_factor(k * radius),
            Shape::Gaussian { sigma } => (-0.5 * (k * sigma).powi(2)).exp(),
        }
    }

    pub fn size(&self) -> f64 {
        match *self {
            Shape::Point => 0.0,
            Shape::Ball { radius } => radius,
            Shape::Gaussian { sigma } => sigma,
        }
    }

    /// Density per unit mass at distance r from the center; zero for a point.
    pub fn density(&self, r: f64) -> f64 {
        match *self {
            Shape::Point => 0.0,
            Shape::Ball { radius } => {
                if r <= radius {
                    3.0 / (4.0 * PI * radius.powi(3))
                } else {
                    0.0
                }
            }
            Shape::Gaussian { sigma } => {
                (2.0 * PI * sigma * sigma).powf(-1.5) * (-0.5 * (r / sigma).powi(2)).exp()
            }
        }
    }

    /// Wavenumber beyond which the form factor is negligible.
    fn cutoff(&self) -> f64 {
        match *self {
            Shape::Point => f64::INFINITY,
            Shape::Ball { radius } => 1e3 / radius,
            Shape::Gaussian { sigma } => 12.0 / sigma,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Shape::Point => Ok(()),
            Shape::Ball { radius } => ensure_positive("radius", radius),
            Shape::Gaussian { sigma } => ensure_positive("sigma", sigma),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub mass: f64,
    pub offset: [f64; 3],
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MassDensity {
    PointMass { mass: f64 },
    UniformBall { mass: f64, radius: f64 },
    Gaussian { mass: f64, sigma: f64 },
    Composite { parts: Vec<Component> },
}

impl MassDensity {
    pub fn ball_with_density(density: f64, radius: f64) -> Result<Self> {
        ensure_positive("density", density)?;
        ensure_positive("radius", radius)?;
        Ok(MassDensity::UniformBall { mass: density * 4.0 * PI / 3.0 * radius.powi(3), radius })
    }

    pub fn components(&self) -> Vec<Component> {
        let one = |mass, shape| vec![Component { mass, offset: [0.0; 3], shape }];
        match self {
            MassDensity::PointMass { mass } => one(*mass, Shape::Point),
            MassDensity::UniformBall { mass, radius } => one(*mass, Shape::Ball { radius: *radius }),
            MassDensity::Gaussian { mass, sigma } => one(*mass, Shape::Gaussian { sigma: *sigma }),
            MassDensity::Composite { parts } => parts.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = self.components();
        if parts.is_empty() {
            return Err(domain("composite density has no parts"));
        }
        for p in &parts {
            ensure_positive("mass", p.mass)?;
            p.shape.validate()?;
            if !p.offset.iter().all(|v| v.is_finite()) {
                return Err(domain("component offsets must be finite"));
            }
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.components().iter().map(|c| c.mass).sum()
    }

    /// Radius of the smallest origin-centered ball holding every part's
    /// characteristic size.
    pub fn size(&self) -> f64 {
        self.components().iter().map(|c| norm(c.offset) + c.shape.size()).fold(0.0, f64::max)
    }

    pub fn is_point(&self) -> bool {
        matches!(self, MassDensity::PointMass { .. })
    }

    pub fn has_point_part(&self) -> bool {
        self.components().iter().any(|c| c.shape == Shape::Point)
    }

    /// ĝ(k) = Σ m_i e^{i k·x_i} s_i(|k|).
    pub fn form_factor_vec(&self, k: [f64; 3]) -> Complex64 {
        let kn = norm(k);
        self.components()
            .iter()
            .map(|c| Complex64::from_polar(c.mass * c.shape.factor(kn), dot(k, c.offset)))
            .sum()
    }

    /// Direction average of |ĝ|².
    pub fn form_factor_sq(&self, k: f64) -> f64 {
        match self {
            MassDensity::Composite { parts } => {
                let mut acc = NeumaierSum::new();
                for a in parts {
                    for b in parts {
                        let d = norm(sub(a.offset, b.offset));
                        acc.add(a.mass * b.mass * a.shape.factor(k) * b.shape.factor(k) * sinc(k * d));
                    }
                }
                acc.value().max(0.0)
            }
            _ => {
                let c = self.components()[0];
                (c.mass * c.shape.factor(k)).powi(2)
            }
        }
    }

    /// Real form factor; for composites, the root of the direction-averaged
    /// |ĝ|².
    pub fn form_factor(&self, k: f64) -> f64 {
        match self {
            MassDensity::Composite { .. } => self.form_factor_sq(k).sqrt(),
            _ => {
                let c = self.components()[0];
                c.mass * c.shape.factor(k)
            }
        }
    }

    /// Smooth part of ρ(x); point parts contribute nothing.
    pub fn density_at(&self, x: [f64; 3]) -> f64 {
        self.components().iter().map(|c| c.mass * c.shape.density(norm(sub(x, c.offset)))).sum()
    }

    fn cutoff(&self) -> f64 {
        self.components().iter().map(|c| c.shape.cutoff()).fold(0.0, f64::max)
    }
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn one_minus_sinc(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        let x2 = x * x;
        x2 / 6.0 * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0))
    } else {
        1.0 - x.sin() / x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    K,
    D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Micro,
    Transition,
    Macro,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Micro => "micro",
            Regime::Transition => "transition",
            Regime::Macro => "macro",
        })
    }
}

/// ∫₀^∞ u^{-5/3} (1 − sinc u)(1 − cos wu) du in closed form, by analytic
/// continuation of the Mellin transforms of sin and cos.
pub fn point_kernel_integral(w: f64) -> f64 {
    let g = *GAMMA_M53;
    if w > 1e3 {
        // odd binomial terms left after the w^{2/3} pieces cancel
        let mut s = 0.0;
        let mut binom = 5.0 / 3.0;
        for n in 1..=15 {
            let nf = n as f64;
            if n > 1 {
                binom *= (5.0 / 3.0 - (nf - 1.0)) / nf;
            }
            if n >= 3 && n % 2 == 1 {
                s += binom * w.powf(5.0 / 3.0 - nf);
            }
        }
        return 0.5 * g * (1.0 - s);
    }
    let p = |x: f64| x.powf(5.0 / 3.0);
    let d = if w >= 1.0 { p(1.0 + w) - p(w - 1.0) } else { p(1.0 + w) + p(1.0 - w) };
    0.5 * g * (5.0 / 3.0 * w.powf(2.0 / 3.0) + 1.0 - 0.5 * d)
}

/// Upper limit on uniform panels in the direct oscillatory quadrature.
const PANEL_CAP: usize = 400_000;

/// ∫_lo^hi F(k)·2sin²(ωk/2) dk, resolving oscillations at frequency `nu`.
/// A `lo` of zero is replaced by a tiny cutoff with the k → 0 limit
/// F ≈ c0 k^{1/3} added analytically.
fn direct_oscillatory<F: Fn(f64) -> f64>(f: F, omega: f64, nu: f64, lo: f64, hi: f64, c0: f64, scale: f64) -> Result<f64> {
    let (start, head) = if lo > 0.0 {
        (lo, 0.0)
    } else {
        let k0 = 1e-8 * (1.0 / scale).min(1.0 / omega);
        (k0, 0.15 * c0 * omega * omega * k0.powf(10.0 / 3.0))
    };
    if hi <= start {
        return Ok(head);
    }
    let period = 2.0 * PI / nu;
    let panels = ((hi - period.max(start)) / period).max(0.0).ceil();
    if panels > PANEL_CAP as f64 {
        return Err(Error::Numerical(format!(
            "phase-variance integrand needs {panels:e} oscillation panels on [{start:e}, {hi:e}] (cap {PANEL_CAP}); \
             narrow the band or use the asymptotic regime"
        )));
    }
    let mut breaks = Vec::new();
    let switch = period.clamp(start, hi);
    let mut k = start;
    while k < switch {
        breaks.push(k);
        k *= 10.0;
    }
    breaks.push(switch);
    let n = panels as usize;
    for i in 1..=n {
        let b = (switch + i as f64 * period).min(hi);
        if b > *breaks.last().unwrap() {
            breaks.push(b);
        }
    }
    if *breaks.last().unwrap() < hi {
        breaks.push(hi);
    }
    let tol = Tolerance { abs: 0.0, rel: 1e-10, max_intervals: breaks.len() + 50_000 };
    let v = adaptive_breaks(
        |k| {
            let s = (0.5 * omega * k).sin();
            f(k) * 2.0 * s * s
        },
        &breaks,
        tol,
    )?;
    Ok(head + v.value)
}

/// ∫_lo^hi k^{-5/3} |ĝ|² (1 − sinc ka)(1 − cos ωk) dk.
fn k_integral(d: &MassDensity, a: f64, omega: f64, lo: f64, hi: f64) -> Result<f64> {
    if a == 0.0 || omega == 0.0 || hi <= lo {
        return Ok(0.0);
    }
    let m2 = d.total_mass().powi(2);
    let c0 = m2 * a * a / 6.0;
    let f = |k: f64| k.powf(-5.0 / 3.0) * d.form_factor_sq(k) * one_minus_sinc(k * a);
    if d.is_point() {
        let nu = omega.max(a);
        if hi.is_infinite() {
            let full = m2 * a.powf(2.0 / 3.0) * point_kernel_integral(omega / a);
            if lo == 0.0 {
                return Ok(full);
            }
            return Ok(full - direct_oscillatory(f, omega, nu, 0.0, lo, c0, a)?);
        }
        return direct_oscillatory(f, omega, nu, lo, hi, c0, a);
    }
    if d.has_point_part() {
        return Err(Error::RegularizationRequired(
            "K-model quadrature for composite densities needs finite-size parts".into(),
        ));
    }
    let size = d.size();
    let top = hi.min(d.cutoff());
    let len = a.max(size);
    if lo == 0.0 && hi >= d.cutoff() && omega >= 1e3 * len {
        // 1 − cos ωk → 1 up to the k → 0 end-point term of ∫F cos ωk
        let k0 = 1e-8 / len;
        let s = 0.75 * c0 * k0.powf(4.0 / 3.0) + integrate_log(&f, k0, top, Tolerance::rel(1e-10))?.value;
        let o = c0 * *GAMMA_43 * (2.0 * PI / 3.0).cos() * omega.powf(-4.0 / 3.0);
        return Ok(s - o);
    }
    let nu = omega.max(a).max(2.0 * size);
    direct_oscillatory(f, omega, nu, lo, top, c0, len)
}

fn k_prefactor(consts: &PhysicalConstants) -> f64 {
    consts.c * consts.c * consts.planck_length().powf(4.0 / 3.0) / (PI * PI * consts.hbar * consts.hbar)
}

/// Var(a, t) = (c² l_p^{4/3}/(π²ħ²)) ∫ k^{-5/3} ĝ² (1 − cos ckt)(1 − sinc ka) dk
/// over `band` (default (0, ∞)).
pub fn k_phase_variance(
    d: &MassDensity,
    a: f64,
    t: f64,
    band: Option<(f64, f64)>,
    consts: &PhysicalConstants,
) -> Result<f64> {
    d.validate()?;
    if !(a >= 0.0 && t >= 0.0) {
        return Err(domain("separation and time must be nonnegative"));
    }
    let (lo, hi) = band.unwrap_or((0.0, f64::INFINITY));
    if !(lo >= 0.0 && hi > lo) {
        return Err(domain(format!("invalid band ({lo}, {hi})")));
    }
    Ok(k_prefactor(consts) * k_integral(d, a, consts.c * t, lo, hi)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseMcOptions {
    pub n_realizations: usize,
    pub n_modes: usize,
    pub k_min: f64,
    pub k_max: f64,
    pub seed: u64,
    pub quadrature: WorldlineQuadrature,
    pub law: AmplitudeLaw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// Ensemble oracle for the K phase variance: fresh isotropic modes per
/// realization, the phase at both ends integrated by time quadrature.
pub fn k_phase_variance_mc(
    d: &MassDensity,
    a: f64,
    t: f64,
    opts: &PhaseMcOptions,
    consts: &PhysicalConstants,
) -> Result<McEstimate> {
    d.validate()?;
    ensure_positive("t", t)?;
    if opts.n_realizations < 2 {
        return Err(domain("the ensemble oracle needs at least two realizations"));
    }
    let m = d.total_mass();
    let coupling = m * consts.c * consts.c / (2.0 * consts.hbar);
    let n = opts.quadrature.intervals(consts.c * opts.k_max, t);
    let h = t / n as f64;
    let w = opts.quadrature.weights(n);
    let diffs: Vec<f64> = (0..opts.n_realizations)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let spec = ModeSetSpec::isotropic(
                opts.k_min,
                opts.k_max,
                opts.n_modes,
                derive_seed(opts.seed, 2 * i as u64),
                RadialMeasure::Logarithmic,
            );
            let ms = Arc::new(ModeSet::build(&spec, consts)?);
            let field = FieldRealization::new(ms, derive_seed(opts.seed, 2 * i as u64 + 1), i as u64, opts.law)
                .filtered(|k| d.form_factor(k) / m);
            let g1 = field.static_series([0.0; 3], 0.0, h, n + 1);
            let g2 = field.static_series([0.0, 0.0, a], 0.0, h, n + 1);
            let s: NeumaierSum = g1.iter().zip(&g2).enumerate().map(|(j, (x, y))| w(j) * (x - y)).collect();
            Ok(-coupling * h * s.value())
        })
        .collect::<Result<_>>()?;
    Ok(McEstimate { value: variance(&diffs), stderr: jackknife(&diffs, 50, variance).unwrap_or(f64::NAN) })
}

/// Mutual gravitational integral of two parts whose centers are `dist` apart.
fn pair_w(p: &Component, q: &Component, dist: f64) -> Result<f64> {
    let mm = p.mass * q.mass;
    let far = |reach: f64| dist >= reach;
    match (p.shape, q.shape) {
        (Shape::Point, Shape::Point) => {
            if dist == 0.0 {
                Err(Error::RegularizationRequired(
                    "point-mass self-energy diverges in the D-model; give the particle a finite radius".into(),
                ))
            } else {
                Ok(mm / dist)
            }
        }
        (Shape::Point, Shape::Ball { radius }) | (Shape::Ball { radius }, Shape::Point) => {
            if far(radius) {
                Ok(mm / dist)
            } else {
                Ok(mm * (3.0 * radius * radius - dist * dist) / (2.0 * radius.powi(3)))
            }
        }
        (Shape::Point, Shape::Gaussian { sigma }) | (Shape::Gaussian { sigma }, Shape::Point) => {
            Ok(gaussian_mutual(mm, sigma * sigma, dist))
        }
        (Shape::Gaussian { sigma: s1 }, Shape::Gaussian { sigma: s2 }) => Ok(gaussian_mutual(mm, s1 * s1 + s2 * s2, dist)),
        (Shape::Ball { radius: r1 }, Shape::Ball { radius: r2 }) if r1 == r2 => {
            if far(2.0 * r1) {
                Ok(mm / dist)
            } else {
                let x = dist / r1;
                Ok(mm / r1 * (1.2 - x * x / 2.0 + 3.0 * x.powi(3) / 16.0 - x.powi(5) / 160.0))
            }
        }
        (Shape::Ball { radius: r1 }, Shape::Ball { radius: r2 }) if far(r1 + r2) => Ok(mm / dist),
        _ => spectral_mutual(p, q, dist),
    }
}

fn gaussian_mutual(mm: f64, s2: f64, dist: f64) -> f64 {
    let w = (2.0 * s2).sqrt();
    if dist < 1e-8 * w {
        mm * 2.0 / (PI.sqrt() * w)
    } else {
        mm * libm::erf(dist / w) / dist
    }
}

/// W(d) = (2/π) ∫₀^∞ ĝ_p ĝ_q sinc(kd) dk.
fn spectral_mutual(p: &Component, q: &Component, dist: f64) -> Result<f64> {
    let top = p.shape.cutoff().min(q.shape.cutoff());
    let scale = p.shape.size().max(q.shape.size()).max(dist);
    let k0 = 1e-10 / scale;
    let f = |k: f64| p.mass * q.mass * p.shape.factor(k) * q.shape.factor(k) * sinc(k * dist);
    let v = if dist > 0.0 {
        direct_plain(&f, 2.0 * PI / dist, k0, top)?
    } else {
        integrate_log(&f, k0, top, Tolerance::rel(1e-11))?.value
    };
    Ok(2.0 / PI * (v + p.mass * q.mass * k0))
}

fn direct_plain<F: Fn(f64) -> f64>(f: &F, period: f64, lo: f64, hi: f64) -> Result<f64> {
    let mut breaks = Vec::new();
    let mut k = lo;
    while k < period.min(hi) {
        breaks.push(k);
        k *= 10.0;
    }
    let mut k = period.clamp(lo, hi);
    while k < hi && breaks.len() < PANEL_CAP {
        breaks.push(k);
        k += period;
    }
    breaks.push(hi);
    Ok(adaptive_breaks(f, &breaks, Tolerance { abs: 0.0, rel: 1e-11, max_intervals: breaks.len() + 50_000 })?.value)
}

/// W(a) for the configuration displaced by a along z.
pub fn mutual_integral(d: &MassDensity, a: f64) -> Result<f64> {
    d.validate()?;
    let parts = d.components();
    let mut acc = NeumaierSum::new();
    for p in &parts {
        for q in &parts {
            let sep = sub(p.offset, q.offset);
            acc.add(pair_w(p, q, norm([sep[0], sep[1], sep[2] - a]))?);
        }
    }
    Ok(acc.value())
}

/// Var = t (G/ħ) · 2[W(0) − W(a)].
pub fn d_phase_variance(d: &MassDensity, a: f64, t: f64, consts: &PhysicalConstants) -> Result<f64> {
    if !(a >= 0.0 && t >= 0.0) {
        return Err(domain("separation and time must be nonnegative"));
    }
    let delta = d_decoherence_delta(d, a)?;
    Ok(t * consts.g / consts.hbar * delta)
}

/// 2/√π − erf(u)/u, with its series near zero.
fn gaussian_gap(u: f64) -> f64 {
    let c = 2.0 / PI.sqrt();
    if u < 1e-2 {
        let u2 = u * u;
        c * u2 * (1.0 / 3.0 - u2 / 10.0 + u2 * u2 / 42.0)
    } else {
        c - libm::erf(u) / u
    }
}

/// W_pq(d0) − W_pq(d1), formed without subtracting nearly equal totals
/// where a closed form allows.
fn pair_delta(p: &Component, q: &Component, d0: f64, d1: f64) -> Result<f64> {
    let mm = p.mass * q.mass;
    match (p.shape, q.shape) {
        (Shape::Ball { radius: r1 }, Shape::Ball { radius: r2 }) if r1 == r2 && d0 < 2.0 * r1 && d1 < 2.0 * r1 => {
            let (x0, x1) = (d0 / r1, d1 / r1);
            let pd = |n: i32| x1.powi(n) - x0.powi(n);
            Ok(mm / r1 * (pd(2) / 2.0 - 3.0 * pd(3) / 16.0 + pd(5) / 160.0))
        }
        (Shape::Point, Shape::Ball { radius }) | (Shape::Ball { radius }, Shape::Point) if d0 < radius && d1 < radius => {
            Ok(mm * (d1 - d0) * (d1 + d0) / (2.0 * radius.powi(3)))
        }
        (Shape::Gaussian { sigma: s1 }, Shape::Gaussian { sigma: s2 }) => {
            let w = (2.0 * (s1 * s1 + s2 * s2)).sqrt();
            Ok(mm / w * (gaussian_gap(d1 / w) - gaussian_gap(d0 / w)))
        }
        (Shape::Point, Shape::Gaussian { sigma }) | (Shape::Gaussian { sigma }, Shape::Point) => {
            let w = sigma * 2f64.sqrt();
            Ok(mm / w * (gaussian_gap(d1 / w) - gaussian_gap(d0 / w)))
        }
        _ => Ok(pair_w(p, q, d0)? - pair_w(p, q, d1)?),
    }
}

/// Δ(a) = 2[W(0) − W(a)] ≥ 0.
pub fn d_decoherence_delta(d: &MassDensity, a: f64) -> Result<f64> {
    d.validate()?;
    let parts = d.components();
    let mut acc = NeumaierSum::new();
    for p in &parts {
        for q in &parts {
            let sep = sub(p.offset, q.offset);
            acc.add(pair_delta(p, q, norm(sep), norm([sep[0], sep[1], sep[2] - a]))?);
        }
    }
    if a == 0.0 {
        return Ok(0.0);
    }
    Ok((2.0 * acc.value()).max(0.0))
}

pub fn phase_variance(
    model: Model,
    d: &MassDensity,
    a: f64,
    t: f64,
    band: Option<(f64, f64)>,
    consts: &PhysicalConstants,
) -> Result<f64> {
    match model {
        Model::K => k_phase_variance(d, a, t, band, consts),
        Model::D => d_phase_variance(d, a, t, consts),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseVarianceCurve {
    pub separations: Vec<f64>,
    pub times: Vec<f64>,
    /// variance[i][j] at separations[i], times[j], in rad².
    pub variance: Vec<Vec<f64>>,
    pub model: Model,
    pub density: MassDensity,
}

pub fn phase_variance_curve(
    model: Model,
    d: &MassDensity,
    separations: &[f64],
    times: &[f64],
    band: Option<(f64, f64)>,
    consts: &PhysicalConstants,
) -> Result<PhaseVarianceCurve> {
    let variance = separations
        .par_iter()
        .map(|&a| times.iter().map(|&t| phase_variance(model, d, a, t, band, consts)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(PhaseVarianceCurve {
        separations: separations.to_vec(),
        times: times.to_vec(),
        variance,
        model,
        density: d.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizationOptions {
    /// Variance at which coherence counts as lost, in rad².
    pub threshold: f64,
    pub a_min: f64,
    pub a_max: f64,
    /// Bisection stops when the bracket is this narrow in ln a.
    pub log_tol: f64,
    pub band: Option<(f64, f64)>,
}

impl Default for LocalizationOptions {
    fn default() -> Self {
        Self { threshold: 1.0, a_min: 1e-30, a_max: 1e30, log_tol: 1e-12, band: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub a_c: f64,
    pub tau_c: f64,
    pub regime: Regime,
    pub model: Model,
    pub density: MassDensity,
    pub iterations: usize,
    /// Var(a_c, τ_c)/threshold − 1.
    pub residual: f64,
}

/// Micro iff ħ²/G exceeds m³R by more than a factor 10, macro iff it falls
/// short by more than 10; point masses are micro.
pub fn classify_regime(d: &MassDensity, consts: &PhysicalConstants) -> Regime {
    let size = d.size();
    if size == 0.0 {
        return Regime::Micro;
    }
    let q = consts.hbar * consts.hbar / (consts.g * d.total_mass().powi(3) * size);
    if q > 10.0 {
        Regime::Micro
    } else if q < 0.1 {
        Regime::Macro
    } else {
        Regime::Transition
    }
}

/// Finds a_c with Var(a_c, m a_c²/ħ) = threshold by bisection on ln a.
pub fn solve_localization(
    model: Model,
    d: &MassDensity,
    opts: &LocalizationOptions,
    consts: &PhysicalConstants,
) -> Result<LocalizationResult> {
    d.validate()?;
    ensure_positive("threshold", opts.threshold)?;
    if !(opts.a_min > 0.0 && opts.a_max > opts.a_min) {
        return Err(domain("need 0 < a_min < a_max"));
    }
    let m = d.total_mass();
    let closure = |a: f64| m * a * a / consts.hbar;
    let mut evals = 0usize;
    let mut h = |x: f64| -> Result<f64> {
        evals += 1;
        let a = x.exp();
        let v = phase_variance(model, d, a, closure(a), opts.band, consts)?;
        Ok(if v > 0.0 { v.ln() - opts.threshold.ln() } else { f64::NEG_INFINITY })
    };
    let (xmin, xmax) = (opts.a_min.ln(), opts.a_max.ln());
    let step = 10f64.ln();
    let mut x = (0.5 * (xmin + xmax)).clamp(xmin, xmax);
    let hx = h(x)?;
    let (mut lo, mut hi) = if hx < 0.0 {
        let mut lo = x;
        loop {
            let next = (x + step).min(xmax);
            if next <= x {
                return Err(Error::OutOfRange(format!(
                    "phase variance stays below {} up to a = {:e}",
                    opts.threshold, opts.a_max
                )));
            }
            x = next;
            if h(x)? >= 0.0 {
                break (lo, x);
            }
            lo = x;
        }
    } else {
        let mut hi = x;
        loop {
            let next = (x - step).max(xmin);
            if next >= x {
                return Err(Error::OutOfRange(format!(
                    "phase variance exceeds {} already at a = {:e}",
                    opts.threshold, opts.a_min
                )));
            }
            x = next;
            if h(x)? < 0.0 {
                break (x, hi);
            }
            hi = x;
        }
    };
    while hi - lo > opts.log_tol {
        let mid = 0.5 * (lo + hi);
        if h(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let xc = 0.5 * (lo + hi);
    let residual = h(xc)?.exp_m1();
    let a_c = xc.exp();
    Ok(LocalizationResult {
        a_c,
        tau_c: closure(a_c),
        regime: classify_regime(d, consts),
        model,
        density: d.clone(),
        iterations: evals,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurveyGrid {
    PointMass { masses: Vec<f64> },
    BallFixedRadius { radius: f64, masses: Vec<f64> },
    BallFixedMass { mass: f64, radii: Vec<f64> },
    BallFixedDensity { density: f64, radii: Vec<f64> },
}

impl SurveyGrid {
    fn axis(&self) -> &[f64] {
        match self {
            SurveyGrid::PointMass { masses } | SurveyGrid::BallFixedRadius { masses, .. } => masses,
            SurveyGrid::BallFixedMass { radii, .. } | SurveyGrid::BallFixedDensity { radii, .. } => radii,
        }
    }

    fn density(&self, x: f64) -> Result<MassDensity> {
        Ok(match *self {
            SurveyGrid::PointMass { .. } => MassDensity::PointMass { mass: x },
            SurveyGrid::BallFixedRadius { radius, .. } => MassDensity::UniformBall { mass: x, radius },
            SurveyGrid::BallFixedMass { mass, .. } => MassDensity::UniformBall { mass, radius: x },
            SurveyGrid::BallFixedDensity { density, .. } => MassDensity::ball_with_density(density, x)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyRow {
    pub x: f64,
    pub mass: f64,
    pub radius: f64,
    pub a_c: f64,
    pub tau_c: f64,
    pub regime: Regime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeFit {
    pub regime: Regime,
    pub slope: f64,
    pub slope_stderr: f64,
    /// a_c = prefactor · x^slope.
    pub prefactor: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyResult {
    pub model: Model,
    pub grid: SurveyGrid,
    pub rows: Vec<SurveyRow>,
    pub fits: Vec<RegimeFit>,
    pub warnings: Vec<String>,
}

impl SurveyResult {
    pub fn fit(&self, regime: Regime) -> Option<&RegimeFit> {
        self.fits.iter().find(|f| f.regime == regime)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,mass,radius,a_c,tau_c,regime\n");
        for r in &self.rows {
            out.push_str(&format!("{:e},{:e},{:e},{:e},{:e},{}\n", r.x, r.mass, r.radius, r.a_c, r.tau_c, r.regime));
        }
        out
    }
}

/// Localization lengths along a mass or size ladder and log-log slopes of
/// a_c against the varied quantity, fitted per regime.
pub fn scaling_survey(
    model: Model,
    grid: &SurveyGrid,
    opts: &LocalizationOptions,
    consts: &PhysicalConstants,
) -> Result<SurveyResult> {
    let xs = grid.axis();
    if xs.len() < 2 || xs.iter().any(|x| !(*x > 0.0)) {
        return Err(domain("survey needs at least two positive grid values"));
    }
    let span = (xs.iter().cloned().fold(f64::MIN, f64::max) / xs.iter().cloned().fold(f64::MAX, f64::min)).log10();
    if span < 2.0 {
        return Err(domain(format!("survey grid spans {span:.2} decades; at least 2 are required")));
    }
    let rows = xs
        .par_iter()
        .map(|&x| {
            let d = grid.density(x)?;
            let r = solve_localization(model, &d, opts, consts)?;
            Ok(SurveyRow { x, mass: d.total_mass(), radius: d.size(), a_c: r.a_c, tau_c: r.tau_c, regime: r.regime })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut warnings = Vec::new();
    let mut fits = Vec::new();
    let regimes: Vec<Regime> =
        [Regime::Micro, Regime::Transition, Regime::Macro].into_iter().filter(|g| rows.iter().any(|r| r.regime == *g)).collect();
    if regimes.len() > 1 {
        warnings.push(format!("grid mixes regimes {regimes:?}; fitted per regime"));
    }
    for g in regimes {
        let (x, y): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| r.regime == g).map(|r| (r.x, r.a_c)).unzip();
        if x.len() < 2 {
            warnings.push(format!("regime {g} has a single grid point; no fit"));
            continue;
        }
        let f = fit_power_law(&x, &y).ok_or_else(|| Error::Numerical("degenerate survey fit".into()))?;
        fits.push(RegimeFit { regime: g, slope: f.slope, slope_stderr: f.slope_se, prefactor: 10f64.powf(f.intercept), n: x.len() });
    }
    Ok(SurveyResult { model, grid: grid.clone(), rows, fits, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionPoint {
    pub a_tr: f64,
    pub m_tr: f64,
    pub tau_tr: f64,
    /// ħ²/(G m³) at the returned point.
    pub micro_a: f64,
    /// (ħ²/G)^{1/3} R^{2/3}/m at the returned point.
    pub macro_a: f64,
}

/// Ball of density ρ whose bare macro localization length equals its radius:
/// R^{10/3} = (ħ²/G)^{1/3} / (4πρ/3).
pub fn transition_point(density: f64, consts: &PhysicalConstants) -> Result<TransitionPoint> {
    ensure_positive("density", density)?;
    let h2g = consts.hbar * consts.hbar / consts.g;
    let r = (h2g.cbrt() / (4.0 * PI / 3.0 * density)).powf(0.3);
    let m = 4.0 * PI / 3.0 * density * r.powi(3);
    Ok(TransitionPoint {
        a_tr: r,
        m_tr: m,
        tau_tr: m * r * r / consts.hbar,
        micro_a: h2g / m.powi(3),
        macro_a: h2g.cbrt() * r.powf(2.0 / 3.0) / m,
    })
}

/// Ball of density ρ whose solved localization length equals its radius,
/// found by bisection on ln R.
pub fn transition_point_solved(
    model: Model,
    density: f64,
    opts: &LocalizationOptions,
    consts: &PhysicalConstants,
) -> Result<TransitionPoint> {
    let bare = transition_point(density, consts)?;
    let h = |lr: f64| -> Result<f64> {
        let d = MassDensity::ball_with_density(density, lr.exp())?;
        Ok(solve_localization(model, &d, opts, consts)?.a_c.ln() - lr)
    };
    let step = 10f64.ln();
    let (mut lo, mut hi) = (bare.a_tr.ln(), bare.a_tr.ln());
    let mut tries = 0;
    // a_c/R falls with R in both regimes
    while h(lo)? < 0.0 {
        lo -= step;
        tries += 1;
        if tries > 40 {
            return Err(Error::OutOfRange("no transition below the bare estimate".into()));
        }
    }
    while h(hi)? > 0.0 {
        hi += step;
        tries += 1;
        if tries > 80 {
            return Err(Error::OutOfRange("no transition above the bare estimate".into()));
        }
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if h(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let r = (0.5 * (lo + hi)).exp();
    let m = 4.0 * PI / 3.0 * density * r.powi(3);
    let h2g = consts.hbar * consts.hbar / consts.g;
    Ok(TransitionPoint {
        a_tr: r,
        m_tr: m,
        tau_tr: m * r * r / consts.hbar,
        micro_a: h2g / m.powi(3),
        macro_a: h2g.cbrt() * r.powf(2.0 / 3.0) / m,
    })
}
