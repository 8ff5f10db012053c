//! Two-point correlation kernels: the colored K-model kernel with its
//! quadrature oracle, the time-integrated D-model potential kernel, the
//! separable power family, and ensemble estimators.

use std::f64::consts::PI;
use std::sync::LazyLock;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, ensure_positive, Error, Result};
use crate::noise::{random_direction, stream_rng, FieldRealization, PowerFamilySpec};
use crate::quadrature::{adaptive_breaks, integrate_log, oscillatory_tail, Tolerance, Trig};
use crate::stats::{jackknife_mean_se, mean};
use crate::units::PhysicalConstants;

static GAMMA_THIRD: LazyLock<f64> = LazyLock::new(|| libm::tgamma(1.0 / 3.0));

/// Γ(1/3), evaluated once.
pub fn gamma_third() -> f64 {
    *GAMMA_THIRD
}

/// Relative half-width of the excluded band around r = c|τ|.
pub const LIGHT_CONE_GUARD: f64 = 1e-6;

/// l_p^{4/3} Γ(1/3) / (4π²).
fn k_prefactor(consts: &PhysicalConstants) -> f64 {
    consts.planck_length().powf(4.0 / 3.0) * gamma_third() / (4.0 * PI * PI)
}

/// (r + x)^{-1/3} + sign(r − x)|r − x|^{-1/3}, without cancellation when
/// x ≫ r.
fn bracket(r: f64, x: f64) -> f64 {
    if x > r {
        let e = r / x;
        let d = (-(e.ln_1p()) / 3.0).exp_m1() - (-((-e).ln_1p()) / 3.0).exp_m1();
        x.powf(-1.0 / 3.0) * d
    } else {
        (r + x).powf(-1.0 / 3.0) + (r - x).powf(-1.0 / 3.0)
    }
}

/// ⟨γ(x,t) γ(x′,t′)⟩ for r = |x − x′|, τ = t − t′.
pub fn k_kernel(r: f64, tau: f64, consts: &PhysicalConstants) -> Result<f64> {
    if !(r > 0.0) {
        return Err(domain(format!("k_kernel needs r > 0 (got {r}); use k_kernel_coincident")));
    }
    let x = consts.c * tau.abs();
    if (r - x).abs() < LIGHT_CONE_GUARD * r.max(x) {
        return Err(Error::LightCone { r, ct: x });
    }
    Ok(k_prefactor(consts) / r * bracket(r, x))
}

/// The r → 0 limit, −(2/3)(l_p^{4/3}Γ(1/3)/4π²)(c|τ|)^{-4/3}.
pub fn k_kernel_coincident(tau: f64, consts: &PhysicalConstants) -> Result<f64> {
    if tau == 0.0 {
        return Err(Error::Divergence("equal-point equal-time variance is UV divergent; smear the point".into()));
    }
    Ok(-2.0 / 3.0 * k_prefactor(consts) * (consts.c * tau.abs()).powf(-4.0 / 3.0))
}

/// ∫₀^∞ k^{-2/3} sin(a k) dk by panel summation (odd in a).
fn power_sine_integral(a: f64) -> Result<f64> {
    if a == 0.0 {
        return Ok(0.0);
    }
    let v = oscillatory_tail(|k: f64| k.powf(-2.0 / 3.0), a.abs(), 0.0, Trig::Sin, 1e-12, a.abs().powf(-1.0 / 3.0))?;
    Ok(v.value.copysign(a))
}

/// Quadrature of (l_p^{4/3}/π²r) ∫₀^∞ k^{-2/3} sin(kr) cos(kcτ) dk, the
/// kernel before the k-integral is done in closed form.
pub fn k_kernel_oracle(r: f64, tau: f64, consts: &PhysicalConstants) -> Result<f64> {
    ensure_positive("r", r)?;
    let x = consts.c * tau.abs();
    let i1 = power_sine_integral(r + x)?;
    let i2 = power_sine_integral(r - x)?;
    Ok(consts.planck_length().powf(4.0 / 3.0) / (PI * PI * r) * 0.5 * (i1 + i2))
}

/// ∫₀^t∫₀^t C(r, t1 − t2) dt1 dt2 in position space. The light-cone point
/// is handled by the substitution u = |r − cτ|^{2/3}.
pub fn k_kernel_time_integral(r: f64, t: f64, consts: &PhysicalConstants) -> Result<f64> {
    ensure_positive("r", r)?;
    ensure_positive("t", t)?;
    let c = consts.c;
    let a = k_prefactor(consts) / r;
    let tol = Tolerance::rel(1e-11);
    // h(τ) = (t − τ) B(r, cτ), B carries the |r − cτ|^{-1/3} factor
    let inner = |u: f64, sign: f64| {
        let d = u.powf(1.5);
        let tau = (r + sign * d) / c;
        // B·|r−x|^{1/3}, with the singular factor cancelled analytically;
        // r + x is formed from d to avoid cancellation near the cone
        let b = if sign < 0.0 {
            (2.0 * r - d).powf(-1.0 / 3.0) * u.sqrt() + 1.0
        } else {
            // ((x−r)/(x+r))^{1/3} − 1
            ((-2.0 * r / (2.0 * r + d)).ln_1p() / 3.0).exp_m1()
        };
        (t - tau) * b * 1.5 / c
    };
    let tol = Tolerance { abs: 1e-13 * t * r.powf(2.0 / 3.0) / c, ..tol };
    let ct = c * t;
    let mut total = 0.0;
    // inside the cone's future side, cτ < r
    let u_hi = r.powf(2.0 / 3.0);
    let u_lo = if ct < r { (r - ct).powf(2.0 / 3.0) } else { 0.0 };
    total += adaptive_breaks(|u| inner(u, -1.0), &geometric_breaks(u_lo, u_hi), tol)?.value;
    if ct > r {
        let u_end = (ct - r).powf(2.0 / 3.0);
        total += adaptive_breaks(|u| inner(u, 1.0), &geometric_breaks(0.0, u_end), tol)?.value;
    }
    Ok(2.0 * a * total)
}

fn geometric_breaks(lo: f64, hi: f64) -> Vec<f64> {
    let mut b = vec![lo];
    let start = if lo > 0.0 { lo } else { hi * 1e-6 };
    let mut x = start * 4.0;
    while x < hi {
        if x > lo {
            b.push(x);
        }
        x *= 4.0;
    }
    b.push(hi);
    b
}

/// The same double time integral evaluated in k-space:
/// (2 l_p^{4/3}/(π² c²)) ∫ k^{-5/3} sinc(kr)(1 − cos ckt) dk.
pub fn k_kernel_time_integral_kspace(r: f64, t: f64, consts: &PhysicalConstants) -> Result<f64> {
    ensure_positive("r", r)?;
    ensure_positive("t", t)?;
    let c = consts.c;
    let w = c * t;
    let tol = Tolerance::rel(1e-11);
    let g = |k: f64| k.powf(-5.0 / 3.0) * crate::noise::sinc(k * r);
    // split at the lower of the two oscillation scales; beyond it use panels
    let kc = 1.0 / r.max(w);
    let head = integrate_log(|k| g(k) * 2.0 * (0.5 * w * k).sin().powi(2), kc * 1e-10, kc, tol)?.value;
    // ∫_kc^∞ g − ∫_kc^∞ g cos(wk); the first in closed form via panels on sin(kr)
    let s_tail = oscillatory_tail(|k: f64| k.powf(-8.0 / 3.0) / r, r, kc, Trig::Sin, 1e-12, kc.powf(-5.0 / 3.0))?.value;
    let c_tail = {
        // sinc(kr)cos(wk) = [sin((r+w)k) + sin((r−w)k)]/(2kr)
        let f = |k: f64| k.powf(-8.0 / 3.0) / (2.0 * r);
        let p = oscillatory_tail(f, r + w, kc, Trig::Sin, 1e-12, kc.powf(-5.0 / 3.0))?.value;
        let d = r - w;
        let q = if d == 0.0 {
            0.0
        } else {
            oscillatory_tail(f, d.abs(), kc, Trig::Sin, 1e-12, kc.powf(-5.0 / 3.0))?.value.copysign(d)
        };
        p + q
    };
    let lp43 = consts.planck_length().powf(4.0 / 3.0);
    Ok(2.0 * lp43 / (PI * PI * c * c) * (head + s_tail - c_tail))
}

/// Kernel restricted to |k| in [k_min, k_max]:
/// (l_p^{4/3}/π²) ∫ k^{1/3} sinc(kr) cos(ckτ) dk. This is the ensemble
/// mean of fields whose modes are resampled per realization.
pub fn k_kernel_band(r: f64, tau: f64, k_min: f64, k_max: f64, consts: &PhysicalConstants) -> Result<f64> {
    if !(r >= 0.0 && r.is_finite() && tau.is_finite()) {
        return Err(domain("lag must be finite with r >= 0"));
    }
    ensure_positive("k_min", k_min)?;
    if !(k_max > k_min && k_max.is_finite()) {
        return Err(domain(format!("need k_min < k_max, got [{k_min}, {k_max}]")));
    }
    let x = consts.c * tau.abs();
    let width = PI / (r + x).max(1.0 / k_max);
    let mut b = vec![k_min];
    let mut k = k_min;
    while k < k_max {
        k = (k + width).min(k * 1.5).min(k_max);
        b.push(k);
    }
    // panels are at most half a period wide and grow geometrically from
    // k_min, so a fixed Gauss rule per panel is ample
    let gl = crate::quadrature::gauss_legendre(21);
    let mut acc = crate::stats::NeumaierSum::new();
    for w in b.windows(2) {
        acc.add(gl.integrate(|k| k.powf(1.0 / 3.0) * crate::noise::sinc(k * r) * (consts.c * k * tau).cos(), w[0], w[1]));
    }
    Ok(consts.planck_length().powf(4.0 / 3.0) / (PI * PI) * acc.value())
}

/// Time-integrated D-model potential correlation Għ/r.
pub fn d_potential_kernel(r: f64, consts: &PhysicalConstants) -> Result<f64> {
    ensure_positive("r", r)?;
    Ok(consts.g * consts.hbar / r)
}

/// K²·P·g(t,t′) for a probe of size R, P = R^{2j}, g = T^m t^{n1} t′^{n2}.
pub fn family_kernel(spec: &PowerFamilySpec, radius: f64, t: f64, t_prime: f64, duration: f64) -> Result<f64> {
    spec.validate()?;
    ensure_positive("R", radius)?;
    ensure_positive("T", duration)?;
    if t < 0.0 || t_prime < 0.0 {
        return Err(domain("family kernel is defined for t, t' >= 0"));
    }
    Ok(spec.k_const * spec.k_const
        * radius.powf(2.0 * spec.j)
        * duration.powf(spec.m)
        * t.powf(spec.n1)
        * t_prime.powf(spec.n2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelVariant {
    KColored,
    DWhitePotential,
    PowerFamily(PowerFamilySpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationKernel {
    pub variant: KernelVariant,
    pub constants: PhysicalConstants,
}

impl CorrelationKernel {
    /// Pointwise value for the K kernel; the time-integrated value Għ/r for
    /// the white kernel (τ ignored); the family at t = t′ = τ over T = 1.
    pub fn evaluate(&self, r: f64, tau: f64) -> Result<f64> {
        match self.variant {
            KernelVariant::KColored => {
                if r == 0.0 {
                    k_kernel_coincident(tau, &self.constants)
                } else {
                    k_kernel(r, tau, &self.constants)
                }
            }
            KernelVariant::DWhitePotential => d_potential_kernel(r, &self.constants),
            KernelVariant::PowerFamily(spec) => family_kernel(&spec, r, tau.abs(), tau.abs(), 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lag {
    pub r: f64,
    pub tau: f64,
}

/// Scales resolved by a mode band [k_min, k_max].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub const DEFAULT_FACTOR: f64 = 10.0;

    /// [factor·2π/k_max, 2π/(factor·k_min)].
    pub fn resolved(k_min: f64, k_max: f64, factor: f64) -> Band {
        Band { lo: factor * 2.0 * PI / k_max, hi: 2.0 * PI / (factor * k_min) }
    }

    /// r and c|τ| inside the band, and the lag resolved away from the cone.
    pub fn contains(&self, lag: Lag, c: f64) -> bool {
        let x = c * lag.tau.abs();
        lag.r >= self.lo && lag.r <= self.hi && x <= self.hi && (x == 0.0 || (lag.r - x).abs() >= self.lo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEstimate {
    pub lags: Vec<Lag>,
    pub values: Vec<Option<f64>>,
    pub stderr: Vec<Option<f64>>,
    pub in_band: Vec<bool>,
    pub n_realizations: usize,
    pub band: Band,
}

impl CorrelationEstimate {
    /// CSV with columns r,tau,estimate,stderr,n,in_band.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("r,tau,estimate,stderr,n,in_band\n");
        for i in 0..self.lags.len() {
            let f = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
            s.push_str(&format!(
                "{:e},{:e},{},{},{},{}\n",
                self.lags[i].r,
                self.lags[i].tau,
                f(self.values[i]),
                f(self.stderr[i]),
                self.n_realizations,
                self.in_band[i]
            ));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    pub points_per_realization: usize,
    /// Side of the cube base points are drawn from.
    pub region: f64,
    pub seed: u64,
    pub band_factor: f64,
}

/// Per-realization product moments γ(x,t)γ(x + r n̂, t + τ), averaged over
/// random base points and directions; rows are realizations.
pub fn correlation_samples(ensemble: &[FieldRealization], lags: &[Lag], opts: &EstimatorOptions) -> Vec<Vec<f64>> {
    ensemble
        .par_iter()
        .enumerate()
        .map(|(i, field)| {
            let c = field.mode_set().light_speed;
            let mut rng = stream_rng(opts.seed, i as u64);
            let mut acc = vec![0.0; lags.len()];
            for _ in 0..opts.points_per_realization {
                let x = [
                    opts.region * rng.random::<f64>(),
                    opts.region * rng.random::<f64>(),
                    opts.region * rng.random::<f64>(),
                ];
                let t = opts.region / c * rng.random::<f64>();
                let n = random_direction(&mut rng);
                let g0 = field.gamma(x, t);
                for (a, lag) in acc.iter_mut().zip(lags) {
                    let y = [x[0] + lag.r * n[0], x[1] + lag.r * n[1], x[2] + lag.r * n[2]];
                    *a += g0 * field.gamma(y, t + lag.tau);
                }
            }
            acc.iter().map(|a| a / opts.points_per_realization as f64).collect()
        })
        .collect()
}

/// Ensemble product-moment estimate with jackknife errors over
/// realizations. Lags outside the resolved band carry no value.
pub fn estimate_correlation(
    ensemble: &[FieldRealization],
    lags: &[Lag],
    opts: &EstimatorOptions,
) -> Result<CorrelationEstimate> {
    if ensemble.len() < 2 {
        return Err(domain("correlation estimate needs at least two realizations"));
    }
    if opts.points_per_realization == 0 {
        return Err(domain("points_per_realization must be positive"));
    }
    let k_min = ensemble.iter().map(|f| f.mode_set().k_min).fold(0.0, f64::max);
    let k_max = ensemble.iter().map(|f| f.mode_set().k_max).fold(f64::INFINITY, f64::min);
    let c = ensemble[0].mode_set().light_speed;
    let band = Band::resolved(k_min, k_max, opts.band_factor);
    let in_band: Vec<bool> = lags.iter().map(|l| band.contains(*l, c)).collect();
    let rows = correlation_samples(ensemble, lags, opts);
    Ok(summarize(lags, &rows, band, in_band))
}

/// Reduces per-realization rows to an estimate; uses the first `n` rows.
pub fn summarize(lags: &[Lag], rows: &[Vec<f64>], band: Band, in_band: Vec<bool>) -> CorrelationEstimate {
    let mut values = Vec::with_capacity(lags.len());
    let mut stderr = Vec::with_capacity(lags.len());
    for (j, ok) in in_band.iter().enumerate() {
        if *ok {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            values.push(Some(mean(&col)));
            stderr.push(jackknife_mean_se(&col));
        } else {
            values.push(None);
            stderr.push(None);
        }
    }
    CorrelationEstimate { lags: lags.to_vec(), values, stderr, in_band, n_realizations: rows.len(), band }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scaled() -> PhysicalConstants {
        PhysicalConstants { g: 1.0, hbar: 1.0, c: 1.0 }
    }

    #[test]
    fn bracket_stable_far_outside() {
        let (r, x) = (1.0f64, 1e6f64);
        let naive = (r + x).powf(-1.0 / 3.0) - (x - r).powf(-1.0 / 3.0);
        let stable = bracket(r, x);
        // leading term −(2/3) r x^{-4/3}
        let lead = -2.0 / 3.0 * r * x.powf(-4.0 / 3.0);
        assert!((stable / lead - 1.0).abs() < 1e-9);
        assert!((naive / lead - 1.0).abs() > (stable / lead - 1.0).abs());
    }

    #[test]
    fn guard_rejects_cone() {
        let k = scaled();
        assert!(matches!(k_kernel(1.0, 1.0, &k), Err(Error::LightCone { .. })));
        assert!(k_kernel(1.0, 0.999, &k).is_ok());
        assert!(matches!(k_kernel_coincident(0.0, &k), Err(Error::Divergence(_))));
    }
}
