//! Stochastic potentials: Fourier-mode realizations of the K-model metric
//! fluctuation, the D-model white-noise Newtonian potential on a grid, and
//! the separable power-law family.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, ensure_positive, Error, Result};
use crate::quadrature::GaussLegendre;
use crate::units::PhysicalConstants;

/// Stream `stream` of the generator keyed by `master`.
pub fn stream_rng(master: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of child `index` of `master`; a counter-based split, so any
/// realization can be regenerated without the others.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_mul(0xD2B7_4407_B1CE_6E93).wrapping_add(1)))
}

/// 3(sin x − x cos x)/x³, the Fourier transform of a normalized ball.
pub fn ball_form_factor(x: f64) -> f64 {
    if x.abs() < 1e-3 {
        let x2 = x * x;
        1.0 - x2 / 10.0 + x2 * x2 / 280.0
    } else {
        3.0 * (x.sin() - x * x.cos()) / (x * x * x)
    }
}

/// sin(x)/x.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// f(k) = l_p^{2/3} k^{-5/6}.
pub fn spectral_amplitude(k: f64, planck_length: f64) -> f64 {
    planck_length.powf(2.0 / 3.0) * k.powf(-5.0 / 6.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadialMeasure {
    /// |k| drawn from k² dk.
    Volume,
    /// |k| drawn from dk/k, stratified; suits broadband spectra.
    Logarithmic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampling {
    Isotropic { seed: u64, radial: RadialMeasure },
    Lattice,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSetSpec {
    pub k_min: f64,
    pub k_max: f64,
    pub n_modes: usize,
    pub box_length: f64,
    pub sampling: Sampling,
    pub max_modes: usize,
}

impl ModeSetSpec {
    pub fn isotropic(k_min: f64, k_max: f64, n_modes: usize, seed: u64, radial: RadialMeasure) -> Self {
        Self {
            k_min,
            k_max,
            n_modes,
            box_length: 2.0 * PI / k_min,
            sampling: Sampling::Isotropic { seed, radial },
            max_modes: 1 << 22,
        }
    }

    pub fn lattice(k_min: f64, k_max: f64, box_length: f64) -> Self {
        Self { k_min, k_max, n_modes: 1, box_length, sampling: Sampling::Lattice, max_modes: 1 << 22 }
    }
}

/// One Fourier mode. The realization coefficient is
/// `amplitude·sqrt(weight)` times a random phase factor; `weight` is 1/l³
/// on the lattice and the importance weight divided by (2π)³ otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub k: [f64; 3],
    pub amplitude: f64,
    pub weight: f64,
}

impl Mode {
    pub fn norm(&self) -> f64 {
        norm3(self.k)
    }
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Uniform direction on the unit sphere.
pub fn random_direction<R: Rng>(rng: &mut R) -> [f64; 3] {
    let z: f64 = 2.0 * rng.random::<f64>() - 1.0;
    let phi = 2.0 * PI * rng.random::<f64>();
    let s = (1.0 - z * z).max(0.0).sqrt();
    [s * phi.cos(), s * phi.sin(), z]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSet {
    pub modes: Vec<Mode>,
    pub box_length: f64,
    pub k_min: f64,
    pub k_max: f64,
    pub light_speed: f64,
    pub planck_length: f64,
    pub sampling: Sampling,
}

impl ModeSet {
    pub fn build(spec: &ModeSetSpec, consts: &PhysicalConstants) -> Result<ModeSet> {
        if !(spec.k_min > 0.0) {
            return Err(domain(format!("k_min must be positive, got {}", spec.k_min)));
        }
        if !(spec.k_max > spec.k_min) || !spec.k_max.is_finite() {
            return Err(domain(format!("need k_min < k_max, got [{}, {}]", spec.k_min, spec.k_max)));
        }
        if spec.n_modes == 0 {
            return Err(domain("n_modes must be at least 1"));
        }
        ensure_positive("box_length", spec.box_length)?;
        let lp = consts.planck_length();
        let (k_min, k_max) = (spec.k_min, spec.k_max);
        let modes = match spec.sampling {
            Sampling::Lattice => {
                let l = spec.box_length;
                let dk = 2.0 * PI / l;
                let nmax = (k_max / dk).floor() as i64;
                let side = (2 * nmax + 1) as f64;
                if side.powi(3) > 8.0 * spec.max_modes as f64 {
                    return Err(Error::Resource(format!(
                        "lattice with {} points per axis exceeds the mode budget {}",
                        2 * nmax + 1,
                        spec.max_modes
                    )));
                }
                let w = 1.0 / (l * l * l);
                let mut modes = Vec::new();
                for i in -nmax..=nmax {
                    for j in -nmax..=nmax {
                        for m in -nmax..=nmax {
                            let k = [i as f64 * dk, j as f64 * dk, m as f64 * dk];
                            let kn = norm3(k);
                            // small slack so exact lattice radii are kept
                            if kn >= k_min * (1.0 - 1e-12) && kn <= k_max * (1.0 + 1e-12) && kn > 0.0 {
                                modes.push(Mode { k, amplitude: spectral_amplitude(kn, lp), weight: w });
                            }
                        }
                    }
                }
                if modes.len() > spec.max_modes {
                    return Err(Error::Resource(format!(
                        "{} lattice modes exceed the budget {}",
                        modes.len(),
                        spec.max_modes
                    )));
                }
                if modes.is_empty() {
                    return Err(domain("no lattice vectors fall inside [k_min, k_max]"));
                }
                modes
            }
            Sampling::Isotropic { seed, radial } => {
                if spec.n_modes > spec.max_modes {
                    return Err(Error::Resource(format!(
                        "{} modes exceed the budget {}",
                        spec.n_modes, spec.max_modes
                    )));
                }
                let n = spec.n_modes;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let norm = 1.0 / (n as f64 * (2.0 * PI).powi(3));
                let mut modes = Vec::with_capacity(n);
                for i in 0..n {
                    let u = (i as f64 + rng.random::<f64>()) / n as f64;
                    let (kn, inv_p) = match radial {
                        RadialMeasure::Volume => {
                            let (a, b) = (k_min.powi(3), k_max.powi(3));
                            let kn = (a + u * (b - a)).cbrt().clamp(k_min, k_max);
                            (kn, 4.0 * PI / 3.0 * (b - a))
                        }
                        RadialMeasure::Logarithmic => {
                            let r = (k_max / k_min).ln();
                            let kn = (k_min * (u * r).exp()).clamp(k_min, k_max);
                            (kn, 4.0 * PI * kn.powi(3) * r)
                        }
                    };
                    let d = random_direction(&mut rng);
                    modes.push(Mode {
                        k: [kn * d[0], kn * d[1], kn * d[2]],
                        amplitude: spectral_amplitude(kn, lp),
                        weight: inv_p * norm,
                    });
                }
                modes
            }
        };
        Ok(ModeSet {
            modes,
            box_length: spec.box_length,
            k_min,
            k_max,
            light_speed: consts.c,
            planck_length: lp,
            sampling: spec.sampling,
        })
    }

    /// A set with explicitly given modes; amplitudes follow f(k).
    pub fn from_wavevectors(ks: &[[f64; 3]], weight: f64, consts: &PhysicalConstants) -> Result<ModeSet> {
        let lp = consts.planck_length();
        let mut modes = Vec::with_capacity(ks.len());
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for &k in ks {
            let kn = norm3(k);
            ensure_positive("|k|", kn)?;
            lo = lo.min(kn);
            hi = hi.max(kn);
            modes.push(Mode { k, amplitude: spectral_amplitude(kn, lp), weight });
        }
        if modes.is_empty() {
            return Err(domain("empty mode list"));
        }
        Ok(ModeSet {
            modes,
            box_length: 2.0 * PI / lo,
            k_min: lo,
            k_max: hi,
            light_speed: consts.c,
            planck_length: lp,
            sampling: Sampling::Lattice,
        })
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// ⟨γ²⟩ implied by the stored modes, Σ 2 f² w.
    pub fn point_variance(&self) -> f64 {
        self.modes.iter().map(|m| 2.0 * m.amplitude * m.amplitude * m.weight).sum()
    }

    /// Continuum value (1/π²) ∫ k² f² dk over [k_min, k_max].
    pub fn band_variance(&self) -> f64 {
        let lp43 = self.planck_length.powf(4.0 / 3.0);
        lp43 * 0.75 * (self.k_max.powf(4.0 / 3.0) - self.k_min.powf(4.0 / 3.0)) / (PI * PI)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeLaw {
    /// |c| = f(k), phase uniform.
    #[default]
    FixedModulus,
    /// c = f(k)(X + iY)/√2 with X, Y standard normal.
    ComplexGaussian,
}

/// One member γ_β of the metric family.
#[derive(Debug, Clone)]
pub struct FieldRealization {
    mode_set: Arc<ModeSet>,
    seed: u64,
    label: u64,
    law: AmplitudeLaw,
    // 2·|c|·sqrt(w) per mode, and the phase
    coeff: Vec<f64>,
    phase: Vec<f64>,
}

impl FieldRealization {
    pub fn new(mode_set: Arc<ModeSet>, seed: u64, label: u64, law: AmplitudeLaw) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = mode_set.modes.len();
        let mut coeff = Vec::with_capacity(n);
        let mut phase = Vec::with_capacity(n);
        for m in &mode_set.modes {
            let base = 2.0 * m.amplitude * m.weight.sqrt();
            match law {
                AmplitudeLaw::FixedModulus => {
                    coeff.push(base);
                    phase.push(2.0 * PI * rng.random::<f64>());
                }
                AmplitudeLaw::ComplexGaussian => {
                    let x: f64 = rng.sample(StandardNormal);
                    let y: f64 = rng.sample(StandardNormal);
                    coeff.push(base * ((x * x + y * y) / 2.0).sqrt());
                    phase.push(y.atan2(x));
                }
            }
        }
        Self { mode_set, seed, label, law, coeff, phase }
    }

    pub fn mode_set(&self) -> &Arc<ModeSet> {
        &self.mode_set
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> u64 {
        self.label
    }

    pub fn law(&self) -> AmplitudeLaw {
        self.law
    }

    /// γ_β(x, t) = Σ 2|c_k| sqrt(w) cos(k·x − ω t + α_k).
    pub fn gamma(&self, x: [f64; 3], t: f64) -> f64 {
        let c = self.mode_set.light_speed;
        let mut s = 0.0;
        for ((m, a), p) in self.mode_set.modes.iter().zip(&self.coeff).zip(&self.phase) {
            s += a * (dot3(m.k, x) - c * m.norm() * t + p).cos();
        }
        s
    }

    /// The same realization averaged over a ball of radius `radius`.
    pub fn smeared(&self, radius: f64) -> FieldRealization {
        let mut out = self.clone();
        for (a, m) in out.coeff.iter_mut().zip(&self.mode_set.modes) {
            *a *= ball_form_factor(m.norm() * radius);
        }
        out
    }

    /// Each mode amplitude multiplied by `filter(|k|)`.
    pub fn filtered<F: Fn(f64) -> f64>(&self, filter: F) -> FieldRealization {
        let mut out = self.clone();
        for (a, m) in out.coeff.iter_mut().zip(&self.mode_set.modes) {
            *a *= filter(m.norm());
        }
        out
    }

    /// Field with every amplitude multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> FieldRealization {
        let mut out = self.clone();
        out.coeff.iter_mut().for_each(|a| *a *= factor);
        out
    }

    /// γ(x, t0 + i·dt) for i in 0..n, by phasor rotation.
    pub fn static_series(&self, x: [f64; 3], t0: f64, dt: f64, n: usize) -> Vec<f64> {
        let c = self.mode_set.light_speed;
        let nm = self.coeff.len();
        let padded = nm.div_ceil(4) * 4;
        let mut re = vec![0.0; padded];
        let mut im = vec![0.0; padded];
        let mut cr = vec![1.0; padded];
        let mut ci = vec![0.0; padded];
        let mut omega = vec![0.0; padded];
        let mut base = vec![0.0; padded];
        for (j, m) in self.mode_set.modes.iter().enumerate() {
            omega[j] = c * m.norm();
            base[j] = dot3(m.k, x) + self.phase[j];
            let (s, co) = (omega[j] * dt).sin_cos();
            cr[j] = co;
            ci[j] = -s;
        }
        let resync = |i: usize, re: &mut [f64], im: &mut [f64]| {
            let t = t0 + i as f64 * dt;
            for j in 0..nm {
                let (s, co) = (base[j] - omega[j] * t).sin_cos();
                re[j] = self.coeff[j] * co;
                im[j] = self.coeff[j] * s;
            }
        };
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            if i % 4096 == 0 {
                resync(i, &mut re, &mut im);
            }
            let mut lanes = [0.0f64; 4];
            for (((r4, i4), c4), s4) in re
                .chunks_exact_mut(4)
                .zip(im.chunks_exact_mut(4))
                .zip(cr.chunks_exact(4))
                .zip(ci.chunks_exact(4))
            {
                for l in 0..4 {
                    lanes[l] += r4[l];
                    let nr = r4[l] * c4[l] - i4[l] * s4[l];
                    let ni = r4[l] * s4[l] + i4[l] * c4[l];
                    r4[l] = nr;
                    i4[l] = ni;
                }
            }
            out.push((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]));
        }
        out
    }
}

/// Serializable description of an ensemble: the mode set and the seeds
/// from which every member is regenerated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRecord {
    pub mode_set: ModeSet,
    pub law: AmplitudeLaw,
    pub seeds: Vec<u64>,
}

impl EnsembleRecord {
    pub fn realizations(&self) -> Vec<FieldRealization> {
        let ms = Arc::new(self.mode_set.clone());
        self.seeds
            .iter()
            .enumerate()
            .map(|(i, &s)| FieldRealization::new(ms.clone(), s, i as u64, self.law))
            .collect()
    }
}

/// Mean of 1/|x − x′| for x, x′ uniform in the unit cube.
pub fn unit_cube_mean_inverse_distance() -> f64 {
    // 8·3·∫∫∫ u(1−u)(1−us)(1−ut)/sqrt(1+s²+t²), after splitting the cube
    // of differences into pyramids and mapping each to the unit cube
    let gu = GaussLegendre::new(6);
    let gs = GaussLegendre::new(40);
    let mut total = 0.0;
    for (&s, &ws) in gs.nodes.iter().zip(&gs.weights) {
        let s = 0.5 * (s + 1.0);
        for (&t, &wt) in gs.nodes.iter().zip(&gs.weights) {
            let t = 0.5 * (t + 1.0);
            let inner = gu.integrate(|u| u * (1.0 - u) * (1.0 - u * s) * (1.0 - u * t), 0.0, 1.0);
            total += 0.25 * ws * wt * inner / (1.0 + s * s + t * t).sqrt();
        }
    }
    24.0 * total
}

/// Gaussian potential on a rectangular lattice of cells, correlated as
/// Għ/|x − x′| in space and white in time.
#[derive(Debug, Clone)]
pub struct WhiteNoisePotential {
    pub spacing: f64,
    pub shape: [usize; 3],
    pub dt: f64,
    pub seed: u64,
    pub strength: f64,
    chol: DMatrix<f64>,
}

impl WhiteNoisePotential {
    pub const MAX_CELLS: usize = 4096;

    pub fn new(spacing: f64, shape: [usize; 3], dt: f64, seed: u64, consts: &PhysicalConstants) -> Result<Self> {
        ensure_positive("spacing", spacing)?;
        ensure_positive("dt", dt)?;
        let n: usize = shape.iter().product();
        if n == 0 {
            return Err(domain("grid must contain at least one cell"));
        }
        if n > Self::MAX_CELLS {
            return Err(Error::Resource(format!("{n} cells exceed the limit {}", Self::MAX_CELLS)));
        }
        let self_kernel = unit_cube_mean_inverse_distance() / spacing;
        let pos = |i: usize| -> [f64; 3] {
            let x = i % shape[0];
            let y = (i / shape[0]) % shape[1];
            let z = i / (shape[0] * shape[1]);
            [x as f64 * spacing, y as f64 * spacing, z as f64 * spacing]
        };
        let cov = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                self_kernel
            } else {
                let (a, b) = (pos(i), pos(j));
                1.0 / norm3([a[0] - b[0], a[1] - b[1], a[2] - b[2]])
            }
        });
        let chol = nalgebra::Cholesky::new(cov)
            .ok_or_else(|| Error::Numerical("white-noise covariance is not positive definite".into()))?
            .l();
        Ok(Self { spacing, shape, dt, seed, strength: consts.g * consts.hbar, chol })
    }

    pub fn cell_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn cell_index(&self, cell: [usize; 3]) -> Result<usize> {
        if (0..3).any(|d| cell[d] >= self.shape[d]) {
            return Err(domain(format!("cell {cell:?} outside grid {:?}", self.shape)));
        }
        Ok(cell[0] + self.shape[0] * (cell[1] + self.shape[1] * cell[2]))
    }

    /// Spatial kernel 1/|x − x′| between two cells (cell-averaged on the
    /// diagonal), without the Għ/dt factor.
    pub fn kernel(&self, a: usize, b: usize) -> f64 {
        let row = self.chol.row(a);
        let other = self.chol.row(b);
        row.dot(&other)
    }

    /// The potential on every cell during step `step`.
    pub fn sample_step(&self, step: u64) -> Vec<f64> {
        let n = self.cell_count();
        let mut rng = stream_rng(self.seed, step);
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let amp = (self.strength / self.dt).sqrt();
        (0..n)
            .map(|i| {
                let mut s = 0.0;
                for j in 0..=i {
                    s += self.chol[(i, j)] * z[j];
                }
                amp * s
            })
            .collect()
    }

    pub fn sample(&self, cell: [usize; 3], step: u64) -> Result<f64> {
        let i = self.cell_index(cell)?;
        Ok(self.sample_step(step)[i])
    }
}

/// Separable family P(x,x′) g(t,t′) with P(x,x) = R^{2j} and
/// g = T^m t^{n1} t′^{n2}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerFamilySpec {
    pub j: f64,
    pub m: f64,
    pub n1: f64,
    pub n2: f64,
    #[serde(default = "one")]
    pub k_const: f64,
}

fn one() -> f64 {
    1.0
}

impl PowerFamilySpec {
    pub fn new(j: f64, m: f64, n1: f64, n2: f64, k_const: f64) -> Result<Self> {
        let s = Self { j, m, n1, n2, k_const };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n1 > -1.0 && self.n2 > -1.0) {
            return Err(domain(format!("need n1, n2 > -1, got ({}, {})", self.n1, self.n2)));
        }
        if ![self.j, self.m, self.n1, self.n2, self.k_const].iter().all(|v| v.is_finite()) {
            return Err(domain("family parameters must be finite"));
        }
        Ok(())
    }

    /// Power of T in Δs².
    pub fn time_power(&self) -> f64 {
        self.m + self.n1 + self.n2 + 2.0
    }
}

/// Δs² = (K²c²/4) R^{2j} T^{m+n1+n2+2} / ((n1+1)(n2+1)).
pub fn family_sample_variance(spec: &PowerFamilySpec, r: f64, t: f64, c: f64) -> Result<f64> {
    spec.validate()?;
    ensure_positive("R", r)?;
    ensure_positive("T", t)?;
    Ok(spec.k_const * spec.k_const * c * c / 4.0 * r.powf(2.0 * spec.j) * t.powf(spec.time_power())
        / ((spec.n1 + 1.0) * (spec.n2 + 1.0)))
}
