//! Density-matrix evolution on one-dimensional grids of rigid-body
//! positions: the D-model Markovian equation and the recoil-free K-model
//! second-order equation with memory.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoherence::{d_decoherence_delta, MassDensity, Model, Shape};
use crate::error::{domain, Error, Result};
use crate::quadrature::gauss_legendre;
use crate::units::PhysicalConstants;

pub const MAX_GRID: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrixGrid {
    pub positions: Vec<f64>,
    pub rho: DMatrix<Complex64>,
    pub density: MassDensity,
    pub t: f64,
}

fn check_positions(positions: &[f64]) -> Result<()> {
    if positions.is_empty() || positions.len() > MAX_GRID {
        return Err(domain(format!("grid needs 1..={MAX_GRID} points, got {}", positions.len())));
    }
    if positions.windows(2).any(|w| !(w[1] > w[0])) || positions.iter().any(|x| !x.is_finite()) {
        return Err(domain("grid positions must be finite and strictly increasing"));
    }
    Ok(())
}

impl DensityMatrixGrid {
    /// Validates Hermiticity, unit trace and positivity of `rho`.
    pub fn new(positions: Vec<f64>, rho: DMatrix<Complex64>, density: MassDensity) -> Result<Self> {
        check_positions(&positions)?;
        let n = positions.len();
        if rho.nrows() != n || rho.ncols() != n {
            return Err(domain("rho must be N×N"));
        }
        let s = Self { positions, rho, density, t: 0.0 };
        if s.hermiticity_error() > 1e-12 {
            return Err(domain("initial rho is not Hermitian"));
        }
        if s.trace_error() > 1e-10 {
            return Err(domain("initial rho does not have unit trace"));
        }
        if s.min_eigenvalue() < -1e-8 {
            return Err(domain("initial rho is not positive semidefinite"));
        }
        Ok(s)
    }

    /// Pure state ψ sampled on the grid and normalized.
    pub fn pure(positions: Vec<f64>, psi: &[Complex64], density: MassDensity) -> Result<Self> {
        check_positions(&positions)?;
        if psi.len() != positions.len() {
            return Err(domain("amplitude vector length differs from the grid"));
        }
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(domain("zero wave function"));
        }
        let v: Vec<Complex64> = psi.iter().map(|z| z / norm).collect();
        let n = v.len();
        let rho = DMatrix::from_fn(n, n, |i, j| v[i] * v[j].conj());
        Self::new(positions, rho, density)
    }

    /// Equal superposition of every grid point.
    pub fn uniform(positions: Vec<f64>, density: MassDensity) -> Result<Self> {
        let psi = vec![Complex64::new(1.0, 0.0); positions.len()];
        Self::pure(positions, &psi, density)
    }

    /// Superposition of two Gaussian packets centered at `centers`.
    pub fn double_gaussian(positions: Vec<f64>, centers: (f64, f64), width: f64, density: MassDensity) -> Result<Self> {
        if !(width > 0.0) {
            return Err(domain("packet width must be positive"));
        }
        let psi: Vec<Complex64> = positions
            .iter()
            .map(|x| {
                let g = |c: f64| (-0.25 * ((x - c) / width).powi(2)).exp();
                Complex64::new(g(centers.0) + g(centers.1), 0.0)
            })
            .collect();
        Self::pure(positions, &psi, density)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let n = self.len();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.rho[(i, j)] - self.rho[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn trace_error(&self) -> f64 {
        (self.rho.trace() - Complex64::new(1.0, 0.0)).norm()
    }

    /// Smallest eigenvalue of the Hermitian part of rho.
    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.rho + self.rho.adjoint()) * Complex64::new(0.5, 0.0);
        h.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// CSV of |rho(i,j)| against separation x_j − x_i (j ≥ i).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x_i,x_j,separation,abs_rho\n");
        for i in 0..self.len() {
            for j in i..self.len() {
                out.push_str(&format!(
                    "{:e},{:e},{:e},{:e},{:e}\n",
                    self.t,
                    self.positions[i],
                    self.positions[j],
                    self.positions[j] - self.positions[i],
                    self.rho[(i, j)].norm()
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoherenceFunctional {
    /// Λ(i, j) in inverse time units.
    pub lambda: Vec<Vec<f64>>,
    pub model: Model,
    /// How Λ relates to the phase-variance growth rate Var/t.
    pub convention: String,
}

impl DecoherenceFunctional {
    pub fn max_rate(&self) -> f64 {
        self.lambda.iter().flatten().cloned().fold(0.0, f64::max)
    }
}

/// Λ(i, j) = (G/2ħ) Δ(|x_i − x_j|), half the phase-variance rate Var/t.
pub fn d_decoherence_functional(
    positions: &[f64],
    density: &MassDensity,
    consts: &PhysicalConstants,
) -> Result<DecoherenceFunctional> {
    check_positions(positions)?;
    let n = positions.len();
    let rate = consts.g / (2.0 * consts.hbar);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| if i == j { Ok(0.0) } else { Ok(rate * d_decoherence_delta(density, (positions[i] - positions[j]).abs())?) })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    // enforce exact symmetry; Δ depends on |x_i − x_j| only
    let mut lambda = rows;
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (lambda[i][j] + lambda[j][i]);
            lambda[i][j] = v;
            lambda[j][i] = v;
        }
    }
    Ok(DecoherenceFunctional {
        lambda,
        model: Model::D,
        convention: "|rho_ij| decays as exp(-Lambda_ij t) with Lambda = (G/2hbar) Delta, so Lambda t = Var/2".into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Hamiltonian {
    #[default]
    None,
    /// −ħ²/(2m) times the three-point Laplacian on a uniform grid.
    FreeParticle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvolutionMonitor {
    pub steps: usize,
    pub max_hermiticity_error: f64,
    pub max_trace_error: f64,
    pub min_eigenvalue: f64,
    pub warnings: Vec<String>,
}

impl EvolutionMonitor {
    fn new() -> Self {
        Self { min_eigenvalue: f64::INFINITY, ..Default::default() }
    }

    fn observe(&mut self, s: &DensityMatrixGrid, check_eigen: bool) {
        self.max_hermiticity_error = self.max_hermiticity_error.max(s.hermiticity_error());
        self.max_trace_error = self.max_trace_error.max(s.trace_error());
        if check_eigen {
            self.min_eigenvalue = self.min_eigenvalue.min(s.min_eigenvalue());
        }
    }

    fn finish(&mut self) {
        if self.max_hermiticity_error > 1e-12 {
            self.warnings.push(format!("Hermiticity drift {:e} exceeds 1e-12", self.max_hermiticity_error));
        }
        if self.max_trace_error > 1e-10 {
            self.warnings.push(format!("trace drift {:e} exceeds 1e-10", self.max_trace_error));
        }
        if self.min_eigenvalue < -1e-8 {
            self.warnings.push(format!("eigenvalue {:e} below the -1e-8 positivity floor", self.min_eigenvalue));
        }
    }

    /// True when every monitored invariant held.
    pub fn ok(&self) -> bool {
        self.max_hermiticity_error <= 1e-12 && self.max_trace_error <= 1e-10 && self.min_eigenvalue >= -1e-8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evolution {
    pub state: DensityMatrixGrid,
    pub snapshots: Vec<DensityMatrixGrid>,
    pub monitor: EvolutionMonitor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolveOptions {
    pub snapshots: usize,
    /// Positivity is checked every this many steps (and at the end).
    pub eigen_every: usize,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self { snapshots: 10, eigen_every: 16 }
    }
}

fn kinetic(state: &DensityMatrixGrid, consts: &PhysicalConstants) -> Result<(DMatrix<Complex64>, f64)> {
    let x = &state.positions;
    let n = x.len();
    if n < 2 {
        return Err(domain("free-particle evolution needs at least two grid points"));
    }
    let dx = x[1] - x[0];
    if x.windows(2).any(|w| ((w[1] - w[0]) / dx - 1.0).abs() > 1e-9) {
        return Err(domain("free-particle evolution needs a uniform grid"));
    }
    let m = state.density.total_mass();
    if !(m > 0.0) {
        return Err(domain("free-particle evolution needs a positive mass"));
    }
    let e = consts.hbar * consts.hbar / (2.0 * m * dx * dx);
    let h = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            Complex64::new(2.0 * e, 0.0)
        } else if i.abs_diff(j) == 1 {
            Complex64::new(-e, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    Ok((h, 4.0 * e / consts.hbar))
}

/// One RK4 step of dρ/dt = −(i/ħ)[H, ρ] − Γ(t) ∘ ρ, with the rate matrix
/// supplied at t, t + dt/2 and t + dt.
fn rk4_step(
    rho: &DMatrix<Complex64>,
    h: Option<&DMatrix<Complex64>>,
    hbar: f64,
    rates: [&DMatrix<f64>; 3],
    dt: f64,
) -> DMatrix<Complex64> {
    let f = |r: &DMatrix<Complex64>, g: &DMatrix<f64>| {
        let mut out = r.zip_map(g, |z, l| -z * l);
        if let Some(h) = h {
            let comm = h * r - r * h;
            out += comm * Complex64::new(0.0, -1.0 / hbar);
        }
        out
    };
    let c = |v: f64| Complex64::new(v, 0.0);
    let k1 = f(rho, rates[0]);
    let k2 = f(&(rho + &k1 * c(0.5 * dt)), rates[1]);
    let k3 = f(&(rho + &k2 * c(0.5 * dt)), rates[1]);
    let k4 = f(&(rho + &k3 * c(dt)), rates[2]);
    rho + (k1 + k2 * c(2.0) + k3 * c(2.0) + k4) * c(dt / 6.0)
}

fn snapshot_steps(steps: usize, n: usize) -> Vec<usize> {
    (1..=n.min(steps)).map(|i| (i * steps).div_ceil(n.min(steps).max(1))).collect()
}

/// Integrates the Markovian master equation for `steps` steps of `dt`.
pub fn evolve_markovian(
    state: &DensityMatrixGrid,
    functional: &DecoherenceFunctional,
    hamiltonian: Hamiltonian,
    dt: f64,
    steps: usize,
    opts: &EvolveOptions,
    consts: &PhysicalConstants,
) -> Result<Evolution> {
    let n = state.len();
    if functional.lambda.len() != n {
        return Err(domain("decoherence functional does not match the grid"));
    }
    if !(dt > 0.0) {
        return Err(domain("dt must be positive"));
    }
    let max_rate = functional.max_rate();
    if dt * max_rate >= 0.1 {
        return Err(Error::StepSize(format!("dt·max(Lambda) = {:e} must be below 0.1", dt * max_rate)));
    }
    let h = match hamiltonian {
        Hamiltonian::None => None,
        Hamiltonian::FreeParticle => {
            let (h, scale) = kinetic(state, consts)?;
            if dt * scale >= 0.1 {
                return Err(Error::StepSize(format!("dt·(kinetic scale) = {:e} must be below 0.1", dt * scale)));
            }
            Some(h)
        }
    };
    let lambda = DMatrix::from_fn(n, n, |i, j| functional.lambda[i][j]);
    let marks = snapshot_steps(steps, opts.snapshots);
    let mut cur = state.clone();
    let mut monitor = EvolutionMonitor::new();
    monitor.observe(&cur, true);
    let mut snaps = Vec::with_capacity(marks.len());
    for step in 1..=steps {
        cur.rho = rk4_step(&cur.rho, h.as_ref(), consts.hbar, [&lambda, &lambda, &lambda], dt);
        cur.t = state.t + step as f64 * dt;
        monitor.observe(&cur, step % opts.eigen_every.max(1) == 0 || step == steps);
        if marks.contains(&step) {
            snaps.push(cur.clone());
        }
    }
    monitor.steps = steps;
    monitor.finish();
    Ok(Evolution { state: cur, snapshots: snaps, monitor })
}

/// Quadrature nodes and weights in k for the memory kernel, fine enough
/// to resolve cos(ckτ) up to τ = t_max.
fn kernel_grid(density: &MassDensity, a_max: f64, omega_max: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let cutoff = density
        .components()
        .iter()
        .map(|c| match c.shape {
            Shape::Point => f64::INFINITY,
            Shape::Ball { radius } => 200.0 / radius,
            Shape::Gaussian { sigma } => 12.0 / sigma,
        })
        .fold(0.0, f64::max);
    if !cutoff.is_finite() {
        return Err(Error::RegularizationRequired(
            "the K memory kernel needs finite-size densities; point parts make it diverge".into(),
        ));
    }
    let size = density.size();
    let nu = omega_max.max(a_max).max(2.0 * size).max(1.0 / cutoff);
    let width = PI / nu;
    let gl = gauss_legendre(10);
    let (mut ks, mut ws) = (Vec::new(), Vec::new());
    let mut push = |lo: f64, hi: f64| {
        let half = 0.5 * (hi - lo);
        for (x, w) in gl.nodes.iter().zip(&gl.weights) {
            ks.push(lo + half * (x + 1.0));
            ws.push(half * w);
        }
    };
    // graded panels toward k = 0, where the integrand goes like k^{7/3}
    let first = width.min(cutoff);
    let mut lo = first * 1e-6;
    while lo < first {
        let hi = (lo * 10.0).min(first);
        push(lo, hi);
        lo = hi;
    }
    let mut lo = first;
    while lo < cutoff {
        let hi = (lo + width).min(cutoff);
        push(lo, hi);
        lo = hi;
    }
    Ok((ks, ws))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryOptions {
    pub snapshots: usize,
    pub eigen_every: usize,
    /// Accumulated variance above which the second-order treatment is
    /// flagged, in rad².
    pub perturbative_limit: f64,
}

impl Default for MemoryOptions {
    fn default() -> Self {
        Self { snapshots: 10, eigen_every: 16, perturbative_limit: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEvolution {
    pub evolution: Evolution,
    /// Γ(i, j) at the final time.
    pub final_rates: Vec<Vec<f64>>,
    /// Relative change of the largest rate over the last tenth of the run.
    pub late_rate_drift: f64,
}

/// Recoil-free K-model evolution at second order in the noise. The memory
/// kernel D(τ) for each separation is sampled on the half-step grid and
/// its running integral Γ(t) = ∫₀^t D accumulated by the trapezoid rule.
pub fn evolve_nonmarkovian_k(
    state: &DensityMatrixGrid,
    hamiltonian: Hamiltonian,
    t_final: f64,
    dt: f64,
    opts: &MemoryOptions,
    consts: &PhysicalConstants,
) -> Result<MemoryEvolution> {
    if !(dt > 0.0 && t_final > 0.0) {
        return Err(domain("t_final and dt must be positive"));
    }
    let steps = (t_final / dt).round().max(1.0) as usize;
    let dt = t_final / steps as f64;
    let n = state.len();
    let d = &state.density;
    // a massless body is allowed here and simply does not decohere
    if d.total_mass() != 0.0 {
        d.validate()?;
    }
    let h = match hamiltonian {
        Hamiltonian::None => None,
        Hamiltonian::FreeParticle => {
            let (h, scale) = kinetic(state, consts)?;
            if dt * scale >= 0.1 {
                return Err(Error::StepSize(format!("dt·(kinetic scale) = {:e} must be below 0.1", dt * scale)));
            }
            Some(h)
        }
    };
    // distinct separations
    let mut seps: Vec<f64> = Vec::new();
    let mut index = vec![vec![usize::MAX; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let s = (state.positions[i] - state.positions[j]).abs();
            let pos = seps.iter().position(|v| (v - s).abs() <= 1e-12 * s);
            index[i][j] = pos.unwrap_or_else(|| {
                seps.push(s);
                seps.len() - 1
            });
        }
    }
    let m = d.total_mass();
    let pref = consts.c.powi(4) * consts.planck_length().powf(4.0 / 3.0) / (2.0 * PI * PI * consts.hbar * consts.hbar);
    let half = 0.5 * dt;
    let samples = 2 * steps + 1;
    // D_s(n·dt/2) for every separation s
    let kernels: Vec<Vec<f64>> = if m == 0.0 || seps.is_empty() {
        vec![vec![0.0; samples]; seps.len()]
    } else {
        let a_max = seps.iter().cloned().fold(0.0, f64::max);
        let (ks, ws) = kernel_grid(d, a_max, consts.c * t_final)?;
        let base: Vec<f64> = ks.iter().zip(&ws).map(|(k, w)| pref * w * k.powf(1.0 / 3.0) * d.form_factor_sq(*k)).collect();
        seps.par_iter()
            .map(|&a| {
                let amp: Vec<f64> = base.iter().zip(&ks).map(|(b, k)| b * one_minus_sinc(k * a)).collect();
                let mut out = Vec::with_capacity(samples);
                let (mut re, mut im) = (vec![0.0; ks.len()], vec![0.0; ks.len()]);
                let rot: Vec<(f64, f64)> = ks.iter().map(|k| (consts.c * k * half).sin_cos()).collect();
                for step in 0..samples {
                    if step % 1024 == 0 {
                        let tau = step as f64 * half;
                        for (j, k) in ks.iter().enumerate() {
                            let (s, c) = (consts.c * k * tau).sin_cos();
                            re[j] = c;
                            im[j] = s;
                        }
                    }
                    out.push(amp.iter().zip(&re).map(|(a, c)| a * c).sum());
                    for j in 0..ks.len() {
                        let (s, c) = rot[j];
                        let nr = re[j] * c - im[j] * s;
                        im[j] = re[j] * s + im[j] * c;
                        re[j] = nr;
                    }
                }
                out
            })
            .collect()
    };
    // Γ_s at half steps by cumulative trapezoid
    let gammas: Vec<Vec<f64>> = kernels
        .iter()
        .map(|dk| {
            let mut g = Vec::with_capacity(samples);
            g.push(0.0);
            for i in 1..samples {
                g.push(g[i - 1] + 0.5 * half * (dk[i - 1] + dk[i]));
            }
            g
        })
        .collect();
    let rate_at = |sample: usize| {
        DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { gammas[index[i][j]][sample] })
    };
    let marks = snapshot_steps(steps, opts.snapshots);
    let mut cur = state.clone();
    let mut monitor = EvolutionMonitor::new();
    monitor.observe(&cur, true);
    let mut snaps = Vec::with_capacity(marks.len());
    let mut r0 = rate_at(0);
    for step in 1..=steps {
        let r1 = rate_at(2 * step - 1);
        let r2 = rate_at(2 * step);
        cur.rho = rk4_step(&cur.rho, h.as_ref(), consts.hbar, [&r0, &r1, &r2], dt);
        cur.t = state.t + step as f64 * dt;
        monitor.observe(&cur, step % opts.eigen_every.max(1) == 0 || step == steps);
        if marks.contains(&step) {
            snaps.push(cur.clone());
        }
        r0 = r2;
    }
    monitor.steps = steps;
    // accumulated variance 2∫Γ by trapezoid on the half-step grid
    let var_max = gammas
        .iter()
        .map(|g| 2.0 * g.windows(2).map(|w| 0.5 * half * (w[0] + w[1])).sum::<f64>())
        .fold(0.0, f64::max);
    if var_max > opts.perturbative_limit {
        monitor.warnings.push(format!(
            "accumulated phase variance {var_max:.3} rad² exceeds {} rad²; second-order treatment is doubtful",
            opts.perturbative_limit
        ));
    }
    monitor.finish();
    let last = samples - 1;
    let tenth = last - last / 10;
    let late_rate_drift = gammas
        .iter()
        .map(|g| if g[last] != 0.0 { ((g[last] - g[tenth]) / g[last]).abs() } else { 0.0 })
        .fold(0.0, f64::max);
    let final_rates = (0..n).map(|i| (0..n).map(|j| if i == j { 0.0 } else { gammas[index[i][j]][last] }).collect()).collect();
    Ok(MemoryEvolution { evolution: Evolution { state: cur, snapshots: snaps, monitor }, final_rates, late_rate_drift })
}

fn one_minus_sinc(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        let x2 = x * x;
        x2 / 6.0 * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0))
    } else {
        1.0 - x.sin() / x
    }
}

/// Mean |rho(i,j)|/|rho0(i,j)| for each distinct separation, ascending.
pub fn coherence_profile(initial: &DensityMatrixGrid, fin: &DensityMatrixGrid) -> Result<Vec<(f64, f64)>> {
    if initial.positions != fin.positions {
        return Err(domain("initial and final grids differ"));
    }
    let n = initial.len();
    let mut groups: Vec<(f64, f64, usize)> = Vec::new();
    for i in 0..n {
        for j in i..n {
            let z0 = initial.rho[(i, j)].norm();
            if z0 < 1e-300 {
                continue;
            }
            let s = fin.positions[j] - fin.positions[i];
            let r = fin.rho[(i, j)].norm() / z0;
            match groups.iter_mut().find(|g| (g.0 - s).abs() <= 1e-9 * s.max(1e-300)) {
                Some(g) => {
                    g.1 += r;
                    g.2 += 1;
                }
                None => groups.push((s, r, 1)),
            }
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(groups.into_iter().map(|(s, r, c)| (s, r / c as f64)).collect())
}

/// First separation where the coherence ratio falls to `threshold`,
/// linearly interpolated between grid separations.
pub fn coherence_length_from_evolution(initial: &DensityMatrixGrid, fin: &DensityMatrixGrid, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(domain("threshold must lie in (0, 1]"));
    }
    let prof = coherence_profile(initial, fin)?;
    let mut prev: Option<(f64, f64)> = None;
    for (s, r) in prof {
        if r <= threshold {
            return Ok(match prev {
                None => s,
                Some((s0, r0)) => s0 + (s - s0) * (r0 - threshold) / (r0 - r),
            });
        }
        prev = Some((s, r));
    }
    Err(Error::OutOfRange(format!("coherence never falls below {threshold} on this grid")))
}
