//! Gauss-Legendre rules, globally adaptive integration, and oscillatory
//! tails summed panel by panel with Wynn's epsilon acceleration.

use std::collections::BinaryHeap;
use std::sync::LazyLock;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// (P_n(x), P_{n-1}(x)).
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    (p1, p0)
}

impl GaussLegendre {
    /// n-point rule on [-1, 1], nodes by Newton iteration on P_n.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 1.0;
            for iter in 0..100 {
                let (pn, pm) = legendre_pair(n, x);
                dp = if n == 1 { 1.0 } else { nf * (x * pn - pm) / (x * x - 1.0) };
                if iter > 0 && pn.abs() < 1e-300 {
                    break;
                }
                let dx = pn / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    let (pn, pm) = legendre_pair(n, x);
                    dp = if n == 1 { 1.0 } else { nf * (x * pn - pm) / (x * x - 1.0) };
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n == 1 {
            nodes[0] = 0.0;
            weights[0] = 2.0;
        }
        Self { nodes, weights }
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64) -> f64 {
        let h = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut s = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            s += w * f(mid + h * x);
        }
        s * h
    }
}

static GL10: LazyLock<GaussLegendre> = LazyLock::new(|| GaussLegendre::new(10));
static GL21: LazyLock<GaussLegendre> = LazyLock::new(|| GaussLegendre::new(21));

/// Cached rule for a commonly used order.
pub fn gauss_legendre(n: usize) -> GaussLegendre {
    match n {
        10 => GL10.clone(),
        21 => GL21.clone(),
        _ => GaussLegendre::new(n),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { abs: 0.0, rel: 1e-11, max_intervals: 20_000 }
    }
}

impl Tolerance {
    pub fn rel(rel: f64) -> Self {
        Self { rel, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub abs_error: f64,
    pub intervals: usize,
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Segment {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Segment {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&o.err)
    }
}

fn segment<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Segment {
    let hi = GL21.integrate(&mut *f, a, b);
    let lo = GL10.integrate(&mut *f, a, b);
    Segment { a, b, value: hi, err: (hi - lo).abs() }
}

/// Globally adaptive Gauss-Legendre (21 vs 10 point) integration over the
/// partition given by `breaks` (sorted, at least two points).
pub fn adaptive_breaks<F: FnMut(f64) -> f64>(mut f: F, breaks: &[f64], tol: Tolerance) -> Result<Integral> {
    if breaks.len() < 2 {
        return Err(Error::Numerical("adaptive quadrature needs at least one interval".into()));
    }
    let mut heap = BinaryHeap::new();
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            heap.push(segment(&mut f, w[0], w[1]));
        }
    }
    loop {
        let (mut value, mut err, mut mag) = (0.0, 0.0, 0.0);
        for s in heap.iter() {
            value += s.value;
            err += s.err;
            mag += s.value.abs();
        }
        if !value.is_finite() {
            return Err(Error::Numerical("non-finite integrand encountered".into()));
        }
        let target = tol.abs.max(tol.rel * value.abs()).max(1e-15 * mag);
        if err <= target || heap.is_empty() {
            return Ok(Integral { value, abs_error: err, intervals: heap.len() });
        }
        if heap.len() >= tol.max_intervals {
            return Err(Error::Numerical(format!(
                "adaptive quadrature did not converge: value {value:e}, error estimate {err:e}, target {target:e}, {} intervals",
                heap.len()
            )));
        }
        let worst = heap.pop().expect("nonempty");
        let m = 0.5 * (worst.a + worst.b);
        if m <= worst.a || m >= worst.b || (worst.b - worst.a) <= 4.0 * f64::EPSILON * worst.a.abs().max(worst.b.abs()) {
            // cannot split further; freeze with zero error
            heap.push(Segment { err: 0.0, ..worst });
            continue;
        }
        heap.push(segment(&mut f, worst.a, m));
        heap.push(segment(&mut f, m, worst.b));
    }
}

pub fn adaptive<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<Integral> {
    adaptive_breaks(f, &[a, b], tol)
}

/// ∫_lo^hi f(k) dk for 0 < lo < hi, integrated in ln k starting from one
/// interval per decade.
pub fn integrate_log<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: Tolerance) -> Result<Integral> {
    if !(lo > 0.0 && hi > lo) {
        return Ok(Integral { value: 0.0, abs_error: 0.0, intervals: 0 });
    }
    let (ua, ub) = (lo.ln(), hi.ln());
    let n = (((ub - ua) / std::f64::consts::LN_10).ceil() as usize).max(1);
    let breaks: Vec<f64> = (0..=n).map(|i| ua + (ub - ua) * i as f64 / n as f64).collect();
    adaptive_breaks(
        |u| {
            let k = u.exp();
            f(k) * k
        },
        &breaks,
        tol,
    )
}

/// Wynn epsilon extrapolation of a sequence of partial sums. Returns the
/// estimate and the difference between the two latest even-column entries.
pub fn wynn_epsilon(s: &[f64]) -> (f64, f64) {
    let n = s.len();
    if n == 0 {
        return (0.0, f64::INFINITY);
    }
    if n < 3 {
        let last = s[n - 1];
        let d = if n == 2 { (s[1] - s[0]).abs() } else { f64::INFINITY };
        return (last, d);
    }
    // e[k][j]: column k, row j
    let mut prev = vec![0.0; n + 1]; // eps_{-1}
    let mut cur: Vec<f64> = s.to_vec(); // eps_0
    let mut best = s[n - 1];
    let mut best_prev = s[n - 2];
    let mut col = 0;
    while cur.len() > 1 {
        let mut next = Vec::with_capacity(cur.len() - 1);
        for j in 0..cur.len() - 1 {
            let d = cur[j + 1] - cur[j];
            if d == 0.0 || !d.is_finite() {
                // the table has converged or broken down at this column
                return if col % 2 == 0 { (cur[j + 1], 0.0) } else { (best, (best - best_prev).abs()) };
            }
            next.push(prev[j + 1] + 1.0 / d);
        }
        prev = cur;
        cur = next;
        col += 1;
        if col % 2 == 0 && !cur.is_empty() {
            let m = cur.len();
            if cur[m - 1].is_finite() {
                best = cur[m - 1];
                best_prev = if m >= 2 { cur[m - 2] } else { prev[prev.len() - 1] };
            }
        }
    }
    (best, (best - best_prev).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trig {
    Sin,
    Cos,
}

/// ∫_start^∞ g(k)·trig(ω k) dk with g eventually slowly varying or
/// decaying. Integrates between consecutive zeros and accelerates the
/// alternating partial sums. `scale` sets the absolute tolerance floor.
pub fn oscillatory_tail<G: FnMut(f64) -> f64>(
    mut g: G,
    omega: f64,
    start: f64,
    trig: Trig,
    rel: f64,
    scale: f64,
) -> Result<Integral> {
    if !(omega > 0.0) {
        return Err(Error::Numerical("oscillatory tail needs omega > 0".into()));
    }
    let pi = std::f64::consts::PI;
    let offset = match trig {
        Trig::Sin => 0.0,
        Trig::Cos => 0.5,
    };
    // zeros at (n + offset)·π/ω
    let first_n = (start * omega / pi - offset).floor() + 1.0;
    let zero = |n: f64| (n + offset) * pi / omega;
    let tol = Tolerance { abs: 0.0, rel: rel * 0.1, max_intervals: 5_000 };
    let w = |k: f64| match trig {
        Trig::Sin => (omega * k).sin(),
        Trig::Cos => (omega * k).cos(),
    };
    let mut partial = Vec::with_capacity(64);
    let mut acc = 0.0;
    let mut total_intervals = 0;
    let first_hi = zero(first_n);
    let head = if start <= 0.0 {
        integrate_log(|k| g(k) * w(k), first_hi * 1e-18, first_hi, tol)?
    } else {
        adaptive(|k| g(k) * w(k), start, first_hi, tol)?
    };
    acc += head.value;
    total_intervals += head.intervals;
    partial.push(acc);
    let mut last_est = f64::NAN;
    let mut stable = 0;
    let max_panels = 600;
    for p in 0..max_panels {
        let n = first_n + p as f64;
        let (a, b) = (zero(n), zero(n + 1.0));
        let piece = adaptive(|k| g(k) * w(k), a, b, tol)?;
        acc += piece.value;
        total_intervals += piece.intervals;
        partial.push(acc);
        if partial.len() >= 6 {
            let window = &partial[partial.len().saturating_sub(40)..];
            let (est, _) = wynn_epsilon(window);
            let target = (rel * est.abs()).max(scale * rel);
            if (est - last_est).abs() <= target && piece.value.abs() <= (est.abs() + scale) * 10.0 {
                stable += 1;
                if stable >= 3 {
                    return Ok(Integral { value: est, abs_error: (est - last_est).abs(), intervals: total_intervals });
                }
            } else {
                stable = 0;
            }
            last_est = est;
        }
    }
    Err(Error::Numerical(format!(
        "oscillatory tail did not converge after {max_panels} panels (omega = {omega:e}, start = {start:e}, last estimate {last_est:e})"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl_exact_for_polynomials() {
        let r = GaussLegendre::new(5);
        let v = r.integrate(|x| x.powi(9) + 3.0 * x.powi(8), -1.0, 1.0);
        assert!((v - 6.0 / 9.0).abs() < 1e-14);
        let s: f64 = GaussLegendre::new(21).weights.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_sqrt_singularity() {
        let r = adaptive(|x: f64| x.sqrt(), 0.0, 1.0, Tolerance::rel(1e-12)).unwrap();
        assert!((r.value - 2.0 / 3.0).abs() < 1e-11);
    }

    #[test]
    fn wynn_sums_alternating_harmonic() {
        let mut s = Vec::new();
        let mut acc = 0.0;
        for k in 1..=20 {
            acc += if k % 2 == 1 { 1.0 } else { -1.0 } / k as f64;
            s.push(acc);
        }
        let (v, _) = wynn_epsilon(&s);
        assert!((v - 2f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn dirichlet_integral() {
        // ∫_0^∞ sin(k)/k dk = π/2
        let r = oscillatory_tail(|k: f64| 1.0 / k, 1.0, 0.0, Trig::Sin, 1e-11, 1.0).unwrap();
        assert!((r.value - std::f64::consts::FRAC_PI_2).abs() < 1e-9, "{}", r.value);
    }

    #[test]
    fn power_sine_integral() {
        // ∫_0^∞ k^{-2/3} sin k dk = Γ(1/3) sin(π/6)
        let exact = libm::tgamma(1.0 / 3.0) * 0.5;
        let r = oscillatory_tail(|k: f64| k.powf(-2.0 / 3.0), 1.0, 0.0, Trig::Sin, 1e-11, 1.0).unwrap();
        assert!((r.value / exact - 1.0).abs() < 1e-9, "{} vs {exact}", r.value);
    }
}
