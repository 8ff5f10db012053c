//! Physical constants, CGS and Planck-scaled unit systems, and log-space
//! evaluation of products whose intermediate values would overflow.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// G, ħ and c in some consistent unit system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalConstants {
    pub g: f64,
    pub hbar: f64,
    pub c: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::cgs()
    }
}

impl PhysicalConstants {
    pub fn new(g: f64, hbar: f64, c: f64) -> Result<Self> {
        for (name, v) in [("G", g), ("hbar", hbar), ("c", c)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("constant {name} must be positive, got {v}")));
            }
        }
        Ok(Self { g, hbar, c })
    }

    /// CGS defaults.
    pub fn cgs() -> Self {
        Self { g: 6.674e-8, hbar: 1.0546e-27, c: 2.9979e10 }
    }

    pub fn planck_length(&self) -> f64 {
        (self.hbar * self.g / (self.c * self.c * self.c)).sqrt()
    }

    pub fn planck_time(&self) -> f64 {
        self.planck_length() / self.c
    }

    pub fn planck_mass(&self) -> f64 {
        (self.hbar * self.c / self.g).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitMode {
    Cgs,
    Scaled,
}

/// Powers of length, time and mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub length: f64,
    pub time: f64,
    pub mass: f64,
}

impl Dimension {
    pub const NONE: Dimension = Dimension { length: 0.0, time: 0.0, mass: 0.0 };
    pub const LENGTH: Dimension = Dimension { length: 1.0, time: 0.0, mass: 0.0 };
    pub const TIME: Dimension = Dimension { length: 0.0, time: 1.0, mass: 0.0 };
    pub const MASS: Dimension = Dimension { length: 0.0, time: 0.0, mass: 1.0 };

    pub const fn new(length: f64, time: f64, mass: f64) -> Self {
        Self { length, time, mass }
    }

    /// Parses signatures like `"cm^3 g^-1 s^-2"`, `"L^2/3"` or `"1"`.
    ///
    /// Accepted symbols: `cm`/`L`/`length`, `s`/`T`/`time`, `g`/`M`/`mass`.
    /// Factors are separated by whitespace or `*`; exponents may be integers,
    /// decimals or fractions.
    pub fn parse(sig: &str) -> Result<Self> {
        let mut dim = Dimension::NONE;
        let sig = sig.trim();
        if sig.is_empty() || sig == "1" {
            return Ok(dim);
        }
        for tok in sig.split(|c: char| c.is_whitespace() || c == '*').filter(|t| !t.is_empty()) {
            let (sym, exp) = match tok.split_once('^') {
                Some((s, e)) => (s, parse_exponent(e, sig)?),
                None => (tok, 1.0),
            };
            match sym {
                "cm" | "L" | "length" => dim.length += exp,
                "s" | "T" | "time" => dim.time += exp,
                "g" | "M" | "mass" => dim.mass += exp,
                _ => {
                    return Err(Error::Config(format!(
                        "unknown unit symbol `{sym}` in dimension signature `{sig}`"
                    )))
                }
            }
        }
        Ok(dim)
    }

    pub fn mul(self, other: Dimension) -> Dimension {
        Dimension::new(self.length + other.length, self.time + other.time, self.mass + other.mass)
    }

    pub fn powf(self, p: f64) -> Dimension {
        Dimension::new(self.length * p, self.time * p, self.mass * p)
    }
}

fn parse_exponent(e: &str, sig: &str) -> Result<f64> {
    let bad = || Error::Config(format!("bad exponent `{e}` in dimension signature `{sig}`"));
    let v = match e.split_once('/') {
        Some((n, d)) => {
            let n: f64 = n.trim().parse().map_err(|_| bad())?;
            let d: f64 = d.trim().parse().map_err(|_| bad())?;
            if d == 0.0 {
                return Err(bad());
            }
            n / d
        }
        None => e.trim().parse().map_err(|_| bad())?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad())
    }
}

/// A value tagged with its dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: f64,
    pub dim: Dimension,
}

impl Quantity {
    pub fn new(value: f64, dim: Dimension) -> Self {
        Self { value, dim }
    }

    pub fn parse(value: f64, signature: &str) -> Result<Self> {
        Ok(Self { value, dim: Dimension::parse(signature)? })
    }
}

/// Maps CGS quantities to internal units: one internal length unit is
/// `length_scale` cm, and so on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitSystem {
    pub mode: UnitMode,
    pub length_scale: f64,
    pub time_scale: f64,
    pub mass_scale: f64,
}

impl UnitSystem {
    pub fn cgs() -> Self {
        Self { mode: UnitMode::Cgs, length_scale: 1.0, time_scale: 1.0, mass_scale: 1.0 }
    }

    /// Planck units: G = ħ = c = l_p = 1.
    pub fn scaled(consts: &PhysicalConstants) -> Self {
        Self {
            mode: UnitMode::Scaled,
            length_scale: consts.planck_length(),
            time_scale: consts.planck_time(),
            mass_scale: consts.planck_mass(),
        }
    }

    pub fn new(mode: UnitMode, consts: &PhysicalConstants) -> Self {
        match mode {
            UnitMode::Cgs => Self::cgs(),
            UnitMode::Scaled => Self::scaled(consts),
        }
    }

    /// CGS size of one internal unit of `dim`.
    pub fn scale_of(&self, dim: Dimension) -> f64 {
        self.length_scale.powf(dim.length) * self.time_scale.powf(dim.time) * self.mass_scale.powf(dim.mass)
    }

    pub fn to_internal(&self, q: Quantity) -> Quantity {
        Quantity::new(q.value / self.scale_of(q.dim), q.dim)
    }

    pub fn to_physical(&self, q: Quantity) -> Quantity {
        Quantity::new(q.value * self.scale_of(q.dim), q.dim)
    }

    pub fn length(&self, cm: f64) -> f64 {
        cm / self.length_scale
    }

    pub fn time(&self, s: f64) -> f64 {
        s / self.time_scale
    }

    pub fn mass(&self, g: f64) -> f64 {
        g / self.mass_scale
    }

    /// Mass density in g/cm³ to internal units.
    pub fn density(&self, g_per_cm3: f64) -> f64 {
        g_per_cm3 * self.length_scale.powi(3) / self.mass_scale
    }

    /// The constants expressed in this system.
    pub fn internal_constants(&self, phys: &PhysicalConstants) -> PhysicalConstants {
        let g = self.to_internal(Quantity::new(phys.g, Dimension::new(3.0, -2.0, -1.0))).value;
        let hbar = self.to_internal(Quantity::new(phys.hbar, Dimension::new(2.0, -1.0, 1.0))).value;
        let c = self.to_internal(Quantity::new(phys.c, Dimension::new(1.0, -1.0, 0.0))).value;
        PhysicalConstants { g, hbar, c }
    }
}

/// `mantissa * 10^exponent` with `mantissa` in [1, 10).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Magnitude {
    pub mantissa: f64,
    pub exponent: i64,
}

impl Magnitude {
    pub fn from_log10(l: f64) -> Self {
        let mut exponent = l.floor();
        let mut mantissa = 10f64.powf(l - exponent);
        if mantissa >= 10.0 {
            mantissa /= 10.0;
            exponent += 1.0;
        }
        if mantissa < 1.0 {
            mantissa *= 10.0;
            exponent -= 1.0;
        }
        Self { mantissa, exponent: exponent as i64 }
    }

    pub fn log10(&self) -> f64 {
        self.exponent as f64 + self.mantissa.log10()
    }

    /// `None` when the value is not representable as a normal f64.
    pub fn value(&self) -> Option<f64> {
        let v = self.mantissa * 10f64.powi(self.exponent as i32);
        (v.is_finite() && v >= f64::MIN_POSITIVE && self.exponent.abs() < 400).then_some(v)
    }
}

/// Evaluates Π xᵢ^pᵢ in log space.
pub fn log_eval(factors: &[(f64, f64)]) -> Result<Magnitude> {
    let mut exp10 = 0.0f64;
    let mut rest = 0.0f64;
    for &(x, p) in factors {
        if !(x > 0.0) || !x.is_finite() || !p.is_finite() {
            return Err(domain(format!("log_eval factor must be positive and finite, got {x}^{p}")));
        }
        // split x = m·10^e so the large integer part carries no rounding
        let e = x.log10().floor();
        let m = x / 10f64.powf(e);
        let pe = p * e;
        let whole = pe.floor();
        exp10 += whole;
        rest += (pe - whole) + p * m.log10();
    }
    let shift = rest.floor();
    let mut mag = Magnitude::from_log10(rest - shift);
    mag.exponent += (exp10 + shift) as i64;
    Ok(mag)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planck_units_unity() {
        let phys = PhysicalConstants::cgs();
        let u = UnitSystem::scaled(&phys);
        let k = u.internal_constants(&phys);
        assert!((k.g - 1.0).abs() < 1e-12);
        assert!((k.hbar - 1.0).abs() < 1e-12);
        assert!((k.c - 1.0).abs() < 1e-12);
        assert!((k.planck_length() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parse_rejects_unknown() {
        assert!(matches!(Dimension::parse("cm^2 kg"), Err(Error::Config(_))));
        assert_eq!(Dimension::parse("cm^3 g^-1 s^-2").unwrap(), Dimension::new(3.0, -2.0, -1.0));
        assert_eq!(Dimension::parse("L^2/3").unwrap().length, 2.0 / 3.0);
    }

    #[test]
    fn magnitude_normalized() {
        let m = log_eval(&[(1.0, 1.0)]).unwrap();
        assert_eq!((m.mantissa, m.exponent), (1.0, 0));
        assert!(log_eval(&[(0.0, 1.0)]).is_err());
        assert!(log_eval(&[(-2.0, 1.0)]).is_err());
    }
}
