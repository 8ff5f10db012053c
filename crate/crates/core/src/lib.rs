//! Gravity-induced decoherence in the Karolyhazy and Diósi models.
//!
//! The K-model treats spacetime as an ensemble of metrics whose g₀₀
//! fluctuation γ obeys the wave equation with spectrum f(k) = l_p^{2/3}k^{-5/6};
//! the D-model treats the Newtonian potential as white noise in time with a
//! Għ/|x − x′| spatial correlation. The crate synthesizes both noises,
//! evaluates their correlation kernels, checks the spacetime uncertainty
//! bounds they imply, solves for localization lengths and evolves density
//! matrices under the corresponding master equations.

pub mod bounds;
pub mod correlation;
pub mod decoherence;
pub mod error;
pub mod master;
pub mod noise;
pub mod quadrature;
pub mod stats;
pub mod units;

pub use error::{Error, Result};
pub use units::{PhysicalConstants, UnitMode, UnitSystem};
