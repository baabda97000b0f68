//! Numerical machinery for Sitnikov-like restricted n+1-body problems.
//!
//! A massless particle moves on the axis through the centre of a periodic,
//! rotationally symmetric planar configuration. This crate integrates its
//! vertical motion, certifies escape or return from energy bounds, locates
//! the parabolic-escape boundary `f(theta)` at a fixed height by bisection,
//! and traces that boundary down to the `q = 0` plane.

pub mod classify;
pub mod collinear;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod kepler;
mod lanes;
pub mod presets;
pub mod separatrix;
pub mod tabulated;

pub use classify::{classify_trajectory, Classification, EnergyBounds};
pub use config::{collinear_radius, ConfigKind, PlanarConfiguration, TimeMode};
pub use dynamics::{Direction, IntegratorSettings, StateInv, StateStd};
pub use error::{ConfigError, NumericError, TableError};
pub use separatrix::{
    BisectionSettings, Branch, PlaneCurve, PlanePoint, ReturnMapPoint, SeparatrixCurve,
    SeparatrixSample,
};
