//! Built-in configurations.

use std::f64::consts::TAU;

use crate::config::PlanarConfiguration;

/// Gravitational constant under which the elliptic preset's initial data,
/// bodies at (+-1, 0) moving with (0, +-1), form a bound pair whose period
/// matches the reference value. With G = 1 the same data are unbound.
pub const PAPER_KEPLER_GRAVITY: f64 = 8.0;

/// Reference period quoted for the elliptic example.
pub const PAPER_KEPLER_REFERENCE_PERIOD: f64 = 2.4183;

/// Semi-major axis of each body's ellipse about the origin.
pub const PAPER_KEPLER_SEMI_MAJOR_AXIS: f64 = 2.0 / 3.0;
pub const PAPER_KEPLER_ECCENTRICITY: f64 = 0.5;

/// `2 pi sqrt(a^3 / mu)` for the pair: each body's orbit has a = 2/3 and
/// an effective central parameter of 2.
pub fn paper_kepler_period() -> f64 {
    TAU * (4.0_f64 / 27.0).sqrt()
}

#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub config: PlanarConfiguration,
    /// A period quoted elsewhere that the preset is compared against.
    pub reference_period: Option<f64>,
}

/// Unit-mass pair on the unit circle; period 2 pi (the dynamics are
/// autonomous, so the period only sets the phase chart).
pub fn circular() -> PlanarConfiguration {
    PlanarConfiguration::circular(vec![1.0, 1.0], vec![1.0, 1.0], TAU)
        .expect("circular preset is valid")
}

/// Equal unit masses on Kepler ellipses, apoapsis radius 1 at phase 0 and
/// periapsis 1/3 at T/2.
///
/// Constants come from [`crate::kepler::calibrate_pair`] applied to the
/// initial data above with [`PAPER_KEPLER_GRAVITY`]; the desk integration
/// reproduces a = 2/3, e = 1/2 and T = 2 pi sqrt(4/27) ~ 2.41840, which are
/// stored in closed form.
pub fn paper_kepler() -> PlanarConfiguration {
    PlanarConfiguration::elliptic(
        vec![1.0, 1.0],
        PAPER_KEPLER_SEMI_MAJOR_AXIS,
        PAPER_KEPLER_ECCENTRICITY,
        vec![1.0, 1.0],
        paper_kepler_period(),
    )
    .expect("elliptic preset is valid")
}

/// The e = 1 collinear pair in fictional time; radii x(s) = sin^2(s/2)/2.
///
/// The radius comes from the regularized solution X(s) = (sqrt 2 / 2)
/// sin(s/2) with x = X^2 and dt/ds = X^2. A closed form written as
/// |(sqrt 2 / 2) sin(s/2)| also circulates for this orbit; it is X, not x.
pub fn collinear_e1() -> PlanarConfiguration {
    PlanarConfiguration::regularized_collinear()
}

pub fn all() -> Vec<Preset> {
    vec![
        Preset {
            name: "circular",
            description: "unit masses on the unit circle (autonomous)",
            config: circular(),
            reference_period: None,
        },
        Preset {
            name: "paper-kepler",
            description: "elliptic Kepler pair, a = 2/3, e = 1/2, apoapsis at phase 0",
            config: paper_kepler(),
            reference_period: Some(PAPER_KEPLER_REFERENCE_PERIOD),
        },
        Preset {
            name: "collinear-e1",
            description: "e = 1 collinear pair, regularized fictional time",
            config: collinear_e1(),
            reference_period: None,
        },
    ]
}

pub fn by_name(name: &str) -> Option<Preset> {
    all().into_iter().find(|p| p.name == name)
}
