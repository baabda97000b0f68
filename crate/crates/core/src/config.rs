//! Periodic planar configurations: the radii r_i(theta) of the primaries,
//! their masses, and the constants derived from them.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};
use std::io::BufRead;

use crate::error::ConfigError;
use crate::kepler::solve_kepler_unchecked;
use crate::tabulated::TabulatedOrbit;

/// Tolerance used when verifying declared time-reversal symmetry points.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Number of phase samples used by symmetry verification.
const SYMMETRY_GRID: usize = 512;

/// Displacement of either body of the regularized collinear pair at
/// fictional time `s`: `x(s) = X(s)^2` with `X(s) = (sqrt(2)/2) sin(s/2)`.
///
/// 2*pi periodic, maximal (1/2) at odd multiples of pi and exactly zero at
/// even multiples, where the bodies collide.
pub fn collinear_radius(s: f64) -> f64 {
    let reduced = s - TAU * (s / TAU).round();
    let half = (0.5 * reduced).sin();
    0.5 * half * half
}

/// How the radii are produced.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfigKind {
    /// Constant radius per body.
    Circular { radii: Vec<f64> },
    /// Two (or more) bodies on confocal Kepler ellipses sharing one mean
    /// motion. Body i sits at `scales[i] * a (1 - e cos E)`; phase zero is
    /// apoapsis.
    EllipticKeplerPair {
        semi_major_axis: f64,
        eccentricity: f64,
        scales: Vec<f64>,
    },
    /// Equal-mass collinear pair with E = -1, in Levi-Civita fictional time.
    RegularizedCollinearPair,
    Tabulated(TabulatedOrbit),
}

/// Which clock the phase variable theta measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeMode {
    Physical,
    /// theta is a fictional clock; `dilation(theta) = dt/dtheta` converts
    /// physical rates into rates per unit of theta.
    Fictional,
}

/// A T-periodic planar configuration. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarConfiguration {
    masses: Vec<f64>,
    period: f64,
    kind: ConfigKind,
    symmetry_points: Vec<f64>,
    max_radii: Vec<f64>,
}

impl PlanarConfiguration {
    fn build(
        masses: Vec<f64>,
        period: f64,
        kind: ConfigKind,
        symmetry_points: Vec<f64>,
    ) -> Result<Self, ConfigError> {
        if masses.is_empty() {
            return Err(ConfigError::NoBodies);
        }
        for (index, &value) in masses.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ConfigError::NonPositiveMass { index, value });
            }
        }
        if !(period > 0.0) || !period.is_finite() {
            return Err(ConfigError::BadPeriod(period));
        }
        let n = masses.len();
        let max_radii = match &kind {
            ConfigKind::Circular { radii } => {
                check_count(n, radii.len())?;
                for &r in radii {
                    check_length("radius", r)?;
                }
                radii.clone()
            }
            ConfigKind::EllipticKeplerPair {
                semi_major_axis,
                eccentricity,
                scales,
            } => {
                check_count(n, scales.len())?;
                check_length("semi-major axis", *semi_major_axis)?;
                if !(0.0..1.0).contains(eccentricity) {
                    return Err(ConfigError::EccentricityOutOfRange(*eccentricity));
                }
                for &s in scales {
                    check_length("body scale", s)?;
                }
                let apo = semi_major_axis * (1.0 + eccentricity);
                scales.iter().map(|s| s * apo).collect()
            }
            ConfigKind::RegularizedCollinearPair => {
                check_count(n, 2)?;
                vec![0.5, 0.5]
            }
            ConfigKind::Tabulated(table) => {
                check_count(n, table.body_count())?;
                table.max_radii()
            }
        };
        let config = PlanarConfiguration {
            masses,
            period,
            kind,
            symmetry_points,
            max_radii,
        };
        for &t0 in &config.symmetry_points {
            let mismatch = config.symmetry_mismatch(t0);
            if mismatch > SYMMETRY_TOL * config.max_radius().max(1.0) {
                return Err(ConfigError::SymmetryViolated { t0, mismatch });
            }
        }
        Ok(config)
    }

    /// Bodies on fixed circles. Every phase is a time-reversal symmetry.
    pub fn circular(masses: Vec<f64>, radii: Vec<f64>, period: f64) -> Result<Self, ConfigError> {
        Self::build(
            masses,
            period,
            ConfigKind::Circular { radii },
            vec![0.0, 0.5 * period],
        )
    }

    /// Bodies on Kepler ellipses with apoapsis at phase zero. Symmetric
    /// about 0 and T/2.
    pub fn elliptic(
        masses: Vec<f64>,
        semi_major_axis: f64,
        eccentricity: f64,
        scales: Vec<f64>,
        period: f64,
    ) -> Result<Self, ConfigError> {
        Self::build(
            masses,
            period,
            ConfigKind::EllipticKeplerPair {
                semi_major_axis,
                eccentricity,
                scales,
            },
            vec![0.0, 0.5 * period],
        )
    }

    /// The e = 1 collinear pair of unit masses in fictional time; period
    /// 2*pi, collisions at even multiples of pi.
    pub fn regularized_collinear() -> Self {
        Self::build(
            vec![1.0, 1.0],
            TAU,
            ConfigKind::RegularizedCollinearPair,
            vec![0.0, PI],
        )
        .expect("collinear pair constants are valid")
    }

    pub fn tabulated(table: TabulatedOrbit) -> Result<Self, ConfigError> {
        let masses = table.masses().to_vec();
        let period = table.period();
        let symmetry = table.symmetry_points().to_vec();
        Self::build(masses, period, ConfigKind::Tabulated(table), symmetry)
    }

    /// Reads a tabulated configuration from the CSV format accepted by
    /// [`TabulatedOrbit::read`].
    pub fn load_tabulated<R: BufRead>(source: R) -> Result<Self, ConfigError> {
        Self::tabulated(TabulatedOrbit::read(source)?)
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn body_count(&self) -> usize {
        self.masses.len()
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn kind(&self) -> &ConfigKind {
        &self.kind
    }

    pub fn time_mode(&self) -> TimeMode {
        match &self.kind {
            ConfigKind::RegularizedCollinearPair => TimeMode::Fictional,
            ConfigKind::Tabulated(t) if t.has_dilation() => TimeMode::Fictional,
            _ => TimeMode::Physical,
        }
    }

    /// Total mass M.
    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Per-body maxima R_i of r_i over one period.
    pub fn max_radii(&self) -> &[f64] {
        &self.max_radii
    }

    /// The largest of the R_i.
    pub fn max_radius(&self) -> f64 {
        self.max_radii.iter().cloned().fold(0.0, f64::max)
    }

    /// Height above which the vertical acceleration is negative and
    /// increasing in q at every phase: `max_i R_i / sqrt(2)`.
    pub fn q_mono(&self) -> f64 {
        self.max_radius() * FRAC_1_SQRT_2
    }

    /// Declared time-reversal symmetry points t0 (r_i(t0 - t) = r_i(t0 + t)).
    pub fn symmetry_points(&self) -> &[f64] {
        &self.symmetry_points
    }

    /// Whether `t0` may be used as a reflection axis. Circular
    /// configurations are symmetric about every phase; otherwise `t0` must
    /// match a declared point modulo T.
    pub fn is_symmetry_point(&self, t0: f64) -> bool {
        if matches!(self.kind, ConfigKind::Circular { .. }) {
            return true;
        }
        let tol = 1e-9 * self.period;
        self.symmetry_points.iter().any(|&d| {
            let diff = (t0 - d).rem_euclid(self.period);
            diff < tol || self.period - diff < tol
        })
    }

    /// Largest |r_i(t0 - t) - r_i(t0 + t)| over a uniform grid of one period.
    pub fn symmetry_mismatch(&self, t0: f64) -> f64 {
        let n = self.body_count();
        let mut left = vec![0.0; n];
        let mut right = vec![0.0; n];
        let mut worst: f64 = 0.0;
        for k in 0..=SYMMETRY_GRID {
            let t = self.period * k as f64 / SYMMETRY_GRID as f64;
            self.radii_into(t0 - t, &mut left);
            self.radii_into(t0 + t, &mut right);
            for (a, b) in left.iter().zip(&right) {
                worst = worst.max((a - b).abs());
            }
        }
        worst
    }

    /// Radii of all bodies at phase theta (reduced modulo T).
    pub fn radii(&self, theta: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.body_count()];
        self.radii_into(theta, &mut out);
        out
    }

    /// Allocation-free form of [`radii`](Self::radii). `out` must hold one
    /// slot per body.
    pub fn radii_into(&self, theta: f64, out: &mut [f64]) {
        match &self.kind {
            ConfigKind::Circular { radii } => out.copy_from_slice(radii),
            ConfigKind::EllipticKeplerPair {
                semi_major_axis,
                eccentricity,
                scales,
            } => {
                let base = kepler_radius(*semi_major_axis, *eccentricity, self.period, theta);
                for (slot, s) in out.iter_mut().zip(scales) {
                    *slot = s * base;
                }
            }
            ConfigKind::RegularizedCollinearPair => {
                let x = collinear_radius(theta);
                out.fill(x);
            }
            ConfigKind::Tabulated(table) => table.radii_into(theta, out),
        }
    }

    /// dt/dtheta: 1 for physical-time configurations, the collinear
    /// displacement for the regularized pair, the tabulated column otherwise.
    pub fn dilation(&self, theta: f64) -> f64 {
        match &self.kind {
            ConfigKind::RegularizedCollinearPair => collinear_radius(theta),
            ConfigKind::Tabulated(table) => table.dilation(theta),
            _ => 1.0,
        }
    }

    /// Phases in [0, T) at which some radius vanishes, when known in closed
    /// form. Tabulated data report nodes where a radius is exactly zero.
    pub fn collision_phases(&self) -> Vec<f64> {
        match &self.kind {
            ConfigKind::RegularizedCollinearPair => vec![0.0],
            ConfigKind::Tabulated(_) => {
                let n = 4096;
                let mut out = Vec::new();
                let mut r = vec![0.0; self.body_count()];
                for k in 0..n {
                    let t = self.period * k as f64 / n as f64;
                    self.radii_into(t, &mut r);
                    if r.iter().any(|&x| x == 0.0) {
                        out.push(t);
                    }
                }
                out
            }
            _ => Vec::new(),
        }
    }

    /// Smallest radius over one period, sampled on a fine grid.
    pub fn min_radius_sampled(&self, samples: usize) -> f64 {
        let mut r = vec![0.0; self.body_count()];
        let mut lo = f64::INFINITY;
        for k in 0..=samples {
            self.radii_into(self.period * k as f64 / samples as f64, &mut r);
            lo = r.iter().cloned().fold(lo, f64::min);
        }
        lo
    }
}

fn kepler_radius(a: f64, e: f64, period: f64, theta: f64) -> f64 {
    // Phase zero is apoapsis, i.e. mean anomaly pi.
    let phase = (theta / period).rem_euclid(1.0);
    let mean = PI + TAU * phase;
    let ecc = solve_kepler_unchecked(mean, e);
    a * (1.0 - e * ecc.cos())
}

fn check_count(expected: usize, got: usize) -> Result<(), ConfigError> {
    if expected != got {
        return Err(ConfigError::BodyCountMismatch { expected, got });
    }
    Ok(())
}

fn check_length(what: &'static str, value: f64) -> Result<(), ConfigError> {
    if !(value >= 0.0) || !value.is_finite() {
        return Err(ConfigError::BadLength { what, value });
    }
    Ok(())
}
