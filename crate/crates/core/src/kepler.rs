//! Kepler-equation solver and a desk integrator used to calibrate elliptic
//! pair presets.

use std::f64::consts::{PI, TAU};

use crate::dynamics::rk4_step;
use crate::error::NumericError;

const KEPLER_TOL: f64 = 1e-13;

/// Solves `E - e sin E = mean_anomaly` for the eccentric anomaly.
///
/// Newton iteration safeguarded by a bracket on the reduced branch; any
/// step that leaves the bracket is replaced by bisection.
pub fn solve_kepler(mean_anomaly: f64, e: f64) -> Result<f64, NumericError> {
    if !(0.0..1.0).contains(&e) {
        return Err(NumericError::domain(format!(
            "eccentricity must lie in [0, 1), got {e}"
        )));
    }
    if !mean_anomaly.is_finite() {
        return Err(NumericError::domain("mean anomaly must be finite"));
    }
    Ok(solve_kepler_unchecked(mean_anomaly, e))
}

/// Same as [`solve_kepler`] without argument validation. Callers guarantee
/// `0 <= e < 1` and a finite anomaly.
pub(crate) fn solve_kepler_unchecked(mean_anomaly: f64, e: f64) -> f64 {
    let turns = (mean_anomaly / TAU).floor();
    let m = mean_anomaly - turns * TAU;
    if e == 0.0 {
        return mean_anomaly;
    }
    // On [0, 2pi] the residual is monotone with f(0) <= 0 <= f(2pi).
    let residual = |x: f64| x - e * x.sin() - m;
    let (mut lo, mut hi) = (0.0_f64, TAU);
    let mut x = if e < 0.8 { m + e * m.sin() } else { PI };
    x = x.clamp(lo, hi);
    for _ in 0..100 {
        let f = residual(x);
        if f.abs() <= KEPLER_TOL * 0.01 {
            break;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let slope = 1.0 - e * x.cos();
        let newton = x - f / slope;
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 1e-16 * x.abs().max(1.0) {
            x = next;
            break;
        }
        x = next;
    }
    x + turns * TAU
}

/// Orbit elements of one body of a bound pair about the barycentre,
/// as measured by [`calibrate_pair`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCalibration {
    /// Semi-major axis of each body's ellipse about the barycentre.
    pub semi_major_axes: [f64; 2],
    pub eccentricity: f64,
    pub period: f64,
    /// Radii of each body at the initial instant.
    pub initial_radii: [f64; 2],
}

/// Desk integration of a planar Newtonian pair with gravitational constant
/// `g`, measuring its period and apsidal radii.
///
/// The relative orbit is integrated with classical RK4 until the separation
/// has passed through a full radial oscillation; the period is the time
/// between successive maxima of the separation, each refined by a
/// parabolic fit through the three bracketing samples.
pub fn calibrate_pair(
    masses: [f64; 2],
    positions: [[f64; 2]; 2],
    velocities: [[f64; 2]; 2],
    g: f64,
    steps_per_unit: usize,
) -> Result<PairCalibration, NumericError> {
    let mu = g * (masses[0] + masses[1]);
    if !(mu > 0.0) {
        return Err(NumericError::domain("gravitational parameter must be positive"));
    }
    let rel = [
        positions[0][0] - positions[1][0],
        positions[0][1] - positions[1][1],
        velocities[0][0] - velocities[1][0],
        velocities[0][1] - velocities[1][1],
    ];
    let sep0 = rel[0].hypot(rel[1]);
    let energy = 0.5 * (rel[2] * rel[2] + rel[3] * rel[3]) - mu / sep0;
    if energy >= 0.0 {
        return Err(NumericError::domain(format!(
            "pair is unbound (specific energy {energy:.6} >= 0); no period exists"
        )));
    }
    let field = |_t: f64, y: &[f64; 4]| {
        let r2 = y[0] * y[0] + y[1] * y[1];
        let k = -mu / (r2 * r2.sqrt());
        [y[2], y[3], k * y[0], k * y[1]]
    };
    // Rough Kepler period bounds the run: integrate 2.2 estimated periods.
    let a_est = -mu / (2.0 * energy);
    let t_est = TAU * (a_est.powi(3) / mu).sqrt();
    let h = 1.0 / steps_per_unit as f64;
    let n_steps = ((2.2 * t_est) / h).ceil() as usize;

    let sep = |y: &[f64; 4]| y[0].hypot(y[1]);
    let mut y = rel;
    let mut prev = [sep0, sep0];
    let mut r_min = sep0;
    let mut r_max = sep0;
    let mut maxima = Vec::new();
    for n in 0..n_steps {
        let t = n as f64 * h;
        y = rk4_step(&field, t, &y, h);
        let s = sep(&y);
        r_min = r_min.min(s);
        r_max = r_max.max(s);
        if n >= 1 {
            let (a, b, c) = (prev[0], prev[1], s);
            let is_max = b > a && b >= c;
            let is_min = b < a && b <= c;
            if is_max || is_min {
                // Parabola through the three samples around the extremum.
                let curvature = a - 2.0 * b + c;
                let (offset, peak) = if curvature != 0.0 {
                    let off = 0.5 * (a - c) / curvature;
                    (off, b - 0.125 * (a - c) * (a - c) / curvature)
                } else {
                    (0.0, b)
                };
                if is_max {
                    maxima.push(t + offset * h);
                    r_max = r_max.max(peak);
                } else {
                    r_min = r_min.min(peak);
                }
            }
        }
        prev = [prev[1], s];
    }
    let period = match (maxima.first(), maxima.get(1)) {
        (Some(&t1), Some(&t2)) => t2 - t1,
        _ => {
            return Err(NumericError::domain(
                "fewer than two apsidal maxima found during calibration run",
            ))
        }
    };
    let a_rel = 0.5 * (r_min + r_max);
    let e = (r_max - r_min) / (r_max + r_min);
    let total = masses[0] + masses[1];
    let scale = [masses[1] / total, masses[0] / total];
    Ok(PairCalibration {
        semi_major_axes: [a_rel * scale[0], a_rel * scale[1]],
        eccentricity: e,
        period,
        initial_radii: [sep0 * scale[0], sep0 * scale[1]],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bisect_kepler(m: f64, e: f64) -> f64 {
        let (mut lo, mut hi) = (0.0_f64, TAU);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid - e * mid.sin() - m < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn circular_case_is_identity() {
        assert_eq!(solve_kepler(0.8, 0.0).unwrap(), 0.8);
    }

    #[test]
    fn half_turn_is_fixed() {
        let e_anom = solve_kepler(PI, 0.7).unwrap();
        assert!((e_anom - PI).abs() < 1e-13);
    }

    #[test]
    fn matches_bisection_oracle() {
        let oracle = bisect_kepler(1.0, 0.5);
        assert!((oracle - 1.4987011).abs() < 1e-6);
        let got = solve_kepler(1.0, 0.5).unwrap();
        assert!((got - oracle).abs() < 1e-13, "{got} vs {oracle}");
    }

    #[test]
    fn residual_small_across_range() {
        for &e in &[0.0, 0.1, 0.5, 0.9, 0.99, 0.999] {
            for k in -20..=20 {
                let m = k as f64 * 0.37;
                let x = solve_kepler(m, e).unwrap();
                assert!((x - e * x.sin() - m).abs() < 1e-13, "e={e} m={m}");
            }
        }
    }

    #[test]
    fn rejects_bad_eccentricity() {
        assert!(solve_kepler(1.0, 1.0).is_err());
        assert!(solve_kepler(1.0, -0.1).is_err());
    }

    #[test]
    fn unit_constant_pair_is_unbound() {
        let err = calibrate_pair(
            [1.0, 1.0],
            [[1.0, 0.0], [-1.0, 0.0]],
            [[0.0, 1.0], [0.0, -1.0]],
            1.0,
            2000,
        );
        assert!(err.is_err());
    }
}
