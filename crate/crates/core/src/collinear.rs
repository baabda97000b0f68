//! Levi-Civita regularization of the equal-mass collinear pair.
//!
//! Two unit masses sit at (+-x, 0) with momentum y = 2 dx/dt and
//! Hamiltonian H = y^2/4 - 1/(2x). With x = X^2, Y = 2Xy and dt/ds = X^2
//! the extended Hamiltonian becomes Gamma = Y^2/16 - 1/2 - X^2 E, whose flow
//! passes smoothly through collisions (X = 0).

use crate::dynamics::{integrate_until, Termination};
use crate::error::NumericError;

/// Regularized pair at fixed energy E.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizedPair {
    pub energy: f64,
}

/// State (X, Y, t) of the regularized pair; t is physical time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizedState {
    pub s: f64,
    pub big_x: f64,
    pub big_y: f64,
    pub t: f64,
}

impl RegularizedPair {
    pub fn new(energy: f64) -> Self {
        RegularizedPair { energy }
    }

    /// Gamma(X, Y); zero on physical orbits of energy E.
    pub fn gamma(&self, big_x: f64, big_y: f64) -> f64 {
        big_y * big_y / 16.0 - 0.5 - big_x * big_x * self.energy
    }

    /// d(X, Y, t)/ds = (Y/8, 2 X E, X^2).
    pub fn field(&self, y: &[f64; 3]) -> [f64; 3] {
        [y[1] / 8.0, 2.0 * y[0] * self.energy, y[0] * y[0]]
    }

    /// |Y| at collision on the Gamma = 0 surface.
    pub fn collision_momentum(&self) -> f64 {
        8.0_f64.sqrt()
    }

    /// State at maximum displacement X = sqrt(-1/(2E)), Y = 0 (needs E < 0),
    /// placed at fictional time `s`.
    pub fn apocentre(&self, s: f64) -> Result<RegularizedState, NumericError> {
        if !(self.energy < 0.0) {
            return Err(NumericError::domain("a maximum displacement needs E < 0"));
        }
        let x_max = -0.5 / self.energy;
        Ok(RegularizedState { s, big_x: x_max.sqrt(), big_y: 0.0, t: 0.0 })
    }

    /// Integrates from `start` with fixed fictional step `h` until X turns
    /// non-positive (collision), refining the collision to `refine_tol`.
    pub fn integrate_to_collision(
        &self,
        start: RegularizedState,
        h: f64,
        max_steps: usize,
        refine_tol: f64,
    ) -> Result<RegularizedState, NumericError> {
        let field = |_s: f64, y: &[f64; 3]| self.field(y);
        let traj = integrate_until(
            &field,
            start.s,
            [start.big_x, start.big_y, start.t],
            h,
            max_steps,
            refine_tol,
            |_, y| y[0] <= 0.0,
        )?;
        if traj.termination != Termination::Stopped {
            return Err(NumericError::domain("no collision within the step budget"));
        }
        let (s, y) = *traj.last();
        Ok(RegularizedState { s, big_x: y[0], big_y: y[1], t: y[2] })
    }
}

/// Physical displacement x = X^2 and velocity dx/dt = y/2 = Y/(4X).
pub fn to_physical(big_x: f64, big_y: f64) -> (f64, f64) {
    (big_x * big_x, big_y / (4.0 * big_x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::collinear_radius;
    use std::f64::consts::{PI, TAU};

    #[test]
    fn closed_form_solves_regularized_flow() {
        let pair = RegularizedPair::new(-1.0);
        let start = pair.apocentre(PI).unwrap();
        assert!((start.big_x - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(pair.gamma(start.big_x, start.big_y).abs() < 1e-15);
        let end = pair.integrate_to_collision(start, 1e-3, 10_000, 1e-12).unwrap();
        assert!((end.s - TAU).abs() < 1e-9, "{}", end.s);
        assert!((end.big_y.abs() - pair.collision_momentum()).abs() < 1e-9);
        // Half a fictional period covers a quarter of the physical period pi/2.
        assert!((end.t - PI / 4.0).abs() < 1e-9, "{}", end.t);
    }

    #[test]
    fn radius_is_square_of_regularized_coordinate() {
        for k in 0..100 {
            let s = 0.07 * k as f64;
            let big_x = 0.5f64.sqrt() * (0.5 * s).sin();
            assert!((collinear_radius(s) - big_x * big_x).abs() < 1e-15);
        }
    }

    #[test]
    fn physical_velocity_conserves_energy() {
        let pair = RegularizedPair::new(-1.0);
        let s = 2.0_f64;
        let big_x = 0.5f64.sqrt() * (0.5 * s).sin();
        let big_y = 2.0 * 2f64.sqrt() * (0.5 * s).cos();
        let (x, v) = to_physical(big_x, big_y);
        // x-dot^2 - 1/(2x) = E for the pair.
        assert!((v * v - 0.5 / x - pair.energy).abs() < 1e-12);
    }
}
