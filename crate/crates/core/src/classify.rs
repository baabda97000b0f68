//! Escape/return certification from the integrated energy bounds and the
//! forward-invariant cone of the inverted frame.

use crate::config::PlanarConfiguration;
use crate::dynamics::{rk4_step, Direction, IntegratorSettings, Lattice, ParticleField, StateInv, StateStd};
use crate::error::NumericError;

/// Strict-sign margin for the energy witnesses.
pub const DECISION_MARGIN: f64 = 1e-12;

/// E* = p^2/2 - M/q and E_* = p^2/2 - M/sqrt(R^2 + q^2).
///
/// While q, p > 0, E* never decreases and E_* never increases, so E* > 0
/// certifies escape and E_* < 0 certifies a future turning point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBounds {
    pub e_star: f64,
    pub e_substar: f64,
}

impl EnergyBounds {
    fn standard(q: f64, p: f64, m: f64, r2: f64) -> Self {
        let kin = 0.5 * p * p;
        EnergyBounds {
            e_star: kin - m / q,
            e_substar: kin - m / (r2 + q * q).sqrt(),
        }
    }

    /// Same bounds written in (Q, P): P^2/2 - M Q^2 and
    /// P^2/2 - M Q^2 / sqrt(R^2 Q^4 + 1).
    fn inverted(big_q: f64, big_p: f64, m: f64, r2: f64) -> Self {
        let kin = 0.5 * big_p * big_p;
        let q2 = big_q * big_q;
        EnergyBounds {
            e_star: kin - m * q2,
            e_substar: kin - m * q2 / (r2 * q2 * q2 + 1.0).sqrt(),
        }
    }
}

/// Both energy bounds at (q, p) with M the total mass and R the largest
/// radius over the period.
pub fn energy_bounds(
    q: f64,
    p: f64,
    config: &PlanarConfiguration,
) -> Result<EnergyBounds, NumericError> {
    if !(q > 0.0) {
        return Err(NumericError::domain(format!("energy bounds need q > 0, got {q}")));
    }
    let r = config.max_radius();
    Ok(EnergyBounds::standard(q, p, config.total_mass(), r * r))
}

/// P >= sqrt(2M) Q: the forward-invariant escape cone.
pub fn cone_test(s: &StateInv, total_mass: f64) -> bool {
    s.big_p >= (2.0 * total_mass).sqrt() * s.big_q
}

/// P on the curve E_* = 0 in the inverted frame.
pub fn e_substar_zero_curve(big_q: f64, total_mass: f64, max_radius: f64) -> f64 {
    let q4 = big_q.powi(4);
    (2.0 * total_mass).sqrt() * big_q / (max_radius * max_radius * q4 + 1.0).powf(0.25)
}

/// Verdict of a classification run. Times are elapsed phase from the start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Classification {
    Escape { witness: f64, decision_time: f64 },
    Return { witness: f64, decision_time: f64 },
    Undecided { elapsed: f64 },
}

impl Classification {
    pub fn is_escape(&self) -> bool {
        matches!(self, Classification::Escape { .. })
    }

    pub fn is_return(&self) -> bool {
        matches!(self, Classification::Return { .. })
    }

    pub fn is_undecided(&self) -> bool {
        matches!(self, Classification::Undecided { .. })
    }
}

/// Classifies a state with q > 0, p > 0 forward in time.
pub fn classify_trajectory(
    s0: StateStd,
    config: &PlanarConfiguration,
    settings: &IntegratorSettings,
) -> Result<Classification, NumericError> {
    classify_directed(s0, config, settings, Direction::Forward)
}

/// Classifies along `direction`. Backward runs need p < 0: the outward
/// velocity is `direction.sign() * p`.
pub fn classify_directed(
    s0: StateStd,
    config: &PlanarConfiguration,
    settings: &IntegratorSettings,
    direction: Direction,
) -> Result<Classification, NumericError> {
    settings.validate()?;
    let field = ParticleField::with_phase_grid(config, s0.theta, settings.h);
    let mut run = Classifier::new(&field, s0, settings.h, direction)?;
    run.run_until(settings.s_max)
}

/// Witness test on one sample; `y` is (q, p) or (Q, P) per `inverted`.
#[inline]
pub(crate) fn verdict(
    inverted: bool,
    y: &[f64; 2],
    sign: f64,
    total_mass: f64,
    r2: f64,
    elapsed: f64,
) -> Option<Classification> {
    let bounds = if inverted {
        EnergyBounds::inverted(y[0], y[1], total_mass, r2)
    } else {
        EnergyBounds::standard(y[0], y[1], total_mass, r2)
    };
    if sign * y[1] <= 0.0 || bounds.e_substar < -DECISION_MARGIN {
        return Some(Classification::Return { witness: bounds.e_substar, decision_time: elapsed });
    }
    if bounds.e_star > DECISION_MARGIN {
        return Some(Classification::Escape { witness: bounds.e_star, decision_time: elapsed });
    }
    None
}

/// Moves a standard-frame state past `q_switch` into the inverted frame.
#[inline]
pub(crate) fn switch_frame(y: &mut [f64; 2], q_switch: f64) -> bool {
    if y[0] > q_switch {
        y[0] = y[0].sqrt().recip();
        true
    } else {
        false
    }
}

#[derive(Debug, Clone, Copy)]
enum Frame {
    Standard,
    Inverted,
}

/// A resumable classification run. Calling [`Classifier::run_until`] with
/// a larger budget continues from where the previous call stopped.
#[derive(Debug, Clone)]
pub struct Classifier<'a, 'c> {
    field: &'a ParticleField<'c>,
    lattice: Option<Lattice<'a>>,
    sign: f64,
    h: f64,
    theta0: f64,
    steps: u64,
    /// Lattice slot of the current phase.
    slot: usize,
    y: [f64; 2],
    frame: Frame,
    q_switch: f64,
    total_mass: f64,
    r2: f64,
    verdict: Option<Classification>,
}

impl<'a, 'c> Classifier<'a, 'c> {
    pub fn new(
        field: &'a ParticleField<'c>,
        start: StateStd,
        h: f64,
        direction: Direction,
    ) -> Result<Self, NumericError> {
        let sign = direction.sign();
        if !(start.q > 0.0) || !(sign * start.p > 0.0) || !start.is_finite() {
            return Err(NumericError::domain(format!(
                "classification needs q > 0 and outward velocity > 0, got q = {}, p = {}",
                start.q, start.p
            )));
        }
        if !(h > 0.0) {
            return Err(NumericError::domain("step must be positive"));
        }
        let config = field.config();
        let r = config.max_radius();
        Ok(Classifier {
            field,
            lattice: field.lattice(start.theta, h),
            sign,
            h,
            theta0: start.theta,
            steps: 0,
            slot: 0,
            y: [start.q, start.p],
            frame: Frame::Standard,
            q_switch: start.q.max(1.0),
            total_mass: config.total_mass(),
            r2: r * r,
            verdict: None,
        })
    }

    fn theta(&self) -> f64 {
        self.theta0 + self.sign * self.steps as f64 * self.h
    }

    fn elapsed(&self) -> f64 {
        self.steps as f64 * self.h
    }

    /// Current state in standard coordinates (q = infinity when Q = 0).
    pub fn state(&self) -> StateStd {
        match self.frame {
            Frame::Standard => StateStd::new(self.y[0], self.y[1], self.theta()),
            Frame::Inverted => StateStd::new((self.y[0] * self.y[0]).recip(), self.y[1], self.theta()),
        }
    }

    fn check(&self) -> Option<Classification> {
        let inverted = matches!(self.frame, Frame::Inverted);
        verdict(inverted, &self.y, self.sign, self.total_mass, self.r2, self.elapsed())
    }

    /// Integrates until a verdict or until the elapsed phase reaches `s_max`.
    pub fn run_until(&mut self, s_max: f64) -> Result<Classification, NumericError> {
        if let Some(v) = self.verdict {
            return Ok(v);
        }
        if let Some(v) = self.check() {
            self.verdict = Some(v);
            return Ok(v);
        }
        let max_steps = (s_max / self.h).ceil() as u64;
        let hs = self.sign * self.h;
        let field = self.field;
        let std_rhs = |t: f64, y: &[f64; 2]| field.std_rhs(t, y);
        let inv_rhs = |t: f64, y: &[f64; 2]| field.inv_rhs(t, y);
        while self.steps < max_steps {
            let t = self.theta();
            let inverted = matches!(self.frame, Frame::Inverted);
            let next = match (&self.lattice, inverted) {
                (Some(lat), _) => {
                    let next = lat.step(inverted, self.slot, &self.y, hs);
                    self.slot = lat.shift(self.slot, if self.sign > 0.0 { 2 } else { -2 });
                    next
                }
                (None, false) => rk4_step(&std_rhs, t, &self.y, hs),
                (None, true) => rk4_step(&inv_rhs, t, &self.y, hs),
            };
            if !next[0].is_finite() || !next[1].is_finite() {
                return Err(NumericError::BlowUp { t: t + hs });
            }
            self.steps += 1;
            self.y = next;
            if let Frame::Standard = self.frame {
                if switch_frame(&mut self.y, self.q_switch) {
                    self.frame = Frame::Inverted;
                }
            }
            if let Some(v) = self.check() {
                self.verdict = Some(v);
                return Ok(v);
            }
        }
        Ok(Classification::Undecided { elapsed: self.elapsed() })
    }
}
