//! Vertical motion of the massless particle: vector fields in standard,
//! inverted and fictional-time form, a fixed-step RK4 integrator and
//! event-terminated integration.
//!
//! Phase is the independent variable. It is carried unreduced (on the real
//! line) so that elapsed periods can be counted; reduce modulo T on output.

use crate::config::{PlanarConfiguration, TimeMode};
use crate::error::NumericError;

/// Radius of the collision window around phases where a radius vanishes.
pub const COLLISION_WINDOW: f64 = 1e-4;

/// A point (q, p, theta) of the standard phase space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateStd {
    pub q: f64,
    pub p: f64,
    pub theta: f64,
}

/// A point (Q, P, theta) with Q = q^(-1/2); Q = 0 is q = infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateInv {
    pub big_q: f64,
    pub big_p: f64,
    pub theta: f64,
}

impl StateStd {
    pub fn new(q: f64, p: f64, theta: f64) -> Self {
        StateStd { q, p, theta }
    }

    /// Reflection (q, p) -> (-q, -p), which maps orbits to orbits.
    pub fn mirrored(self) -> Self {
        StateStd::new(-self.q, -self.p, self.theta)
    }

    pub fn is_finite(&self) -> bool {
        self.q.is_finite() && self.p.is_finite() && self.theta.is_finite()
    }
}

impl StateInv {
    pub fn new(big_q: f64, big_p: f64, theta: f64) -> Self {
        StateInv { big_q, big_p, theta }
    }
}

/// Maps (q, p, theta) to (q^(-1/2), p, theta). Requires q > 0.
pub fn invert_state(s: StateStd) -> Result<StateInv, NumericError> {
    if !(s.q > 0.0) || !s.q.is_finite() {
        return Err(NumericError::domain(format!(
            "inversion needs q > 0, got {}",
            s.q
        )));
    }
    Ok(StateInv::new(s.q.sqrt().recip(), s.p, s.theta))
}

/// Inverse of [`invert_state`]. Requires Q > 0.
pub fn uninvert_state(s: StateInv) -> Result<StateStd, NumericError> {
    if !(s.big_q > 0.0) || !s.big_q.is_finite() {
        return Err(NumericError::domain(format!(
            "un-inversion needs Q > 0, got {}",
            s.big_q
        )));
    }
    Ok(StateStd::new((s.big_q * s.big_q).recip(), s.big_p, s.theta))
}

/// Physical-time field (dq/dt, dp/dt, dtheta/dt).
pub fn vf_std(s: &StateStd, config: &PlanarConfiguration) -> (f64, f64, f64) {
    let field = ParticleField::new(config);
    (s.p, field.accel(s.theta, s.q), 1.0)
}

/// Physical-time field in inverted coordinates. Q = 0 is a line of
/// equilibria and returns (0, 0, 1) exactly.
pub fn vf_inv(s: &StateInv, config: &PlanarConfiguration) -> (f64, f64, f64) {
    let field = ParticleField::new(config);
    let [dq, dp] = field.inv_physical(s.theta, s.big_q, s.big_p);
    (dq, dp, 1.0)
}

/// Field with respect to the fictional clock theta: the physical field
/// scaled by dt/dtheta. The traced point set in (q, p) is unchanged.
///
/// A vanishing dilation is accepted only inside a collision window; zero
/// elsewhere means the time change is degenerate.
pub fn vf_fictional(
    s: &StateStd,
    config: &PlanarConfiguration,
) -> Result<(f64, f64, f64), NumericError> {
    if config.time_mode() != TimeMode::Fictional {
        return Err(NumericError::domain(
            "configuration runs on physical time; use vf_std",
        ));
    }
    let w = config.dilation(s.theta);
    if !(w >= 0.0) || !w.is_finite() {
        return Err(NumericError::domain(format!(
            "dilation {w} at phase {} is not a valid time change",
            s.theta
        )));
    }
    if w == 0.0 && !in_collision_window(config, s.theta) {
        return Err(NumericError::ZeroDilation { theta: s.theta });
    }
    let field = ParticleField::new(config);
    Ok((w * s.p, w * field.accel(s.theta, s.q), 1.0))
}

fn in_collision_window(config: &PlanarConfiguration, theta: f64) -> bool {
    let t = config.period();
    config.collision_phases().iter().any(|&c| {
        let d = (theta - c).rem_euclid(t);
        d.min(t - d) < COLLISION_WINDOW
    })
}

/// One classical fourth-order Runge-Kutta step of size `h` (negative h
/// steps backward).
#[inline]
pub fn rk4_step<const N: usize, F>(field: &F, t: f64, y: &[f64; N], h: f64) -> [f64; N]
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let half = 0.5 * h;
    let k1 = field(t, y);
    let mut tmp = [0.0; N];
    for i in 0..N {
        tmp[i] = y[i] + half * k1[i];
    }
    let k2 = field(t + half, &tmp);
    for i in 0..N {
        tmp[i] = y[i] + half * k2[i];
    }
    let k3 = field(t + half, &tmp);
    for i in 0..N {
        tmp[i] = y[i] + h * k3[i];
    }
    let k4 = field(t + h, &tmp);
    let mut out = [0.0; N];
    for i in 0..N {
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
    }
    out
}

/// Time direction of an integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }

    pub fn reversed(self) -> Self {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }
}

/// Why an integration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// The stop predicate fired; the last sample is the refined crossing.
    Stopped,
    /// The step budget ran out first.
    Budget,
}

/// Samples of an integration, monotone in time along `direction`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub samples: Vec<S>,
    pub direction: Direction,
    pub termination: Termination,
}

impl<S> Trajectory<S> {
    pub fn last(&self) -> &S {
        self.samples.last().expect("trajectory holds its initial sample")
    }
}

/// Step size, budgets and refinement tolerance for fixed-step integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorSettings {
    /// Step magnitude in units of phase.
    pub h: f64,
    pub max_steps: usize,
    /// Crossing times are refined by bisection to this width.
    pub refine_tol: f64,
    /// Phase budget before a classification is reported undecided.
    pub s_max: f64,
}

impl IntegratorSettings {
    /// Defaults: h = T/2000 on physical time, T/4000 on fictional time;
    /// s_max = 50 T; crossings refined to 1e-10.
    pub fn for_config(config: &PlanarConfiguration) -> Self {
        let t = config.period();
        let steps = match config.time_mode() {
            TimeMode::Physical => 2000.0,
            TimeMode::Fictional => 4000.0,
        };
        IntegratorSettings {
            h: t / steps,
            max_steps: 50_000_000,
            refine_tol: 1e-10,
            s_max: 50.0 * t,
        }
    }

    pub fn with_step(mut self, h: f64) -> Self {
        self.h = h;
        self
    }

    pub fn with_budget(mut self, s_max: f64) -> Self {
        self.s_max = s_max;
        self
    }

    pub fn validate(&self) -> Result<(), NumericError> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(NumericError::domain(format!("step must be positive, got {}", self.h)));
        }
        if !(self.refine_tol > 0.0) {
            return Err(NumericError::domain("refinement tolerance must be positive"));
        }
        if !(self.s_max > 0.0) {
            return Err(NumericError::domain("undecided budget must be positive"));
        }
        Ok(())
    }
}

/// Integrates `field` from (t0, y0) with fixed steps of signed size `h`
/// until `stop` fires or `max_steps` elapse. The firing step is refined by
/// bisection on the sub-step length down to `refine_tol`; the final sample
/// is the first refined state at which `stop` holds.
pub fn integrate_until<const N: usize, F, S>(
    field: &F,
    t0: f64,
    y0: [f64; N],
    h: f64,
    max_steps: usize,
    refine_tol: f64,
    mut stop: S,
) -> Result<Trajectory<(f64, [f64; N])>, NumericError>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
    S: FnMut(f64, &[f64; N]) -> bool,
{
    let direction = if h >= 0.0 { Direction::Forward } else { Direction::Backward };
    let mut samples = vec![(t0, y0)];
    if stop(t0, &y0) {
        return Ok(Trajectory { samples, direction, termination: Termination::Stopped });
    }
    let mut y = y0;
    for n in 0..max_steps {
        let t = t0 + n as f64 * h;
        let next = rk4_step(field, t, &y, h);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(NumericError::BlowUp { t: t + h });
        }
        let t_next = t0 + (n + 1) as f64 * h;
        if stop(t_next, &next) {
            let (tau, y_hit) = refine_crossing(field, t, &y, h, refine_tol, &mut stop)?;
            samples.push((t + tau, y_hit));
            return Ok(Trajectory { samples, direction, termination: Termination::Stopped });
        }
        samples.push((t_next, next));
        y = next;
    }
    Ok(Trajectory { samples, direction, termination: Termination::Budget })
}

/// Bisects the sub-step length in (0, h] for the earliest state where
/// `stop` holds, given it fails at the step start and holds at its end.
pub(crate) fn refine_crossing<const N: usize, F, S>(
    field: &F,
    t: f64,
    y: &[f64; N],
    h: f64,
    refine_tol: f64,
    stop: &mut S,
) -> Result<(f64, [f64; N]), NumericError>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
    S: FnMut(f64, &[f64; N]) -> bool,
{
    let mut lo = 0.0;
    let mut hi = h;
    let mut y_hi = rk4_step(field, t, y, h);
    while (hi - lo).abs() > refine_tol {
        let mid = 0.5 * (lo + hi);
        let y_mid = rk4_step(field, t, y, mid);
        if y_mid.iter().any(|v| !v.is_finite()) {
            return Err(NumericError::BlowUp { t: t + mid });
        }
        if stop(t + mid, &y_mid) {
            hi = mid;
            y_hi = y_mid;
        } else {
            lo = mid;
        }
    }
    Ok((hi, y_hi))
}

/// Integrates the particle in standard coordinates (physical or fictional
/// clock, as the configuration dictates) until `stop` fires on a sample.
pub fn integrate_particle<S>(
    start: StateStd,
    config: &PlanarConfiguration,
    settings: &IntegratorSettings,
    direction: Direction,
    mut stop: S,
) -> Result<Trajectory<StateStd>, NumericError>
where
    S: FnMut(&StateStd) -> bool,
{
    settings.validate()?;
    let field = ParticleField::with_phase_grid(config, start.theta, settings.h);
    let rhs = |t: f64, y: &[f64; 2]| field.std_rhs(t, y);
    let traj = integrate_until(
        &rhs,
        start.theta,
        [start.q, start.p],
        direction.sign() * settings.h,
        settings.max_steps,
        settings.refine_tol,
        |t, y| stop(&StateStd::new(y[0], y[1], t)),
    )?;
    Ok(Trajectory {
        samples: traj
            .samples
            .into_iter()
            .map(|(t, y)| StateStd::new(y[0], y[1], t))
            .collect(),
        direction: traj.direction,
        termination: traj.termination,
    })
}

/// Radii squared and dilation sampled on the half-step lattice
/// `origin + k h/2`, one period long.
#[derive(Debug, Clone)]
struct PhaseTable {
    origin: f64,
    half_step: f64,
    slots: usize,
    /// Bodies with identical radius columns are merged; `masses` holds the
    /// combined mass of each column.
    masses: Vec<f64>,
    bodies: usize,
    r2: Vec<f64>,
    dilation: Vec<f64>,
}

impl PhaseTable {
    fn build(config: &PlanarConfiguration, origin: f64, h: f64) -> Option<Self> {
        let t = config.period();
        let per_period = t / h;
        let steps = per_period.round();
        if steps < 1.0 || (per_period - steps).abs() > 1e-9 * per_period || steps > 1e6 {
            return None;
        }
        let slots = 2 * steps as usize;
        let half_step = 0.5 * h;
        let bodies = config.body_count();
        let mut r2 = vec![0.0; slots * bodies];
        let mut dilation = vec![1.0; slots];
        let mut buf = vec![0.0; bodies];
        for k in 0..slots {
            let theta = origin + k as f64 * half_step;
            config.radii_into(theta, &mut buf);
            for (i, r) in buf.iter().enumerate() {
                r2[k * bodies + i] = r * r;
            }
            dilation[k] = config.dilation(theta);
        }
        let table = &r2;
        let column = |i: usize| (0..slots).map(move |k| table[k * bodies + i]);
        let mut groups: Vec<(usize, f64)> = Vec::new();
        for (i, &m) in config.masses().iter().enumerate() {
            match groups.iter_mut().find(|(j, _)| column(*j).eq(column(i))) {
                Some(g) => g.1 += m,
                None => groups.push((i, m)),
            }
        }
        let merged: Vec<f64> = (0..slots)
            .flat_map(|k| groups.iter().map(move |&(i, _)| table[k * bodies + i]))
            .collect();
        let masses = groups.iter().map(|&(_, m)| m).collect();
        Some(PhaseTable { origin, half_step, slots, masses, bodies: groups.len(), r2: merged, dilation })
    }

    #[inline]
    fn slot(&self, theta: f64) -> Option<usize> {
        let x = (theta - self.origin) / self.half_step;
        let k = x.round();
        if (x - k).abs() > 1e-8 {
            return None;
        }
        Some((k as i64).rem_euclid(self.slots as i64) as usize)
    }
}

/// Direct view of a [`PhaseTable`] for integrations that stay on its
/// lattice: slot `k` holds phase `origin + k h/2` (mod T).
#[derive(Debug, Clone, Copy)]
pub(crate) struct Lattice<'t> {
    masses: &'t [f64],
    r2: &'t [f64],
    dilation: &'t [f64],
    slots: usize,
}

impl<'t> Lattice<'t> {
    #[inline]
    fn terms(&self, k: usize, mut term: impl FnMut(f64) -> f64) -> f64 {
        let n = self.masses.len();
        let r2 = &self.r2[k * n..(k + 1) * n];
        let mut acc = 0.0;
        for i in 0..n {
            acc += self.masses[i] * term(r2[i]);
        }
        acc
    }

    #[inline]
    pub(crate) fn std_rhs(&self, k: usize, y: &[f64; 2]) -> [f64; 2] {
        let q = y[0];
        let q2 = q * q;
        let a = -self.terms(k, |r2| {
            let d = r2 + q2;
            if d == 0.0 {
                0.0
            } else {
                q / (d * d.sqrt())
            }
        });
        let w = self.dilation[k];
        [w * y[1], w * a]
    }

    #[inline]
    pub(crate) fn inv_rhs(&self, k: usize, y: &[f64; 2]) -> [f64; 2] {
        let big_q = y[0];
        if big_q == 0.0 {
            return [0.0, 0.0];
        }
        let q2 = big_q * big_q;
        let q4 = q2 * q2;
        let dp = -self.terms(k, |r2| {
            let d = r2 * q4 + 1.0;
            q4 / (d * d.sqrt())
        });
        let w = self.dilation[k];
        [w * (-0.5 * q2 * big_q * y[1]), w * dp]
    }

    /// Slot `k + d` wrapped onto the table, for |d| <= slots.
    #[inline]
    pub(crate) fn shift(&self, k: usize, d: isize) -> usize {
        let j = k as isize + d;
        let n = self.slots as isize;
        (if j >= n {
            j - n
        } else if j < 0 {
            j + n
        } else {
            j
        }) as usize
    }

    /// One RK4 step of signed size `hs` starting at slot `k`, in standard
    /// or inverted coordinates. Backward steps walk the slots downward.
    #[inline]
    pub(crate) fn step(&self, inverted: bool, k: usize, y: &[f64; 2], hs: f64) -> [f64; 2] {
        let d = if hs >= 0.0 { 1 } else { -1 };
        let (k_mid, k_end) = (self.shift(k, d), self.shift(k, 2 * d));
        if inverted {
            rk4_on_slots(|k, y| self.inv_rhs(k, y), k, k_mid, k_end, y, hs)
        } else {
            rk4_on_slots(|k, y| self.std_rhs(k, y), k, k_mid, k_end, y, hs)
        }
    }
}

#[inline(always)]
fn rk4_on_slots<F>(f: F, k: usize, k_mid: usize, k_end: usize, y: &[f64; 2], hs: f64) -> [f64; 2]
where
    F: Fn(usize, &[f64; 2]) -> [f64; 2],
{
    let half = 0.5 * hs;
    let k1 = f(k, y);
    let k2 = f(k_mid, &[y[0] + half * k1[0], y[1] + half * k1[1]]);
    let k3 = f(k_mid, &[y[0] + half * k2[0], y[1] + half * k2[1]]);
    let k4 = f(k_end, &[y[0] + hs * k3[0], y[1] + hs * k3[1]]);
    [
        y[0] + hs / 6.0 * (k1[0] + 2.0 * (k2[0] + k3[0]) + k4[0]),
        y[1] + hs / 6.0 * (k1[1] + 2.0 * (k2[1] + k3[1]) + k4[1]),
    ]
}

/// The particle's vector field for one configuration, optionally backed by
/// a cache of radii on the integrator's phase lattice.
#[derive(Debug, Clone)]
pub struct ParticleField<'a> {
    config: &'a PlanarConfiguration,
    fictional: bool,
    table: Option<PhaseTable>,
}

impl<'a> ParticleField<'a> {
    pub fn new(config: &'a PlanarConfiguration) -> Self {
        ParticleField {
            config,
            fictional: config.time_mode() == TimeMode::Fictional,
            table: None,
        }
    }

    /// Caches radii at `origin + k h/2`, the phases visited by RK4 steps of
    /// size h started at `origin`. Falls back to direct evaluation when h
    /// does not divide the period.
    pub fn with_phase_grid(config: &'a PlanarConfiguration, origin: f64, h: f64) -> Self {
        let mut field = Self::new(config);
        field.table = PhaseTable::build(config, origin, h);
        field
    }

    /// The cache as a lattice, when it was built for exactly this origin
    /// and step.
    pub(crate) fn lattice(&self, origin: f64, h: f64) -> Option<Lattice<'_>> {
        let table = self.table.as_ref()?;
        if table.origin != origin || table.half_step != 0.5 * h {
            return None;
        }
        Some(Lattice {
            masses: &table.masses,
            r2: &table.r2,
            dilation: &table.dilation,
            slots: table.slots,
        })
    }

    pub fn config(&self) -> &PlanarConfiguration {
        self.config
    }

    /// Sum over bodies of m_i * g(r_i^2), through the cache when possible.
    #[inline]
    fn sum_over_bodies(&self, theta: f64, mut term: impl FnMut(f64) -> f64) -> f64 {
        if let Some(table) = &self.table {
            if let Some(k) = table.slot(theta) {
                let r2 = &table.r2[k * table.bodies..(k + 1) * table.bodies];
                return table.masses.iter().zip(r2).map(|(m, &r2)| m * term(r2)).sum();
            }
        }
        let masses = self.config.masses();
        let mut stack = [0.0; 8];
        let mut heap;
        let radii: &mut [f64] = if masses.len() <= stack.len() {
            &mut stack[..masses.len()]
        } else {
            heap = vec![0.0; masses.len()];
            &mut heap
        };
        self.config.radii_into(theta, radii);
        masses.iter().zip(radii.iter()).map(|(m, r)| m * term(r * r)).sum()
    }

    /// dt/dtheta at `theta`.
    #[inline]
    pub fn dilation(&self, theta: f64) -> f64 {
        if !self.fictional {
            return 1.0;
        }
        if let Some(table) = &self.table {
            if let Some(k) = table.slot(theta) {
                return table.dilation[k];
            }
        }
        self.config.dilation(theta)
    }

    /// Physical acceleration -sum m_i q / (r_i^2 + q^2)^(3/2). A body at the
    /// origin with the particle also at q = 0 contributes zero.
    #[inline]
    pub fn accel(&self, theta: f64, q: f64) -> f64 {
        let q2 = q * q;
        -self.sum_over_bodies(theta, |r2| {
            let d = r2 + q2;
            if d == 0.0 {
                0.0
            } else {
                q / (d * d.sqrt())
            }
        })
    }

    /// Physical-time inverted field (dQ/dt, dP/dt).
    #[inline]
    pub fn inv_physical(&self, theta: f64, big_q: f64, big_p: f64) -> [f64; 2] {
        if big_q == 0.0 {
            return [0.0, 0.0];
        }
        let q2 = big_q * big_q;
        let q4 = q2 * q2;
        let dp = -self.sum_over_bodies(theta, |r2| {
            let d = r2 * q4 + 1.0;
            q4 / (d * d.sqrt())
        });
        [-0.5 * q2 * big_q * big_p, dp]
    }

    /// d(q, p)/dtheta, including the dilation on fictional clocks.
    #[inline]
    pub fn std_rhs(&self, theta: f64, y: &[f64; 2]) -> [f64; 2] {
        let w = self.dilation(theta);
        [w * y[1], w * self.accel(theta, y[0])]
    }

    /// d(Q, P)/dtheta, including the dilation on fictional clocks.
    #[inline]
    pub fn inv_rhs(&self, theta: f64, y: &[f64; 2]) -> [f64; 2] {
        let w = self.dilation(theta);
        let [a, b] = self.inv_physical(theta, y[0], y[1]);
        [w * a, w * b]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use proptest::prelude::*;
    use std::f64::consts::TAU;

    fn circular() -> PlanarConfiguration {
        PlanarConfiguration::circular(vec![1.0, 1.0], vec![1.0, 1.0], TAU).unwrap()
    }

    #[test]
    fn vf_std_examples() {
        let c = circular();
        let (dq, dp, dt) = vf_std(&StateStd::new(1.0, 0.0, 0.4), &c);
        assert_eq!(dq, 0.0);
        assert!((dp + 2.0 / 2f64.powf(1.5)).abs() < 1e-15);
        assert_eq!(dt, 1.0);
        for cfg in presets::all() {
            let (dq, dp, _) = vf_std(&StateStd::new(0.0, 0.3, 1.1), &cfg.config);
            assert_eq!((dq, dp), (0.3, 0.0));
        }
        let (_, dp, _) = vf_std(&StateStd::new(100.0, 0.0, 0.0), &c);
        assert!(((dp - (-2e-4)) / 2e-4).abs() < 5e-4);
    }

    #[test]
    fn vf_std_is_odd() {
        let c = presets::paper_kepler();
        for k in 0..50 {
            let s = StateStd::new(0.1 * k as f64 - 2.0, 0.3 - 0.02 * k as f64, 0.17 * k as f64);
            let (a, b, _) = vf_std(&s, &c);
            let (a2, b2, _) = vf_std(&s.mirrored(), &c);
            assert_eq!((a, b), (-a2, -b2));
        }
    }

    #[test]
    fn collision_at_origin_gives_zero_accel() {
        let c = presets::collinear_e1();
        let (_, dp, _) = vf_std(&StateStd::new(0.0, 1.0, 0.0), &c);
        assert_eq!(dp, 0.0);
    }

    #[test]
    fn vf_inv_examples() {
        let c = circular();
        assert_eq!(vf_inv(&StateInv::new(0.0, 2.0, 0.3), &c), (0.0, 0.0, 1.0));
        let (dq, dp, dt) = vf_inv(&StateInv::new(1.0, 1.0, 0.0), &c);
        assert!((dq + 0.5).abs() < 1e-15);
        assert!((dp + 2.0 / 2f64.powf(1.5)).abs() < 1e-15);
        assert_eq!(dt, 1.0);
    }

    #[test]
    fn vf_inv_matches_chain_rule() {
        for cfg in presets::all() {
            let s = StateStd::new(4.0, 0.3, 0.7);
            let inv = invert_state(s).unwrap();
            let (dqi, dpi, _) = vf_inv(&inv, &cfg.config);
            let (dq, dp, _) = vf_std(&s, &cfg.config);
            // dQ/dt = -1/2 q^(-3/2) dq/dt; dP/dt = dp/dt.
            let chain = -0.5 * s.q.powf(-1.5) * dq;
            assert!((dqi - chain).abs() < 1e-12, "{}", cfg.name);
            assert!((dpi - dp).abs() < 1e-12, "{}", cfg.name);
        }
    }

    #[test]
    fn fictional_field() {
        let col = presets::collinear_e1();
        let (dq, _, _) = vf_fictional(&StateStd::new(0.5, 0.8, std::f64::consts::PI), &col).unwrap();
        assert!((dq - 0.4).abs() < 1e-15);
        assert!(vf_fictional(&StateStd::new(0.5, 0.8, 0.0), &circular()).is_err());
        // Zero dilation at the collision itself is inside the guarded window.
        assert!(vf_fictional(&StateStd::new(0.5, 0.8, 0.0), &col).is_ok());
    }

    #[test]
    fn unit_dilation_is_identity() {
        let text = "# masses: 1,1\n# period: 2\n# dilation-column: yes\n0,1,1,1\n1,0.5,0.5,1\n2,1,1,1\n";
        let c = PlanarConfiguration::load_tabulated(text.as_bytes()).unwrap();
        let s = StateStd::new(0.7, -0.2, 0.3);
        let (a, b, _) = vf_fictional(&s, &c).unwrap();
        let (a2, b2, _) = vf_std(&s, &c);
        assert_eq!((a, b), (a2, b2));
    }

    #[test]
    fn zero_dilation_off_collision_is_an_error() {
        let text = "# masses: 1\n# period: 2\n# dilation-column: yes\n# interpolation: linear\n0,1,1\n1,1,0\n2,1,1\n";
        let c = PlanarConfiguration::load_tabulated(text.as_bytes()).unwrap();
        let err = vf_fictional(&StateStd::new(0.5, 0.1, 1.0), &c).unwrap_err();
        assert!(matches!(err, NumericError::ZeroDilation { .. }));
    }

    #[test]
    fn rk4_examples() {
        let free = |_t: f64, y: &[f64; 2]| [y[1], 0.0];
        assert_eq!(rk4_step(&free, 0.0, &[0.0, 1.0], 0.25), [0.25, 1.0]);
        let osc = |_t: f64, y: &[f64; 2]| [y[1], -y[0]];
        let y = rk4_step(&osc, 0.0, &[1.0, 0.0], 0.1);
        assert!((y[0] - 0.1f64.cos()).abs() < 1e-7);
        assert!((y[1] + 0.1f64.sin()).abs() < 1e-7);
        let y = rk4_step(&osc, 0.0, &[1.0, 0.0], 0.01);
        let back = rk4_step(&osc, 0.01, &y, -0.01);
        assert!((back[0] - 1.0).abs() < 1e-10 && back[1].abs() < 1e-10);
    }

    #[test]
    fn integrate_until_examples() {
        let free = |_t: f64, y: &[f64; 2]| [y[1], 0.0];
        let traj = integrate_until(&free, 0.0, [1.0, -1.0], 0.03, 1000, 1e-12, |_, y| y[0] <= 0.0)
            .unwrap();
        assert_eq!(traj.termination, Termination::Stopped);
        assert!((traj.last().0 - 1.0).abs() < 1e-9);

        let traj = integrate_until(&free, 0.0, [1.0, 1.0], 0.1, 10, 1e-12, |_, _| false).unwrap();
        assert_eq!(traj.termination, Termination::Budget);
        assert_eq!(traj.samples.len(), 11);
    }

    #[test]
    fn bound_orbit_turns_around() {
        let c = circular();
        let settings = IntegratorSettings::for_config(&c);
        // E = 0.5 - 2/sqrt(2) < 0.
        let traj = integrate_particle(StateStd::new(1.0, 1.0, 0.0), &c, &settings, Direction::Forward, |s| s.p <= 0.0)
            .unwrap();
        assert_eq!(traj.termination, Termination::Stopped);
        assert!(traj.last().theta.is_finite());
    }

    #[test]
    fn blow_up_reported() {
        let wild = |_t: f64, y: &[f64; 1]| [y[0] * y[0]];
        let err = integrate_until(&wild, 0.0, [1.0], 0.5, 100, 1e-9, |_, _| false).unwrap_err();
        assert!(matches!(err, NumericError::BlowUp { .. }));
    }

    #[test]
    fn inversion_examples() {
        let inv = invert_state(StateStd::new(4.0, 0.3, 1.0)).unwrap();
        assert_eq!(inv, StateInv::new(0.5, 0.3, 1.0));
        let std = uninvert_state(StateInv::new(1.0, -2.0, 0.2)).unwrap();
        assert_eq!(std, StateStd::new(1.0, -2.0, 0.2));
        assert!(invert_state(StateStd::new(0.0, 1.0, 0.0)).is_err());
        assert!(uninvert_state(StateInv::new(-1.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn cached_field_matches_direct() {
        let c = presets::paper_kepler();
        let h = c.period() / 2000.0;
        let cached = ParticleField::with_phase_grid(&c, 0.3, h);
        let direct = ParticleField::new(&c);
        for k in -50..5000 {
            let theta = 0.3 + k as f64 * 0.5 * h;
            let a = cached.accel(theta, 1.3);
            let b = direct.accel(theta, 1.3);
            assert!((a - b).abs() < 1e-13, "{k}: {a} {b}");
        }
    }

    proptest! {
        #[test]
        fn inversion_round_trip(q in 1e-3f64..1e6, p in -10.0f64..10.0, theta in -10.0f64..10.0) {
            let s = StateStd::new(q, p, theta);
            let back = uninvert_state(invert_state(s).unwrap()).unwrap();
            prop_assert!(((back.q - q) / q).abs() <= 1e-12);
            prop_assert_eq!(back.p, p);
            prop_assert_eq!(back.theta, theta);
        }
    }
}
