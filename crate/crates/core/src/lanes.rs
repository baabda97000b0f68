//! Lockstep bisection of several phases at once.
//!
//! Each lane runs the same bisection as `find_f_in_bracket` for its own
//! phase. Stepping the lanes stage by stage keeps several independent
//! dependency chains in flight, which is where a single trajectory spends
//! its time (square roots and divisions in series).

use crate::classify::{switch_frame, verdict, Classification};
use crate::config::PlanarConfiguration;
use crate::dynamics::{Direction, Lattice, ParticleField};
use crate::error::NumericError;
use crate::separatrix::{BisectionSettings, SeparatrixSample};

pub(crate) const LANES: usize = 4;

#[derive(Debug, Clone, Copy)]
struct Run {
    y: [f64; 2],
    inverted: bool,
    steps: u64,
    slot: usize,
    limit: u64,
    budget: f64,
    doublings: u32,
}

#[derive(Debug, Clone, Copy)]
struct Lane<'a> {
    lat: Lattice<'a>,
    theta: f64,
    lo: f64,
    hi: f64,
    trial: f64,
    upper_checked: bool,
    lower_decided: bool,
    undecided: u32,
    iterations: usize,
    done: bool,
    run: Run,
}

struct Shared {
    q0: f64,
    sign: f64,
    h: f64,
    tol: f64,
    q_switch: f64,
    total_mass: f64,
    r2: f64,
    s_max: f64,
    max_doublings: u32,
    max_undecided: u32,
    max_iter: usize,
}

impl Shared {
    fn start(&self, p: f64) -> Run {
        Run {
            y: [self.q0, self.sign * p],
            inverted: false,
            steps: 0,
            slot: 0,
            limit: (self.s_max / self.h).ceil() as u64,
            budget: self.s_max,
            doublings: 0,
        }
    }

    fn check(&self, run: &Run) -> Option<Classification> {
        verdict(run.inverted, &run.y, self.sign, self.total_mass, self.r2, run.steps as f64 * self.h)
    }

    /// Applies a verdict to the lane's bracket and starts the next trial,
    /// resolving trials that are decided at their first sample.
    fn settle(&self, lane: &mut Lane, mut v: Classification) -> Result<(), NumericError> {
        loop {
            if !lane.upper_checked {
                if !v.is_escape() {
                    return Err(NumericError::InconsistentBracket {
                        theta: lane.theta,
                        message: format!("upper end p = {} did not escape ({v:?})", lane.hi),
                    });
                }
                lane.upper_checked = true;
            } else {
                match v {
                    Classification::Escape { .. } => lane.hi = lane.trial,
                    Classification::Return { .. } => {
                        lane.lo = lane.trial;
                        lane.lower_decided = true;
                    }
                    Classification::Undecided { .. } => {
                        lane.lo = lane.trial;
                        lane.lower_decided = false;
                        lane.undecided += 1;
                    }
                }
            }
            if lane.iterations >= self.max_iter
                || lane.hi - lane.lo <= self.tol
                || lane.undecided >= self.max_undecided
            {
                lane.done = true;
                return Ok(());
            }
            lane.iterations += 1;
            lane.trial = 0.5 * (lane.lo + lane.hi);
            lane.run = self.start(lane.trial);
            match self.check(&lane.run) {
                Some(next) => v = next,
                None => return Ok(()),
            }
        }
    }

    fn sample(&self, lane: &Lane) -> SeparatrixSample {
        SeparatrixSample {
            theta: lane.theta,
            f: 0.5 * (lane.lo + lane.hi),
            lower: lane.lo,
            upper: lane.hi,
            bracket_width: lane.hi - lane.lo,
            lower_decided: lane.lower_decided,
            upper_decided: true,
            iterations: lane.iterations,
        }
    }
}

#[inline(always)]
fn rhs(lat: &Lattice, inverted: bool, k: usize, y: &[f64; 2]) -> [f64; 2] {
    if inverted {
        lat.inv_rhs(k, y)
    } else {
        lat.std_rhs(k, y)
    }
}

/// Bisects f at up to [`LANES`] phases in lockstep. Returns `None` when a
/// phase cache cannot be built for this step size; callers then fall back
/// to one phase at a time.
pub(crate) fn bisect_lanes(
    thetas: &[f64],
    q0: f64,
    config: &PlanarConfiguration,
    settings: &BisectionSettings,
    direction: Direction,
    upper: f64,
    tol: f64,
) -> Option<Result<Vec<SeparatrixSample>, NumericError>> {
    assert!(thetas.len() <= LANES);
    let h = settings.integrator.h;
    let fields: Vec<ParticleField> =
        thetas.iter().map(|&t| ParticleField::with_phase_grid(config, t, h)).collect();
    let r = config.max_radius();
    let shared = Shared {
        q0,
        sign: direction.sign(),
        h,
        tol,
        q_switch: q0.max(1.0),
        total_mass: config.total_mass(),
        r2: r * r,
        s_max: settings.integrator.s_max,
        max_doublings: settings.max_doublings,
        max_undecided: settings.max_undecided,
        max_iter: settings.max_iter,
    };
    let mut lanes = Vec::with_capacity(thetas.len());
    for (f, &theta) in fields.iter().zip(thetas) {
        let lat = f.lattice(theta, h)?;
        lanes.push(Lane {
            lat,
            theta,
            lo: 0.0,
            hi: upper,
            trial: upper,
            upper_checked: false,
            lower_decided: true,
            undecided: 0,
            iterations: 0,
            done: false,
            run: shared.start(upper),
        });
    }
    Some(run_lanes(&shared, &mut lanes).map(|_| lanes.iter().map(|l| shared.sample(l)).collect()))
}

fn at(theta: f64) -> impl FnOnce(NumericError) -> NumericError {
    move |e| NumericError::AtPhase { theta, source: Box::new(e) }
}

fn run_lanes(shared: &Shared, lanes: &mut [Lane]) -> Result<(), NumericError> {
    for lane in lanes.iter_mut() {
        if let Some(v) = shared.check(&lane.run) {
            shared.settle(lane, v).map_err(at(lane.theta))?;
        }
    }
    let hs = shared.sign * shared.h;
    let d: isize = if hs >= 0.0 { 1 } else { -1 };
    let half = 0.5 * hs;
    let n = lanes.len();
    let mut k1 = [[0.0; 2]; LANES];
    let mut k2 = [[0.0; 2]; LANES];
    let mut k3 = [[0.0; 2]; LANES];
    let mut k4 = [[0.0; 2]; LANES];
    while lanes.iter().any(|l| !l.done) {
        for (l, lane) in lanes.iter().enumerate() {
            if !lane.done {
                k1[l] = rhs(&lane.lat, lane.run.inverted, lane.run.slot, &lane.run.y);
            }
        }
        for (l, lane) in lanes.iter().enumerate() {
            if !lane.done {
                let y = &lane.run.y;
                let k = lane.lat.shift(lane.run.slot, d);
                k2[l] = rhs(&lane.lat, lane.run.inverted, k, &[y[0] + half * k1[l][0], y[1] + half * k1[l][1]]);
            }
        }
        for (l, lane) in lanes.iter().enumerate() {
            if !lane.done {
                let y = &lane.run.y;
                let k = lane.lat.shift(lane.run.slot, d);
                k3[l] = rhs(&lane.lat, lane.run.inverted, k, &[y[0] + half * k2[l][0], y[1] + half * k2[l][1]]);
            }
        }
        for (l, lane) in lanes.iter().enumerate() {
            if !lane.done {
                let y = &lane.run.y;
                let k = lane.lat.shift(lane.run.slot, 2 * d);
                k4[l] = rhs(&lane.lat, lane.run.inverted, k, &[y[0] + hs * k3[l][0], y[1] + hs * k3[l][1]]);
            }
        }
        for l in 0..n {
            let lane = &mut lanes[l];
            if lane.done {
                continue;
            }
            let run = &mut lane.run;
            let y = run.y;
            let next = [
                y[0] + hs / 6.0 * (k1[l][0] + 2.0 * (k2[l][0] + k3[l][0]) + k4[l][0]),
                y[1] + hs / 6.0 * (k1[l][1] + 2.0 * (k2[l][1] + k3[l][1]) + k4[l][1]),
            ];
            let theta = lane.theta + shared.sign * run.steps as f64 * shared.h;
            if !next[0].is_finite() || !next[1].is_finite() {
                return Err(at(lane.theta)(NumericError::BlowUp { t: theta + hs }));
            }
            run.steps += 1;
            run.slot = lane.lat.shift(run.slot, 2 * d);
            run.y = next;
            if !run.inverted && switch_frame(&mut run.y, shared.q_switch) {
                run.inverted = true;
            }
            let v = match shared.check(run) {
                Some(v) => Some(v),
                None if run.steps >= run.limit => {
                    if run.doublings < shared.max_doublings {
                        run.doublings += 1;
                        run.budget *= 2.0;
                        run.limit = (run.budget / shared.h).ceil() as u64;
                        None
                    } else {
                        Some(Classification::Undecided { elapsed: run.steps as f64 * shared.h })
                    }
                }
                None => None,
            };
            if let Some(v) = v {
                shared.settle(lane, v).map_err(at(lane.theta))?;
            }
        }
    }
    Ok(())
}
