//! The parabolic-escape boundary: f(theta) at a fixed height by bisection,
//! its trace on the q = 0 plane, time-reversal reflection, first-return maps
//! and curve intersections.

use rayon::prelude::*;

use crate::classify::{Classification, Classifier, DECISION_MARGIN};
use crate::config::PlanarConfiguration;
use crate::dynamics::{integrate_until, Direction, IntegratorSettings, ParticleField, StateStd, Termination};
use crate::error::{ConfigError, NumericError};
use crate::lanes::{bisect_lanes, LANES};

/// Relative bisection tolerance: width 1e-10 * sqrt(2M) Q0.
pub const DEFAULT_RELATIVE_TOL: f64 = 1e-10;

/// |p| beyond which a plane trace is abandoned as a collision spike.
pub const SPIKE_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionSettings {
    /// Absolute bracket width at which bisection stops; `None` uses
    /// [`DEFAULT_RELATIVE_TOL`] times the bracket length.
    pub tol: Option<f64>,
    pub max_iter: usize,
    /// How many times an undecided midpoint's budget is doubled.
    pub max_doublings: u32,
    /// Undecided midpoints are assigned to the return side; bisection
    /// stops once this many have occurred.
    pub max_undecided: u32,
    pub integrator: IntegratorSettings,
}

impl BisectionSettings {
    pub fn for_config(config: &PlanarConfiguration) -> Self {
        BisectionSettings {
            tol: None,
            max_iter: 60,
            max_doublings: 3,
            max_undecided: 1,
            integrator: IntegratorSettings::for_config(config),
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = Some(tol);
        self
    }

    pub fn with_integrator(mut self, integrator: IntegratorSettings) -> Self {
        self.integrator = integrator;
        self
    }

    /// The absolute tolerance used for a bracket of length `bracket`.
    pub fn resolved_tol(&self, bracket: f64) -> f64 {
        self.tol.unwrap_or(DEFAULT_RELATIVE_TOL * bracket)
    }
}

/// One point f(theta) of the boundary at height q0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparatrixSample {
    pub theta: f64,
    pub f: f64,
    pub lower: f64,
    pub upper: f64,
    pub bracket_width: f64,
    /// False when an undecided midpoint was assigned to the return side.
    pub lower_decided: bool,
    pub upper_decided: bool,
    pub iterations: usize,
}

impl SeparatrixSample {
    pub fn flagged(&self) -> bool {
        !(self.lower_decided && self.upper_decided)
    }
}

/// f over a phase grid. `direction` is Forward for forward-parabolic
/// boundaries and Backward for the reverse-time boundary (stored as |p|).
#[derive(Debug, Clone, PartialEq)]
pub struct SeparatrixCurve {
    pub q0: f64,
    pub direction: Direction,
    pub samples: Vec<SeparatrixSample>,
}

fn check_height(q0: f64, config: &PlanarConfiguration) -> Result<(), NumericError> {
    let q_mono = config.q_mono();
    if !(q0 > q_mono) || !q0.is_finite() {
        return Err(NumericError::domain(format!(
            "q0 = {q0} must exceed q_mono = {q_mono}"
        )));
    }
    Ok(())
}

/// The cone edge sqrt(2M) Q0, the largest possible f.
pub fn cone_velocity(q0: f64, config: &PlanarConfiguration) -> f64 {
    (2.0 * config.total_mass()).sqrt() / q0.sqrt()
}

/// Forward-parabolic f(theta) at height q0.
pub fn find_f(
    theta: f64,
    q0: f64,
    config: &PlanarConfiguration,
    settings: &BisectionSettings,
) -> Result<SeparatrixSample, NumericError> {
    find_f_directed(theta, q0, config, settings, Direction::Forward)
}

/// f(theta) along `direction`; Backward finds |p| of the state (q0, -|p|)
/// that escapes parabolically in reverse time.
pub fn find_f_directed(
    theta: f64,
    q0: f64,
    config: &PlanarConfiguration,
    settings: &BisectionSettings,
    direction: Direction,
) -> Result<SeparatrixSample, NumericError> {
    find_f_in_bracket(theta, q0, config, settings, direction, cone_velocity(q0, config))
}

/// Validates bisection inputs and resolves the absolute tolerance.
fn prepare(
    q0: f64,
    config: &PlanarConfiguration,
    settings: &BisectionSettings,
    upper: f64,
) -> Result<f64, NumericError> {
    check_height(q0, config)?;
    settings.integrator.validate()?;
    let tol = settings.resolved_tol(cone_velocity(q0, config));
    if !(tol > 0.0) {
        return Err(NumericError::domain("bisection tolerance must be positive"));
    }
    if !(upper > 0.0) || !upper.is_finite() {
        return Err(NumericError::domain("upper bracket end must be positive"));
    }
    Ok(tol)
}

/// Bisection over [0, upper]. The lower end is a return (p = 0 turns at
/// once) and the upper end must classify as escape.
pub fn find_f_in_bracket(
    theta: f64,
    q0: f64,
    config: &PlanarConfiguration,
    settings: &BisectionSettings,
    direction: Direction,
    upper: f64,
) -> Result<SeparatrixSample, NumericError> {
    let tol = prepare(q0, config, settings, upper)?;
    let h = settings.integrator.h;
    let field = ParticleField::with_phase_grid(config, theta, h);
    let sign = direction.sign();
    let classify = |p: f64| -> Result<Classification, NumericError> {
        let mut run = Classifier::new(&field, StateStd::new(q0, sign * p, theta), h, direction)?;
        let mut budget = settings.integrator.s_max;
        let mut verdict = run.run_until(budget)?;
        for _ in 0..settings.max_doublings {
            if !verdict.is_undecided() {
                break;
            }
            budget *= 2.0;
            verdict = run.run_until(budget)?;
        }
        Ok(verdict)
    };

    match classify(upper)? {
        Classification::Escape { .. } => {}
        other => {
            return Err(NumericError::InconsistentBracket {
                theta,
                message: format!("upper end p = {upper} did not escape ({other:?})"),
            })
        }
    }
    let (mut lo, mut hi) = (0.0_f64, upper);
    let mut lower_decided = true;
    let mut undecided = 0;
    let mut iterations = 0;
    while iterations < settings.max_iter && hi - lo > tol && undecided < settings.max_undecided {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        match classify(mid)? {
            Classification::Escape { .. } => hi = mid,
            Classification::Return { .. } => {
                lo = mid;
                lower_decided = true;
            }
            Classification::Undecided { .. } => {
                lo = mid;
                lower_decided = false;
                undecided += 1;
            }
        }
    }
    Ok(SeparatrixSample {
        theta,
        f: 0.5 * (lo + hi),
        lower: lo,
        upper: hi,
        bracket_width: hi - lo,
        lower_decided,
        upper_decided: true,
        iterations,
    })
}

/// Evenly spaced phases k T / (n - 1), k = 0..n-1, ending exactly at T.
pub fn phase_grid(period: f64, grid_n: usize) -> Vec<f64> {
    let last = grid_n - 1;
    (0..grid_n)
        .map(|k| if k == last { period } else { period * k as f64 / last as f64 })
        .collect()
}

/// f on an evenly spaced grid of `grid_n` phases covering [0, T].
pub fn build_curve(
    q0: f64,
    config: &PlanarConfiguration,
    grid_n: usize,
    settings: &BisectionSettings,
) -> Result<SeparatrixCurve, NumericError> {
    build_curve_directed(q0, config, grid_n, settings, Direction::Forward)
}

pub fn build_curve_directed(
    q0: f64,
    config: &PlanarConfiguration,
    grid_n: usize,
    settings: &BisectionSettings,
    direction: Direction,
) -> Result<SeparatrixCurve, NumericError> {
    if grid_n < 2 {
        return Err(NumericError::domain("grid needs at least two phases"));
    }
    check_height(q0, config)?;
    let thetas = phase_grid(config.period(), grid_n);
    let samples = samples_at(&thetas, q0, config, settings, direction)?;
    Ok(SeparatrixCurve { q0, direction, samples })
}

fn samples_at(
    thetas: &[f64],
    q0: f64,
    config: &PlanarConfiguration,
    settings: &BisectionSettings,
    direction: Direction,
) -> Result<Vec<SeparatrixSample>, NumericError> {
    let upper = cone_velocity(q0, config);
    let tol = prepare(q0, config, settings, upper)?;
    let chunks: Vec<Vec<SeparatrixSample>> = thetas
        .par_chunks(LANES)
        .map(|chunk| {
            if let Some(done) = bisect_lanes(chunk, q0, config, settings, direction, upper, tol) {
                return done;
            }
            chunk
                .iter()
                .map(|&theta| {
                    find_f_directed(theta, q0, config, settings, direction)
                        .map_err(|e| NumericError::AtPhase { theta, source: Box::new(e) })
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// S0+ (forward-parabolic) or S0- (backward-parabolic) trace on q = 0, or
/// the first-return image of plane points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    ForwardParabolic,
    BackwardParabolic,
    ReturnImage,
}

impl Branch {
    /// The branch a time reversal maps onto; images stay images.
    pub fn flipped(self) -> Self {
        match self {
            Branch::ForwardParabolic => Branch::BackwardParabolic,
            Branch::BackwardParabolic => Branch::ForwardParabolic,
            Branch::ReturnImage => Branch::ReturnImage,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Branch::ForwardParabolic => "S0+",
            Branch::BackwardParabolic => "S0-",
            Branch::ReturnImage => "image",
        }
    }
}

/// A point of a plane curve. `p` is reported in the p > 0 half-plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanePoint {
    /// Phase of the generating sample at q0.
    pub source_theta: f64,
    pub theta_raw: f64,
    pub theta_mod: f64,
    pub p: f64,
    /// floor(theta_raw / T) - floor(source_theta / T).
    pub periods: i64,
    /// No clean crossing: |p| above the cap, a blow-up, or no crossing
    /// within the budget.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneCurve {
    pub branch: Branch,
    pub period: f64,
    /// Ordered by source phase, so consecutive points are neighbours on
    /// the curve.
    pub points: Vec<PlanePoint>,
}

fn period_count(theta: f64, source: f64, period: f64) -> i64 {
    (theta / period).floor() as i64 - (source / period).floor() as i64
}

impl PlaneCurve {
    /// Maximal runs of untruncated points as (theta_raw, p) polylines.
    pub fn segments(&self) -> Vec<Vec<(f64, f64)>> {
        let mut out = Vec::new();
        let mut run = Vec::new();
        for pt in &self.points {
            if pt.truncated || !pt.p.is_finite() {
                if run.len() >= 2 {
                    out.push(std::mem::take(&mut run));
                }
                run.clear();
            } else {
                run.push((pt.theta_raw, pt.p));
            }
        }
        if run.len() >= 2 {
            out.push(run);
        }
        out
    }

    /// Linear interpolation of p at `theta` (mod T) on the untruncated
    /// segments; the first segment covering `theta` wins.
    pub fn interpolate(&self, theta: f64) -> Option<f64> {
        let t = self.period;
        for seg in self.segments() {
            for w in seg.windows(2) {
                let (a, b) = (w[0], w[1]);
                let lo = a.0.min(b.0);
                let k = ((theta - lo) / t).floor();
                let x = theta - k * t;
                if x >= lo && x <= a.0.max(b.0) && a.0 != b.0 {
                    let s = (x - a.0) / (b.0 - a.0);
                    return Some(a.1 + s * (b.1 - a.1));
                }
            }
        }
        None
    }
}

/// Plane-trace settings: the integrator and the output cap on |p|.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSettings {
    pub integrator: IntegratorSettings,
    pub p_cap: f64,
}

impl TraceSettings {
    pub fn for_config(config: &PlanarConfiguration) -> Self {
        TraceSettings { integrator: IntegratorSettings::for_config(config), p_cap: 1e3 }
    }
}

/// Integrates the generating state of one sample to q = 0.
fn trace_sample(
    sample: &SeparatrixSample,
    q0: f64,
    direction: Direction,
    config: &PlanarConfiguration,
    settings: &TraceSettings,
) -> Result<PlanePoint, NumericError> {
    let s = &settings.integrator;
    s.validate()?;
    let period = config.period();
    // S0+: the state (q0, f) came up from the plane, so run time backward.
    // The reverse-time boundary state (q0, -g) falls to the plane forward.
    let (p0, run) = match direction {
        Direction::Forward => (sample.f, Direction::Backward),
        Direction::Backward => (-sample.f, Direction::Forward),
    };
    let field = ParticleField::with_phase_grid(config, sample.theta, s.h);
    let rhs = |t: f64, y: &[f64; 2]| field.std_rhs(t, y);
    let max_steps = ((s.s_max / s.h).ceil() as usize).min(s.max_steps);
    let traced = integrate_until(
        &rhs,
        sample.theta,
        [q0, p0],
        run.sign() * s.h,
        max_steps,
        s.refine_tol,
        |_, y| y[0] <= 0.0 || y[1].abs() > SPIKE_LIMIT,
    );
    let point = |theta: f64, p: f64, truncated: bool| PlanePoint {
        source_theta: sample.theta,
        theta_raw: theta,
        theta_mod: theta.rem_euclid(period),
        p,
        periods: period_count(theta, sample.theta, period),
        truncated,
    };
    Ok(match traced {
        Ok(traj) => {
            let (theta, y) = *traj.last();
            let p = y[1].abs();
            let crossed = traj.termination == Termination::Stopped && y[0] <= 0.0;
            point(theta, p, !crossed || !(p <= settings.p_cap))
        }
        Err(NumericError::BlowUp { t }) => point(t, f64::INFINITY, true),
        Err(e) => return Err(e),
    })
}

/// Traces every sample of `curve` to the q = 0 plane. Forward curves give
/// S0+; reverse-time curves give S0- directly.
pub fn backward_to_plane(
    curve: &SeparatrixCurve,
    config: &PlanarConfiguration,
    settings: &TraceSettings,
) -> Result<PlaneCurve, NumericError> {
    let points = curve
        .samples
        .par_iter()
        .map(|s| {
            trace_sample(s, curve.q0, curve.direction, config, settings)
                .map_err(|e| NumericError::AtPhase { theta: s.theta, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let branch = match curve.direction {
        Direction::Forward => Branch::ForwardParabolic,
        Direction::Backward => Branch::BackwardParabolic,
    };
    Ok(PlaneCurve { branch, period: config.period(), points })
}

/// Subdivision of the phase grid where neighbouring outputs separate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineSettings {
    /// A gap is refined when it exceeds this multiple of the median gap.
    pub ratio: f64,
    /// Smallest source spacing for gaps in p, as a fraction of T.
    pub floor_fraction: f64,
    /// Smallest source spacing for jumps in the output phase, as a
    /// fraction of T. Jumps sit on singular source phases, so this is
    /// much finer.
    pub jump_floor_fraction: f64,
    pub max_new_points: usize,
    /// Gaps refined per round, in priority order. Small rounds let the
    /// highest-priority gaps reach their floor before the budget runs out.
    pub per_round: usize,
}

impl Default for RefineSettings {
    fn default() -> Self {
        RefineSettings {
            ratio: 5.0,
            floor_fraction: 1e-4,
            jump_floor_fraction: 1e-9,
            max_new_points: 256,
            per_round: 2 * LANES,
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Separation of two neighbouring outputs.
#[derive(Debug, Clone, Copy)]
struct Gap {
    /// The output phases lie on opposite sides of a collision phase.
    straddles: bool,
    /// |p difference| between clean outputs.
    p: Option<f64>,
    /// One side has a clean output and the other does not.
    boundary: bool,
    /// Gaps with smaller keys are refined first when the budget is short.
    key: f64,
}

impl Default for Gap {
    fn default() -> Self {
        Gap { straddles: false, p: None, boundary: false, key: f64::INFINITY }
    }
}

/// Whether some collision phase (shifted by whole periods) lies in the
/// half-open interval between `a` and `b`.
fn straddles_collision(a: f64, b: f64, collisions: &[f64], period: f64) -> bool {
    if !a.is_finite() || !b.is_finite() {
        return false;
    }
    let (lo, hi) = (a.min(b), a.max(b));
    collisions.iter().any(|c| ((hi - c) / period).floor() > ((lo - c) / period).floor())
}

/// Bisects source gaps until none qualifies, the floors are reached or the
/// point budget is spent. `items` stays sorted by `theta`.
fn subdivide<V>(
    items: &mut Vec<V>,
    period: f64,
    refine: &RefineSettings,
    theta: impl Fn(&V) -> f64,
    measure: impl Fn(&V, &V) -> Gap,
    eval: impl Fn(&[f64]) -> Result<Vec<V>, NumericError>,
) -> Result<(), NumericError> {
    let floor = refine.floor_fraction * period;
    let jump_floor = refine.jump_floor_fraction * period;
    let mut added = 0;
    while added < refine.max_new_points {
        let gaps: Vec<(f64, Gap)> =
            items.windows(2).map(|w| (theta(&w[1]) - theta(&w[0]), measure(&w[0], &w[1]))).collect();
        let steps = median(gaps.iter().filter_map(|(_, g)| g.p).collect());
        let mut candidates = Vec::new();
        for (i, (d, g)) in gaps.iter().enumerate() {
            let jump = g.straddles && *d >= 2.0 * jump_floor;
            let coarse = (g.boundary || g.p.is_some_and(|x| x > refine.ratio * steps)) && *d >= 2.0 * floor;
            if jump || coarse {
                candidates.push((g.key, theta(&items[i]) + 0.5 * d));
            }
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
        candidates.truncate(refine.per_round.max(1).min(refine.max_new_points - added));
        if candidates.is_empty() {
            break;
        }
        let mut new_thetas: Vec<f64> = candidates.into_iter().map(|c| c.1).collect();
        new_thetas.sort_by(|a, b| a.total_cmp(b));
        added += new_thetas.len();
        items.extend(eval(&new_thetas)?);
        items.sort_by(|a, b| theta(a).total_cmp(&theta(b)));
    }
    Ok(())
}

fn plane_gap(a: &PlanePoint, b: &PlanePoint, collisions: &[f64], period: f64) -> Gap {
    let straddles = straddles_collision(a.theta_raw, b.theta_raw, collisions, period);
    let key = a.theta_raw.abs().min(b.theta_raw.abs());
    match (a.truncated, b.truncated) {
        (false, false) => Gap { straddles, p: Some((b.p - a.p).abs()), boundary: false, key },
        (true, true) => Gap { straddles, p: None, boundary: false, key },
        _ => Gap { straddles, p: None, boundary: true, key },
    }
}

/// Adds samples where neighbouring plane points separate: large p gaps
/// and truncation boundaries down to `floor_fraction`, and crossings that
/// straddle a collision phase (where p is unbounded) down to
/// `jump_floor_fraction`.
pub fn refine_near_spikes(
    curve: &SeparatrixCurve,
    plane: &PlaneCurve,
    config: &PlanarConfiguration,
    bisection: &BisectionSettings,
    trace: &TraceSettings,
    refine: &RefineSettings,
) -> Result<(SeparatrixCurve, PlaneCurve), NumericError> {
    let mut items: Vec<(SeparatrixSample, PlanePoint)> =
        curve.samples.iter().copied().zip(plane.points.iter().copied()).collect();
    let collisions = config.collision_phases();
    let period = config.period();
    subdivide(
        &mut items,
        period,
        refine,
        |v| v.0.theta,
        |a, b| plane_gap(&a.1, &b.1, &collisions, period),
        |thetas| {
            let samples = samples_at(thetas, curve.q0, config, bisection, curve.direction)?;
            let points = samples
                .par_iter()
                .map(|s| trace_sample(s, curve.q0, curve.direction, config, trace))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(samples.into_iter().zip(points).collect())
        },
    )?;
    let (samples, points) = items.into_iter().unzip();
    Ok((
        SeparatrixCurve { q0: curve.q0, direction: curve.direction, samples },
        PlaneCurve { branch: plane.branch, period: plane.period, points },
    ))
}

/// Time-reversal image of a plane curve about the symmetry point `t0`:
/// (theta, p) -> ((2 t0 - theta) mod T, p), branch flipped.
pub fn reflect_for_reversal(
    c: &PlaneCurve,
    t0: f64,
    config: &PlanarConfiguration,
) -> Result<PlaneCurve, NumericError> {
    if !config.is_symmetry_point(t0) {
        return Err(ConfigError::UndeclaredSymmetry(t0).into());
    }
    let period = c.period;
    let points = c
        .points
        .iter()
        .map(|pt| {
            let theta_raw = 2.0 * t0 - pt.theta_raw;
            let source_theta = 2.0 * t0 - pt.source_theta;
            PlanePoint {
                source_theta,
                theta_raw,
                theta_mod: theta_raw.rem_euclid(period),
                p: pt.p,
                periods: period_count(theta_raw, source_theta, period),
                truncated: pt.truncated,
            }
        })
        .collect();
    Ok(PlaneCurve { branch: c.branch.flipped(), period, points })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReturnStatus {
    Returned,
    /// Certified escape (E* > 0) before any return.
    Escaped,
    /// Neither a return nor a certificate within the budget.
    Budget,
    /// |p| diverged, typically at a collision of the primaries.
    BlowUp,
}

/// Image of (theta_in, p_in) on q = 0 at the next crossing of q = 0.
///
/// The crossing has p < 0; `p_out` is its magnitude, i.e. the image is
/// reported in the p > 0 half-plane through (q, p) -> (-q, -p).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnMapPoint {
    pub theta_in: f64,
    pub p_in: f64,
    pub theta_out_raw: f64,
    pub theta_out_mod: f64,
    pub p_out: f64,
    /// floor(theta_out / T) - floor(theta_in / T).
    pub periods: i64,
    pub status: ReturnStatus,
}

impl ReturnMapPoint {
    pub fn returned(&self) -> bool {
        self.status == ReturnStatus::Returned
    }
}

fn return_one(
    theta: f64,
    p: f64,
    config: &PlanarConfiguration,
    settings: &IntegratorSettings,
) -> Result<ReturnMapPoint, NumericError> {
    if !(p > 0.0) || !p.is_finite() {
        return Err(NumericError::domain(format!("return map needs p > 0, got {p}")));
    }
    let period = config.period();
    let m = config.total_mass();
    let field = ParticleField::with_phase_grid(config, theta, settings.h);
    let rhs = |t: f64, y: &[f64; 2]| field.std_rhs(t, y);
    let max_steps = ((settings.s_max / settings.h).ceil() as usize).min(settings.max_steps);
    let escaped = |y: &[f64; 2]| y[0] > 0.0 && y[1] > 0.0 && 0.5 * y[1] * y[1] - m / y[0] > DECISION_MARGIN;
    let traced = integrate_until(
        &rhs,
        theta,
        [0.0, p],
        settings.h,
        max_steps,
        settings.refine_tol,
        |_, y| y[0] < 0.0 || escaped(y) || y[1].abs() > SPIKE_LIMIT,
    );
    let make = |t: f64, p_out: f64, status: ReturnStatus| ReturnMapPoint {
        theta_in: theta,
        p_in: p,
        theta_out_raw: t,
        theta_out_mod: t.rem_euclid(period),
        p_out,
        periods: period_count(t, theta, period),
        status,
    };
    Ok(match traced {
        Ok(traj) => {
            let (t, y) = *traj.last();
            match traj.termination {
                Termination::Budget => make(t, f64::NAN, ReturnStatus::Budget),
                Termination::Stopped if y[1].abs() > SPIKE_LIMIT => {
                    make(t, f64::INFINITY, ReturnStatus::BlowUp)
                }
                Termination::Stopped if y[0] < 0.0 => make(t, -y[1], ReturnStatus::Returned),
                Termination::Stopped => make(t, f64::NAN, ReturnStatus::Escaped),
            }
        }
        Err(NumericError::BlowUp { t }) => make(t, f64::INFINITY, ReturnStatus::BlowUp),
        Err(e) => return Err(e),
    })
}

/// First-return map of points (theta, p > 0) on q = 0, in input order.
pub fn forward_return_map(
    points: &[(f64, f64)],
    config: &PlanarConfiguration,
    settings: &IntegratorSettings,
) -> Result<Vec<ReturnMapPoint>, NumericError> {
    settings.validate()?;
    points
        .par_iter()
        .map(|&(theta, p)| {
            return_one(theta, p, config, settings)
                .map_err(|e| NumericError::AtPhase { theta, source: Box::new(e) })
        })
        .collect()
}

/// Whether an S0- point lies strictly below S0+ at its phase.
fn is_below(pt: &PlanePoint, s0_plus: &PlaneCurve) -> bool {
    !pt.truncated && s0_plus.interpolate(pt.theta_mod).is_some_and(|v| pt.p < v)
}

/// Untruncated points of `s0_minus` strictly below `s0_plus`, as
/// (theta mod T, p) return-map inputs in curve order.
pub fn sub_parabolic_inputs(s0_minus: &PlaneCurve, s0_plus: &PlaneCurve) -> Vec<(f64, f64)> {
    s0_minus.points.iter().filter(|pt| is_below(pt, s0_plus)).map(|pt| (pt.theta_mod, pt.p)).collect()
}

/// The return map of the sub-parabolic part of S0-, densified where
/// neighbouring images separate.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedReturnMap {
    /// S0+ samples and plane points, including the added ones.
    pub curve: SeparatrixCurve,
    pub plane: PlaneCurve,
    /// Images of the S0- points below the original S0+, in curve order.
    pub map: Vec<ReturnMapPoint>,
}

/// Only crossings of collision phases are refined here: elsewhere the map
/// can be chaotic, and p gaps there would spend the whole budget.
fn return_gap(
    a: &Option<ReturnMapPoint>,
    b: &Option<ReturnMapPoint>,
    collisions: &[f64],
    period: f64,
) -> Gap {
    match (a, b) {
        (Some(a), Some(b)) if a.returned() && b.returned() => Gap {
            straddles: straddles_collision(a.theta_out_raw, b.theta_out_raw, collisions, period),
            key: a.theta_out_raw.min(b.theta_out_raw),
            ..Gap::default()
        },
        _ => Gap::default(),
    }
}

/// Builds S0- from a forward curve and its S0+ trace by reflection about
/// `t0`, maps the points below S0+ forward to their next crossing, and
/// adds source phases where neighbouring images straddle a collision
/// phase, earliest images first, which resolves the spikes there. Membership below S0+ is judged against
/// the `plane` passed in.
#[allow(clippy::too_many_arguments)]
pub fn refine_return_map(
    curve: &SeparatrixCurve,
    plane: &PlaneCurve,
    t0: f64,
    config: &PlanarConfiguration,
    bisection: &BisectionSettings,
    trace: &TraceSettings,
    integrator: &IntegratorSettings,
    refine: &RefineSettings,
) -> Result<RefinedReturnMap, NumericError> {
    if curve.direction != Direction::Forward {
        return Err(NumericError::domain("return-map refinement starts from a forward curve"));
    }
    integrator.validate()?;
    let reference = plane.clone();
    let image = |pts: &[PlanePoint]| -> Result<Vec<Option<ReturnMapPoint>>, NumericError> {
        let mirrored = PlaneCurve { branch: plane.branch, period: plane.period, points: pts.to_vec() };
        let reflected = reflect_for_reversal(&mirrored, t0, config)?;
        reflected
            .points
            .par_iter()
            .map(|pt| {
                if is_below(pt, &reference) {
                    return_one(pt.theta_mod, pt.p, config, integrator)
                        .map(Some)
                        .map_err(|e| NumericError::AtPhase { theta: pt.theta_mod, source: Box::new(e) })
                } else {
                    Ok(None)
                }
            })
            .collect()
    };
    let first = image(&plane.points)?;
    let mut items: Vec<(SeparatrixSample, PlanePoint, Option<ReturnMapPoint>)> = curve
        .samples
        .iter()
        .copied()
        .zip(plane.points.iter().copied())
        .zip(first)
        .map(|((s, p), r)| (s, p, r))
        .collect();
    let collisions = config.collision_phases();
    let period = config.period();
    subdivide(
        &mut items,
        period,
        refine,
        |v| v.0.theta,
        |a, b| return_gap(&a.2, &b.2, &collisions, period),
        |thetas| {
            let samples = samples_at(thetas, curve.q0, config, bisection, curve.direction)?;
            let points = samples
                .par_iter()
                .map(|s| trace_sample(s, curve.q0, curve.direction, config, trace))
                .collect::<Result<Vec<_>, _>>()?;
            let images = image(&points)?;
            Ok(samples.into_iter().zip(points).zip(images).map(|((s, p), r)| (s, p, r)).collect())
        },
    )?;
    let mut samples = Vec::with_capacity(items.len());
    let mut points = Vec::with_capacity(items.len());
    let mut map = Vec::new();
    for (s, p, r) in items {
        samples.push(s);
        points.push(p);
        map.extend(r);
    }
    Ok(RefinedReturnMap {
        curve: SeparatrixCurve { q0: curve.q0, direction: curve.direction, samples },
        plane: PlaneCurve { branch: plane.branch, period: plane.period, points },
        map,
    })
}

/// The images of a return map as a plane curve in the order given;
/// points that did not return are truncated.
pub fn image_curve(map: &[ReturnMapPoint], period: f64) -> PlaneCurve {
    let points = map
        .iter()
        .map(|r| PlanePoint {
            source_theta: r.theta_in,
            theta_raw: r.theta_out_raw,
            theta_mod: r.theta_out_mod,
            p: r.p_out,
            periods: r.periods,
            truncated: !r.returned(),
        })
        .collect();
    PlaneCurve { branch: Branch::ReturnImage, period, points }
}

/// Transversal crossings between two polylines, each located by linear
/// interpolation and sorted by the first coordinate. Segment parameters
/// are half-open, so shared vertices and collinear overlaps are not
/// reported.
pub fn intersect_polylines(a: &[(f64, f64)], b: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for sa in a.windows(2) {
        let (p0, p1) = (sa[0], sa[1]);
        let d1 = (p1.0 - p0.0, p1.1 - p0.1);
        let (amin, amax) = (p0.0.min(p1.0), p0.0.max(p1.0));
        for sb in b.windows(2) {
            let (q0, q1) = (sb[0], sb[1]);
            if q0.0.max(q1.0) < amin || q0.0.min(q1.0) > amax {
                continue;
            }
            let d2 = (q1.0 - q0.0, q1.1 - q0.1);
            let denom = d1.0 * d2.1 - d1.1 * d2.0;
            let scale = d1.0.hypot(d1.1) * d2.0.hypot(d2.1);
            if denom.abs() <= 1e-14 * scale || scale == 0.0 {
                continue;
            }
            let w = (q0.0 - p0.0, q0.1 - p0.1);
            let s = (w.0 * d2.1 - w.1 * d2.0) / denom;
            let u = (w.0 * d1.1 - w.1 * d1.0) / denom;
            if (0.0..1.0).contains(&s) && (0.0..1.0).contains(&u) {
                out.push((p0.0 + s * d1.0, p0.1 + s * d1.1));
            }
        }
    }
    out.sort_by(|x, y| x.0.total_cmp(&y.0));
    out
}

/// Crossings of two plane curves on the periodic phase line: copies of
/// `b` shifted by whole periods are intersected with `a`, and results are
/// reduced mod T, deduplicated and sorted.
pub fn intersect_plane_curves(a: &PlaneCurve, b: &PlaneCurve) -> Vec<(f64, f64)> {
    let t = a.period;
    let sa = a.segments();
    let sb = b.segments();
    let span = |segs: &[Vec<(f64, f64)>]| {
        segs.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.0), hi.max(p.0))
        })
    };
    let (alo, ahi) = span(&sa);
    let (blo, bhi) = span(&sb);
    if !alo.is_finite() || !blo.is_finite() {
        return Vec::new();
    }
    let kmin = ((alo - bhi) / t).floor() as i64 - 1;
    let kmax = ((ahi - blo) / t).ceil() as i64 + 1;
    let mut hits = Vec::new();
    for k in kmin..=kmax {
        let shift = k as f64 * t;
        for pa in &sa {
            for pb in &sb {
                let shifted: Vec<(f64, f64)> = pb.iter().map(|&(x, y)| (x + shift, y)).collect();
                for (x, y) in intersect_polylines(pa, &shifted) {
                    hits.push((x.rem_euclid(t), y));
                }
            }
        }
    }
    hits.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for h in hits {
        let dup = out.iter().any(|o| {
            let d = (o.0 - h.0).abs();
            d.min(t - d) <= 1e-9 * t && (o.1 - h.1).abs() <= 1e-9 * o.1.abs().max(1.0)
        });
        if !dup {
            out.push(h);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn grid_includes_both_ends() {
        let g = phase_grid(2.5, 2);
        assert_eq!(g, vec![0.0, 2.5]);
        let g = phase_grid(1.0, 5);
        assert_eq!(g, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn crossing_segments() {
        let hits = intersect_polylines(&[(0.0, 0.0), (1.0, 1.0)], &[(0.0, 1.0), (1.0, 0.0)]);
        assert_eq!(hits.len(), 1);
        assert!((hits[0].0 - 0.5).abs() < 1e-15 && (hits[0].1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identical_curves_have_no_transversal_crossing() {
        let c = [(0.0, 0.0), (0.5, 1.0), (1.0, 0.2), (1.5, 0.7)];
        assert!(intersect_polylines(&c, &c).is_empty());
    }

    #[test]
    fn periodic_intersection_wraps() {
        let t = 1.0;
        let mk = |pts: Vec<(f64, f64)>, branch| PlaneCurve {
            branch,
            period: t,
            points: pts
                .into_iter()
                .map(|(x, p)| PlanePoint {
                    source_theta: x,
                    theta_raw: x,
                    theta_mod: x.rem_euclid(t),
                    p,
                    periods: 0,
                    truncated: false,
                })
                .collect(),
        };
        // Rising line from 0.5 to 1.5 crosses a falling line living on [-0.5, 0.5].
        let a = mk(vec![(0.5, 0.0), (1.5, 1.0)], Branch::ForwardParabolic);
        let b = mk(vec![(-0.5, 1.0), (0.5, 0.0)], Branch::BackwardParabolic);
        let hits = intersect_plane_curves(&a, &b);
        assert_eq!(hits.len(), 1);
        assert!(hits[0].0.abs() < 1e-12 || (hits[0].0 - 1.0).abs() < 1e-12);
        assert!((hits[0].1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn circular_f_matches_energy_closed_form() {
        let c = presets::circular();
        let s = BisectionSettings::for_config(&c);
        let expected = (2.0 * 2.0 / 2f64.sqrt()).sqrt();
        let a = find_f(0.0, 1.0, &c, &s).unwrap();
        assert!((a.f - expected).abs() < 1e-6, "{a:?}");
        assert!(a.f >= 0.0 && a.f <= cone_velocity(1.0, &c));
    }

    #[test]
    fn height_below_q_mono_is_rejected() {
        let c = presets::circular();
        let s = BisectionSettings::for_config(&c);
        assert!(find_f(0.0, 0.5, &c, &s).is_err());
        assert!(build_curve(1.0, &c, 1, &s).is_err());
    }

    #[test]
    fn reflection_rules() {
        let c = presets::paper_kepler();
        let t = c.period();
        let curve = PlaneCurve {
            branch: Branch::ForwardParabolic,
            period: t,
            points: vec![
                PlanePoint { source_theta: 0.5, theta_raw: 0.3, theta_mod: 0.3, p: 1.2, periods: 0, truncated: false },
                PlanePoint { source_theta: t / 2.0, theta_raw: t / 2.0, theta_mod: t / 2.0, p: 0.9, periods: 0, truncated: false },
            ],
        };
        let r = reflect_for_reversal(&curve, t / 2.0, &c).unwrap();
        assert_eq!(r.branch, Branch::BackwardParabolic);
        assert!((r.points[1].theta_mod - t / 2.0).abs() < 1e-15);
        let rr = reflect_for_reversal(&r, t / 2.0, &c).unwrap();
        for (x, y) in rr.points.iter().zip(&curve.points) {
            assert!((x.theta_mod - y.theta_mod).abs() < 1e-12);
            assert_eq!(x.p, y.p);
        }
        assert!(matches!(
            reflect_for_reversal(&curve, 0.3, &c),
            Err(NumericError::Config(ConfigError::UndeclaredSymmetry(_)))
        ));
    }

    #[test]
    fn circular_return_conserves_speed() {
        let c = presets::circular();
        let s = IntegratorSettings::for_config(&c);
        let out = forward_return_map(&[(0.3, 1.0), (1.0, 2.5)], &c, &s).unwrap();
        assert!(out[0].returned());
        assert!((out[0].p_out - 1.0).abs() < 1e-6);
        assert_eq!(out[1].status, ReturnStatus::Escaped);
        assert!(forward_return_map(&[(0.0, -1.0)], &c, &s).is_err());
    }

    #[test]
    fn lanes_match_scalar_bisection() {
        let c = presets::paper_kepler();
        let s = BisectionSettings::for_config(&c);
        let curve = build_curve(1.0, &c, 6, &s).unwrap();
        for sample in &curve.samples {
            let one = find_f(sample.theta, 1.0, &c, &s).unwrap();
            assert_eq!(&one, sample);
        }
    }

    #[test]
    fn undecided_midpoints_cap_the_bisection() {
        let c = presets::circular();
        let short = IntegratorSettings::for_config(&c).with_budget(1.0);
        let base = BisectionSettings { max_doublings: 0, ..BisectionSettings::for_config(&c) }.with_integrator(short);
        let first = find_f(0.0, 1.0, &c, &base).unwrap();
        assert!(!first.lower_decided && first.flagged());
        let more = BisectionSettings { max_undecided: 4, ..base };
        let later = find_f(0.0, 1.0, &c, &more).unwrap();
        assert!(later.iterations > first.iterations);
        assert!(later.bracket_width < first.bracket_width);
        // The lockstep path applies the same rule.
        let curve = build_curve(1.0, &c, 3, &more).unwrap();
        assert_eq!(curve.samples[0], later);
    }

    fn point(theta_raw: f64, p: f64, truncated: bool) -> PlanePoint {
        PlanePoint { source_theta: theta_raw, theta_raw, theta_mod: theta_raw, p, periods: 0, truncated }
    }

    #[test]
    fn collision_straddles() {
        assert!(straddles_collision(-0.1, 0.1, &[0.0], 1.0));
        assert!(straddles_collision(2.9, 3.1, &[0.0], 1.0));
        assert!(!straddles_collision(0.1, 0.9, &[0.0], 1.0));
        assert!(straddles_collision(0.1, 0.9, &[0.5], 1.0));
        assert!(!straddles_collision(0.1, f64::INFINITY, &[0.0], 1.0));
    }

    #[test]
    fn subdivision_closes_in_on_a_collision() {
        let refine = RefineSettings { jump_floor_fraction: 1e-6, ..RefineSettings::default() };
        let mut items: Vec<PlanePoint> = (0..5).map(|k| point(0.25 * k as f64, 1.0, false)).collect();
        subdivide(
            &mut items,
            1.0,
            &refine,
            |v| v.theta_raw,
            |a, b| plane_gap(a, b, &[0.3], 1.0),
            |thetas| Ok(thetas.iter().map(|&x| point(x, 1.0, false)).collect()),
        )
        .unwrap();
        let below = items.iter().filter(|v| v.theta_raw < 0.3).last().unwrap().theta_raw;
        let above = items.iter().find(|v| v.theta_raw > 0.3).unwrap().theta_raw;
        assert!(above - below < 2e-6, "{below} {above}");
        assert!(items.len() < 5 + 40);
        assert!(items.windows(2).all(|w| w[0].theta_raw < w[1].theta_raw));
    }

    #[test]
    fn subdivision_respects_the_budget() {
        let refine = RefineSettings { max_new_points: 3, ..RefineSettings::default() };
        let mut items: Vec<PlanePoint> = (0..5).map(|k| point(0.25 * k as f64, 1.0, k == 2)).collect();
        subdivide(
            &mut items,
            1.0,
            &refine,
            |v| v.theta_raw,
            |a, b| plane_gap(a, b, &[], 1.0),
            |thetas| Ok(thetas.iter().map(|&x| point(x, 1.0, false)).collect()),
        )
        .unwrap();
        assert_eq!(items.len(), 8);
    }

    #[test]
    fn sub_parabolic_selection_and_images() {
        let t = 1.0;
        let plus = PlaneCurve {
            branch: Branch::ForwardParabolic,
            period: t,
            points: vec![point(0.0, 2.0, false), point(1.0, 2.0, false)],
        };
        let minus = PlaneCurve {
            branch: Branch::BackwardParabolic,
            period: t,
            points: vec![point(0.2, 1.0, false), point(0.4, 3.0, false), point(0.6, 1.5, true)],
        };
        assert_eq!(sub_parabolic_inputs(&minus, &plus), vec![(0.2, 1.0)]);

        let map = [
            ReturnMapPoint {
                theta_in: 0.2,
                p_in: 1.0,
                theta_out_raw: 1.7,
                theta_out_mod: 0.7,
                p_out: 0.8,
                periods: 1,
                status: ReturnStatus::Returned,
            },
            ReturnMapPoint {
                theta_in: 0.3,
                p_in: 1.9,
                theta_out_raw: 9.0,
                theta_out_mod: 0.0,
                p_out: f64::NAN,
                periods: 9,
                status: ReturnStatus::Budget,
            },
        ];
        let img = image_curve(&map, t);
        assert_eq!(img.branch, Branch::ReturnImage);
        assert_eq!(img.branch.flipped(), Branch::ReturnImage);
        assert!(!img.points[0].truncated && img.points[1].truncated);
        assert_eq!(img.points[0].theta_raw, 1.7);
    }
}
