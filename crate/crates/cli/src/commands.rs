//! The subcommands. Each one renders its data file in memory; writing it
//! and its manifest is left to the caller so `rerun` can compare bytes.

use std::path::PathBuf;

use sitnikov_core::separatrix::{
    backward_to_plane, build_curve, cone_velocity, forward_return_map, refine_near_spikes,
    refine_return_map, reflect_for_reversal, sub_parabolic_inputs, RefineSettings, ReturnStatus, TraceSettings,
};
use sitnikov_core::{
    classify_trajectory, presets, BisectionSettings, Branch, Classification, ConfigKind, Direction,
    IntegratorSettings, PlanarConfiguration, PlaneCurve, PlanePoint, ReturnMapPoint, SeparatrixCurve, StateStd,
};

use crate::error::CliError;
use crate::input::{load_config, read_plane_rows, read_surface, LoadedConfig};
use crate::manifest::{ConfigIdentity, FileRef, Parameters};
use crate::output::{num, Csv, PlotSpec};

/// Flags shared by every command that integrates.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Numerics {
    /// Height of the section; defaults to max(1, 1.01 q_mono).
    #[arg(long)]
    pub q0: Option<f64>,
    /// Number of intervals of the phase grid over [0, T]; one more sample.
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
    /// Absolute bisection tolerance on p; defaults to 1e-10 of the bracket.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Integration step in phase units; defaults to T/2000 (T/4000 in fictional time).
    #[arg(long)]
    pub h: Option<f64>,
    /// Phase budget per classification; defaults to 50 T.
    #[arg(long)]
    pub s_max: Option<f64>,
}

/// A rendered data file plus what its manifest needs.
pub struct Product {
    pub text: String,
    pub config: Option<ConfigIdentity>,
    pub parameters: Parameters,
    pub inputs: Vec<FileRef>,
    pub plot: Option<PlotSpec>,
    pub columns: Vec<String>,
}

pub fn default_q0(config: &PlanarConfiguration) -> f64 {
    1.0_f64.max(1.01 * config.q_mono())
}

struct Resolved {
    q0: f64,
    bisection: BisectionSettings,
    integrator: IntegratorSettings,
}

fn resolve(n: &Numerics, config: &PlanarConfiguration, q0: Option<f64>) -> Result<Resolved, CliError> {
    let q0 = q0.or(n.q0).unwrap_or_else(|| default_q0(config));
    let q_mono = config.q_mono();
    if !(q0 > q_mono) || !q0.is_finite() {
        return Err(CliError::Usage(format!(
            "q0 = {q0} must exceed q_mono = {q_mono}; below it escape is not monotone in p"
        )));
    }
    let mut integrator = IntegratorSettings::for_config(config);
    if let Some(h) = n.h {
        integrator = integrator.with_step(h);
    }
    if let Some(s) = n.s_max {
        integrator = integrator.with_budget(s);
    }
    integrator.validate()?;
    let mut bisection = BisectionSettings::for_config(config).with_integrator(integrator);
    if let Some(tol) = n.tol {
        if !(tol > 0.0) || !tol.is_finite() {
            return Err(CliError::Usage(format!("tol must be positive, got {tol}")));
        }
        bisection = bisection.with_tol(tol);
    }
    Ok(Resolved { q0, bisection, integrator })
}

fn grid_samples(n: &Numerics) -> Result<usize, CliError> {
    if n.grid == 0 {
        return Err(CliError::Usage("grid needs at least one interval".into()));
    }
    Ok(n.grid + 1)
}

fn parameters(r: &Resolved, config: &PlanarConfiguration) -> Parameters {
    Parameters {
        q0: Some(r.q0),
        tol: Some(r.bisection.resolved_tol(cone_velocity(r.q0, config))),
        h: Some(r.integrator.h),
        s_max: Some(r.integrator.s_max),
        ..Parameters::default()
    }
}

fn common_header(loaded: &LoadedConfig) -> Vec<(&'static str, String)> {
    vec![("config", loaded.identity.label()), ("period", num(loaded.config.period()))]
}

fn flag_label(lower_decided: bool) -> &'static str {
    if lower_decided {
        "ok"
    } else {
        "lower_undecided"
    }
}

pub fn configs_list() -> Product {
    let mut text = format!(
        "{:<14} {:>20} {:>6} {:>10} {:>10}  {}\n",
        "name", "T", "M", "R_max", "q_mono", "symmetry points"
    );
    for p in presets::all() {
        let c = &p.config;
        let t = match p.reference_period {
            Some(r) => format!("{:.6} (ref {r})", c.period()),
            None => format!("{:.6}", c.period()),
        };
        let sym = if matches!(c.kind(), ConfigKind::Circular { .. }) {
            "every phase".to_string()
        } else {
            c.symmetry_points().iter().map(|s| format!("{s:.6}")).collect::<Vec<_>>().join(", ")
        };
        text.push_str(&format!(
            "{:<14} {:>20} {:>6} {:>10.6} {:>10.6}  {}\n",
            p.name,
            t,
            c.total_mass(),
            c.max_radius(),
            c.q_mono(),
            sym
        ));
    }
    Product { text, config: None, parameters: Parameters::default(), inputs: vec![], plot: None, columns: vec![] }
}

pub fn surface(config: &str, n: &Numerics) -> Result<Product, CliError> {
    let loaded = load_config(config)?;
    let c = &loaded.config;
    let r = resolve(n, c, None)?;
    let grid_n = grid_samples(n)?;
    let curve = build_curve(r.q0, c, grid_n, &r.bisection)?;
    let mut params = parameters(&r, c);
    params.grid_n = Some(grid_n);
    let mut header = common_header(&loaded);
    header.push(("q0", num(r.q0)));
    header.push(("direction", "forward".into()));
    let mut csv = Csv::new(&header, &["theta", "f", "bracket_width", "flags"]);
    for s in &curve.samples {
        csv.row(&[num(s.theta), num(s.f), num(s.bracket_width), flag_label(s.lower_decided).into()]);
    }
    let columns = csv.columns().to_vec();
    Ok(Product {
        text: csv.finish(),
        config: Some(loaded.identity),
        parameters: params,
        inputs: vec![],
        plot: Some(PlotSpec { title: "f(theta)".into(), x: "theta".into(), y: "f".into(), series: None }),
        columns,
    })
}

#[derive(Debug, Clone, clap::Args)]
pub struct PlaneArgs {
    #[arg(long)]
    pub config: String,
    /// Read f(theta) from a `surface` output instead of recomputing it.
    #[arg(long)]
    pub surface_file: Option<PathBuf>,
    /// Also emit the reverse-time branch, reflected about this symmetry point.
    #[arg(long)]
    pub reflect: Option<f64>,
    /// Plane crossings with |p| above this are flagged truncated.
    #[arg(long, default_value_t = 1e3)]
    pub p_cap: f64,
    /// Add phases where neighbouring plane points separate.
    #[arg(long)]
    pub refine: bool,
    #[command(flatten)]
    pub numerics: Numerics,
}

/// The forward curve, from a file or recomputed, plus manifest fields.
fn forward_curve(a: &PlaneArgs, loaded: &LoadedConfig) -> Result<(SeparatrixCurve, Resolved, Parameters, Vec<FileRef>), CliError> {
    let c = &loaded.config;
    match &a.surface_file {
        Some(path) => {
            let file = read_surface(path)?;
            let label = loaded.identity.label();
            if !file.config.is_empty() && file.config != label {
                return Err(CliError::Usage(format!(
                    "{} was computed for `{}`, not `{label}`",
                    path.display(),
                    file.config
                )));
            }
            if a.numerics.q0.is_some_and(|q| q != file.q0) {
                return Err(CliError::Usage(format!("--q0 disagrees with the surface file's q0 = {}", file.q0)));
            }
            let r = resolve(&a.numerics, c, Some(file.q0))?;
            let mut params = parameters(&r, c);
            params.grid_n = Some(file.samples.len());
            let curve = SeparatrixCurve { q0: file.q0, direction: Direction::Forward, samples: file.samples };
            Ok((curve, r, params, vec![FileRef::of(path)?]))
        }
        None => {
            let r = resolve(&a.numerics, c, None)?;
            let grid_n = grid_samples(&a.numerics)?;
            let curve = build_curve(r.q0, c, grid_n, &r.bisection)?;
            let mut params = parameters(&r, c);
            params.grid_n = Some(grid_n);
            Ok((curve, r, params, vec![]))
        }
    }
}

fn check_symmetry(t0: f64, c: &PlanarConfiguration) -> Result<(), CliError> {
    if c.is_symmetry_point(t0) {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{t0} is not a declared symmetry point; declared: {:?}",
            c.symmetry_points()
        )))
    }
}

fn plane_row(csv: &mut Csv, branch: Branch, pt: &PlanePoint) {
    csv.row(&[
        branch.label().into(),
        num(pt.theta_mod),
        num(pt.p),
        pt.periods.to_string(),
        u8::from(pt.truncated).to_string(),
        num(pt.theta_raw),
        num(pt.source_theta),
    ]);
}

pub fn plane_curve(a: &PlaneArgs) -> Result<Product, CliError> {
    let loaded = load_config(&a.config)?;
    let c = &loaded.config;
    if let Some(t0) = a.reflect {
        check_symmetry(t0, c)?;
    }
    if !(a.p_cap > 0.0) {
        return Err(CliError::Usage(format!("p-cap must be positive, got {}", a.p_cap)));
    }
    let (curve, r, mut params, inputs) = forward_curve(a, &loaded)?;
    let trace = TraceSettings { integrator: r.integrator, p_cap: a.p_cap };
    let mut plane = backward_to_plane(&curve, c, &trace)?;
    if a.refine {
        plane = refine_near_spikes(&curve, &plane, c, &r.bisection, &trace, &RefineSettings::default())?.1;
    }
    params.p_cap = Some(a.p_cap);
    params.reflect_t0 = a.reflect;
    params.refine = Some(a.refine);

    let mut header = common_header(&loaded);
    header.push(("q0", num(curve.q0)));
    if let Some(t0) = a.reflect {
        header.push(("reflect_t0", num(t0)));
    }
    let mut csv = Csv::new(
        &header,
        &["branch", "theta_mod_T", "p", "periods", "truncated", "theta_raw", "source_theta"],
    );
    for pt in &plane.points {
        plane_row(&mut csv, plane.branch, pt);
    }
    let mut series = vec![Branch::ForwardParabolic.label().to_string()];
    if let Some(t0) = a.reflect {
        let minus = reflect_for_reversal(&plane, t0, c)?;
        for pt in &minus.points {
            plane_row(&mut csv, minus.branch, pt);
        }
        series.push(minus.branch.label().into());
    }
    let columns = csv.columns().to_vec();
    Ok(Product {
        text: csv.finish(),
        config: Some(loaded.identity),
        parameters: params,
        inputs,
        plot: Some(PlotSpec {
            title: "plane traces".into(),
            x: "theta_mod_T".into(),
            y: "p".into(),
            series: Some(("branch".into(), series)),
        }),
        columns,
    })
}

#[derive(Debug, Clone, clap::Args)]
pub struct ReturnArgs {
    #[command(flatten)]
    pub plane: PlaneArgs,
    /// Plane points to map: a `plane-curve` output (S0- points below S0+)
    /// or any CSV with theta and p columns.
    #[arg(long)]
    pub points_from: Option<PathBuf>,
    /// Map every untruncated point of --points-from.
    #[arg(long)]
    pub all: bool,
    /// Adds theta_out_shifted = theta_out_raw - n T.
    #[arg(long)]
    pub period_offset: Option<i64>,
}

fn curve_of(rows: &[crate::input::PlaneRow], branch: Branch, period: f64) -> PlaneCurve {
    let points = rows
        .iter()
        .filter(|r| r.branch.as_deref() == Some(branch.label()))
        .map(|r| PlanePoint {
            source_theta: r.source_theta,
            theta_raw: r.theta_raw,
            theta_mod: r.theta,
            p: r.p,
            periods: r.periods,
            truncated: r.truncated,
        })
        .collect();
    PlaneCurve { branch, period, points }
}

fn status_label(s: ReturnStatus) -> &'static str {
    match s {
        ReturnStatus::Returned => "returned",
        ReturnStatus::Escaped => "escaped",
        ReturnStatus::Budget => "budget",
        ReturnStatus::BlowUp => "blow_up",
    }
}

pub fn return_map(a: &ReturnArgs) -> Result<Product, CliError> {
    let loaded = load_config(&a.plane.config)?;
    let c = &loaded.config;
    let period = c.period();
    let (map, params, inputs): (Vec<ReturnMapPoint>, Parameters, Vec<FileRef>) = match &a.points_from {
        Some(path) => {
            let rows = read_plane_rows(path)?;
            let has_branches = rows.iter().any(|r| r.branch.is_some());
            let points: Vec<(f64, f64)> = if has_branches && !a.all {
                let minus = curve_of(&rows, Branch::BackwardParabolic, period);
                let plus = curve_of(&rows, Branch::ForwardParabolic, period);
                if minus.points.is_empty() || plus.points.is_empty() {
                    return Err(CliError::Usage(format!(
                        "{} needs both S0+ and S0- rows (plane-curve --reflect), or pass --all",
                        path.display()
                    )));
                }
                sub_parabolic_inputs(&minus, &plus)
            } else {
                rows.iter().filter(|r| !r.truncated).map(|r| (r.theta, r.p)).collect()
            };
            if points.is_empty() {
                return Err(CliError::Usage(format!("{}: no points to map", path.display())));
            }
            if let Some(&(theta, p)) = points.iter().find(|(t, p)| !(*p > 0.0) || !p.is_finite() || !t.is_finite()) {
                return Err(CliError::Usage(format!("input point ({theta}, {p}) needs a finite p > 0")));
            }
            let r = resolve(&a.plane.numerics, c, Some(default_q0(c)))?;
            let map = forward_return_map(&points, c, &r.integrator)?;
            let params = Parameters { h: Some(r.integrator.h), s_max: Some(r.integrator.s_max), ..Parameters::default() };
            (map, params, vec![FileRef::of(path)?])
        }
        None => {
            let t0 = a.plane.reflect.ok_or_else(|| {
                CliError::Usage("without --points-from, --reflect t0 is needed to build S0-".into())
            })?;
            check_symmetry(t0, c)?;
            let (curve, r, mut params, inputs) = forward_curve(&a.plane, &loaded)?;
            let trace = TraceSettings { integrator: r.integrator, p_cap: a.plane.p_cap };
            let plane = backward_to_plane(&curve, c, &trace)?;
            let map = if a.plane.refine {
                refine_return_map(&curve, &plane, t0, c, &r.bisection, &trace, &r.integrator, &RefineSettings::default())?
                    .map
            } else {
                let minus = reflect_for_reversal(&plane, t0, c)?;
                let points = sub_parabolic_inputs(&minus, &plane);
                forward_return_map(&points, c, &r.integrator)?
            };
            if map.is_empty() {
                return Err(CliError::Usage("no S0- point lies below S0+; nothing to map".into()));
            }
            params.p_cap = Some(a.plane.p_cap);
            params.reflect_t0 = Some(t0);
            params.refine = Some(a.plane.refine);
            (map, params, inputs)
        }
    };
    let mut params = params;
    params.period_offset = a.period_offset;

    let mut header = common_header(&loaded);
    if let Some(n) = a.period_offset {
        header.push(("period_offset", n.to_string()));
    }
    let mut columns = vec!["theta_in", "p_in", "theta_out_raw", "theta_out_mod_T", "p_out", "periods", "status"];
    if a.period_offset.is_some() {
        columns.push("theta_out_shifted");
    }
    let mut csv = Csv::new(&header, &columns);
    for m in &map {
        let mut row = vec![
            num(m.theta_in),
            num(m.p_in),
            num(m.theta_out_raw),
            num(m.theta_out_mod),
            num(m.p_out),
            m.periods.to_string(),
            status_label(m.status).into(),
        ];
        if let Some(n) = a.period_offset {
            row.push(num(m.theta_out_raw - n as f64 * period));
        }
        csv.row(&row);
    }
    let x = if a.period_offset.is_some() { "theta_out_shifted" } else { "theta_out_mod_T" };
    let columns = csv.columns().to_vec();
    Ok(Product {
        text: csv.finish(),
        config: Some(loaded.identity),
        parameters: params,
        inputs,
        plot: Some(PlotSpec { title: "first-return images".into(), x: x.into(), y: "p_out".into(), series: None }),
        columns,
    })
}

#[derive(Debug, Clone, clap::Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub config: String,
    #[arg(long, allow_hyphen_values = true)]
    pub q: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub p: f64,
    #[arg(long, default_value_t = 0.0)]
    pub theta: f64,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub s_max: Option<f64>,
}

/// Text verdict followed by one JSON line.
pub fn classify(a: &ClassifyArgs) -> Result<Product, CliError> {
    let loaded = load_config(&a.config)?;
    let c = &loaded.config;
    if !(a.q * a.p > 0.0) || !a.theta.is_finite() {
        return Err(CliError::Usage(format!(
            "classification needs q and p nonzero with the same sign, got q = {}, p = {}",
            a.q, a.p
        )));
    }
    // (q, p) -> (-q, -p) is a symmetry, so the lower half-plane mirrors up.
    let mirrored = a.q < 0.0;
    let state = if mirrored { StateStd::new(-a.q, -a.p, a.theta) } else { StateStd::new(a.q, a.p, a.theta) };
    let mut integrator = IntegratorSettings::for_config(c);
    if let Some(h) = a.h {
        integrator = integrator.with_step(h);
    }
    if let Some(s) = a.s_max {
        integrator = integrator.with_budget(s);
    }
    let verdict = classify_trajectory(state, c, &integrator)?;
    let (label, witness, elapsed) = match verdict {
        Classification::Escape { witness, decision_time } => ("escape", Some(witness), decision_time),
        Classification::Return { witness, decision_time } => ("return", Some(witness), decision_time),
        Classification::Undecided { elapsed } => ("undecided", None, elapsed),
    };
    let line = match (label, witness) {
        ("escape", Some(w)) => format!("escape: E* = {w:.6e} > 0 after elapsed phase {elapsed:.6}"),
        ("return", Some(w)) => format!("return: lower energy bound {w:.6e} after elapsed phase {elapsed:.6}"),
        _ => format!("undecided after elapsed phase {elapsed:.6}"),
    };
    let json = serde_json::json!({
        "config": loaded.identity.label(),
        "q": a.q,
        "p": a.p,
        "theta": a.theta,
        "mirrored": mirrored,
        "verdict": label,
        "witness": witness,
        "elapsed": elapsed,
        "h": integrator.h,
        "s_max": integrator.s_max,
    });
    let params = Parameters { h: Some(integrator.h), s_max: Some(integrator.s_max), ..Parameters::default() };
    Ok(Product {
        text: format!("{line}\n{json}\n"),
        config: Some(loaded.identity),
        parameters: params,
        inputs: vec![],
        plot: None,
        columns: vec![],
    })
}
