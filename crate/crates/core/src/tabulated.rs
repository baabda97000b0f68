//! User-tabulated periodic radii, read from a small CSV dialect:
//!
//! ```text
//! # masses: 1,1,1,1
//! # period: 3.2424
//! # dilation-column: yes
//! 0,1.0,1.0,1.0,1.0,0.8
//! ...
//! 3.2424,1.0,1.0,1.0,1.0,0.8
//! ```
//!
//! Optional extra headers: `# interpolation: linear|monotone-cubic` and
//! `# symmetry: t0,...`. Any other `#` line is a comment.

use std::io::BufRead;

use crate::error::TableError;

/// How radii between grid nodes are reconstructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    Linear,
    /// Periodic Fritsch-Carlson Hermite interpolation; never overshoots the
    /// data, so cusped radii stay non-negative.
    #[default]
    MonotoneCubic,
}

impl std::str::FromStr for Interpolation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "linear" => Ok(Interpolation::Linear),
            "monotone-cubic" | "cubic" | "pchip" => Ok(Interpolation::MonotoneCubic),
            other => Err(format!("unknown interpolation `{other}`")),
        }
    }
}

/// Closure tolerance between the first and last rows, relative to the
/// largest tabulated value (floored at 1).
pub const CLOSURE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
struct Column {
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl Column {
    fn new(values: Vec<f64>, grid: &[f64], interp: Interpolation) -> Self {
        let slopes = match interp {
            Interpolation::Linear => Vec::new(),
            Interpolation::MonotoneCubic => periodic_pchip_slopes(grid, &values),
        };
        Column { values, slopes }
    }

    fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

/// Node slopes for a periodic monotone cubic. The table is assumed closed,
/// so the interval before node 0 is the last interval.
fn periodic_pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let secant: Vec<f64> = (0..n - 1)
        .map(|k| (y[k + 1] - y[k]) / (x[k + 1] - x[k]))
        .collect();
    let width: Vec<f64> = (0..n - 1).map(|k| x[k + 1] - x[k]).collect();
    let blend = |dl: f64, dr: f64, hl: f64, hr: f64| -> f64 {
        if dl * dr <= 0.0 {
            return 0.0;
        }
        // Weighted harmonic mean (Fritsch-Butland weights).
        let w1 = 2.0 * hr + hl;
        let w2 = hr + 2.0 * hl;
        (w1 + w2) / (w1 / dl + w2 / dr)
    };
    let mut slopes = vec![0.0; n];
    for k in 1..n - 1 {
        slopes[k] = blend(secant[k - 1], secant[k], width[k - 1], width[k]);
    }
    if n > 2 {
        let seam = blend(secant[n - 2], secant[0], width[n - 2], width[0]);
        slopes[0] = seam;
        slopes[n - 1] = seam;
    }
    slopes
}

/// A validated periodic table of radii (and optionally a time dilation).
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedOrbit {
    masses: Vec<f64>,
    period: f64,
    grid: Vec<f64>,
    radii: Vec<Column>,
    dilation: Option<Column>,
    interpolation: Interpolation,
    symmetry_points: Vec<f64>,
}

impl TabulatedOrbit {
    /// Builds a table from columns. `radii[i]` holds body i's radius at
    /// every grid node.
    pub fn new(
        masses: Vec<f64>,
        period: f64,
        grid: Vec<f64>,
        radii: Vec<Vec<f64>>,
        dilation: Option<Vec<f64>>,
        interpolation: Interpolation,
    ) -> Result<Self, TableError> {
        if masses.is_empty() {
            return Err(TableError::MissingMasses);
        }
        if !(period > 0.0 && period.is_finite()) {
            return Err(TableError::MissingPeriod);
        }
        if grid.len() < 2 {
            return Err(TableError::TooFewRows(grid.len()));
        }
        if grid[0].abs() > 1e-12 * period {
            return Err(TableError::GridStart(grid[0]));
        }
        let last = *grid.last().unwrap();
        if (last - period).abs() > 1e-9 * period {
            return Err(TableError::GridEnd { last, period });
        }
        for (k, w) in grid.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(TableError::NonMonotoneGrid { line: k + 2 });
            }
        }
        for col in &radii {
            if col.len() != grid.len() {
                return Err(TableError::ColumnCount {
                    line: 0,
                    expected: grid.len(),
                    found: col.len(),
                });
            }
            for (k, &r) in col.iter().enumerate() {
                if !(r >= 0.0) || !r.is_finite() {
                    return Err(TableError::NegativeRadius { line: k + 1, value: r });
                }
            }
        }
        if let Some(col) = &dilation {
            for (k, &u) in col.iter().enumerate() {
                if !(u >= 0.0) || !u.is_finite() {
                    return Err(TableError::NegativeDilation { line: k + 1, value: u });
                }
            }
        }
        let closure = |col: &Vec<f64>| {
            let scale = col.iter().cloned().fold(1.0_f64, f64::max);
            (col[0] - col[col.len() - 1]).abs() / scale
        };
        let mismatch = radii
            .iter()
            .chain(dilation.iter())
            .map(closure)
            .fold(0.0, f64::max);
        if mismatch > CLOSURE_TOL {
            return Err(TableError::OpenClosure { mismatch });
        }
        let radii = radii
            .into_iter()
            .map(|c| Column::new(c, &grid, interpolation))
            .collect();
        let dilation = dilation.map(|c| Column::new(c, &grid, interpolation));
        Ok(TabulatedOrbit {
            masses,
            period,
            grid,
            radii,
            dilation,
            interpolation,
            symmetry_points: Vec::new(),
        })
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn body_count(&self) -> usize {
        self.radii.len()
    }

    pub fn has_dilation(&self) -> bool {
        self.dilation.is_some()
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn symmetry_points(&self) -> &[f64] {
        &self.symmetry_points
    }

    pub fn with_symmetry_points(mut self, points: Vec<f64>) -> Self {
        self.symmetry_points = points;
        self
    }

    /// Largest tabulated radius for each body. Both interpolants stay within
    /// the data range, so this is the true maximum.
    pub fn max_radii(&self) -> Vec<f64> {
        self.radii.iter().map(Column::max).collect()
    }

    fn locate(&self, theta: f64) -> (usize, f64) {
        let t = theta.rem_euclid(self.period);
        let n = self.grid.len();
        let k = match self.grid.partition_point(|&g| g <= t) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        (k, t)
    }

    fn eval(&self, col: &Column, k: usize, t: f64) -> f64 {
        let (x0, x1) = (self.grid[k], self.grid[k + 1]);
        let (y0, y1) = (col.values[k], col.values[k + 1]);
        let h = x1 - x0;
        let s = ((t - x0) / h).clamp(0.0, 1.0);
        match self.interpolation {
            Interpolation::Linear => y0 + s * (y1 - y0),
            Interpolation::MonotoneCubic => {
                let (d0, d1) = (col.slopes[k], col.slopes[k + 1]);
                let s2 = s * s;
                let s3 = s2 * s;
                let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
                let h10 = s3 - 2.0 * s2 + s;
                let h01 = -2.0 * s3 + 3.0 * s2;
                let h11 = s3 - s2;
                h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
            }
        }
    }

    /// Writes every body's radius at `theta` (any real) into `out`.
    pub fn radii_into(&self, theta: f64, out: &mut [f64]) {
        let (k, t) = self.locate(theta);
        for (slot, col) in out.iter_mut().zip(&self.radii) {
            *slot = self.eval(col, k, t).max(0.0);
        }
    }

    /// Interpolated dilation, or 1 when the table carries none.
    pub fn dilation(&self, theta: f64) -> f64 {
        match &self.dilation {
            Some(col) => {
                let (k, t) = self.locate(theta);
                self.eval(col, k, t).max(0.0)
            }
            None => 1.0,
        }
    }

    /// Reads the CSV dialect described in the module docs.
    pub fn read<R: BufRead>(reader: R) -> Result<Self, TableError> {
        let mut masses: Option<Vec<f64>> = None;
        let mut period: Option<f64> = None;
        let mut has_dilation = false;
        let mut interpolation = Interpolation::default();
        let mut symmetry = Vec::new();
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();

        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| TableError::Io(e.to_string()))?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(comment) = trimmed.strip_prefix('#') {
                let Some((key, value)) = comment.split_once(':') else {
                    continue;
                };
                let value = value.trim();
                match key.trim() {
                    "masses" => masses = Some(parse_list(value, line_no)?),
                    "period" => period = Some(parse_number(value, line_no)?),
                    "dilation-column" => {
                        has_dilation = matches!(value, "yes" | "true" | "1");
                    }
                    "interpolation" => {
                        interpolation = value.parse().map_err(|message| TableError::Syntax {
                            line: line_no,
                            message,
                        })?;
                    }
                    "symmetry" => symmetry = parse_list(value, line_no)?,
                    _ => {}
                }
                continue;
            }
            rows.push((line_no, parse_list(trimmed, line_no)?));
        }

        let masses = masses.ok_or(TableError::MissingMasses)?;
        let period = period.ok_or(TableError::MissingPeriod)?;
        if masses.is_empty() {
            return Err(TableError::MissingMasses);
        }
        for (i, &m) in masses.iter().enumerate() {
            if !(m > 0.0) {
                return Err(TableError::Syntax {
                    line: 1,
                    message: format!("mass {i} must be positive, got {m}"),
                });
            }
        }
        if !(period > 0.0) || !period.is_finite() {
            return Err(TableError::Syntax {
                line: 2,
                message: format!("period must be positive, got {period}"),
            });
        }
        let n = masses.len();
        let expected = 1 + n + usize::from(has_dilation);
        let mut grid = Vec::with_capacity(rows.len());
        let mut radii = vec![Vec::with_capacity(rows.len()); n];
        let mut dilation = has_dilation.then(|| Vec::with_capacity(rows.len()));
        for (line, row) in &rows {
            if row.len() != expected {
                return Err(TableError::ColumnCount {
                    line: *line,
                    expected,
                    found: row.len(),
                });
            }
            if let Some(&prev) = grid.last() {
                if !(row[0] > prev) {
                    return Err(TableError::NonMonotoneGrid { line: *line });
                }
            }
            grid.push(row[0]);
            for (i, col) in radii.iter_mut().enumerate() {
                let r = row[1 + i];
                if r < 0.0 {
                    return Err(TableError::NegativeRadius { line: *line, value: r });
                }
                col.push(r);
            }
            if let Some(col) = dilation.as_mut() {
                let u = row[1 + n];
                if u < 0.0 {
                    return Err(TableError::NegativeDilation { line: *line, value: u });
                }
                col.push(u);
            }
        }
        Ok(TabulatedOrbit::new(masses, period, grid, radii, dilation, interpolation)?
            .with_symmetry_points(symmetry))
    }
}

fn parse_number(s: &str, line: usize) -> Result<f64, TableError> {
    let v: f64 = s.trim().parse().map_err(|_| TableError::Syntax {
        line,
        message: format!("`{}` is not a number", s.trim()),
    })?;
    if !v.is_finite() {
        return Err(TableError::Syntax {
            line,
            message: format!("`{}` is not finite", s.trim()),
        });
    }
    Ok(v)
}

fn parse_list(s: &str, line: usize) -> Result<Vec<f64>, TableError> {
    s.split(',').map(|tok| parse_number(tok, line)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> Result<TabulatedOrbit, TableError> {
        TabulatedOrbit::read(text.as_bytes())
    }

    #[test]
    fn three_rows_linear_midpoint() {
        let t = table(
            "# masses: 1\n# period: 2\n# interpolation: linear\n0,1.0\n1,0.5\n2,1.0\n",
        )
        .unwrap();
        assert_eq!(t.body_count(), 1);
        let mut r = [0.0];
        t.radii_into(0.5, &mut r);
        assert!((r[0] - 0.75).abs() < 1e-15);
        // Reduced modulo the period.
        t.radii_into(2.5, &mut r);
        assert!((r[0] - 0.75).abs() < 1e-15);
        t.radii_into(-1.5, &mut r);
        assert!((r[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn body_count_follows_columns() {
        let t = table("# masses: 1,2,3\n# period: 1\n0,1,2,3\n0.5,1,1,1\n1,1,2,3\n").unwrap();
        assert_eq!(t.body_count(), 3);
        assert_eq!(t.max_radii(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn open_closure_rejected() {
        let err = table("# masses: 1\n# period: 1\n0,1.0\n0.5,0.7\n1,0.9\n").unwrap_err();
        assert!(matches!(err, TableError::OpenClosure { .. }));
    }

    #[test]
    fn negative_radius_rejected() {
        let err = table("# masses: 1\n# period: 1\n0,1.0\n0.5,-0.1\n1,1.0\n").unwrap_err();
        assert!(matches!(err, TableError::NegativeRadius { line: 4, .. }));
    }

    #[test]
    fn non_monotone_grid_rejected() {
        let err = table("# masses: 1\n# period: 1\n0,1\n0.6,1\n0.4,1\n1,1\n").unwrap_err();
        assert!(matches!(err, TableError::NonMonotoneGrid { line: 5 }));
    }

    #[test]
    fn missing_headers_rejected() {
        assert_eq!(table("# period: 1\n0,1\n1,1\n").unwrap_err(), TableError::MissingMasses);
        assert_eq!(table("# masses: 1\n0,1\n1,1\n").unwrap_err(), TableError::MissingPeriod);
    }

    #[test]
    fn column_count_checked() {
        let err = table("# masses: 1,1\n# period: 1\n0,1\n1,1\n").unwrap_err();
        assert!(matches!(err, TableError::ColumnCount { expected: 3, found: 2, .. }));
    }

    #[test]
    fn dilation_column_read() {
        let t = table(
            "# masses: 1\n# period: 1\n# dilation-column: yes\n# interpolation: linear\n0,1,0\n0.5,1,1\n1,1,0\n",
        )
        .unwrap();
        assert!(t.has_dilation());
        assert!((t.dilation(0.25) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn monotone_cubic_stays_in_range_at_cusps() {
        // Cusp-like data: |sin| sampled coarsely.
        let n = 17;
        let grid: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
        let vals: Vec<f64> = grid
            .iter()
            .map(|&x| (std::f64::consts::PI * x).sin().abs().powi(2))
            .collect();
        let t = TabulatedOrbit::new(
            vec![1.0],
            1.0,
            grid.clone(),
            vec![vals.clone()],
            None,
            Interpolation::MonotoneCubic,
        )
        .unwrap();
        let mut r = [0.0];
        for k in 0..=2000 {
            let x = k as f64 / 2000.0;
            t.radii_into(x, &mut r);
            assert!(r[0] >= 0.0 && r[0] <= 1.0 + 1e-15);
        }
        for (x, v) in grid.iter().zip(&vals) {
            t.radii_into(*x, &mut r);
            assert!((r[0] - v).abs() < 1e-14);
        }
    }
}
