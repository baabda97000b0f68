//! Deterministic CSV rendering and the optional gnuplot script.

use std::fmt::Write as _;

/// Seventeen significant digits: enough to round-trip any f64.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// A CSV document with `# key: value` header comments.
pub struct Csv {
    text: String,
    columns: Vec<String>,
}

impl Csv {
    pub fn new(header: &[(&str, String)], columns: &[&str]) -> Self {
        let mut text = String::new();
        for (k, v) in header {
            writeln!(text, "# {k}: {v}").unwrap();
        }
        writeln!(text, "{}", columns.join(",")).unwrap();
        Csv { text, columns: columns.iter().map(|c| c.to_string()).collect() }
    }

    pub fn row(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.columns.len());
        writeln!(self.text, "{}", cells.join(",")).unwrap();
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn finish(self) -> String {
        self.text
    }
}

/// Which columns to plot and how to split the series.
pub struct PlotSpec {
    pub title: String,
    pub x: String,
    pub y: String,
    /// Series are split on these values of a column.
    pub series: Option<(String, Vec<String>)>,
}

/// A gnuplot script that plots `data_file` with points.
pub fn gnuplot_script(data_file: &str, columns: &[String], spec: &PlotSpec) -> String {
    let idx = |name: &str| columns.iter().position(|c| c == name).map_or(1, |i| i + 1);
    let (x, y) = (idx(&spec.x), idx(&spec.y));
    let mut s = String::new();
    writeln!(s, "set datafile separator ','").unwrap();
    writeln!(s, "set datafile commentschars '#'").unwrap();
    writeln!(s, "set key autotitle columnhead").unwrap();
    writeln!(s, "set title '{}'", spec.title).unwrap();
    writeln!(s, "set xlabel '{}'", spec.x).unwrap();
    writeln!(s, "set ylabel '{}'", spec.y).unwrap();
    match &spec.series {
        Some((col, values)) if !values.is_empty() => {
            let c = idx(col);
            let plots: Vec<String> = values
                .iter()
                .map(|v| {
                    format!(
                        "'{data_file}' using (strcol({c}) eq '{v}' ? ${x} : 1/0):{y} with points pt 7 ps 0.4 title '{v}'"
                    )
                })
                .collect();
            writeln!(s, "plot {}", plots.join(", \\\n     ")).unwrap();
        }
        _ => {
            writeln!(s, "plot '{data_file}' using {x}:{y} with points pt 7 ps 0.4 notitle").unwrap();
        }
    }
    s
}
