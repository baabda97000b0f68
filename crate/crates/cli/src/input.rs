//! Configuration lookup and the CSV files the tool reads back.

use std::fs;
use std::io::BufReader;
use std::path::Path;

use sha2::{Digest, Sha256};
use sitnikov_core::{presets, PlanarConfiguration, SeparatrixSample};

use crate::error::CliError;
use crate::manifest::ConfigIdentity;

pub struct LoadedConfig {
    pub config: PlanarConfiguration,
    pub identity: ConfigIdentity,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_hash(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// A preset name, or else a path to a tabulated orbit file.
pub fn load_config(spec: &str) -> Result<LoadedConfig, CliError> {
    if let Some(p) = presets::by_name(spec) {
        return Ok(LoadedConfig { config: p.config, identity: ConfigIdentity::Preset { name: spec.to_string() } });
    }
    let path = Path::new(spec);
    if !path.is_file() {
        let names: Vec<&str> = presets::all().iter().map(|p| p.name).collect();
        return Err(CliError::Usage(format!(
            "`{spec}` is neither a preset ({}) nor a readable file",
            names.join(", ")
        )));
    }
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let config = PlanarConfiguration::load_tabulated(BufReader::new(file))
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(LoadedConfig {
        config,
        identity: ConfigIdentity::File { path: spec.to_string(), sha256: file_hash(path)? },
    })
}

/// Data rows and `# key: value` header comments of one of our CSV files.
pub struct Table {
    pub header: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    fn require(&self, name: &str, path: &Path) -> Result<usize, CliError> {
        self.column(name)
            .ok_or_else(|| CliError::Usage(format!("{}: missing column `{name}`", path.display())))
    }
}

pub fn parse_table(text: &str) -> Table {
    let mut header = Vec::new();
    let mut columns = Vec::new();
    let mut rows = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once(':') {
                header.push((k.trim().to_string(), v.trim().to_string()));
            }
            continue;
        }
        let cells: Vec<String> = line.split(',').map(|c| c.trim().to_string()).collect();
        if columns.is_empty() {
            columns = cells;
        } else {
            rows.push(cells);
        }
    }
    Table { header, columns, rows }
}

pub fn read_table(path: &Path) -> Result<Table, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(parse_table(&text))
}

fn number(cell: &str, path: &Path, line: usize) -> Result<f64, CliError> {
    cell.parse()
        .map_err(|_| CliError::Usage(format!("{}: row {line}: `{cell}` is not a number", path.display())))
}

pub struct SurfaceFile {
    pub config: String,
    pub q0: f64,
    pub samples: Vec<SeparatrixSample>,
}

/// Reads a file written by `surface`. Bracket ends are reconstructed as
/// f -+ width/2; iteration counts are not stored.
pub fn read_surface(path: &Path) -> Result<SurfaceFile, CliError> {
    let t = read_table(path)?;
    let q0 = t
        .meta("q0")
        .ok_or_else(|| CliError::Usage(format!("{}: missing `# q0:` header", path.display())))?;
    let q0 = number(q0, path, 0)?;
    let config = t.meta("config").unwrap_or_default().to_string();
    let (ct, cf, cw) = (t.require("theta", path)?, t.require("f", path)?, t.require("bracket_width", path)?);
    let cflags = t.column("flags");
    let mut samples = Vec::with_capacity(t.rows.len());
    for (i, row) in t.rows.iter().enumerate() {
        let get = |c: usize| row.get(c).map(String::as_str).unwrap_or("");
        let (theta, f, w) = (number(get(ct), path, i + 1)?, number(get(cf), path, i + 1)?, number(get(cw), path, i + 1)?);
        let undecided = cflags.is_some_and(|c| get(c).contains("lower_undecided"));
        samples.push(SeparatrixSample {
            theta,
            f,
            lower: f - 0.5 * w,
            upper: f + 0.5 * w,
            bracket_width: w,
            lower_decided: !undecided,
            upper_decided: true,
            iterations: 0,
        });
    }
    if samples.len() < 2 {
        return Err(CliError::Usage(format!("{}: a surface needs at least two rows", path.display())));
    }
    Ok(SurfaceFile { config, q0, samples })
}

/// One row of a plane-curve file, or a bare (theta, p) pair. Missing
/// raw and source phases default to `theta`.
pub struct PlaneRow {
    pub branch: Option<String>,
    pub theta: f64,
    pub p: f64,
    pub truncated: bool,
    pub theta_raw: f64,
    pub source_theta: f64,
    pub periods: i64,
}

/// Reads `plane-curve` output, or any CSV with `theta` (or `theta_mod_T`)
/// and `p` columns.
pub fn read_plane_rows(path: &Path) -> Result<Vec<PlaneRow>, CliError> {
    let t = read_table(path)?;
    let ct = match t.column("theta_mod_T").or_else(|| t.column("theta")) {
        Some(c) => c,
        None => return Err(CliError::Usage(format!("{}: missing column `theta_mod_T` or `theta`", path.display()))),
    };
    let cp = t.require("p", path)?;
    let cb = t.column("branch");
    let ctr = t.column("truncated");
    let (craw, csrc, cper) = (t.column("theta_raw"), t.column("source_theta"), t.column("periods"));
    let mut out = Vec::with_capacity(t.rows.len());
    for (i, row) in t.rows.iter().enumerate() {
        let get = |c: usize| row.get(c).map(String::as_str).unwrap_or("");
        let theta = number(get(ct), path, i + 1)?;
        let or_theta = |c: Option<usize>| c.map_or(Ok(theta), |c| number(get(c), path, i + 1));
        let periods = match cper {
            Some(c) => get(c)
                .parse()
                .map_err(|_| CliError::Usage(format!("{}: row {}: bad period count", path.display(), i + 1)))?,
            None => 0,
        };
        out.push(PlaneRow {
            branch: cb.map(|c| get(c).to_string()),
            theta,
            p: number(get(cp), path, i + 1)?,
            truncated: ctr.is_some_and(|c| get(c) == "1"),
            theta_raw: or_theta(craw)?,
            source_theta: or_theta(csrc)?,
            periods,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_parsing() {
        let t = parse_table("# config: circular\n# q0: 1.0\n\ntheta,p\n0.5, 1.25\n1.0,2\n");
        assert_eq!(t.meta("q0"), Some("1.0"));
        assert_eq!(t.meta("missing"), None);
        assert_eq!(t.columns, vec!["theta", "p"]);
        assert_eq!(t.rows, vec![vec!["0.5", "1.25"], vec!["1.0", "2"]]);
    }

    #[test]
    fn hash_of_known_input() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn unknown_config_is_a_usage_error() {
        assert!(matches!(load_config("no-such-preset"), Err(CliError::Usage(_))));
        assert!(load_config("circular").is_ok());
    }
}
