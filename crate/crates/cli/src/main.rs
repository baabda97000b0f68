//! `sitnikov`: boundary curves, plane traces and return maps as CSV.
//!
//! Exit codes: 0 success, 1 `rerun` output differs, 2 usage or
//! validation error, 3 numerical failure.

mod commands;
mod error;
mod input;
mod manifest;
mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use commands::{ClassifyArgs, Numerics, PlaneArgs, Product, ReturnArgs};
use error::CliError;
use input::sha256_hex;
use manifest::{FileRef, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "sitnikov", version, about = "Escape boundaries of the vertical restricted problem")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct Out {
    /// Write here and add `<out>.manifest.json`; stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a gnuplot script `<out>.gp`.
    #[arg(long, requires = "out")]
    gnuplot: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Built-in configurations.
    Configs {
        #[command(subcommand)]
        action: ConfigsAction,
    },
    /// f(theta) at height q0 on a phase grid.
    Surface {
        #[arg(long)]
        config: String,
        #[command(flatten)]
        numerics: Numerics,
        #[command(flatten)]
        out: Out,
    },
    /// Traces of the boundary on the q = 0 plane.
    PlaneCurve {
        #[command(flatten)]
        args: PlaneArgs,
        #[command(flatten)]
        out: Out,
    },
    /// First returns of plane points to q = 0.
    ReturnMap {
        #[command(flatten)]
        args: ReturnArgs,
        #[command(flatten)]
        out: Out,
    },
    /// Escape/return verdict for one state.
    Classify {
        #[command(flatten)]
        args: ClassifyArgs,
        #[command(flatten)]
        out: Out,
    },
    /// Re-run the command recorded in a manifest and compare output hashes.
    Rerun {
        manifest: PathBuf,
        /// Keep the regenerated file here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum ConfigsAction {
    List {
        #[command(flatten)]
        out: Out,
    },
}

fn produce(command: &Command) -> Result<(&'static str, Product, Option<&Out>), CliError> {
    Ok(match command {
        Command::Configs { action: ConfigsAction::List { out } } => ("configs list", commands::configs_list(), Some(out)),
        Command::Surface { config, numerics, out } => ("surface", commands::surface(config, numerics)?, Some(out)),
        Command::PlaneCurve { args, out } => ("plane-curve", commands::plane_curve(args)?, Some(out)),
        Command::ReturnMap { args, out } => ("return-map", commands::return_map(args)?, Some(out)),
        Command::Classify { args, out } => ("classify", commands::classify(args)?, Some(out)),
        Command::Rerun { .. } => return Err(CliError::Usage("a manifest cannot record `rerun`".into())),
    })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn run(cli: Cli, args: Vec<String>) -> Result<ExitCode, CliError> {
    if let Command::Rerun { manifest, out } = &cli.command {
        return rerun(manifest, out.as_deref());
    }
    let start = Instant::now();
    let (name, product, out) = produce(&cli.command)?;
    let wall = start.elapsed().as_secs_f64();
    let Some(Out { out: Some(path), gnuplot }) = out else {
        print!("{}", product.text);
        return Ok(ExitCode::SUCCESS);
    };
    write(path, &product.text)?;
    let manifest = RunManifest {
        command: name.to_string(),
        args,
        config: product.config,
        parameters: product.parameters,
        inputs: product.inputs,
        output: FileRef { path: path.display().to_string(), sha256: sha256_hex(product.text.as_bytes()) },
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_seconds: wall,
    };
    let sidecar = manifest.write_beside(path)?;
    if *gnuplot {
        if let Some(spec) = &product.plot {
            let data = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
            let mut gp = path.as_os_str().to_owned();
            gp.push(".gp");
            write(Path::new(&gp), &output::gnuplot_script(&data, &product.columns, spec))?;
        }
    }
    eprintln!("wrote {} ({})", path.display(), sidecar.display());
    Ok(ExitCode::SUCCESS)
}

fn rerun(manifest_path: &Path, out: Option<&Path>) -> Result<ExitCode, CliError> {
    let m = RunManifest::read(manifest_path)?;
    for input in &m.inputs {
        let now = FileRef::of(Path::new(&input.path))?;
        if now.sha256 != input.sha256 {
            return Err(CliError::Usage(format!("input {} changed since the recorded run", input.path)));
        }
    }
    let argv = std::iter::once("sitnikov".to_string()).chain(m.args.iter().cloned());
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::Usage(format!("recorded arguments: {e}")))?;
    let (_, product, _) = produce(&cli.command)?;
    if let Some(path) = out {
        write(path, &product.text)?;
    }
    let sha = sha256_hex(product.text.as_bytes());
    if sha == m.output.sha256 {
        println!("reproduced {} (sha256 {sha})", m.output.path);
        Ok(ExitCode::SUCCESS)
    } else {
        println!("MISMATCH for {}: recorded {}, now {sha}", m.output.path, m.output.sha256);
        Ok(ExitCode::from(1))
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli, args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn surface_flags_parse() {
        let cli = Cli::try_parse_from(["sitnikov", "surface", "--config", "circular", "--grid", "8", "--q0", "1.5"]).unwrap();
        match cli.command {
            Command::Surface { numerics, out, .. } => {
                assert_eq!(numerics.grid, 8);
                assert_eq!(numerics.q0, Some(1.5));
                assert!(out.out.is_none());
            }
            _ => panic!("wrong subcommand"),
        }
    }

    #[test]
    fn gnuplot_needs_an_output_file() {
        assert!(Cli::try_parse_from(["sitnikov", "surface", "--config", "circular", "--gnuplot"]).is_err());
    }
}
