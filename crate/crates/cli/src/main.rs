use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use parabolic_control_cli::config::{parse_config, ExperimentConfig};
use parabolic_control_cli::presets::{find_preset, presets};
use parabolic_control_cli::report::{emit_report, print_summary, ReportFormat};
use parabolic_control_cli::run::{run_experiment, run_single};
use parabolic_control_cli::verify::{verify_builtin, verify_config};

#[derive(Parser)]
#[command(
    name = "parabolic-control",
    about = "Optimal control of linear parabolic PDEs: reduced-CG and all-at-once MINRES experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigSource {
    /// Path to a JSON experiment configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Name of a built-in preset (see `presets`).
    #[arg(long)]
    preset: Option<String>,
    /// Write results as CSV to this path (overrides the config's output section).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write results as JSON to this path.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configuration once (any sweep section is ignored).
    Solve(ConfigSource),
    /// Run every sweep point and emit one record per point.
    Sweep(ConfigSource),
    /// Compute the largest reduced eigenvalue for the configuration.
    Eig {
        #[command(flatten)]
        source: ConfigSource,
        /// Also compute the full dense spectrum (desk scale only) and write
        /// it as CSV (columns index, value, cluster).
        #[arg(long)]
        dense_csv: Option<PathBuf>,
    },
    /// Check the spectral claims; exits with code 2 when any check fails.
    Verify {
        /// Optional configuration to verify in addition to the built-in battery.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Optional preset name to verify.
        #[arg(long)]
        preset: Option<String>,
    },
    /// List the built-in presets.
    Presets,
}

fn load(source: &ConfigSource) -> Result<ExperimentConfig, String> {
    match (&source.config, &source.preset) {
        (Some(path), None) => parse_config(path).map_err(|e| e.to_string()),
        (None, Some(name)) => {
            find_preset(name).ok_or_else(|| format!("unknown preset \"{name}\""))
        }
        (None, None) => Err("either --config or --preset is required".into()),
        (Some(_), Some(_)) => Err("--config and --preset are mutually exclusive".into()),
    }
}

fn emit(
    records: &[parabolic_control_cli::run::RunRecord],
    source: &ConfigSource,
    cfg: &ExperimentConfig,
) -> Result<(), String> {
    print_summary(records);
    let csv = source
        .csv
        .clone()
        .or_else(|| cfg.output.csv.as_ref().map(PathBuf::from));
    if let Some(path) = csv {
        emit_report(records, ReportFormat::Csv, &path).map_err(|e| e.to_string())?;
        eprintln!("wrote {}", path.display());
    }
    let json = source
        .json
        .clone()
        .or_else(|| cfg.output.json.as_ref().map(PathBuf::from));
    if let Some(path) = json {
        emit_report(records, ReportFormat::Json, &path).map_err(|e| e.to_string())?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve(source) => load(&source).and_then(|cfg| {
            let records = vec![run_single(&cfg)];
            emit(&records, &source, &cfg).map(|()| 0)
        }),
        Command::Sweep(source) => load(&source).and_then(|cfg| {
            run_experiment(&cfg)
                .map_err(|e| e.to_string())
                .and_then(|records| emit(&records, &source, &cfg).map(|()| 0))
        }),
        Command::Eig { source, dense_csv } => load(&source).and_then(|cfg| {
            let mut cfg = cfg;
            cfg.solver.method = parabolic_control::problem::SolveMethod::Eig;
            if let Some(path) = &dense_csv {
                let report = parabolic_control_cli::run::dense_spectrum(&cfg)?;
                let file = std::fs::File::create(path).map_err(|e| e.to_string())?;
                report
                    .write_csv(std::io::BufWriter::new(file))
                    .map_err(|e| e.to_string())?;
                eprintln!("wrote {}", path.display());
            }
            run_experiment(&cfg)
                .map_err(|e| e.to_string())
                .and_then(|records| emit(&records, &source, &cfg).map(|()| 0))
        }),
        Command::Verify { config, preset } => {
            let extra = match (config, preset) {
                (Some(path), None) => match parse_config(&path) {
                    Ok(cfg) => Some(cfg),
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(1);
                    }
                },
                (None, Some(name)) => match find_preset(&name) {
                    Some(cfg) => Some(cfg),
                    None => {
                        eprintln!("error: unknown preset \"{name}\"");
                        return ExitCode::from(1);
                    }
                },
                (None, None) => None,
                (Some(_), Some(_)) => {
                    eprintln!("error: --config and --preset are mutually exclusive");
                    return ExitCode::from(1);
                }
            };
            let mut ok = verify_builtin();
            if let Some(cfg) = extra {
                ok &= verify_config(&cfg);
            }
            Ok(if ok { 0 } else { 2 })
        }
        Command::Presets => {
            for (name, description, _) in presets() {
                println!("{name:<22} {description}");
            }
            Ok(0)
        }
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
