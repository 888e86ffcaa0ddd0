use clap::{Parser, Subcommand, ValueEnum};
use snapsim::checker::{audit_consistency, check_linearizable, History};
use snapsim::harness::{builtin, reports_to_csv, run_scenario, sweep, Scenario, SweepAxis};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "snapsim",
    about = "Deterministic simulator and checker for self-stabilizing snapshot objects"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Axis {
    N,
    Delta,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and report metrics and verdicts.
    Run {
        /// Scenario TOML file, or builtin:<name>.
        #[arg(long)]
        scenario: String,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for report (and trace with --trace).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        /// Also write the full execution trace as JSON lines.
        #[arg(long)]
        trace: bool,
    },
    /// Run the scenario once per axis value and emit one report row each.
    Sweep {
        #[arg(long)]
        scenario: String,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated axis values, e.g. 3,5,7,9.
        #[arg(long, value_delimiter = ',')]
        values: Vec<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Run with per-step consistency audits and report stabilization.
    Audit {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check linearizability of a run (or of a stored history file).
    Check {
        #[arg(long, conflicts_with = "history")]
        scenario: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// JSON file with a recorded history (array of events).
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// List built-in scenario names.
    Scenarios,
}

fn load_scenario(spec: &str, seed: Option<u64>) -> Result<Scenario, String> {
    let mut s = if let Some(name) = spec.strip_prefix("builtin:") {
        builtin::by_name(name, seed.unwrap_or(1))
            .ok_or_else(|| format!("unknown builtin scenario {name:?}; try `snapsim scenarios`"))?
    } else {
        let text = std::fs::read_to_string(spec)
            .map_err(|e| format!("cannot read scenario {spec}: {e}"))?;
        Scenario::from_toml(&text).map_err(|e| e.to_string())?
    };
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn write_out(dir: &Option<PathBuf>, name: &str, contents: &str) -> Result<(), String> {
    match dir {
        None => {
            println!("{contents}");
            Ok(())
        }
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
            let path: PathBuf = Path::new(dir).join(name);
            std::fs::write(&path, contents).map_err(|e| e.to_string())?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(healthy) => {
            if healthy {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run() -> Result<bool, String> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run {
            scenario,
            seed,
            out,
            format,
            trace,
        } => {
            let s = load_scenario(&scenario, seed)?;
            let run = run_scenario(&s).map_err(|e| e.to_string())?;
            let healthy = run.report.healthy();
            match format {
                Format::Json => write_out(&out, "report.json", &run.report.to_json())?,
                Format::Csv => write_out(&out, "report.csv", &reports_to_csv(&[run.report]))?,
            }
            if trace {
                write_out(&out, "trace.jsonl", &run.world.trace.to_jsonl())?;
            }
            Ok(healthy)
        }
        Cmd::Sweep {
            scenario,
            axis,
            values,
            seed,
            out,
            format,
        } => {
            if values.is_empty() {
                return Err("--values must be nonempty".into());
            }
            let s = load_scenario(&scenario, seed)?;
            let axis = match axis {
                Axis::N => SweepAxis::N,
                Axis::Delta => SweepAxis::Delta,
            };
            let reports = sweep(&s, axis, &values).map_err(|e| e.to_string())?;
            let healthy = reports.iter().all(|r| r.healthy());
            match format {
                Format::Csv => write_out(&out, "sweep.csv", &reports_to_csv(&reports))?,
                Format::Json => {
                    let json = serde_json::to_string_pretty(
                        &reports.iter().map(|r| r.to_json()).collect::<Vec<_>>(),
                    )
                    .map_err(|e| e.to_string())?;
                    write_out(&out, "sweep.json", &json)?
                }
            }
            Ok(healthy)
        }
        Cmd::Audit { scenario, seed } => {
            let mut s = load_scenario(&scenario, seed)?;
            s.audit_every_step = true;
            let run = run_scenario(&s).map_err(|e| e.to_string())?;
            let violations = audit_consistency(&run.world);
            println!(
                "{}",
                serde_json::json!({
                    "stabilization_step": run.report.stabilization_step,
                    "stabilization_cycle": run.report.stabilization_cycle,
                    "cycles": run.report.cycles,
                    "final_violations": violations,
                })
            );
            Ok(run.report.stabilization_step.is_some() && violations.is_empty())
        }
        Cmd::Check {
            scenario,
            seed,
            history,
        } => {
            let (verdict, label) = match (scenario, history) {
                (Some(spec), _) => {
                    let s = load_scenario(&spec, seed)?;
                    let run = run_scenario(&s).map_err(|e| e.to_string())?;
                    (check_linearizable(&run.world.history), s.name)
                }
                (None, Some(path)) => {
                    let text =
                        std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
                    let events: Vec<snapsim::checker::HistoryEvent> =
                        serde_json::from_str(&text).map_err(|e| e.to_string())?;
                    let history = History::from_events(events).map_err(|e| e.to_string())?;
                    (
                        check_linearizable(&history),
                        path.display().to_string(),
                    )
                }
                (None, None) => return Err("pass --scenario or --history".into()),
            };
            println!(
                "{}",
                serde_json::json!({
                    "history": label,
                    "verdict": verdict,
                })
            );
            Ok(verdict.linearizable)
        }
        Cmd::Scenarios => {
            for name in builtin::NAMES {
                println!("{name}");
            }
            Ok(true)
        }
    }
}
