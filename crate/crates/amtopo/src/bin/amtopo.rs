//! Command-line front end: run a configuration, run a built-in benchmark,
//! or audit a design without optimizing.
//!
//! Exit codes: 0 on success, 2 for configuration problems (including
//! command-line usage errors), 3 when the solver or result output fails.

use amtopo::audit::audit_design;
use amtopo::config::{build_problem, load_config, OptimizationConfig, ProblemKind};
use amtopo::io::{snapshot_path, write_history, write_state, VtkWriter};
use amtopo::mesh::Side;
use amtopo::optimizer::{run_with, IterationState, ObjectiveField, RunResult};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "amtopo",
    version,
    about = "Level-set topology optimization with printability constraints"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize the design described by a JSON configuration file.
    Run {
        /// Path to the configuration document.
        config: PathBuf,
        /// Output directory (overrides the config and AMTOPO_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Iteration cap (overrides the config).
        #[arg(long)]
        max_iters: Option<usize>,
        /// Worker threads (overrides the config).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Optimize a built-in benchmark problem (mbb, cantilever, heatsink).
    Bench {
        /// Problem name: mbb | cantilever | heatsink.
        problem: String,
        /// Base-plate side: U | D | L | R.
        #[arg(long, default_value = "D")]
        side: String,
        /// Printable-angle threshold in degrees (overrides the preset).
        #[arg(long)]
        theta0: Option<f64>,
        /// Output directory (overrides AMTOPO_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Iteration cap (overrides the preset).
        #[arg(long)]
        max_iters: Option<usize>,
        /// Worker threads.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Evaluate objective, constraints, and the boundary-angle audit of
    /// the configured initial design, without optimizing.
    Audit {
        /// Path to the configuration document.
        config: PathBuf,
    },
}

const CONFIG_ERROR: i32 = 2;
const SOLVER_ERROR: i32 = 3;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            out,
            max_iters,
            threads,
        } => cmd_run(&config, out, max_iters, threads),
        Command::Bench {
            problem,
            side,
            theta0,
            out,
            max_iters,
            threads,
        } => cmd_bench(&problem, &side, theta0, out, max_iters, threads),
        Command::Audit { config } => cmd_audit(&config),
    };
    match outcome {
        Ok(()) => {}
        Err((code, message)) => {
            eprintln!("error: {message}");
            std::process::exit(code);
        }
    }
}

type CliResult = std::result::Result<(), (i32, String)>;

fn config_err(e: impl std::fmt::Display) -> (i32, String) {
    (CONFIG_ERROR, e.to_string())
}

fn solver_err(e: impl std::fmt::Display) -> (i32, String) {
    (SOLVER_ERROR, e.to_string())
}

/// Output directory precedence: flag, config, `AMTOPO_OUT`, then `./out`.
fn resolve_out(flag: Option<PathBuf>, config: &OptimizationConfig) -> PathBuf {
    flag.or_else(|| config.controls.output_dir.as_ref().map(PathBuf::from))
        .or_else(|| std::env::var_os("AMTOPO_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn cmd_run(
    config_path: &Path,
    out: Option<PathBuf>,
    max_iters: Option<usize>,
    threads: Option<usize>,
) -> CliResult {
    let mut config = load_config(config_path).map_err(config_err)?;
    apply_overrides(&mut config, max_iters, threads);
    let out_dir = resolve_out(out, &config);
    execute(&config, &out_dir)
}

fn cmd_bench(
    problem: &str,
    side: &str,
    theta0: Option<f64>,
    out: Option<PathBuf>,
    max_iters: Option<usize>,
    threads: Option<usize>,
) -> CliResult {
    let kind = parse_problem(problem).map_err(config_err)?;
    let side: Side = side.parse().map_err(config_err)?;
    let mut config = OptimizationConfig::benchmark(kind, side);
    if let Some(theta) = theta0 {
        config.constraints.threshold_deg = theta;
    }
    apply_overrides(&mut config, max_iters, threads);
    config.validate().map_err(config_err)?;
    let out_dir = resolve_out(out, &config);
    execute(&config, &out_dir)
}

fn cmd_audit(config_path: &Path) -> CliResult {
    let config = load_config(config_path).map_err(config_err)?;
    let problem = build_problem(&config).map_err(config_err)?;
    let report = audit_design(&problem, &problem.initial_phi).map_err(solver_err)?;
    let json = serde_json::json!({
        "volume": report.volume,
        "objective": report.objective,
        "overhang": report.overhang,
        "thermal": report.thermal,
        "distortion": report.distortion,
        "contour": {
            "total_length": report.contour.total_length,
            "downward_length": report.contour.downward_length,
            "violating_length": report.contour.violating_length,
            "violating_fraction": report.contour.violating_fraction,
            "downward_minima": report.contour.downward_minima,
        },
    });
    println!("{}", serde_json::to_string_pretty(&json).expect("plain data"));
    Ok(())
}

fn parse_problem(name: &str) -> Result<ProblemKind, String> {
    match name.to_ascii_lowercase().as_str() {
        "mbb" => Ok(ProblemKind::Mbb),
        "cantilever" => Ok(ProblemKind::Cantilever),
        "heatsink" => Ok(ProblemKind::Heatsink),
        other => Err(format!(
            "unknown benchmark {other:?}; expected mbb, cantilever, or heatsink"
        )),
    }
}

fn apply_overrides(
    config: &mut OptimizationConfig,
    max_iters: Option<usize>,
    threads: Option<usize>,
) {
    if let Some(n) = max_iters {
        config.controls.max_iters = n;
    }
    if let Some(t) = threads {
        config.controls.threads = Some(t);
    }
}

/// Last full state of the loop, kept for the end-of-run snapshot.
struct FinalState {
    iteration: usize,
    phi: Vec<f64>,
    psi: Option<Vec<f64>>,
    derivative: Vec<f64>,
    objective_field: ObjectiveField,
}

fn execute(config: &OptimizationConfig, out_dir: &Path) -> CliResult {
    let problem = build_problem(config).map_err(config_err)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| config_err(format!("cannot create {}: {e}", out_dir.display())))?;
    config
        .save(&out_dir.join("config.json"))
        .map_err(config_err)?;

    let stride = config.controls.snapshot_stride;
    let mut last: Option<FinalState> = None;
    let mut snapshot_error: Option<amtopo::Error> = None;
    let observer = |state: &IterationState| {
        let record = state.record;
        log::info!(
            "iter {:3}  J {:+.6e}  objective {:+.6e}  volume {:.4} (target {:.4})  change {:.2e}",
            record.iteration,
            record.combined,
            record.objective,
            record.volume,
            record.volume_target,
            record.change
        );
        if stride > 0 && record.iteration % stride == 0 && snapshot_error.is_none() {
            let path = snapshot_path(out_dir, record.iteration);
            if let Err(e) = write_state(&path, &problem.mesh, state) {
                snapshot_error = Some(e);
            }
        }
        last = Some(FinalState {
            iteration: record.iteration,
            phi: state.phi.to_vec(),
            psi: state.psi.map(<[f64]>::to_vec),
            derivative: state.derivative.to_vec(),
            objective_field: state.objective_field.clone(),
        });
    };
    let result: RunResult = run_with(&problem, observer).map_err(solver_err)?;
    if let Some(e) = snapshot_error {
        return Err(solver_err(format!("snapshot write failed: {e}")));
    }

    write_history(&out_dir.join("history.csv"), &result.history).map_err(solver_err)?;
    if let Some(state) = &last {
        let record = &result.history[result.history.len() - 1];
        let view = IterationState {
            record,
            phi: &state.phi,
            psi: state.psi.as_deref(),
            derivative: &state.derivative,
            objective_field: &state.objective_field,
        };
        write_state(&out_dir.join("final.vtk"), &problem.mesh, &view).map_err(solver_err)?;
    } else {
        // Zero-iteration run: snapshot the untouched initial design.
        VtkWriter::new(&problem.mesh, "initial design")
            .point_scalar("phi", &result.phi)
            .write(&out_dir.join("final.vtk"))
            .map_err(solver_err)?;
    }

    let report = audit_design(&problem, &result.phi).map_err(solver_err)?;
    let summary = run_summary(&result, &report, out_dir, last.as_ref());
    println!("{}", serde_json::to_string_pretty(&summary).expect("plain data"));
    Ok(())
}

fn run_summary(
    result: &RunResult,
    report: &amtopo::audit::DesignAudit,
    out_dir: &Path,
    last: Option<&FinalState>,
) -> serde_json::Value {
    let final_record = result.history.last();
    serde_json::json!({
        "iterations": result.history.len(),
        "converged": result.converged,
        "combined": final_record.map(|r| r.combined),
        "objective": report.objective,
        "volume": report.volume,
        "overhang": report.overhang,
        "thermal": report.thermal,
        "distortion": report.distortion,
        "violating_fraction": report.contour.violating_fraction,
        "downward_minima": report.contour.downward_minima,
        "output_dir": out_dir.display().to_string(),
    })
}
