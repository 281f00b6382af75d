use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use popbal::output::{output_root, OUTPUT_ROOT_ENV};
use popbal::reports::{self, GridSize};
use popbal::{parse_config, parse_sweep, presets, run, run_sweep};

/// Phenotype-structured cell population simulator.
#[derive(Parser)]
#[command(name = "popbal", version)]
struct Cli {
    /// Output root; run directories are created beneath it.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named preset or a TOML configuration file.
    Run {
        /// Preset name or path to a configuration file.
        target: String,
        /// Print the resolved configuration and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Run every combination of a sweep file on worker threads.
    Sweep { config: PathBuf },
    /// Calibrate the reduced model and compare its branch polynomials with
    /// the circuit.
    Reduce {
        /// Use the 20x20x20x100 grid instead of 10x10x10x50.
        #[arg(long)]
        full: bool,
        #[arg(long, default_value_t = 100.0)]
        horizon: f64,
    },
    /// Export the equilibrium table of the core circuit.
    Bifurcate {
        #[arg(long, default_value_t = 150_000.0)]
        s_min: f64,
        #[arg(long, default_value_t = 250_000.0)]
        s_max: f64,
        #[arg(long, default_value_t = 501)]
        points: usize,
    },
    /// List preset names.
    Presets,
}

fn fail(kind: &str, message: impl std::fmt::Display) -> ExitCode {
    let report = serde_json::json!({ "error": kind, "message": message.to_string() });
    eprintln!("{report}");
    ExitCode::FAILURE
}

fn run_target(target: &str, dry_run: bool, root: &Path) -> ExitCode {
    let cfg = if Path::new(target).is_file() {
        match std::fs::read_to_string(target) {
            Ok(text) => parse_config(&text, None),
            Err(e) => return fail("io", format!("{target}: {e}")),
        }
    } else {
        match presets::preset(target) {
            Some(cfg) => cfg.validate().map(|_| cfg),
            None => {
                return fail(
                    "config",
                    format!("`{target}` is neither a file nor a preset; try `popbal presets`"),
                )
            }
        }
    };
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => return fail("config", e),
    };
    if dry_run {
        return match cfg.to_toml() {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => fail("config", e),
        };
    }
    match run(&cfg, root) {
        Ok(out) => {
            println!("{}", out.one_line());
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let root = cli.output.unwrap_or_else(output_root);
    match cli.command {
        Command::Run { target, dry_run } => run_target(&target, dry_run, &root),
        Command::Sweep { config } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => return fail("io", format!("{}: {e}", config.display())),
            };
            let sweep = match parse_sweep(&text) {
                Ok(s) => s,
                Err(e) => return fail("config", e),
            };
            match run_sweep(&sweep, &root) {
                Ok(entries) => {
                    let mut failed = 0;
                    for e in &entries {
                        match &e.result {
                            Ok(o) => println!("{}", o.one_line()),
                            Err(err) => {
                                failed += 1;
                                eprintln!("{}: {err}", e.label);
                            }
                        }
                    }
                    if failed == 0 {
                        ExitCode::SUCCESS
                    } else {
                        fail("sweep", format!("{failed} of {} runs failed", entries.len()))
                    }
                }
                Err(e) => fail(e.kind(), e),
            }
        }
        Command::Reduce { full, horizon } => {
            let size = if full { GridSize::FULL } else { GridSize::DESK };
            match reports::reduce(size, horizon, &root.join("reduce")) {
                Ok(r) => {
                    for (k, d) in r.calibration.candidates.iter().zip(&r.calibration.discrepancies) {
                        println!("k = {k:<6} discrepancy = {d:.3}");
                    }
                    println!("selected k = {}", r.calibration.best_k);
                    for (a, b) in r.regenerated_errors.iter().zip(&r.table3_errors) {
                        println!(
                            "{:>4} [{:.0}, {:.0}]: max relative error regenerated {:.2e}, published {:.2e}",
                            a.role.name(),
                            a.lower,
                            a.upper,
                            a.max_relative_error,
                            b.max_relative_error
                        );
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail("model", e),
            }
        }
        Command::Bifurcate {
            s_min,
            s_max,
            points,
        } => match reports::bifurcate(s_min, s_max, points, &root.join("bifurcate")) {
            Ok(scan) => {
                for (a, b, c) in reports::count_intervals(&scan) {
                    println!("[{a:.0}, {b:.0}]: {c} stable");
                }
                ExitCode::SUCCESS
            }
            Err(e) => fail("model", e),
        },
        Command::Presets => {
            for name in presets::NAMES {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
    }
}
