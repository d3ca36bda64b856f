//! Command-line driver.
//!
//! Exit status: 0 on success, 1 for usage and validation errors (the message
//! names the offending file or flag), 2 when a run fails at runtime.

// `!(x > 0.0)` style checks are kept because they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use visco2d::config::{parse_config, validate};
use visco2d::harness::{
    convergence_study, epsilon_sweep, positivity_fuzz, setup, simulate, twin_run, Expectation,
    FuzzSetup, ManufacturedCase, Rung,
};
use visco2d::io::{checkpoint, DiagnosticsWriter, SnapshotWriter};
use visco2d::timeloop::Observer;
use visco2d::{DiagnosticsRecord, Error, ModelParams, State, ValidatedConfig};

#[derive(Parser, Debug)]
#[command(
    name = "visco2d",
    version,
    about = "2D viscoelastic flow solver and verification harness"
)]
struct Cli {
    /// Output directory; the VISCO2D_OUT environment variable takes precedence.
    #[arg(long, global = true, default_value = "visco2d_out")]
    out: PathBuf,
    /// Suppress progress and summary output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate a configuration, writing diagnostics.csv, snapshots and a final checkpoint.
    Run {
        config: PathBuf,
        /// Write a snapshot every this many emitted rows.
        #[arg(long, default_value_t = 1)]
        snapshot_every: usize,
    },
    /// Convergence study of a manufactured solution under the configured model.
    Converge {
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = CaseArg::Smooth)]
        case: CaseArg,
        #[arg(long, value_enum, default_value_t = Study::Temporal)]
        study: Study,
        /// Number of rungs, each halving dt (temporal) or doubling N (spatial).
        #[arg(long, default_value_t = 3)]
        levels: u32,
    },
    /// Twin run against the Gronwall envelope.
    Twin {
        config: PathBuf,
        /// Perturbation amplitude.
        #[arg(long)]
        amp: f64,
        /// Minimum share of output times below the envelope.
        #[arg(long, default_value_t = 0.95)]
        min_fraction: f64,
    },
    /// Positivity fuzzing over random SPD initial data.
    Fuzz {
        config: PathBuf,
        #[arg(long)]
        cases: usize,
    },
    /// Distance between regularized and unregularized runs for a list of ε.
    Sweep {
        config: PathBuf,
        /// Comma-separated ε values, largest first.
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        eps: Vec<f64>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CaseArg {
    TaylorGreen,
    SteadyTensor,
    Smooth,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Study {
    Temporal,
    Spatial,
}

/// Failure classified by exit status.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(c) => Failure::Usage(c.to_string()),
            Error::InvalidArgument(m) => Failure::Usage(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load(path: &Path) -> Result<ValidatedConfig, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn fixed_dt(cfg: &ValidatedConfig, path: &Path) -> Result<f64, Failure> {
    match cfg.run().dt {
        dt if dt > 0.0 => Ok(dt),
        _ => Err(Failure::Usage(format!(
            "{}: dt must be > 0 for this subcommand",
            path.display()
        ))),
    }
}

fn out_dir(cli: &Cli) -> Result<PathBuf, Failure> {
    let dir = match std::env::var_os("VISCO2D_OUT") {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => cli.out.clone(),
    };
    fs::create_dir_all(&dir)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

struct Progress;

impl Observer for Progress {
    fn observe(
        &mut self,
        step: usize,
        r: &DiagnosticsRecord,
        _state: &State,
    ) -> visco2d::Result<()> {
        println!(
            "step {step:>7}  t = {:.6}  E = {:.10e}  lambda_min = {:.6e}",
            r.t,
            r.energy(),
            r.lambda_min
        );
        Ok(())
    }
}

fn say(quiet: bool, msg: impl AsRef<str>) {
    if !quiet {
        println!("{}", msg.as_ref());
    }
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let quiet = cli.quiet;
    match &cli.command {
        Command::Run {
            config,
            snapshot_every,
        } => {
            if *snapshot_every == 0 {
                return Err(Failure::Usage("--snapshot-every must be >= 1".into()));
            }
            let cfg = load(config)?;
            let dir = out_dir(cli)?;
            let snap_dir = dir.join("snapshots");
            fs::create_dir_all(&snap_dir).map_err(|e| {
                Failure::Runtime(format!("cannot create {}: {e}", snap_dir.display()))
            })?;
            let mut csv = DiagnosticsWriter::create(dir.join("diagnostics.csv"))?;
            let mut snaps = SnapshotWriter::new(&snap_dir, *snapshot_every);
            let mut progress = Progress;
            let result = {
                let mut observers: Vec<&mut dyn Observer> = vec![&mut csv, &mut snaps];
                if !quiet {
                    observers.push(&mut progress);
                }
                simulate(&cfg, &mut observers)
            };
            csv.flush()?;
            let outcome = result?;
            checkpoint(dir.join("checkpoint.v2ds"), &outcome.state)?;
            say(
                quiet,
                format!(
                    "{} steps to t = {}; output in {}",
                    outcome.steps,
                    outcome.state.t,
                    dir.display()
                ),
            );
        }
        Command::Converge {
            config,
            case,
            study,
            levels,
        } => {
            if *levels < 2 {
                return Err(Failure::Usage("--levels must be >= 2".into()));
            }
            let cfg = load(config)?;
            let dt = fixed_dt(&cfg, config)?;
            let run = cfg.run();
            let mut case = match case {
                CaseArg::TaylorGreen => ManufacturedCase::taylor_green(),
                CaseArg::SteadyTensor => ManufacturedCase::steady_tensor(),
                CaseArg::Smooth => ManufacturedCase::smooth(),
            };
            case.params = *cfg.params();
            let (ladder, source_n, expect): (Vec<Rung>, Option<usize>, Expectation) = match study {
                Study::Temporal => (
                    (0..*levels)
                        .map(|k| Rung {
                            n: run.grid_size,
                            dt: dt * f64::from(1u32 << (levels - 1 - k)),
                        })
                        .collect(),
                    None,
                    Expectation::Order {
                        order: f64::from(run.scheme.order()),
                        tol: 0.3,
                    },
                ),
                Study::Spatial => {
                    let coarsest = run.grid_size >> (levels - 1);
                    if coarsest < 4 || coarsest << (levels - 1) != run.grid_size {
                        return Err(Failure::Usage(format!(
                            "--levels {levels} is too many for grid_size = {}",
                            run.grid_size
                        )));
                    }
                    (
                        (0..*levels)
                            .map(|k| Rung {
                                n: coarsest << k,
                                dt,
                            })
                            .collect(),
                        Some(2 * run.grid_size),
                        Expectation::None,
                    )
                }
            };
            let report =
                convergence_study(&case, &ladder, run.scheme, run.t_end, source_n, expect)?;
            let dir = out_dir(cli)?;
            let path = dir.join("convergence.csv");
            report.write_csv(&path)?;
            for r in &report.rows {
                say(
                    quiet,
                    format!(
                        "N = {:>4}  dt = {:.3e}  error = {:.6e}  order = {}",
                        r.n,
                        r.dt,
                        r.error(),
                        r.order
                            .map_or_else(|| "-".to_string(), |p| format!("{p:.3}"))
                    ),
                );
            }
            say(
                quiet,
                format!("{} {}", verdict(report.pass), path.display()),
            );
        }
        Command::Twin {
            config,
            amp,
            min_fraction,
        } => {
            if !(*amp >= 0.0) {
                return Err(Failure::Usage(format!("--amp must be >= 0, got {amp}")));
            }
            let cfg = load(config)?;
            let (stepper, state) = setup(&cfg)?;
            let report = twin_run(&stepper, &state, *amp, cfg.run().t_end, cfg.run().seed)?;
            let dir = out_dir(cli)?;
            let path = dir.join("twin.csv");
            report.write_csv(&path)?;
            say(
                quiet,
                format!(
                    "{} C_fit = {:.6e}, {:.1}% of output times below the envelope; {}",
                    verdict(report.pass(*min_fraction)),
                    report.c_fit,
                    100.0 * report.fraction_below,
                    path.display()
                ),
            );
        }
        Command::Fuzz { config, cases } => {
            if *cases == 0 {
                return Err(Failure::Usage("--cases must be >= 1".into()));
            }
            let cfg = load(config)?;
            let dt = fixed_dt(&cfg, config)?;
            let run = cfg.run();
            let setup = FuzzSetup {
                scheme: run.scheme,
                seed: run.seed,
                ..FuzzSetup::new(run.grid_size, run.t_end, dt, *cfg.params())
            };
            let report = positivity_fuzz(&setup, *cases)?;
            let dir = out_dir(cli)?;
            let path = dir.join("fuzz.csv");
            report.write_csv(&path)?;
            say(
                quiet,
                format!(
                    "{} {} cases, lowest lambda_min = {:.6e}; {}",
                    verdict(report.pass()),
                    report.cases.len(),
                    report.floor(),
                    path.display()
                ),
            );
        }
        Command::Sweep { config, eps } => {
            if let Some(bad) = eps.iter().find(|e| !(**e > 0.0)) {
                return Err(Failure::Usage(format!(
                    "--eps values must be > 0, got {bad}"
                )));
            }
            let cfg = load(config)?;
            fixed_dt(&cfg, config)?;
            let (params, run) = cfg.into_parts();
            let base = validate(
                ModelParams {
                    epsilon: 0.0,
                    ..params
                },
                run,
            )
            .map_err(|e| Failure::Usage(e.to_string()))?;
            let (stepper, state) = setup(&base)?;
            let report = epsilon_sweep(&stepper, &state, eps, base.run().t_end)?;
            let dir = out_dir(cli)?;
            let path = dir.join("sweep.csv");
            report.write_csv(&path)?;
            for r in &report.rows {
                say(
                    quiet,
                    format!("eps = {:.3e}  distance = {:.6e}", r.eps, r.distance),
                );
            }
            say(
                quiet,
                format!(
                    "{} distances {}strictly decreasing; {}",
                    verdict(report.decreasing()),
                    if report.decreasing() { "" } else { "not " },
                    path.display()
                ),
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
