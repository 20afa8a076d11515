use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hyperlearn_cli::config::{self, Sources};
use hyperlearn_cli::{CliError, Result, output};
use hyperlearn_core::autodiff::Fault;

#[derive(Parser)]
#[command(name = "hyperlearn", version, about = "Batch-size hyper-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one experiment, once per seed.
    Run {
        /// Flat TOML config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Named preset, layered under the config file.
        #[arg(long)]
        preset: Option<String>,
        /// Re-run the exact configuration stored in a run manifest.
        #[arg(long, conflicts_with_all = ["config", "preset", "set"])]
        manifest: Option<PathBuf>,
        /// Seed; repeat to launch several runs concurrently.
        #[arg(long)]
        seed: Vec<u64>,
        /// Output root (overrides HYPERLEARN_OUT and the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write loss and batch-size charts.
        #[arg(long)]
        emit_svg: bool,
        /// Override a config key, e.g. `--set epochs=5`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Compare every analytic gradient against finite differences.
    GradCheck {
        #[arg(long, hide = true)]
        inject_fault: Option<FaultArg>,
    },
    /// Re-emit CSV (and optionally SVG) files from a saved log.json.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        emit_svg: bool,
    },
    /// List the built-in presets.
    Presets,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    Sigmoid,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            preset,
            manifest,
            seed,
            out,
            emit_svg,
            set,
        } => {
            let mut experiment = match manifest {
                Some(path) => {
                    let m = output::load_manifest(&path)?;
                    config::validate(&m.config)?;
                    m.config
                }
                None => {
                    let overrides = set.iter().map(|s| config::parse_override(s)).collect::<Result<_>>()?;
                    config::resolve(&Sources {
                        preset,
                        file: config,
                        overrides,
                    })?
                }
            };
            experiment.emit_svg |= emit_svg;
            let root = config::output_root(out.as_deref(), &experiment);
            let seeds = if seed.is_empty() { vec![experiment.meta.seed] } else { seed };
            let mut first_error = None;
            for (seed, result) in hyperlearn_cli::execute_seeds(&experiment, &seeds, &root) {
                match result {
                    Ok(o) => println!(
                        "seed {seed}: {} epochs, final B {}, test acc {:.4} -> {}",
                        o.summary.epochs,
                        o.summary.final_batch_size.map_or("-".into(), |b| b.to_string()),
                        o.summary.test_acc,
                        o.dir.display()
                    ),
                    Err(e) => {
                        eprintln!("seed {seed}: {e}");
                        first_error.get_or_insert(e);
                    }
                }
            }
            first_error.map_or(Ok(()), Err)
        }
        Command::GradCheck { inject_fault } => {
            let fault = inject_fault.map(|FaultArg::Sigmoid| Fault::SigmoidDerivative);
            let report = hyperlearn_cli::grad_check(fault)?;
            println!("{report}");
            if report.passed() {
                Ok(())
            } else {
                Err(CliError::GradCheck(report.max_rel_error()))
            }
        }
        Command::Replay { log, out, emit_svg } => {
            for path in hyperlearn_cli::replay(&log, out.as_deref(), emit_svg)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Presets => {
            for name in config::preset_names() {
                println!("{name}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
