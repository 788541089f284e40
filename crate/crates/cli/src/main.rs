use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use linkgt_cli::commands::{self, exit, CliError};
use linkgt_cli::config::{load_path, load_preset, LoadedConfig};
use linkgt_cli::presets::{self, PRESETS};

#[derive(Parser)]
#[command(name = "linkgt", version, about = "Gradient tracking over nonlinear links: runs, bounds, sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// Experiment config (TOML).
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset shipped with the binary (see `preset list`).
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Overrides the config seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Run {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
    },
    /// Print the step-size bounds for a configuration.
    Bounds {
        #[command(flatten)]
        source: Source,
        /// Also write bounds.txt here.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Stability sweep over the configured axes.
    Sweep {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
        /// Worker threads (defaults to the available parallelism).
        #[arg(long, value_name = "N")]
        jobs: Option<usize>,
        /// Comma-separated alpha values (replace the config axis).
        #[arg(long, value_delimiter = ',')]
        alpha: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        rho: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        khop: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        eta: Vec<f64>,
    },
    /// Run the invariant suites.
    Verify {
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
        /// Flip the gradient-feed sign in the assembled matrices.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Inspect the shipped presets.
    Preset {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    Show { name: String },
}

fn load(source: &Source) -> Result<LoadedConfig, CliError> {
    let mut loaded = match (&source.config, &source.preset) {
        (Some(p), _) => load_path(p)?,
        (None, Some(name)) => load_preset(name)?,
        (None, None) => return Err(CliError::Usage("one of --config or --preset is required".into())),
    };
    if let Some(seed) = source.seed {
        loaded.config.seed = seed;
    }
    loaded.config.validate(loaded.base_dir.as_deref())?;
    Ok(loaded)
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Run { source, out } => {
            let loaded = load(&source)?;
            let outcome = commands::cmd_run(&loaded, &out)?;
            let report = std::fs::read_to_string(out.join("report.txt")).unwrap_or_default();
            print!("{report}");
            println!("artifacts written to {}", out.display());
            Ok(outcome.exit_code())
        }
        Command::Bounds { source, out } => {
            let loaded = load(&source)?;
            let outcome = commands::cmd_bounds(&loaded, out.as_deref())?;
            print!("{}", outcome.render());
            Ok(exit::OK)
        }
        Command::Sweep { source, out, jobs, alpha, rho, khop, eta } => {
            let mut loaded = load(&source)?;
            let sweep = &mut loaded.config.sweep;
            if !alpha.is_empty() {
                sweep.alpha = alpha;
                sweep.alpha_range = None;
            }
            if !rho.is_empty() {
                sweep.rho = rho;
            }
            if !khop.is_empty() {
                sweep.khop = khop;
            }
            if !eta.is_empty() {
                sweep.eta = eta;
            }
            loaded.config.validate(loaded.base_dir.as_deref())?;
            let jobs = jobs.unwrap_or_else(default_jobs).max(1);
            let outcome = commands::cmd_sweep(&loaded, &out, jobs)?;
            println!("{}", commands::sweep_summary(&outcome));
            println!("artifacts written to {}", out.display());
            Ok(exit::OK)
        }
        Command::Verify { seed, inject_fault } => {
            let results = commands::cmd_verify(seed, inject_fault);
            let mut failed = 0;
            for r in &results {
                println!("{r}");
                failed += r.failed;
            }
            let passed: usize = results.iter().map(|r| r.passed).sum();
            println!("total: {passed} passed, {failed} failed");
            Ok(if failed == 0 { exit::OK } else { exit::VERIFY_FAILED })
        }
        Command::Preset { action } => {
            match action {
                PresetAction::List => {
                    for p in PRESETS {
                        println!("{:<22} {}", p.name, p.summary);
                    }
                }
                PresetAction::Show { name } => {
                    let p = presets::find(&name)
                        .ok_or_else(|| CliError::Config(linkgt_cli::config::ConfigError::UnknownPreset(name)))?;
                    print!("{}", p.text);
                }
            }
            Ok(exit::OK)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
