use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use paramtrap_cli::app::{default_out, execute, resolve, ConfigSource};
use paramtrap_cli::config::ExperimentKind;
use paramtrap_cli::presets::{Scale, PRESETS};

const AFTER_HELP: &str = "\
CONFIGURATION
    Settings are layered: a preset (or the configuration recorded in a
    manifest), then --config, then each --override in order, then --seed.
    Values are in laboratory units (MHz, µm, µs, K, Ω); keys that are not
    recognised are rejected.

EXIT STATUS
    0  every trajectory completed
    2  some trajectories failed; the others were written
    1  invalid configuration, I/O failure, or every trajectory failed

ENVIRONMENT
    PARAMTRAP_OUT      root of the default output directory (default: runs)
    PARAMTRAP_WORKERS  worker threads when --workers is not given

EXAMPLES
    paramtrap list-presets
    paramtrap validate --preset capture --override drive.epsilon=0.05
    paramtrap run --preset snr-desk --seed 7 --workers 4
    paramtrap run --manifest runs/snr-desk-seed7/manifest.json --out rerun";

/// Simulate an electron in a Paul trap under parametric drive, coupled to a
/// tank circuit, and analyse the detected signal.
#[derive(Debug, Parser)]
#[command(name = "paramtrap", version, after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment and write its artifacts and manifest.
    Run {
        #[command(flatten)]
        source: SourceArgs,
        /// Worker threads. Results do not depend on this value.
        #[arg(long, env = "PARAMTRAP_WORKERS")]
        workers: Option<usize>,
        /// Output directory [default: $PARAMTRAP_OUT/<preset or experiment>-seed<seed>].
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = "PARAMTRAP_OUT", default_value = "runs", hide = true)]
        out_root: PathBuf,
    },
    /// Check a configuration and print every problem found.
    Validate {
        #[command(flatten)]
        source: SourceArgs,
        /// Print the resolved configuration as TOML.
        #[arg(long)]
        print: bool,
    },
    /// List the built-in presets.
    ListPresets,
}

#[derive(Debug, Args)]
struct SourceArgs {
    /// TOML configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Built-in parameter set (see list-presets).
    #[arg(long, short, conflicts_with = "manifest")]
    preset: Option<String>,
    /// Repeat the run recorded in a manifest (file or run directory).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Base random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Set one key, e.g. `drive.epsilon=0.05`. May be repeated.
    #[arg(long = "override", short = 'o', value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl From<SourceArgs> for ConfigSource {
    fn from(a: SourceArgs) -> Self {
        ConfigSource {
            manifest: a.manifest,
            preset: a.preset,
            config: a.config,
            overrides: a.overrides,
            seed: a.seed,
        }
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn real_main() -> Result<u8> {
    match Cli::parse().command {
        Command::ListPresets => {
            for p in PRESETS {
                let scale = match p.scale {
                    Scale::Full => "full",
                    Scale::Desk => "desk",
                };
                println!("{:<16} {:<5} {}", p.name, scale, p.description);
            }
            println!();
            let kinds: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
            println!("experiments: {}", kinds.join(", "));
            Ok(0)
        }
        Command::Validate { source, print } => {
            let r = resolve(&source.into())?;
            let report = r.config.validate();
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for e in &report.errors {
                eprintln!("error: {e}");
            }
            if print {
                print!("{}", toml::to_string_pretty(&r.config)?);
            }
            if report.is_valid() {
                eprintln!("configuration is valid ({})", r.config.experiment.name());
                Ok(0)
            } else {
                Ok(1)
            }
        }
        Command::Run {
            source,
            workers,
            out,
            out_root,
        } => {
            let r = resolve(&source.into())?;
            let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let out = out.unwrap_or_else(|| default_out(&out_root, &r));
            let (m, report) = execute(&r, workers, &out)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for f in &m.failures {
                eprintln!("trajectory {} failed: {}", f.index, f.reason);
            }
            eprintln!(
                "{}: {:?}, {} artifacts in {} ({:.1} s, {} workers)",
                m.experiment,
                m.status,
                m.artifacts.len(),
                out.display(),
                m.wall_clock_s,
                m.workers
            );
            Ok(m.status.exit_code() as u8)
        }
    }
}
