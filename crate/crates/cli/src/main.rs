//! `teams`: run the team-structure experiments from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use teams_core::experiment::{self, plot, Environment, ExperimentConfig};
use teams_core::incentive::{self, TableOptions};
use teams_core::team::all_structures;
use teams_core::{Error, PairingMode};

const OUTPUT_ROOT_VAR: &str = "TEAMS_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "teams", version, about = "Team reward structures in multi-agent learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; every key is optional.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `-s benefit=2 -s structures=1/30,30/1`.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Root that a relative `output_dir` is resolved against.
    #[arg(long, env = OUTPUT_ROOT_VAR)]
    output_root: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured structure at the configured payoffs.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Also render SVG charts into the output directory.
        #[arg(long)]
        plot: bool,
    },
    /// Sweep structures against benefit values.
    Grid {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Structures to sweep (default: every `k/m` of the population).
        #[arg(long, value_delimiter = ',')]
        structures: Option<Vec<String>>,
        /// Benefit values (default: `grid_benefits`).
        #[arg(long, value_delimiter = ',')]
        benefits: Option<Vec<f64>>,
        #[arg(long)]
        plot: bool,
    },
    /// Print the closed-form incentive table.
    Incentives {
        #[arg(short = 'n', long, default_value_t = 30)]
        n_agents: usize,
        #[arg(short, long, default_value_t = 1.0)]
        cost: f64,
        #[arg(short, long, value_delimiter = ',', default_value = "10,5,2")]
        benefits: Vec<f64>,
        /// Structures (default: every intermediate `k/m` of the population).
        #[arg(long, value_delimiter = ',')]
        structures: Option<Vec<String>>,
        /// Keep `1/N` and `N/1` in the table.
        #[arg(long)]
        bookends: bool,
        #[arg(long, default_value = "team_first")]
        pairing: PairingMode,
        /// Fixed teammate probability for every structure.
        #[arg(long)]
        nu: Option<f64>,
        /// Write CSV here; `-` for stdout instead of the text table.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Render SVG charts from an output directory.
    Plot { dir: PathBuf },
    /// Check a config and print it with every default filled in.
    Validate {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

/// Errors while reading the config itself (including an unreadable file)
/// count as config errors.
fn resolve(args: &ConfigArgs) -> Result<ExperimentConfig, Failure> {
    resolve_inner(args).map_err(|e| Failure { config: true, error: e })
}

fn resolve_inner(args: &ConfigArgs) -> Result<ExperimentConfig, Error> {
    let base = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let mut cfg = base.with_overrides(&args.overrides)?;
    if let Some(root) = &args.output_root {
        if cfg.output_dir.is_relative() {
            cfg.output_dir = root.join(&cfg.output_dir);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Failure {
    config: bool,
    error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Failure {
            config: error.is_config_error(),
            error,
        }
    }
}

fn population(cfg: &ExperimentConfig) -> usize {
    match cfg.environment {
        Environment::Ipd => cfg.n_agents,
        Environment::Cleanup => cfg.cleanup_agents,
    }
}

fn print_plots(dir: &Path) -> Result<(), Error> {
    for p in plot::emit_plots(dir)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn report_conditions(run: &experiment::RunReport) {
    for cond in &run.conditions {
        let mut line = format!("{}", cond.dir.display());
        for a in &cond.aggregates {
            match a.half_width {
                Some(h) => line.push_str(&format!("  {}={:.4}±{:.4}", a.metric, a.mean, h)),
                None => line.push_str(&format!("  {}={:.4}", a.metric, a.mean)),
            }
        }
        println!("{line}");
        for f in &cond.failures {
            eprintln!("trial {} (seed {}) failed: {}", f.trial, f.seed, f.error);
        }
    }
}

fn execute(cli: Cli) -> Result<ExitCode, Failure> {
    match cli.command {
        Command::Run { cfg, plot } => {
            let cfg = resolve(&cfg)?;
            let report = experiment::run_experiment(&cfg)?;
            report_conditions(&report);
            if plot {
                print_plots(&cfg.output_dir)?;
            }
            Ok(if report.failures() > 0 {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Grid {
            cfg,
            structures,
            benefits,
            plot,
        } => {
            let cfg = resolve(&cfg)?;
            let structures =
                structures.unwrap_or_else(|| all_structures(population(&cfg)).iter().map(|p| p.notation()).collect());
            let benefits = benefits.unwrap_or_else(|| cfg.grid_benefits.clone());
            let report = experiment::run_grid(&cfg, &structures, &benefits)?;
            report_conditions(&report.run);
            if cfg.environment == Environment::Ipd {
                print!("{}", experiment::render_grid(&report.rows));
            }
            if plot {
                print_plots(&cfg.output_dir)?;
            }
            Ok(if report.run.failures() > 0 {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Incentives {
            n_agents,
            cost,
            benefits,
            structures,
            bookends,
            pairing,
            nu,
            csv,
        } => {
            let structures =
                structures.unwrap_or_else(|| all_structures(n_agents).iter().map(|p| p.notation()).collect());
            let names: Vec<&str> = structures.iter().map(String::as_str).collect();
            let pairs: Vec<(f64, f64)> = benefits.iter().map(|&b| (b, cost)).collect();
            let opts = TableOptions {
                n_agents,
                include_bookends: bookends,
                pairing_mode: pairing,
                nu_override: nu,
            };
            let entries = incentive::incentive_table(&names, &pairs, &opts)?;
            match csv {
                Some(p) if p.as_os_str() == "-" => incentive::write_csv(&entries, std::io::stdout().lock())?,
                Some(p) => {
                    let f = std::fs::File::create(&p).map_err(|e| Error::Io {
                        path: p.clone(),
                        source: e,
                    })?;
                    incentive::write_csv(&entries, f)?;
                    print!("{}", incentive::render_text(&entries));
                }
                None => print!("{}", incentive::render_text(&entries)),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Plot { dir } => {
            print_plots(&dir)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { cfg } => {
            let cfg = resolve(&cfg)?;
            print!("{}", cfg.to_toml_string());
            println!("# config_hash = {}", cfg.config_hash());
            Ok(ExitCode::SUCCESS)
        }
    }
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
    match execute(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(if f.config { 1 } else { 2 })
        }
    }
}
