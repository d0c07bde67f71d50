use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ono_core::metrics::read_summary;
use ono_core::traffic::{export_long_csv, save_trace};
use ono_core::OnoError;
use ono_sim::data::write_rates_csv;
use ono_sim::run::write_models;
use ono_sim::{compare, load_inputs, render_table, run_scenario, train_techniques, ScenarioConfig, Seeds, SimError};

#[derive(Parser)]
#[command(name = "ono", version, about = "Online traffic steering simulator")]
struct Cli {
    /// Only print warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the scenario's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated technique names to keep.
    #[arg(long, value_delimiter = ',')]
    techniques: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the scenario's synthetic trace and rates to files.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Also write the trace in long CSV format (tab-separated).
        #[arg(long)]
        long: bool,
    },
    /// Read the scenario's trace source and write it in the native format.
    Ingest {
        #[command(flatten)]
        common: Common,
    },
    /// Fit predictors and models on the training split.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Run the scenario and write reports.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Join reports of runs on the same trace.
    Compare {
        /// Run directories or summary.json files.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Write the joined table as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a run's summary as a table.
    Report { report: PathBuf },
}

fn load_config(c: &Common) -> Result<ScenarioConfig, SimError> {
    let mut cfg = ScenarioConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    if !c.techniques.is_empty() {
        cfg.select(&c.techniques)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn summary_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("summary.json")
    } else {
        p.to_path_buf()
    }
}

fn mkdir(p: &Path) -> Result<(), SimError> {
    fs::create_dir_all(p).map_err(|e| SimError::Core(OnoError::io(p, e)))
}

fn execute(cli: Cli) -> Result<(), SimError> {
    match cli.command {
        Command::Generate { common, long } => {
            let cfg = load_config(&common)?;
            if !matches!(cfg.trace, ono_sim::TraceSource::Synthetic(_)) {
                return Err(SimError::Config("generate needs a synthetic trace source".into()));
            }
            let inputs = load_inputs(&cfg, Seeds::new(cfg.seed).trace)?;
            mkdir(&cfg.out_dir)?;
            save_trace(&inputs.trace, &cfg.out_dir.join("trace.txt"))?;
            write_rates_csv(&inputs.rates, &cfg.out_dir.join("rates.csv"))?;
            if long {
                export_long_csv(&inputs.trace, &cfg.out_dir.join("trace_long.tsv"), '\t', 0)?;
            }
            log::info!("trace {} written to {}", inputs.digest(), cfg.out_dir.display());
        }
        Command::Ingest { common } => {
            let cfg = load_config(&common)?;
            let inputs = load_inputs(&cfg, Seeds::new(cfg.seed).trace)?;
            mkdir(&cfg.out_dir)?;
            save_trace(&inputs.trace, &cfg.out_dir.join("trace.txt"))?;
            write_rates_csv(&inputs.rates, &cfg.out_dir.join("rates.csv"))?;
            log::info!(
                "{} locations, {} slots, trace {}",
                inputs.trace.num_locations(),
                inputs.trace.len(),
                inputs.digest()
            );
        }
        Command::Train { common } => {
            let cfg = load_config(&common)?;
            let mut seeds = Seeds::new(cfg.seed);
            let inputs = load_inputs(&cfg, seeds.trace)?;
            let needs_oracle = cfg
                .techniques
                .iter()
                .any(|t| matches!(t, ono_sim::TechniqueSpec::AdaptedAi { .. }));
            let oracle = if needs_oracle {
                ono_core::solver::solve_oracle_range(
                    &inputs.trace,
                    &inputs.rates,
                    &cfg.oracle,
                    0..inputs.train_len,
                    inputs.trace.slots_per_day(),
                )?
            } else {
                Vec::new()
            };
            let trained = train_techniques(&cfg, &inputs, needs_oracle.then_some(oracle.as_slice()), &mut seeds)?;
            let mut models = std::collections::BTreeMap::new();
            for t in &trained {
                if let Err(e) = &t.trained {
                    return Err(SimError::Core(OnoError::InvalidValue(format!("{}: {e}", t.name))));
                }
                if let Some(json) = t.model_json() {
                    models.insert(t.name.clone(), json?);
                }
            }
            write_models(&models, &cfg.out_dir.join("models"))?;
            log::info!("{} models written to {}", models.len(), cfg.out_dir.join("models").display());
        }
        Command::Run { common } => {
            let cfg = load_config(&common)?;
            let quiet = cli.quiet;
            let outcome = run_scenario(&cfg);
            if let Ok(run) = &outcome {
                if !quiet {
                    let c = compare(&[(cfg.name.clone(), run.summary.clone())])?;
                    print!("{}", render_table(&c));
                }
            }
            outcome?;
        }
        Command::Compare { reports, out } => {
            let mut loaded = Vec::new();
            for r in &reports {
                let label = r
                    .file_stem()
                    .filter(|_| r.is_file())
                    .or_else(|| r.file_name())
                    .map_or_else(|| r.display().to_string(), |s| s.to_string_lossy().into_owned());
                loaded.push((label, read_summary(&summary_path(r))?));
            }
            let c = compare(&loaded)?;
            if let Some(o) = out {
                let text = serde_json::to_string_pretty(&c).map_err(OnoError::from)?;
                fs::write(&o, text).map_err(|e| SimError::Core(OnoError::io(&o, e)))?;
            }
            if !cli.quiet {
                print!("{}", render_table(&c));
            }
        }
        Command::Report { report } => {
            let s = read_summary(&summary_path(&report))?;
            let label = report.display().to_string();
            print!("{}", render_table(&compare(&[(label, s)])?));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
