use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use stormsurge::checks::gradient_suite;
use stormsurge::docio;
use stormsurge::gp::{GpConfig, GpEmulator};
use stormsurge::model::load_params;
use stormsurge::pipeline;
use stormsurge::storm_data::{generate_dataset, read_dataset, write_dataset, Dataset, GeneratorConfig};
use stormsurge::training::{random_search, SearchConfig, TrainConfig};
use stormsurge::{Error, Result};

/// Storm-surge emulation: synthetic storms, a recurrent convolutional
/// emulator and a Gaussian-process baseline.
#[derive(Debug, Parser)]
#[command(name = "stormsurge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic storm dataset.
    Generate {
        /// Generator config (JSON with format_version); desk defaults if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the CRNN emulator.
    Train {
        /// Training config (JSON with format_version); desk defaults if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for the model, loss history and checkpoints.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed (shuffling and initialisation).
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the number of epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fit the Gaussian-process baseline.
    GpTrain {
        /// GP config (JSON with format_version); defaults if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for the GP model.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the hyperparameter-search seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write surge predictions of a trained CRNN as CSV.
    Predict {
        /// CRNN parameter file.
        #[arg(long)]
        model: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Which storms to predict.
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
    },
    /// Score the CRNN and GP on the test storms and export plots.
    Evaluate {
        /// CRNN parameter file.
        #[arg(long)]
        model: PathBuf,
        /// GP model file; fitted with default settings if omitted.
        #[arg(long)]
        gp_model: Option<PathBuf>,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for the report and plots.
        #[arg(long)]
        out: PathBuf,
        /// Grid column of the front/middle/back save points (default: centre).
        #[arg(long)]
        column: Option<usize>,
        /// Overrides the GP hyperparameter-search seed when fitting here.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Random hyperparameter search.
    Search {
        /// Search config (JSON with format_version).
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for the trial report.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare analytic gradients against central finite differences.
    Gradcheck {
        /// First seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Optional directory for a JSON summary.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Test,
    All,
}

fn config_or<T: serde::de::DeserializeOwned>(path: Option<&Path>, default: impl FnOnce() -> T) -> Result<T> {
    match path {
        Some(p) => docio::read_config(p),
        None => Ok(default()),
    }
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    let ds = read_dataset(dir)?;
    eprintln!(
        "dataset {}: {} train / {} test storms, grid {}x{}, {} steps",
        dir.display(),
        ds.manifest.train.len(),
        ds.manifest.test.len(),
        ds.manifest.grid.grid_h,
        ds.manifest.grid.grid_w,
        ds.manifest.n_steps
    );
    Ok(ds)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out, seed } => {
            let mut cfg = config_or(config.as_deref(), GeneratorConfig::desk)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let records = generate_dataset(&cfg)?;
            write_dataset(&out, &records, &cfg.grid, Some(&cfg), cfg.n_test)?;
            eprintln!("wrote {} storms to {}", records.len(), out.display());
        }
        Command::Train {
            config,
            data,
            out,
            seed,
            epochs,
        } => {
            let mut cfg = config_or(config.as_deref(), TrainConfig::desk)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            let ds = load_dataset(&data)?;
            let arch = pipeline::architecture_for(&ds);
            let run = pipeline::train_crnn(&ds, &arch, &cfg, &out, |line| eprintln!("{line}"))?;
            let h = &run.outcome.history;
            eprintln!(
                "trained {} epochs: loss {:.6e} -> {:.6e} (best epoch {})",
                h.len(),
                h[0],
                h[h.len() - 1],
                run.outcome.best_epoch
            );
        }
        Command::GpTrain {
            config,
            data,
            out,
            seed,
        } => {
            let mut cfg = config_or(config.as_deref(), GpConfig::default)?;
            if let Some(s) = seed {
                cfg.hyperopt.seed = s;
            }
            let ds = load_dataset(&data)?;
            let gp = pipeline::train_gp(&ds, &cfg, Some(&out))?;
            eprintln!(
                "GP with {} principal components written to {}",
                gp.components.len(),
                out.display()
            );
        }
        Command::Predict {
            model,
            data,
            out,
            split,
        } => {
            let saved = load_params(&model)?;
            let ds = load_dataset(&data)?;
            let (ids, records) = match split {
                Split::Train => (ds.manifest.train.clone(), pipeline::train_split(&ds)?),
                Split::Test => (ds.manifest.test.clone(), pipeline::test_split(&ds)?),
                Split::All => {
                    let mut ids = ds.manifest.train.clone();
                    ids.extend(&ds.manifest.test);
                    let mut records = pipeline::train_split(&ds)?;
                    records.extend(pipeline::test_split(&ds)?);
                    (ids, records)
                }
            };
            let preds = pipeline::predict_crnn(&saved, &records)?;
            let paths = pipeline::write_predictions(&out, &ids, "crnn", &preds)?;
            eprintln!("wrote {} prediction files to {}", paths.len(), out.display());
        }
        Command::Evaluate {
            model,
            gp_model,
            data,
            out,
            column,
            seed,
        } => {
            let saved = load_params(&model)?;
            let ds = load_dataset(&data)?;
            let gp = match gp_model {
                Some(p) => GpEmulator::load(&p)?,
                None => {
                    let mut cfg = GpConfig::default();
                    if let Some(s) = seed {
                        cfg.hyperopt.seed = s;
                    }
                    pipeline::train_gp(&ds, &cfg, None)?
                }
            };
            let column = column.unwrap_or(ds.manifest.grid.grid_w / 2);
            let report = pipeline::evaluate(&ds, &saved, &gp, column, &out)?;
            print!("{}", report.to_table());
        }
        Command::Search {
            config,
            data,
            out,
            seed,
        } => {
            let mut cfg: SearchConfig = docio::read_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let ds = load_dataset(&data)?;
            let (_, prepared) = pipeline::prepare(&pipeline::train_split(&ds)?)?;
            let report = random_search(&pipeline::architecture_for(&ds), &prepared, &cfg)?;
            pipeline::write_text(&out.join("search.csv"), &report.to_csv())?;
            print!("{}", report.to_csv());
        }
        Command::Gradcheck { seed, seeds, out } => {
            let checks = gradient_suite(seed..seed + seeds)?;
            for c in &checks {
                println!(
                    "{} seed {:>3} {:<24} max rel err {:.3e} (tol {:.0e})",
                    if c.passed() { "ok  " } else { "FAIL" },
                    c.seed,
                    c.name,
                    c.max_rel_error,
                    c.tolerance
                );
            }
            if let Some(dir) = out {
                docio::write_document(&dir.join("gradcheck.json"), &checks, true)?;
            }
            let failed = checks.iter().filter(|c| !c.passed()).count();
            if failed > 0 {
                return Err(Error::Contract(format!(
                    "{failed} of {} gradient checks failed",
                    checks.len()
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
