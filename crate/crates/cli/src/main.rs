//! `iem`: generate synthetic chunked datasets, train and evaluate the four
//! incremental strategies, and compare their reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use iem::dataset::{read_manifest, SampleStore};
use iem::experiment::{evaluate_model, final_stage_rows, format_table, read_csv, rows_to_csv, ReportRow, RunOptions};
use iem::synth::{default_scenario, generate_scenario, DatasetIndex};
use iem::{run_strategy, ErrorVariant, ModelParams, RunConfig, Strategy};

const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "iem", version, about = "Incremental example mining experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the default chunked scenario (200 + 4x50 training images, 60 test).
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one strategy over every chunk of a dataset.
    Train {
        #[arg(long)]
        strategy: Strategy,
        /// Dataset directory written by `gen`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Evaluate a checkpoint on a test manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Test manifest (e.g. `<data>/test/manifest.tsv`).
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        #[arg(long, default_value_t = 0.5)]
        binarize_threshold: f64,
        /// Strategy column of the emitted row.
        #[arg(long, default_value = "checkpoint")]
        label: String,
        #[arg(long, default_value_t = 0)]
        stage: usize,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge report CSVs into one table.
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        /// Combined CSV destination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and compare all four strategies.
    Run {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunFlags,
    },
}

#[derive(Debug, Args)]
struct RunFlags {
    #[arg(long)]
    seed: Option<u64>,
    /// `key=value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    variant: Option<ErrorVariant>,
    /// Record wall-clock seconds in the report (makes it non-reproducible).
    #[arg(long)]
    record_timing: bool,
}

impl RunFlags {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.selection.seed = seed;
        }
        if let Some(tau) = self.tau {
            cfg.selection.scoring.tau = tau;
        }
        if let Some(variant) = self.variant {
            cfg.selection.scoring.variant = variant;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn train_one(strategy: Strategy, data: &Path, out: &Path, cfg: &RunConfig, timing: bool) -> Result<Vec<ReportRow>> {
    let index = DatasetIndex::load(data)?;
    let chunks = index.train_chunks()?;
    let test = index.test_records()?;
    let mut store = SampleStore::new();
    let outcome = run_strategy(
        strategy,
        &chunks,
        &test,
        cfg,
        &mut store,
        RunOptions { record_timing: timing },
    )?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    outcome.model.save(&out.join("model.txt"))?;
    if let Some(pool) = &outcome.pool {
        pool.save(&out.join("pool.txt"))?;
    }
    write(&out.join("report.csv"), outcome.report.to_csv())?;
    let trace: String = outcome.trace.iter().map(|t| t.to_line() + "\n").collect();
    write(&out.join("trace.txt"), trace)?;
    write(
        &out.join("run.txt"),
        format!(
            "strategy={}\nseed={}\nconfig={}\nstages={}\n",
            strategy,
            outcome.report.seed,
            outcome.report.config_hash,
            chunks.len()
        ),
    )?;
    Ok(outcome.report.rows)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { out, seed } => {
            let index = generate_scenario(&default_scenario(seed), &out)?;
            println!(
                "wrote {} training chunks and test set to {}",
                index.train.len(),
                out.display()
            );
        }
        Command::Train {
            strategy,
            data,
            out,
            run,
        } => {
            let cfg = run.resolve()?;
            let rows = train_one(strategy, &data, &out, &cfg, run.record_timing)?;
            print!("{}", format_table(&rows.iter().collect::<Vec<_>>()));
        }
        Command::Eval {
            checkpoint,
            test,
            tau,
            binarize_threshold,
            label,
            stage,
            out,
        } => {
            let model = ModelParams::load(&checkpoint)?;
            let records = read_manifest(&test)?;
            let mut store = SampleStore::new();
            store.load_all(&records)?;
            let samples = records
                .iter()
                .map(|r| store.sample(&r.id))
                .collect::<iem::Result<Vec<_>>>()?;
            let scoring = iem::ScoringConfig {
                tau,
                binarize_threshold,
                ..Default::default()
            };
            let eval = evaluate_model(&model, &samples, &scoring)?;
            let csv = rows_to_csv(&[ReportRow::from_evaluation(&label, stage, &eval, None, 0)]);
            match out {
                Some(path) => write(&path, csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Compare { reports, out } => {
            let mut rows = Vec::new();
            for path in &reports {
                rows.extend(read_csv(path)?);
            }
            print!("{}", format_table(&final_stage_rows(&rows)));
            if let Some(path) = out {
                write(&path, rows_to_csv(&rows))?;
            }
        }
        Command::Run { data, out, run } => {
            let cfg = run.resolve()?;
            let mut rows = Vec::new();
            for strategy in Strategy::ALL {
                rows.extend(train_one(
                    strategy,
                    &data,
                    &out.join(strategy.name()),
                    &cfg,
                    run.record_timing,
                )?);
            }
            write(&out.join("comparison.csv"), rows_to_csv(&rows))?;
            print!("{}", format_table(&final_stage_rows(&rows)));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let numeric = err
                .downcast_ref::<iem::Error>()
                .is_some_and(|e| matches!(e, iem::Error::Numeric(_)));
            ExitCode::from(if numeric { EXIT_NUMERIC } else { EXIT_DATA })
        }
    }
}
