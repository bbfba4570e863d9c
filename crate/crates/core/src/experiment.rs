//! Strategy comparison harness: trains the four strategies on a chunked
//! dataset with equal SGD budgets and evaluates every stage on one shared
//! test set.
//!
//! Stage 0 is identical for all strategies: plain training from zero weights
//! on the initial chunk. For each later stage `s`:
//!
//! * `baseline_full` retrains from zero weights on chunks `0..=s` pooled.
//! * `baseline_hem` starts from the stage-0 model with chunks `0..=s` in one
//!   pool and runs the same selection schedule IEM would have run so far.
//! * `iem_incremental` runs one incremental step with chunk `s`.
//! * `naive_finetune` keeps training the previous model on chunk `s` only.
//!
//! Every selection iteration and every plain-training iteration at stage `s`
//! costs `epochs_per_iteration * 4 * K_s` SGD steps (stage 0:
//! `epochs_per_iteration * |chunk 0|`), so strategies differ only in what they
//! train on.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use crate::config::RunConfig;
use crate::dataset::{Sample, SampleStore};
use crate::error::{Error, Result};
use crate::metrics::{binarize, jaccard_index, DetectionCounts, ScoringConfig};
use crate::metrics::{connected_components, match_lesions};
use crate::model::{ModelParams, Segmenter};
use crate::pool::{ExampleRecord, PoolState};
use crate::selector::{compute_partition_number, stream_rng, SelectionRng};
use crate::trainer::{incremental_step, run_selection_iterations, train_steps, StepBudget, TraceEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    BaselineFull,
    BaselineHem,
    IemIncremental,
    NaiveFinetune,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::BaselineFull,
        Strategy::BaselineHem,
        Strategy::IemIncremental,
        Strategy::NaiveFinetune,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::BaselineFull => "baseline_full",
            Strategy::BaselineHem => "baseline_hem",
            Strategy::IemIncremental => "iem_incremental",
            Strategy::NaiveFinetune => "naive_finetune",
        }
    }

    fn stream_base(self) -> u64 {
        (self as u64 + 1) * 1000
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "baseline_full" => Ok(Strategy::BaselineFull),
            "baseline_hem" | "hem" => Ok(Strategy::BaselineHem),
            "iem_incremental" | "iem" => Ok(Strategy::IemIncremental),
            "naive_finetune" | "naive" => Ok(Strategy::NaiveFinetune),
            other => Err(format!(
                "unknown strategy `{other}` (expected baseline_full|baseline_hem|iem_incremental|naive_finetune)"
            )),
        }
    }
}

/// Test-set scores of one model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub counts: DetectionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean per-image pixel Jaccard index.
    pub jaccard: f64,
}

/// Forward pass, binarization, lesion matching and pixel Jaccard over the
/// test samples.
pub fn evaluate_model<M: Segmenter>(model: &M, test: &[&Sample], scoring: &ScoringConfig) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::contract("empty test set"));
    }
    let mut counts = DetectionCounts::default();
    let mut jaccard = 0.0;
    for sample in test {
        let pred = binarize(&model.forward(&sample.image), scoring.binarize_threshold)?;
        counts.add(&match_lesions(
            &connected_components(&pred),
            &connected_components(&sample.mask),
            scoring.tau,
        )?);
        jaccard += jaccard_index(&pred, &sample.mask)?;
    }
    let s = counts.scores();
    Ok(Evaluation {
        counts,
        precision: s.precision,
        recall: s.recall,
        f1: s.f1,
        jaccard: jaccard / test.len() as f64,
    })
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub strategy: String,
    pub stage: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub jaccard: f64,
    /// Wall-clock training time; only recorded on request so reports stay
    /// byte-reproducible by default.
    pub seconds: Option<f64>,
    pub examples_trained: usize,
}

pub const CSV_COLUMNS: [&str; 8] = [
    "strategy",
    "stage",
    "precision",
    "recall",
    "f1",
    "jaccard",
    "seconds",
    "examples_trained",
];

impl ReportRow {
    pub fn from_evaluation(
        strategy: &str,
        stage: usize,
        eval: &Evaluation,
        seconds: Option<f64>,
        examples_trained: usize,
    ) -> Self {
        ReportRow {
            strategy: strategy.to_string(),
            stage,
            precision: eval.precision,
            recall: eval.recall,
            f1: eval.f1,
            jaccard: eval.jaccard,
            seconds,
            examples_trained,
        }
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.strategy,
            self.stage,
            self.precision,
            self.recall,
            self.f1,
            self.jaccard,
            self.seconds.map_or_else(String::new, |s| s.to_string()),
            self.examples_trained
        )
    }
}

/// Per-stage rows of one strategy run plus the run's provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyReport {
    pub strategy: Strategy,
    pub seed: u64,
    pub config_hash: String,
    pub rows: Vec<ReportRow>,
}

impl StrategyReport {
    pub fn final_row(&self) -> &ReportRow {
        self.rows.last().expect("reports contain at least one stage")
    }

    pub fn to_csv(&self) -> String {
        rows_to_csv(&self.rows)
    }
}

pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut out = CSV_COLUMNS.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv_line());
        out.push('\n');
    }
    out
}

/// Parses a report CSV. The header must list exactly the report columns in
/// order; a missing or unexpected column is a schema error naming it.
pub fn parse_csv(text: &str, origin: &Path) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let header: Vec<&str> = lines
        .next()
        .map(|(_, l)| l.split(',').collect())
        .ok_or_else(|| Error::Schema(format!("{}: empty report", origin.display())))?;
    for (i, col) in CSV_COLUMNS.iter().enumerate() {
        match header.get(i) {
            Some(h) if h == col => {}
            _ if !header.contains(col) => {
                return Err(Error::Schema(format!("{}: missing column `{col}`", origin.display())))
            }
            _ => {
                return Err(Error::Schema(format!(
                    "{}: column `{col}` out of order",
                    origin.display()
                )))
            }
        }
    }
    if let Some(extra) = header.get(CSV_COLUMNS.len()) {
        return Err(Error::Schema(format!(
            "{}: unexpected column `{extra}`",
            origin.display()
        )));
    }
    let mut rows = Vec::new();
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != CSV_COLUMNS.len() {
            return Err(Error::parse(
                origin,
                n,
                format!("expected {} fields, found {}", CSV_COLUMNS.len(), f.len()),
            ));
        }
        let real = |i: usize| -> Result<f64> {
            f[i].parse()
                .map_err(|e| Error::parse(origin, n, format!("bad {}: {e}", CSV_COLUMNS[i])))
        };
        let int = |i: usize| -> Result<usize> {
            f[i].parse()
                .map_err(|e| Error::parse(origin, n, format!("bad {}: {e}", CSV_COLUMNS[i])))
        };
        rows.push(ReportRow {
            strategy: f[0].to_string(),
            stage: int(1)?,
            precision: real(2)?,
            recall: real(3)?,
            f1: real(4)?,
            jaccard: real(5)?,
            seconds: if f[6].is_empty() { None } else { Some(real(6)?) },
            examples_trained: int(7)?,
        });
    }
    Ok(rows)
}

pub fn read_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, path)
}

/// Final-stage rows of each strategy, in first-appearance order.
pub fn final_stage_rows(rows: &[ReportRow]) -> Vec<&ReportRow> {
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.strategy.as_str()) {
            order.push(&r.strategy);
        }
    }
    order
        .into_iter()
        .filter_map(|s| rows.iter().filter(|r| r.strategy == s).max_by_key(|r| r.stage))
        .collect()
}

/// Fixed-width text table in the column order of the CSV.
pub fn format_table(rows: &[&ReportRow]) -> String {
    let mut out = format!(
        "{:<16} {:>5} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
        "strategy", "stage", "precision", "recall", "f1", "jaccard", "seconds", "examples"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<16} {:>5} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9} {:>9}\n",
            r.strategy,
            r.stage,
            r.precision,
            r.recall,
            r.f1,
            r.jaccard,
            r.seconds.map_or_else(|| "-".to_string(), |s| format!("{s:.3}")),
            r.examples_trained
        ));
    }
    out
}

/// Everything a training run leaves behind.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: StrategyReport,
    pub model: ModelParams,
    /// Final pool for the selection-driven strategies.
    pub pool: Option<PoolState>,
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub record_timing: bool,
}

struct Harness<'a> {
    cfg: &'a RunConfig,
    chunks: &'a [Vec<ExampleRecord>],
    test_ids: Vec<String>,
    partition_numbers: Vec<usize>,
    options: RunOptions,
}

impl Harness<'_> {
    fn iteration_steps(&self, stage: usize) -> usize {
        let epochs = self.cfg.train.epochs_per_iteration;
        if stage == 0 {
            epochs * self.chunks[0].len()
        } else {
            epochs * 4 * self.partition_numbers[stage]
        }
    }

    fn rng(&self, strategy: Strategy, stage: usize) -> SelectionRng {
        stream_rng(self.cfg.selection.seed, strategy.stream_base() + stage as u64)
    }

    fn evaluate(&self, model: &ModelParams, store: &SampleStore) -> Result<Evaluation> {
        let test = self
            .test_ids
            .iter()
            .map(|id| store.sample(id))
            .collect::<Result<Vec<_>>>()?;
        evaluate_model(model, &test, &self.cfg.selection.scoring)
    }

    /// Plain training over `records`, `iterations` times `steps` each.
    #[allow(clippy::too_many_arguments)]
    fn plain_training(
        &self,
        model: &mut ModelParams,
        records: &[&ExampleRecord],
        iterations: usize,
        steps: usize,
        stage: usize,
        store: &SampleStore,
        rng: &mut SelectionRng,
        trace: &mut Vec<TraceEntry>,
    ) -> Result<()> {
        let samples = records
            .iter()
            .map(|r| store.sample(&r.id))
            .collect::<Result<Vec<_>>>()?;
        let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
        for _ in 0..iterations {
            train_steps(
                model,
                &samples,
                steps,
                &self.cfg.train,
                self.cfg.selection.augmentations,
                rng,
            )?;
            trace.push(TraceEntry {
                stage,
                iteration: trace.len(),
                subset: None,
                trained: ids.clone(),
                sgd_steps: steps,
            });
        }
        Ok(())
    }

    fn initial_model(&self, store: &SampleStore, trace: &mut Vec<TraceEntry>) -> Result<ModelParams> {
        let mut model = ModelParams::zeros();
        let records: Vec<&ExampleRecord> = self.chunks[0].iter().collect();
        let mut rng = stream_rng(self.cfg.selection.seed, 0);
        self.plain_training(
            &mut model,
            &records,
            self.cfg.selection.iterations_per_step,
            self.iteration_steps(0),
            0,
            store,
            &mut rng,
            trace,
        )?;
        Ok(model)
    }
}

fn distinct_trained(trace: &[TraceEntry], stage: usize) -> usize {
    trace
        .iter()
        .filter(|t| t.stage == stage)
        .flat_map(|t| t.trained.iter())
        .collect::<BTreeSet<_>>()
        .len()
}

/// Trains `strategy` stage by stage over `chunks` and evaluates after each
/// stage on `test`. Images are read through `store`.
pub fn run_strategy(
    strategy: Strategy,
    chunks: &[Vec<ExampleRecord>],
    test: &[ExampleRecord],
    cfg: &RunConfig,
    store: &mut SampleStore,
    options: RunOptions,
) -> Result<RunOutcome> {
    cfg.validate()?;
    if chunks.is_empty() || chunks.iter().any(|c| c.is_empty()) {
        return Err(Error::contract("every chunk must contain at least one example"));
    }
    for chunk in chunks {
        store.load_all(chunk)?;
    }
    store.load_all(test)?;

    let partition_numbers = chunks
        .iter()
        .map(|c| match cfg.selection.partition_number {
            Some(k) => Ok(k),
            None => compute_partition_number(c),
        })
        .collect::<Result<Vec<_>>>()?;
    let harness = Harness {
        cfg,
        chunks,
        test_ids: test.iter().map(|r| r.id.clone()).collect(),
        partition_numbers,
        options,
    };
    let sel = &cfg.selection;
    let fingerprint = sel.fingerprint();
    let iterations = sel.iterations_per_step;

    let mut rows = Vec::with_capacity(chunks.len());
    let mut trace = Vec::new();
    let started = Instant::now();
    let initial = harness.initial_model(store, &mut trace)?;
    let initial_seconds = started.elapsed().as_secs_f64();
    let seconds = |t: f64| harness.options.record_timing.then_some(t);
    rows.push(ReportRow::from_evaluation(
        strategy.name(),
        0,
        &harness.evaluate(&initial, store)?,
        seconds(initial_seconds),
        chunks[0].len(),
    ));

    let mut model = initial;
    let mut pool: Option<PoolState> = None;
    if strategy == Strategy::IemIncremental {
        let mut p = PoolState::new(fingerprint.clone());
        p.add_chunk(chunks[0].clone(), 0)?;
        pool = Some(p);
    }

    for stage in 1..chunks.len() {
        let started = Instant::now();
        let mut rng = harness.rng(strategy, stage);
        match strategy {
            Strategy::NaiveFinetune => {
                let records: Vec<&ExampleRecord> = chunks[stage].iter().collect();
                harness.plain_training(
                    &mut model,
                    &records,
                    iterations,
                    harness.iteration_steps(stage),
                    stage,
                    store,
                    &mut rng,
                    &mut trace,
                )?;
            }
            Strategy::BaselineFull => {
                model = ModelParams::zeros();
                let records: Vec<&ExampleRecord> = chunks[..=stage].iter().flatten().collect();
                for r in 0..=stage {
                    harness.plain_training(
                        &mut model,
                        &records,
                        iterations,
                        harness.iteration_steps(r),
                        stage,
                        store,
                        &mut rng,
                        &mut trace,
                    )?;
                }
            }
            Strategy::BaselineHem => {
                model = initial;
                let mut p = PoolState::new(fingerprint.clone());
                for (r, chunk) in chunks[..=stage].iter().enumerate() {
                    p.add_chunk(chunk.clone(), r)?;
                }
                p.refresh_errors(&model, &sel.scoring, store)?;
                for r in 1..=stage {
                    run_selection_iterations(
                        &mut p,
                        &mut model,
                        harness.partition_numbers[r],
                        iterations,
                        StepBudget::Fixed(harness.iteration_steps(r)),
                        sel,
                        &cfg.train,
                        store,
                        &mut rng,
                        stage,
                        &mut trace,
                    )?;
                }
                pool = Some(p);
            }
            Strategy::IemIncremental => {
                let p = pool.as_mut().expect("pool created at stage 0");
                let mut stage_sel = sel.clone();
                stage_sel.partition_number = Some(harness.partition_numbers[stage]);
                let outcome = incremental_step(
                    p,
                    &mut model,
                    &stage_sel,
                    &cfg.train,
                    chunks[stage].clone(),
                    store,
                    &mut rng,
                    StepBudget::Fixed(harness.iteration_steps(stage)),
                )?;
                trace.extend(outcome.trace);
            }
        }
        let elapsed = started.elapsed().as_secs_f64();
        rows.push(ReportRow::from_evaluation(
            strategy.name(),
            stage,
            &harness.evaluate(&model, store)?,
            seconds(elapsed),
            distinct_trained(&trace, stage),
        ));
    }

    Ok(RunOutcome {
        report: StrategyReport {
            strategy,
            seed: sel.seed,
            config_hash: fingerprint,
            rows,
        },
        model,
        pool,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(strategy: &str, stage: usize, f1: f64) -> ReportRow {
        ReportRow {
            strategy: strategy.into(),
            stage,
            precision: 0.5,
            recall: 0.25,
            f1,
            jaccard: 0.1,
            seconds: None,
            examples_trained: 10,
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!("iem".parse::<Strategy>().unwrap(), Strategy::IemIncremental);
        assert!("boost".parse::<Strategy>().is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut rows = vec![
            row("iem_incremental", 0, 1.0 / 3.0),
            row("iem_incremental", 1, 0.1 + 0.2),
        ];
        rows[1].seconds = Some(1.25);
        let text = rows_to_csv(&rows);
        assert!(text.starts_with("strategy,stage,precision,recall,f1,jaccard,seconds,examples_trained\n"));
        let back = parse_csv(&text, Path::new("r.csv")).unwrap();
        assert_eq!(back, rows);
        assert_eq!(rows_to_csv(&back), text);
    }

    #[test]
    fn csv_schema_errors_name_the_field() {
        let text = "strategy,stage,precision,recall,f1,seconds,examples_trained\n";
        match parse_csv(text, Path::new("r.csv")) {
            Err(Error::Schema(m)) => assert!(m.contains("`jaccard`"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
        let text = "strategy,stage,precision,recall,f1,jaccard,seconds,examples_trained,extra\n";
        assert!(matches!(parse_csv(text, Path::new("r.csv")), Err(Error::Schema(_))));
    }

    #[test]
    fn final_stage_selection() {
        let rows = vec![
            row("a", 0, 0.1),
            row("a", 1, 0.2),
            row("b", 0, 0.3),
            row("b", 1, 0.4),
            row("c", 1, 0.5),
            row("d", 0, 0.6),
        ];
        let finals = final_stage_rows(&rows);
        let f1s: Vec<_> = finals.iter().map(|r| r.f1).collect();
        assert_eq!(f1s, vec![0.2, 0.4, 0.5, 0.6]);
        let table = format_table(&finals);
        assert_eq!(table.lines().count(), 5);
    }
}
