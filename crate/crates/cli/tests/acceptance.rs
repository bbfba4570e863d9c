//! Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

#[path = "../../core/tests/support/mod.rs"]
mod oracles;

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use iem::metrics::{
    connected_components, evaluate_detection, f1_score, jaccard_index, match_lesions, mean_cross_entropy, Component,
};
use iem::selector::{seeded_rng, select_subset, SelectionRng};
use iem::synth::{default_scenario, generate_scenario};
use iem::trainer::{run_selection_iterations, StepBudget};
use iem::{
    Dims, ExampleRecord, GrayImage, Label, ModelParams, PixelMask, PoolState, ProbabilityMap, RunConfig, RunOptions,
    Sample, SampleStore, SelectionConfig, Strategy, TrainConfig,
};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.2}s, limit {limit_s}s", elapsed.as_secs_f64())
    })
}

fn random_mask(rng: &mut SelectionRng, dims: Dims, density: f64) -> PixelMask {
    PixelMask::new(dims, (0..dims.len()).map(|_| rng.random_bool(density)).collect()).unwrap()
}

fn metric_oracles() -> Outcome {
    let start = Instant::now();
    let dims = Dims::new(16, 16);
    let mut rng = seeded_rng(1);
    let mut max_dev: f64 = 0.0;
    for i in 0..200 {
        let density = rng.random_range(0.05..0.6);
        let a = random_mask(&mut rng, dims, density);
        let b = random_mask(&mut rng, dims, density);

        let ji = jaccard_index(&a, &b).map_err(|e| e.to_string())?;
        let dev = (ji - oracles::jaccard(&a, &b)).abs();
        max_dev = max_dev.max(dev);
        ensure(dev <= 1e-10, || format!("instance {i}: jaccard {ji} vs oracle"))?;

        let probs: Vec<f64> = (0..dims.len())
            .map(|_| {
                if rng.random_bool(0.05) {
                    rng.random_range(0..2) as f64
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        let p = ProbabilityMap::new(dims, probs).unwrap();
        let ce = mean_cross_entropy(&p, &a).map_err(|e| e.to_string())?;
        let dev = (ce - oracles::cross_entropy(&p, &a)).abs();
        max_dev = max_dev.max(dev);
        ensure(dev <= 1e-10, || format!("instance {i}: cross-entropy {ce} vs oracle"))?;

        let ca: Vec<Vec<usize>> = connected_components(&a).iter().map(|c| c.pixels().to_vec()).collect();
        let cb: Vec<Vec<usize>> = connected_components(&b).iter().map(|c| c.pixels().to_vec()).collect();
        ensure(ca == oracles::components(&a), || {
            format!("instance {i}: components differ")
        })?;
        ensure(cb == oracles::components(&b), || {
            format!("instance {i}: components differ")
        })?;

        let tau = [0.1, 0.3, 0.5, 0.75, 1.0][i % 5];
        let to_comp = |v: &[Vec<usize>]| v.iter().map(|c| Component::from_indices(c.clone())).collect::<Vec<_>>();
        let got = match_lesions(&to_comp(&ca), &to_comp(&cb), tau).map_err(|e| e.to_string())?;
        let (pairs, fp, fn_) = oracles::greedy_match(&ca, &cb, tau);
        let got_pairs: Vec<(usize, usize)> = got.matches.iter().map(|m| (m.pred, m.gt)).collect();
        ensure(got_pairs == pairs && got.fp() == fp && got.fn_() == fn_, || {
            format!("instance {i}: lesion matching differs at tau {tau}")
        })?;
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!(
        "200 instances x 4 metrics, max real deviation {max_dev:.1e}, {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let dims = Dims::new(8, 8);
    let mut rng = seeded_rng(2);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let image = GrayImage::new(dims, (0..64).map(|_| rng.random::<f64>()).collect()).unwrap();
        let mask = random_mask(&mut rng, dims, 0.3);
        let w: [f64; 4] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
        let grad = ModelParams::from_weights(w)
            .gradient(&image, &mask)
            .map_err(|e| e.to_string())?;
        let h = 1e-5;
        for k in 0..4 {
            let (mut plus, mut minus) = (w, w);
            plus[k] += h;
            minus[k] -= h;
            let numeric = (ModelParams::from_weights(plus).raw_loss(&image, &mask)
                - ModelParams::from_weights(minus).raw_loss(&image, &mask))
                / (2.0 * h);
            let rel = (grad[k] - numeric).abs() / grad[k].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            ensure(rel <= 1e-4, || {
                format!("instance {i} weight {k}: analytic {} vs numeric {numeric}", grad[k])
            })?;
        }
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!(
        "100 instances, worst relative error {worst:.1e}, {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

fn random_pool(rng: &mut SelectionRng) -> PoolState {
    let n = rng.random_range(0..=50);
    let mut pool = PoolState::new("acceptance");
    let records: Vec<ExampleRecord> = (0..n)
        .map(|i| {
            let label = if rng.random_bool(0.4) {
                Label::Positive
            } else {
                Label::Negative
            };
            ExampleRecord::new(format!("x{i:02}"), "img", "mask", label, 0)
        })
        .collect();
    pool.add_chunk(records, 0).unwrap();
    for i in 0..n {
        let id = format!("x{i:02}");
        let e = rng.random_range(0..6) as f64 * 0.25;
        pool.set_error(&id, e).unwrap();
        if rng.random_bool(0.15) {
            pool.record_training_update(&id, &[e], 0).unwrap();
        }
    }
    pool
}

fn selection_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded_rng(3);
    let mut selected = 0;
    for i in 0..500 {
        let pool = random_pool(&mut rng);
        let k = rng.random_range(1..=12);
        let seed: u64 = rng.random();
        let got = select_subset(&pool, k, &mut seeded_rng(seed)).map_err(|e| e.to_string())?;
        let want = oracles::select(&pool, k, &mut seeded_rng(seed));
        ensure(got == want, || format!("pool {i} (k={k}): {got} != {want}"))?;
        ensure(got.ids().all(|id| !pool.get(id).unwrap().dropped), || {
            format!("pool {i}: dropped example selected")
        })?;
        selected += got.len();
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!(
        "500 pools, {selected} selections identical, {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

fn dropping_behavior() -> Outcome {
    let d = 3;
    // Direct rig: the star is always the highest-error positive.
    let mut pool = PoolState::new("rig");
    let mut records = vec![ExampleRecord::new("star", "i", "m", Label::Positive, 0)];
    for i in 0..20 {
        records.push(ExampleRecord::new(format!("p{i:02}"), "i", "m", Label::Positive, 0));
        records.push(ExampleRecord::new(format!("n{i:02}"), "i", "m", Label::Negative, 0));
    }
    pool.add_chunk(records, 0).unwrap();
    pool.set_error("star", 100.0).unwrap();
    let mut rng = seeded_rng(4);
    let mut appearances = Vec::new();
    for iteration in 1..=8 {
        let subset = select_subset(&pool, 1, &mut rng).map_err(|e| e.to_string())?;
        if subset.contains("star") {
            appearances.push(iteration);
        }
        for id in subset.ids().map(str::to_string).collect::<Vec<_>>() {
            let e = if id == "star" { 100.0 } else { 0.0 };
            pool.record_training_update(&id, &[e], d).map_err(|e| e.to_string())?;
        }
    }
    ensure(appearances == [1, 2, 3, 4], || {
        format!("star selected at iterations {appearances:?}")
    })?;
    let star = pool.get("star").unwrap();
    ensure(star.dropped && star.error == 0.0 && star.count == d + 1, || {
        format!("star record {star:?}")
    })?;

    // Same rule through the training loop: a 1+1 pool with K = 1 selects both every iteration.
    let dims = Dims::new(6, 6);
    let mut store = SampleStore::new();
    let lesion = PixelMask::from_pixels(dims, &[(2, 2), (2, 3), (3, 2)]).unwrap();
    let img = GrayImage::new(
        dims,
        lesion.data().iter().map(|&on| if on { 0.8 } else { 0.2 }).collect(),
    )
    .unwrap();
    store.insert("pos", Sample::new(img, lesion).unwrap());
    store.insert(
        "neg",
        Sample::new(GrayImage::filled(dims, 0.2).unwrap(), PixelMask::empty(dims)).unwrap(),
    );
    let mut pool = PoolState::new("rig");
    pool.add_chunk(
        vec![
            ExampleRecord::new("pos", "i", "m", Label::Positive, 0),
            ExampleRecord::new("neg", "i", "m", Label::Negative, 0),
        ],
        0,
    )
    .unwrap();
    let sel = SelectionConfig {
        dropping_number: d,
        ..SelectionConfig::default()
    };
    let mut trace = Vec::new();
    let mut model = ModelParams::zeros();
    run_selection_iterations(
        &mut pool,
        &mut model,
        1,
        8,
        StepBudget::Fixed(2),
        &sel,
        &TrainConfig::default(),
        &mut store,
        &mut seeded_rng(5),
        1,
        &mut trace,
    )
    .map_err(|e| e.to_string())?;
    let with_pos: Vec<usize> = trace
        .iter()
        .filter(|t| t.trained.iter().any(|id| id == "pos"))
        .map(|t| t.iteration + 1)
        .collect();
    ensure(with_pos == [1, 2, 3, 4], || {
        format!("trainer selected pos at {with_pos:?}")
    })?;
    ensure(
        pool.get("pos").unwrap().dropped && pool.get("pos").unwrap().error == 0.0,
        || "pos not dropped after 4 appearances".into(),
    )?;
    Ok(format!("d={d}: selected at iterations 1-4 only, C=4, E=0"))
}

fn synthetic_stream() -> Outcome {
    let start = Instant::now();
    let seeds = 0..5u64;
    let (mut f1_iem, mut f1_naive, mut ji_iem, mut ji_hem) = (0.0, 0.0, 0.0, 0.0);
    for seed in seeds.clone() {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let index = generate_scenario(&default_scenario(seed), dir.path()).map_err(|e| e.to_string())?;
        let chunks = index.train_chunks().map_err(|e| e.to_string())?;
        let test = index.test_records().map_err(|e| e.to_string())?;
        let mut cfg = RunConfig::default();
        cfg.selection.seed = seed;
        let mut store = SampleStore::new();
        for strategy in Strategy::ALL {
            let out = iem::run_strategy(strategy, &chunks, &test, &cfg, &mut store, RunOptions::default())
                .map_err(|e| e.to_string())?;
            let last = out.report.final_row();
            match strategy {
                Strategy::IemIncremental => {
                    f1_iem += last.f1;
                    ji_iem += last.jaccard;
                }
                Strategy::NaiveFinetune => f1_naive += last.f1,
                Strategy::BaselineHem => ji_hem += last.jaccard,
                Strategy::BaselineFull => {}
            }
        }
    }
    let n = seeds.count() as f64;
    let (f1_iem, f1_naive, ji_iem, ji_hem) = (f1_iem / n, f1_naive / n, ji_iem / n, ji_hem / n);
    let summary = format!(
        "mean F1 iem {f1_iem:.4} vs naive {f1_naive:.4}; mean Jaccard iem {ji_iem:.4} vs hem {ji_hem:.4}; {:.1}s",
        start.elapsed().as_secs_f64()
    );
    ensure(f1_iem >= f1_naive + 0.05, || format!("F1 margin too small: {summary}"))?;
    ensure((ji_iem - ji_hem).abs() <= 0.03, || {
        format!("Jaccard gap too large: {summary}")
    })?;
    within(start.elapsed(), 300.0)?;
    Ok(summary)
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_iem"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!(
            "iem {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let p = |name: &str| root.join(name).display().to_string();
    run_cli(&["gen", "--out", &p("data"), "--seed", "11"])?;
    for run in ["a", "b"] {
        run_cli(&[
            "train",
            "--strategy",
            "iem",
            "--data",
            &p("data"),
            "--out",
            &p(run),
            "--seed",
            "11",
        ])?;
    }
    let read = |run: &str, file: &str| fs::read(Path::new(&p(run)).join(file)).map_err(|e| e.to_string());
    for file in ["pool.txt", "report.csv", "model.txt"] {
        ensure(read("a", file)? == read("b", file)?, || {
            format!("{file} differs between runs")
        })?;
    }
    Ok("pool.txt, report.csv and model.txt byte-identical across two runs".into())
}

fn table_arithmetic() -> Outcome {
    let direct = 100.0 * f1_score(0.53, 0.70);
    ensure((direct - 60.32).abs() <= 0.01, || format!("f1(0.53, 0.70) = {direct}"))?;

    // 371 TP, 329 FP, 159 FN: precision 0.53, recall 0.70, as isolated single-pixel lesions.
    let dims = Dims::new(16, 16);
    let mut kinds: Vec<u8> = [(0u8, 371), (1, 329), (2, 159)]
        .iter()
        .flat_map(|&(k, n)| std::iter::repeat_n(k, n))
        .collect();
    let (mut preds, mut gts) = (Vec::new(), Vec::new());
    while !kinds.is_empty() {
        let batch: Vec<u8> = kinds.drain(..kinds.len().min(64)).collect();
        let (mut pred, mut gt) = (PixelMask::empty(dims), PixelMask::empty(dims));
        for (site, kind) in batch.into_iter().enumerate() {
            let (r, c) = (2 * (site / 8), 2 * (site % 8));
            pred.set(r, c, kind != 2);
            gt.set(r, c, kind != 1);
        }
        preds.push(pred);
        gts.push(gt);
    }
    let scores = evaluate_detection(&preds, &gts, 0.5).map_err(|e| e.to_string())?;
    let f1 = 100.0 * scores.f1;
    ensure(
        (scores.precision - 0.53).abs() < 1e-12 && (scores.recall - 0.70).abs() < 1e-12,
        || format!("precision {} recall {}", scores.precision, scores.recall),
    )?;
    ensure((f1 - 60.32).abs() <= 0.01, || format!("F1 {f1:.4}"))?;
    Ok(format!("F1 {f1:.4} (direct {direct:.4})"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("metric oracles", metric_oracles),
        ("gradient check", gradient_check),
        ("selection equivalence", selection_equivalence),
        ("dropping behavior", dropping_behavior),
        ("synthetic stream comparison", synthetic_stream),
        ("determinism", determinism),
        ("table arithmetic", table_arithmetic),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
