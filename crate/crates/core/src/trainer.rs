//! SGD training, augmentation and the incremental-step orchestration.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::{AugmentRecipe, SelectionConfig, TrainConfig};
use crate::dataset::{Sample, SampleStore};
use crate::error::{Error, Result};
use crate::metrics::{score_prediction, ScoringConfig};
use crate::model::Segmenter;
use crate::pool::{ExampleRecord, PoolState};
use crate::raster::{GrayImage, PixelMask};
use crate::selector::{compute_partition_number, select_subset, SelectedSubset, SelectionRng};

/// The four augmented views, cycled by view index `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentView {
    Identity,
    HorizontalFlip,
    VerticalFlip,
    Jitter,
}

impl AugmentView {
    /// View for the 1-based index `j`.
    pub fn for_index(j: usize) -> Self {
        match (j - 1) % 4 {
            0 => AugmentView::Identity,
            1 => AugmentView::HorizontalFlip,
            2 => AugmentView::VerticalFlip,
            _ => AugmentView::Jitter,
        }
    }
}

fn apply_view(
    image: &GrayImage,
    mask: &PixelMask,
    recipe: &AugmentRecipe,
    view: AugmentView,
    jitter: f64,
) -> (GrayImage, PixelMask) {
    match view {
        AugmentView::HorizontalFlip if recipe.horizontal_flip => (image.flip_horizontal(), mask.flip_horizontal()),
        AugmentView::VerticalFlip if recipe.vertical_flip => (image.flip_vertical(), mask.flip_vertical()),
        AugmentView::Jitter if recipe.jitter > 0.0 => (image.map_clamped(|v| v + jitter), mask.clone()),
        _ => (image.clone(), mask.clone()),
    }
}

/// Training-time augmentation: view `j` (1-based) of the pair. Geometric
/// views transform image and mask together; the jitter view adds a global
/// offset drawn uniformly from `[-jitter, jitter]` to the image only.
pub fn augment<R: Rng + ?Sized>(
    image: &GrayImage,
    mask: &PixelMask,
    recipe: &AugmentRecipe,
    rng: &mut R,
    j: usize,
) -> Result<(GrayImage, PixelMask)> {
    if j == 0 {
        return Err(Error::contract("augmentation index is 1-based"));
    }
    let view = AugmentView::for_index(j);
    let jitter = if view == AugmentView::Jitter && recipe.jitter > 0.0 {
        rng.random_range(-recipe.jitter..=recipe.jitter)
    } else {
        0.0
    };
    Ok(apply_view(image, mask, recipe, view, jitter))
}

/// Deterministic view `j` used when scoring examples: the jitter view shifts
/// by exactly `+jitter`, so every per-view error can be recomputed from the
/// saved parameters alone.
pub fn evaluation_view(
    image: &GrayImage,
    mask: &PixelMask,
    recipe: &AugmentRecipe,
    j: usize,
) -> Result<(GrayImage, PixelMask)> {
    if j == 0 {
        return Err(Error::contract("augmentation index is 1-based"));
    }
    Ok(apply_view(
        image,
        mask,
        recipe,
        AugmentView::for_index(j),
        recipe.jitter,
    ))
}

/// Error terms of one example over views `1..=t`.
pub fn augmented_errors<M: Segmenter>(
    model: &M,
    sample: &Sample,
    scoring: &ScoringConfig,
    recipe: &AugmentRecipe,
    t: usize,
) -> Result<Vec<f64>> {
    (1..=t)
        .map(|j| {
            let (img, mask) = evaluation_view(&sample.image, &sample.mask, recipe, j)?;
            Ok(score_prediction(&model.forward(&img), &mask, scoring)?.error)
        })
        .collect()
}

/// Runs exactly `steps` single-example SGD updates, walking the examples in
/// freshly shuffled order on each pass. Every update sees one randomly
/// chosen augmented view out of `t`.
pub fn train_steps<M: Segmenter>(
    model: &mut M,
    samples: &[&Sample],
    steps: usize,
    cfg: &TrainConfig,
    t: usize,
    rng: &mut SelectionRng,
) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::contract("cannot train on an empty subset"));
    }
    if t == 0 {
        return Err(Error::contract("augmentation count must be >= 1"));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut done = 0;
    while done < steps {
        order.shuffle(rng);
        for &i in order.iter().take(steps - done) {
            let j = rng.random_range(1..=t);
            let (img, mask) = augment(&samples[i].image, &samples[i].mask, &cfg.augment, rng, j)?;
            model.sgd_step(&img, &mask, cfg.learning_rate)?;
            done += 1;
        }
    }
    Ok(())
}

/// `epochs_per_iteration` shuffled passes over the subset, one augmented view
/// per example per pass.
pub fn train_on_subset<M: Segmenter>(
    model: &mut M,
    samples: &[&Sample],
    cfg: &TrainConfig,
    t: usize,
    rng: &mut SelectionRng,
) -> Result<()> {
    train_steps(model, samples, samples.len() * cfg.epochs_per_iteration, cfg, t, rng)
}

/// One line of the selection/training audit trail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub stage: usize,
    pub iteration: usize,
    /// Present for selection-driven iterations.
    pub subset: Option<SelectedSubset>,
    /// Ids trained on in this iteration.
    pub trained: Vec<String>,
    pub sgd_steps: usize,
}

impl TraceEntry {
    pub fn to_line(&self) -> String {
        let mut line = format!(
            "stage={}\titer={}\tsize={}\tsteps={}",
            self.stage,
            self.iteration,
            self.trained.len(),
            self.sgd_steps
        );
        match &self.subset {
            Some(s) => line.push_str(&format!("\t{s}")),
            None => line.push_str(&format!("\tids={}", self.trained.join(","))),
        }
        line
    }
}

/// Summary of one selection-driven training stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub stage: usize,
    pub partition_number: usize,
    pub trace: Vec<TraceEntry>,
}

impl StepOutcome {
    pub fn examples_trained(&self) -> usize {
        self.trace.iter().map(|t| t.trained.len()).sum()
    }

    pub fn sgd_steps(&self) -> usize {
        self.trace.iter().map(|t| t.sgd_steps).sum()
    }
}

/// How many SGD steps each selection iteration performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepBudget {
    /// `epochs_per_iteration` passes over whatever was selected.
    Epochs,
    /// A fixed number of steps regardless of subset size.
    Fixed(usize),
}

/// Runs `iterations` rounds of select → train → per-example error update on
/// the pool, appending to `trace`.
#[allow(clippy::too_many_arguments)]
pub fn run_selection_iterations<M: Segmenter>(
    pool: &mut PoolState,
    model: &mut M,
    k: usize,
    iterations: usize,
    budget: StepBudget,
    sel: &SelectionConfig,
    train: &TrainConfig,
    store: &mut SampleStore,
    rng: &mut SelectionRng,
    stage: usize,
    trace: &mut Vec<TraceEntry>,
) -> Result<()> {
    for _ in 0..iterations {
        let iteration = trace.len();
        let subset = select_subset(pool, k, rng)?;
        if subset.is_empty() {
            trace.push(TraceEntry {
                stage,
                iteration,
                subset: Some(subset),
                trained: Vec::new(),
                sgd_steps: 0,
            });
            continue;
        }
        let mut ids: Vec<String> = subset.ids().map(str::to_string).collect();
        let steps = match budget {
            StepBudget::Epochs => ids.len() * train.epochs_per_iteration,
            StepBudget::Fixed(n) => n,
        };
        {
            let samples = ids.iter().map(|id| store.sample(id)).collect::<Result<Vec<_>>>()?;
            train_steps(model, &samples, steps, train, sel.augmentations, rng)?;
        }

        ids.sort();
        let mut updates = Vec::with_capacity(ids.len());
        for id in &ids {
            let errors = augmented_errors(
                model,
                store.sample(id)?,
                &sel.scoring,
                &train.augment,
                sel.augmentations,
            )?;
            updates.push(errors);
        }
        for (id, errors) in ids.iter().zip(&updates) {
            pool.record_training_update(id, errors, sel.dropping_number)?;
        }

        trace.push(TraceEntry {
            stage,
            iteration,
            trained: subset.ids().map(str::to_string).collect(),
            subset: Some(subset),
            sgd_steps: steps,
        });
    }
    Ok(())
}

/// One incremental stage: add the new chunk to the pool, derive K, refresh
/// every active error term with the current model, then run the configured
/// number of select/train/update iterations.
#[allow(clippy::too_many_arguments)]
pub fn incremental_step<M: Segmenter>(
    pool: &mut PoolState,
    model: &mut M,
    sel: &SelectionConfig,
    train: &TrainConfig,
    new_chunk: Vec<ExampleRecord>,
    store: &mut SampleStore,
    rng: &mut SelectionRng,
    budget: StepBudget,
) -> Result<StepOutcome> {
    sel.validate()?;
    train.validate()?;
    let k = match sel.partition_number {
        Some(k) => k,
        None => compute_partition_number(&new_chunk)?,
    };
    let stage = pool.stage().map_or(0, |s| s + 1);
    store.load_all(new_chunk.iter())?;
    pool.add_chunk(new_chunk, stage)?;
    pool.refresh_errors(model, &sel.scoring, store)?;

    let mut trace = Vec::new();
    run_selection_iterations(
        pool,
        model,
        k,
        sel.iterations_per_step,
        budget,
        sel,
        train,
        store,
        rng,
        stage,
        &mut trace,
    )?;
    Ok(StepOutcome {
        stage,
        partition_number: k,
        trace,
    })
}
