//! Hyperparameters and the `key=value` configuration file format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::{ErrorVariant, ErrorWeights, ScoringConfig};

/// Subset-selection and error-bookkeeping hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    /// Fixed partition number K. `None` derives K per stage from the count of
    /// positives in the newest chunk.
    pub partition_number: Option<usize>,
    /// Dropping number d: an example selected more than `d` times is dropped.
    pub dropping_number: usize,
    /// Augmented views t averaged into each error update.
    pub augmentations: usize,
    pub iterations_per_step: usize,
    pub scoring: ScoringConfig,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            partition_number: None,
            dropping_number: 10,
            augmentations: 4,
            iterations_per_step: 5,
            scoring: ScoringConfig::default(),
            seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.partition_number == Some(0) {
            return Err(Error::contract("partition number must be >= 1"));
        }
        if self.dropping_number == 0 {
            return Err(Error::contract("dropping number must be >= 1"));
        }
        if self.augmentations == 0 {
            return Err(Error::contract("augmentation count must be >= 1"));
        }
        if self.iterations_per_step == 0 {
            return Err(Error::contract("iterations per step must be >= 1"));
        }
        let s = &self.scoring;
        if !(s.tau > 0.0 && s.tau <= 1.0) {
            return Err(Error::contract(format!("tau {} outside (0, 1]", s.tau)));
        }
        if !(s.binarize_threshold > 0.0 && s.binarize_threshold < 1.0) {
            return Err(Error::contract(format!(
                "binarize threshold {} outside (0, 1)",
                s.binarize_threshold
            )));
        }
        for (name, w) in [("fp", s.weights.fp), ("fn", s.weights.fn_), ("ji", s.weights.ji)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::contract(format!("weight_{name} {w} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Short stable digest of every field, stored alongside pool state and
    /// reports.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest[..8].iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    fn canonical(&self) -> String {
        let s = &self.scoring;
        format!(
            "partition_number={}\ndropping_number={}\naugmentations={}\niterations_per_step={}\n\
             tau={:e}\nvariant={}\nbinarize_threshold={:e}\nweight_fp={:e}\nweight_fn={:e}\n\
             weight_ji={:e}\nseed={}\n",
            self.partition_number
                .map_or_else(|| "auto".to_string(), |k| k.to_string()),
            self.dropping_number,
            self.augmentations,
            self.iterations_per_step,
            s.tau,
            s.variant,
            s.binarize_threshold,
            s.weights.fp,
            s.weights.fn_,
            s.weights.ji,
            self.seed
        )
    }
}

/// Geometric and photometric augmentations available to the trainer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentRecipe {
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
    /// Maximum absolute global intensity offset.
    pub jitter: f64,
}

impl AugmentRecipe {
    pub fn identity() -> Self {
        AugmentRecipe {
            horizontal_flip: false,
            vertical_flip: false,
            jitter: 0.0,
        }
    }
}

impl Default for AugmentRecipe {
    fn default() -> Self {
        AugmentRecipe {
            horizontal_flip: true,
            vertical_flip: true,
            jitter: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs_per_iteration: usize,
    pub augment: AugmentRecipe,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            epochs_per_iteration: 4,
            augment: AugmentRecipe::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::contract(format!(
                "learning rate {} must be finite and >= 0",
                self.learning_rate
            )));
        }
        if self.epochs_per_iteration == 0 {
            return Err(Error::contract("epochs per iteration must be >= 1"));
        }
        if !(self.augment.jitter >= 0.0 && self.augment.jitter <= 1.0) {
            return Err(Error::contract(format!(
                "jitter {} outside [0, 1]",
                self.augment.jitter
            )));
        }
        Ok(())
    }
}

/// Everything a training run needs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub selection: SelectionConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.selection.validate()?;
        self.train.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parses `key=value` lines; `#` starts a comment. Unknown keys are errors.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, line_no, format!("expected key=value, got `{line}`")))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|msg| Error::parse(origin, line_no, msg))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one option by name.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e| format!("bad value `{v}` for {key}: {e}"))
        }
        let sel = &mut self.selection;
        let tr = &mut self.train;
        match key {
            "seed" => sel.seed = num(key, value)?,
            "partition_number" => sel.partition_number = if value == "auto" { None } else { Some(num(key, value)?) },
            "dropping_number" => sel.dropping_number = num(key, value)?,
            "augmentations" => sel.augmentations = num(key, value)?,
            "iterations_per_step" => sel.iterations_per_step = num(key, value)?,
            "tau" => sel.scoring.tau = num(key, value)?,
            "variant" => sel.scoring.variant = value.parse()?,
            "binarize_threshold" => sel.scoring.binarize_threshold = num(key, value)?,
            "weight_fp" => sel.scoring.weights.fp = num(key, value)?,
            "weight_fn" => sel.scoring.weights.fn_ = num(key, value)?,
            "weight_ji" => sel.scoring.weights.ji = num(key, value)?,
            "learning_rate" => tr.learning_rate = num(key, value)?,
            "epochs_per_iteration" => tr.epochs_per_iteration = num(key, value)?,
            "horizontal_flip" => tr.augment.horizontal_flip = num(key, value)?,
            "vertical_flip" => tr.augment.vertical_flip = num(key, value)?,
            "jitter" => tr.augment.jitter = num(key, value)?,
            other => return Err(format!("unknown config key `{other}`")),
        }
        Ok(())
    }
}

impl ScoringConfig {
    pub fn with_variant(mut self, variant: ErrorVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_weights(mut self, weights: ErrorWeights) -> Self {
        self.weights = weights;
        self
    }
}
