//! The cumulative example pool: every example seen so far together with its
//! error term, selection count and dropped flag.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::SampleStore;
use crate::error::{Error, Result};
use crate::metrics::{score_prediction, ScoringConfig};
use crate::model::Segmenter;

pub const POOL_FORMAT: &str = "iem-pool/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    pub fn from_mask_nonempty(nonempty: bool) -> Self {
        if nonempty {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "positive" => Ok(Label::Positive),
            "negative" => Ok(Label::Negative),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

/// One pool entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleRecord {
    pub id: String,
    pub image_ref: PathBuf,
    pub mask_ref: PathBuf,
    pub label: Label,
    /// Incremental stage that delivered this example (0 = initial set).
    pub chunk_index: usize,
    /// Current error term E.
    pub error: f64,
    /// Number of training subsets this example has been selected into.
    pub count: usize,
    pub dropped: bool,
}

impl ExampleRecord {
    pub fn new(
        id: impl Into<String>,
        image_ref: impl Into<PathBuf>,
        mask_ref: impl Into<PathBuf>,
        label: Label,
        chunk_index: usize,
    ) -> Self {
        ExampleRecord {
            id: id.into(),
            image_ref: image_ref.into(),
            mask_ref: mask_ref.into(),
            label,
            chunk_index,
            error: 0.0,
            count: 0,
            dropped: false,
        }
    }

    pub fn is_active(&self) -> bool {
        !self.dropped
    }
}

/// Pool of examples across incremental stages.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolState {
    records: Vec<ExampleRecord>,
    index: HashMap<String, usize>,
    stage: Option<usize>,
    config_hash: String,
}

impl PoolState {
    pub fn new(config_hash: impl Into<String>) -> Self {
        PoolState {
            records: Vec::new(),
            index: HashMap::new(),
            stage: None,
            config_hash: config_hash.into(),
        }
    }

    pub fn records(&self) -> &[ExampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn active_len(&self) -> usize {
        self.records.iter().filter(|r| r.is_active()).count()
    }

    /// Index of the latest chunk added, `None` for a fresh pool.
    pub fn stage(&self) -> Option<usize> {
        self.stage
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn get(&self, id: &str) -> Option<&ExampleRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    /// Appends a chunk of new examples with fresh bookkeeping (E = 0, C = 0).
    /// The first chunk must have index 0; later ones must follow the current
    /// stage consecutively.
    pub fn add_chunk(&mut self, examples: Vec<ExampleRecord>, chunk_index: usize) -> Result<()> {
        let expected = self.stage.map_or(0, |s| s + 1);
        if chunk_index != expected {
            return Err(Error::ChunkOutOfSequence {
                got: chunk_index,
                expected: expected.to_string(),
            });
        }
        let mut fresh = HashMap::with_capacity(examples.len());
        for (offset, ex) in examples.iter().enumerate() {
            if self.index.contains_key(&ex.id) || fresh.insert(ex.id.clone(), offset).is_some() {
                return Err(Error::DuplicateId(ex.id.clone()));
            }
        }
        let base = self.records.len();
        for (id, offset) in fresh {
            self.index.insert(id, base + offset);
        }
        self.records.extend(examples.into_iter().map(|mut ex| {
            ex.chunk_index = chunk_index;
            ex.error = 0.0;
            ex.count = 0;
            ex.dropped = false;
            ex
        }));
        self.stage = Some(chunk_index);
        Ok(())
    }

    /// Recomputes E for every active example with one unaugmented forward
    /// pass. Dropped examples keep E = 0.
    pub fn refresh_errors<M: Segmenter>(
        &mut self,
        model: &M,
        scoring: &ScoringConfig,
        store: &mut SampleStore,
    ) -> Result<()> {
        store.load_all(self.records.iter())?;
        let mut fresh = Vec::with_capacity(self.records.len());
        for rec in self.records.iter().filter(|r| r.is_active()) {
            let sample = store.sample(&rec.id)?;
            let p = model.forward(&sample.image);
            fresh.push(score_prediction(&p, &sample.mask, scoring)?.error);
        }
        for (rec, e) in self.records.iter_mut().filter(|r| r.is_active()).zip(fresh) {
            rec.error = e;
        }
        Ok(())
    }

    /// Applies one post-training update: E becomes the mean of the
    /// per-augmentation errors and C increments. Once C exceeds `d` the
    /// example is dropped and its E pinned to 0.
    pub fn record_training_update(&mut self, id: &str, per_augmentation_errors: &[f64], d: usize) -> Result<()> {
        let &i = self.index.get(id).ok_or_else(|| Error::UnknownId(id.to_string()))?;
        if per_augmentation_errors.is_empty() {
            return Err(Error::contract("at least one augmentation error is required"));
        }
        if let Some(bad) = per_augmentation_errors.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
            return Err(Error::contract(format!("error term {bad} must be finite and >= 0")));
        }
        let rec = &mut self.records[i];
        if rec.dropped {
            return Err(Error::AlreadyDropped(id.to_string()));
        }
        rec.error = per_augmentation_errors.iter().sum::<f64>() / per_augmentation_errors.len() as f64;
        rec.count += 1;
        if rec.count > d {
            rec.dropped = true;
            rec.error = 0.0;
        }
        Ok(())
    }

    /// Active records split by label, each in pool order.
    pub fn partition_by_label(&self) -> (Vec<&ExampleRecord>, Vec<&ExampleRecord>) {
        self.records
            .iter()
            .filter(|r| r.is_active())
            .partition(|r| r.label.is_positive())
    }

    /// Overwrites E for one record. Test and tooling support; dropped
    /// records refuse nonzero values.
    pub fn set_error(&mut self, id: &str, error: f64) -> Result<()> {
        let &i = self.index.get(id).ok_or_else(|| Error::UnknownId(id.to_string()))?;
        if !(error >= 0.0 && error.is_finite()) {
            return Err(Error::contract(format!("error term {error} must be finite and >= 0")));
        }
        let rec = &mut self.records[i];
        if rec.dropped && error != 0.0 {
            return Err(Error::AlreadyDropped(id.to_string()));
        }
        rec.error = error;
        Ok(())
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = format!(
            "{POOL_FORMAT}\tconfig={}\tstage={}\trecords={}\n",
            self.config_hash,
            self.stage.map_or_else(|| "none".to_string(), |s| s.to_string()),
            self.records.len()
        );
        for r in &self.records {
            let image = path_field(&r.image_ref)?;
            let mask = path_field(&r.mask_ref)?;
            check_field(&r.id)?;
            out.push_str(&format!(
                "id={}\timage_ref={}\tmask_ref={}\tlabel={}\tchunk={}\tE={:.16e}\tC={}\tdropped={}\n",
                r.id, image, mask, r.label, r.chunk_index, r.error, r.count, r.dropped
            ));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }

    /// Parses the line-delimited pool format. Either the whole pool parses
    /// or an error names the first bad line.
    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::parse(origin, line, msg);
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty pool file".into()))?;
        let mut hf = header.split('\t');
        if hf.next() != Some(POOL_FORMAT) {
            return Err(err(1, format!("expected `{POOL_FORMAT}` header")));
        }
        let config_hash = expect_key(hf.next(), "config").map_err(|m| err(1, m))?.to_string();
        let stage = match expect_key(hf.next(), "stage").map_err(|m| err(1, m))? {
            "none" => None,
            s => Some(s.parse().map_err(|e| err(1, format!("bad stage: {e}")))?),
        };
        let declared: usize = expect_key(hf.next(), "records")
            .map_err(|m| err(1, m))?
            .parse()
            .map_err(|e| err(1, format!("bad record count: {e}")))?;

        let mut pool = PoolState::new(config_hash);
        pool.stage = stage;
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let rec = parse_record(line).map_err(|m| err(n, m))?;
            if pool.index.insert(rec.id.clone(), pool.records.len()).is_some() {
                return Err(Error::DuplicateId(rec.id));
            }
            pool.records.push(rec);
        }
        if pool.records.len() != declared {
            return Err(err(
                text.lines().count().max(1),
                format!(
                    "header declares {declared} records, found {} (truncated file?)",
                    pool.records.len()
                ),
            ));
        }
        Ok(pool)
    }
}

fn check_field(s: &str) -> Result<()> {
    if s.is_empty() || s.contains(['\t', '\n', '\r']) {
        return Err(Error::contract(format!("field `{s}` is empty or contains tab/newline")));
    }
    Ok(())
}

fn path_field(p: &Path) -> Result<&str> {
    let s = p
        .to_str()
        .ok_or_else(|| Error::contract(format!("path {} is not UTF-8", p.display())))?;
    check_field(s)?;
    Ok(s)
}

fn expect_key<'a>(field: Option<&'a str>, key: &str) -> std::result::Result<&'a str, String> {
    let field = field.ok_or_else(|| format!("missing `{key}` field"))?;
    match field.split_once('=') {
        Some((k, v)) if k == key => Ok(v),
        _ => Err(format!("expected `{key}=...`, got `{field}`")),
    }
}

fn parse_record(line: &str) -> std::result::Result<ExampleRecord, String> {
    let mut f = line.split('\t');
    let id = expect_key(f.next(), "id")?.to_string();
    let image_ref = PathBuf::from(expect_key(f.next(), "image_ref")?);
    let mask_ref = PathBuf::from(expect_key(f.next(), "mask_ref")?);
    let label = expect_key(f.next(), "label")?.parse()?;
    let chunk_index = expect_key(f.next(), "chunk")?
        .parse()
        .map_err(|e| format!("bad chunk: {e}"))?;
    let error: f64 = expect_key(f.next(), "E")?.parse().map_err(|e| format!("bad E: {e}"))?;
    let count = expect_key(f.next(), "C")?.parse().map_err(|e| format!("bad C: {e}"))?;
    let dropped = expect_key(f.next(), "dropped")?
        .parse()
        .map_err(|e| format!("bad dropped flag: {e}"))?;
    if let Some(extra) = f.next() {
        return Err(format!("unexpected trailing field `{extra}`"));
    }
    if id.is_empty() {
        return Err("empty id".into());
    }
    if !(error >= 0.0 && error.is_finite()) {
        return Err(format!("E = {error} must be finite and >= 0"));
    }
    if dropped && error != 0.0 {
        return Err(format!("dropped record `{id}` has nonzero E"));
    }
    Ok(ExampleRecord {
        id,
        image_ref,
        mask_ref,
        label,
        chunk_index,
        error,
        count,
        dropped,
    })
}
