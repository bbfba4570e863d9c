//! Loading image/mask pairs and the per-chunk manifest format.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::pool::{ExampleRecord, Label};
use crate::raster::{GrayImage, PixelMask};

pub const MANIFEST_FORMAT: &str = "iem-manifest/1";

/// A decoded image and its ground-truth mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: GrayImage,
    pub mask: PixelMask,
}

impl Sample {
    pub fn new(image: GrayImage, mask: PixelMask) -> Result<Self> {
        image.dims().ensure_same(mask.dims())?;
        Ok(Sample { image, mask })
    }
}

/// In-memory cache of decoded samples keyed by example id.
#[derive(Debug, Default, Clone)]
pub struct SampleStore {
    samples: HashMap<String, Sample>,
}

impl SampleStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers an already decoded sample.
    pub fn insert(&mut self, id: impl Into<String>, sample: Sample) {
        self.samples.insert(id.into(), sample);
    }

    pub fn contains(&self, id: &str) -> bool {
        self.samples.contains_key(id)
    }

    /// Reads the files behind `rec` unless cached. The label must agree with
    /// the mask: positive iff at least one pixel is on.
    pub fn load(&mut self, rec: &ExampleRecord) -> Result<&Sample> {
        if !self.samples.contains_key(&rec.id) {
            let image = GrayImage::read_pgm(&rec.image_ref)?;
            let mask = PixelMask::read_pgm(&rec.mask_ref)?;
            image.dims().ensure_same(mask.dims())?;
            if Label::from_mask_nonempty(mask.any()) != rec.label {
                return Err(Error::contract(format!(
                    "example `{}` is labeled {} but its mask {} disagrees",
                    rec.id,
                    rec.label,
                    rec.mask_ref.display()
                )));
            }
            self.samples.insert(rec.id.clone(), Sample { image, mask });
        }
        Ok(&self.samples[&rec.id])
    }

    pub fn load_all<'a>(&mut self, records: impl IntoIterator<Item = &'a ExampleRecord>) -> Result<()> {
        for rec in records {
            self.load(rec)?;
        }
        Ok(())
    }

    pub fn sample(&self, id: &str) -> Result<&Sample> {
        self.samples.get(id).ok_or_else(|| Error::UnknownId(id.to_string()))
    }
}

/// Writes a manifest. Paths are stored relative to `base` when possible.
pub fn write_manifest(path: &Path, base: &Path, records: &[ExampleRecord]) -> Result<()> {
    let mut out = format!("{MANIFEST_FORMAT}\n");
    for r in records {
        let rel = |p: &Path| -> Result<String> {
            let p = p.strip_prefix(base).unwrap_or(p);
            let s = p
                .to_str()
                .ok_or_else(|| Error::contract(format!("path {} is not UTF-8", p.display())))?;
            if s.contains(['\t', '\n']) {
                return Err(Error::contract(format!("path `{s}` contains tab/newline")));
            }
            Ok(s.replace('\\', "/"))
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.id,
            rel(&r.image_ref)?,
            rel(&r.mask_ref)?,
            r.label,
            r.chunk_index
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a manifest; relative paths resolve against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ExampleRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, MANIFEST_FORMAT)) => {}
        _ => return Err(Error::parse(path, 1, format!("expected `{MANIFEST_FORMAT}` header"))),
    }
    let mut records = Vec::new();
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::parse(
                path,
                n,
                format!("expected 5 tab-separated fields, found {}", fields.len()),
            ));
        }
        let resolve = |s: &str| -> PathBuf {
            let p = Path::new(s);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let label = fields[3].parse().map_err(|m: String| Error::parse(path, n, m))?;
        let chunk = fields[4]
            .parse()
            .map_err(|e| Error::parse(path, n, format!("bad chunk index: {e}")))?;
        records.push(ExampleRecord::new(
            fields[0],
            resolve(fields[1]),
            resolve(fields[2]),
            label,
            chunk,
        ));
    }
    Ok(records)
}
