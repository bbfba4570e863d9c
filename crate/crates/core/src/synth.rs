//! Synthetic lesion datasets delivered as incremental chunks.
//!
//! Each image is a noisy flat background; positive images additionally carry
//! one or more separated axis-aligned elliptical blobs whose support is the
//! ground-truth mask. A per-chunk contrast/offset shift is applied after the
//! blobs are drawn, emulating acquisition drift between annotation batches.

use std::fs;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{read_manifest, write_manifest};
use crate::error::{Error, Result};
use crate::pool::{ExampleRecord, Label};
use crate::raster::{Dims, GrayImage, PixelMask};
use crate::selector::stream_rng;

pub const DATASET_FORMAT: &str = "iem-dataset/1";

/// Global intensity drift: `v' = contrast * v + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensityShift {
    pub offset: f64,
    pub contrast: f64,
}

impl IntensityShift {
    pub fn none() -> Self {
        IntensityShift {
            offset: 0.0,
            contrast: 1.0,
        }
    }
}

/// Recipe for one chunk of synthetic images.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkSpec {
    /// Directory name and id prefix.
    pub name: String,
    pub chunk_index: usize,
    pub n_images: usize,
    pub positive_fraction: f64,
    pub image_size: Dims,
    pub blob_count_range: RangeInclusive<usize>,
    pub blob_radius_range: RangeInclusive<f64>,
    pub blob_intensity_delta: f64,
    pub background_level: f64,
    pub background_noise_sigma: f64,
    /// Shift styles; image `i` uses `shifts[i % shifts.len()]`.
    pub shifts: Vec<IntensityShift>,
    pub seed: u64,
}

impl ChunkSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::contract(m));
        if self.n_images == 0 {
            return bad("chunk must contain at least one image".into());
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) {
            return bad(format!("positive fraction {} outside [0, 1]", self.positive_fraction));
        }
        if self.image_size.width < 5 || self.image_size.height < 5 {
            return bad("images must be at least 5x5".into());
        }
        if self.blob_count_range.is_empty() || *self.blob_count_range.start() == 0 {
            return bad("blob count range must be nonempty and start at >= 1".into());
        }
        let (rmin, rmax) = (*self.blob_radius_range.start(), *self.blob_radius_range.end());
        if !(rmin >= 1.0 && rmin <= rmax) {
            return bad(format!(
                "blob radius range {rmin}..={rmax} invalid (need 1 <= min <= max)"
            ));
        }
        let max_r = (self.image_size.width.min(self.image_size.height) as f64 - 3.0) / 2.0;
        if rmax.floor() > max_r {
            return bad(format!("blob radius {rmax} does not fit a {:?} image", self.image_size));
        }
        if self.background_noise_sigma.is_nan() || self.background_noise_sigma < 0.0 {
            return bad("noise sigma must be >= 0".into());
        }
        if self.shifts.is_empty() || self.shifts.iter().any(|s| s.contrast.is_nan() || s.contrast <= 0.0) {
            return bad("need at least one shift style with contrast > 0".into());
        }
        Ok(())
    }

    pub fn positive_count(&self) -> usize {
        (self.n_images as f64 * self.positive_fraction).floor() as usize
    }
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    cy: usize,
    cx: usize,
    ry: f64,
    rx: f64,
}

impl Blob {
    fn contains(&self, r: usize, c: usize) -> bool {
        let dy = (r as f64 - self.cy as f64) / self.ry;
        let dx = (c as f64 - self.cx as f64) / self.rx;
        dy * dy + dx * dx <= 1.0
    }

    /// Inclusive bounding box (r0, c0, r1, c1).
    fn bbox(&self) -> (usize, usize, usize, usize) {
        let (hy, hx) = (self.ry.floor() as usize, self.rx.floor() as usize);
        (self.cy - hy, self.cx - hx, self.cy + hy, self.cx + hx)
    }

    /// Boxes separated by at least one empty pixel in both directions.
    fn well_separated(&self, other: &Blob) -> bool {
        let (a0, a1, a2, a3) = self.bbox();
        let (b0, b1, b2, b3) = other.bbox();
        a2 + 2 <= b0 || b2 + 2 <= a0 || a3 + 2 <= b1 || b3 + 2 <= a1
    }
}

fn place_blobs<R: Rng>(spec: &ChunkSpec, rng: &mut R) -> Vec<Blob> {
    let Dims { width, height } = spec.image_size;
    let wanted = rng.random_range(spec.blob_count_range.clone());
    let mut blobs: Vec<Blob> = Vec::with_capacity(wanted);
    let mut attempts = 0;
    while blobs.len() < wanted && attempts < 200 {
        attempts += 1;
        let ry = rng.random_range(spec.blob_radius_range.clone());
        let rx = rng.random_range(spec.blob_radius_range.clone());
        let (hy, hx) = (ry.floor() as usize, rx.floor() as usize);
        // One pixel of margin to the border.
        let cy = rng.random_range(hy + 1..=height - 2 - hy);
        let cx = rng.random_range(hx + 1..=width - 2 - hx);
        let blob = Blob { cy, cx, ry, rx };
        if blobs.iter().all(|b| b.well_separated(&blob)) {
            blobs.push(blob);
        }
    }
    blobs
}

/// One generated example with the shift style it was rendered in.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedExample {
    pub record: ExampleRecord,
    pub style: usize,
    pub blob_count: usize,
}

/// Renders the image and mask of example `i` in memory.
pub fn render_example(spec: &ChunkSpec, i: usize, positive: bool) -> Result<(GrayImage, PixelMask, usize)> {
    let dims = spec.image_size;
    let mut rng = stream_rng(spec.seed, i as u64 + 1);
    let noise = Normal::new(0.0, spec.background_noise_sigma)
        .map_err(|e| Error::contract(format!("noise distribution: {e}")))?;
    let mut values: Vec<f64> = (0..dims.len())
        .map(|_| spec.background_level + noise.sample(&mut rng))
        .collect();
    let mut mask = PixelMask::empty(dims);
    let blobs = if positive {
        place_blobs(spec, &mut rng)
    } else {
        Vec::new()
    };
    for blob in &blobs {
        let (r0, c0, r1, c1) = blob.bbox();
        for r in r0..=r1 {
            for c in c0..=c1 {
                if blob.contains(r, c) {
                    mask.set(r, c, true);
                    values[dims.index(r, c)] += spec.blob_intensity_delta;
                }
            }
        }
    }
    let shift = spec.shifts[i % spec.shifts.len()];
    for v in &mut values {
        *v = (shift.contrast * *v + shift.offset).clamp(0.0, 1.0);
    }
    Ok((GrayImage::new(dims, values)?, mask, blobs.len()))
}

/// Which images of the chunk carry lesions.
fn positive_flags(spec: &ChunkSpec) -> Vec<bool> {
    let mut flags: Vec<bool> = (0..spec.n_images).map(|i| i < spec.positive_count()).collect();
    flags.shuffle(&mut stream_rng(spec.seed, 0));
    flags
}

/// Writes the chunk's PGM pairs and manifest under `out_dir/<name>/`.
pub fn generate_chunk(spec: &ChunkSpec, out_dir: &Path) -> Result<Vec<GeneratedExample>> {
    spec.validate()?;
    let dir = out_dir.join(&spec.name);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut out = Vec::with_capacity(spec.n_images);
    for (i, positive) in positive_flags(spec).into_iter().enumerate() {
        let (image, mask, blob_count) = render_example(spec, i, positive)?;
        let image_ref = dir.join(format!("img_{i:04}.pgm"));
        let mask_ref = dir.join(format!("mask_{i:04}.pgm"));
        image.write_pgm(&image_ref)?;
        mask.write_pgm(&mask_ref)?;
        let label = Label::from_mask_nonempty(mask.any());
        out.push(GeneratedExample {
            record: ExampleRecord::new(
                format!("{}_{i:04}", spec.name),
                image_ref,
                mask_ref,
                label,
                spec.chunk_index,
            ),
            style: i % spec.shifts.len(),
            blob_count,
        });
    }
    let records: Vec<ExampleRecord> = out.iter().map(|g| g.record.clone()).collect();
    write_manifest(&dir.join("manifest.tsv"), &dir, &records)?;
    Ok(out)
}

/// Training chunks in arrival order plus a held-out test chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub train: Vec<ChunkSpec>,
    pub test: ChunkSpec,
}

/// Offsets of the five acquisition styles, one per training chunk.
pub const DEFAULT_SHIFT_OFFSETS: [f64; 5] = [0.0, 0.05, 0.10, 0.15, 0.20];

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Initial chunk of 200 followed by four chunks of 50, each in a brighter
/// acquisition style than the last, and a 60-image test chunk cycling
/// through all five styles.
pub fn default_scenario(seed: u64) -> Scenario {
    let base = |name: String, chunk_index: usize, n_images: usize, shifts: Vec<IntensityShift>| ChunkSpec {
        seed: mix_seed(seed, chunk_index as u64 + 1),
        name,
        chunk_index,
        n_images,
        positive_fraction: 0.5,
        image_size: Dims::new(32, 32),
        blob_count_range: 1..=3,
        blob_radius_range: 2.0..=5.0,
        blob_intensity_delta: 0.4,
        background_level: 0.2,
        background_noise_sigma: 0.04,
        shifts,
    };
    let styles: Vec<IntensityShift> = DEFAULT_SHIFT_OFFSETS
        .iter()
        .map(|&offset| IntensityShift { offset, contrast: 1.0 })
        .collect();
    let sizes = [200, 50, 50, 50, 50];
    let train = sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| base(format!("chunk{i}"), i, n, vec![styles[i]]))
        .collect();
    let mut test = base("test".into(), 0, 60, styles);
    test.seed = mix_seed(seed, 0xDEAD_BEEF);
    Scenario { train, test }
}

/// Paths of a generated dataset on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub train: Vec<PathBuf>,
    pub test: PathBuf,
}

impl DatasetIndex {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("dataset.txt");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        if lines.next().map(|(_, l)| l) != Some(DATASET_FORMAT) {
            return Err(Error::parse(&path, 1, format!("expected `{DATASET_FORMAT}` header")));
        }
        let (mut train, mut test) = (Vec::new(), None);
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            match line.split_once('\t') {
                Some(("train", p)) => train.push(dir.join(p)),
                Some(("test", p)) if test.is_none() => test = Some(dir.join(p)),
                _ => return Err(Error::parse(&path, n, format!("unexpected line `{line}`"))),
            }
        }
        let test = test.ok_or_else(|| Error::parse(&path, 1, "no test manifest listed"))?;
        if train.is_empty() {
            return Err(Error::parse(&path, 1, "no training manifests listed"));
        }
        Ok(DatasetIndex { train, test })
    }

    pub fn train_chunks(&self) -> Result<Vec<Vec<ExampleRecord>>> {
        self.train.iter().map(|p| read_manifest(p)).collect()
    }

    pub fn test_records(&self) -> Result<Vec<ExampleRecord>> {
        read_manifest(&self.test)
    }
}

/// Generates every chunk of `scenario` under `out_dir` and writes the
/// dataset index.
pub fn generate_scenario(scenario: &Scenario, out_dir: &Path) -> Result<DatasetIndex> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut index = format!("{DATASET_FORMAT}\n");
    for spec in &scenario.train {
        generate_chunk(spec, out_dir)?;
        index.push_str(&format!("train\t{}/manifest.tsv\n", spec.name));
    }
    generate_chunk(&scenario.test, out_dir)?;
    index.push_str(&format!("test\t{}/manifest.tsv\n", scenario.test.name));
    let path = out_dir.join("dataset.txt");
    fs::write(&path, index).map_err(|e| Error::io(&path, e))?;
    DatasetIndex::load(out_dir)
}
