//! Row-major rasters: grayscale images, binary masks and probability maps,
//! plus binary PGM (P5) encoding for the first two.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Width and height of a raster, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
}

impl Dims {
    pub fn new(width: usize, height: usize) -> Self {
        Dims { width, height }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub(crate) fn ensure_same(&self, other: Dims) -> Result<()> {
        if *self == other {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            })
        }
    }

    fn ensure_nonempty(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::contract(format!(
                "raster dimensions must be at least 1x1, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

fn check_len(dims: Dims, len: usize) -> Result<()> {
    dims.ensure_nonempty()?;
    if dims.len() != len {
        return Err(Error::contract(format!(
            "{}x{} raster needs {} values, got {}",
            dims.width,
            dims.height,
            dims.len(),
            len
        )));
    }
    Ok(())
}

fn check_unit_interval(values: &[f64], what: &str) -> Result<()> {
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::contract(format!("{what} value {v} at index {i} outside [0, 1]")));
    }
    Ok(())
}

/// Grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    dims: Dims,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        check_len(dims, data.len())?;
        check_unit_interval(&data, "intensity")?;
        Ok(GrayImage { dims, data })
    }

    pub fn filled(dims: Dims, value: f64) -> Result<Self> {
        Self::new(dims, vec![value; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[self.dims.index(row, col)]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Applies `f` to every intensity and clamps the result to `[0, 1]`.
    pub fn map_clamped(&self, f: impl Fn(f64) -> f64) -> GrayImage {
        GrayImage {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn flip_horizontal(&self) -> GrayImage {
        GrayImage {
            dims: self.dims,
            data: flip_h(&self.data, self.dims),
        }
    }

    pub fn flip_vertical(&self) -> GrayImage {
        GrayImage {
            dims: self.dims,
            data: flip_v(&self.data, self.dims),
        }
    }

    /// 8-bit quantization used by the PGM encoder.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        write_pgm(path, self.dims, &self.to_bytes())
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let (dims, maxval, bytes) = read_pgm(path)?;
        let scale = f64::from(maxval);
        Ok(GrayImage {
            dims,
            data: bytes.iter().map(|&b| f64::from(b) / scale).collect(),
        })
    }
}

/// Binary per-pixel mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PixelMask {
    dims: Dims,
    data: Vec<bool>,
}

impl PixelMask {
    pub fn new(dims: Dims, data: Vec<bool>) -> Result<Self> {
        check_len(dims, data.len())?;
        Ok(PixelMask { dims, data })
    }

    pub fn empty(dims: Dims) -> Self {
        PixelMask {
            dims,
            data: vec![false; dims.len()],
        }
    }

    /// Builds a mask from `(row, col)` coordinates of on-pixels.
    pub fn from_pixels(dims: Dims, pixels: &[(usize, usize)]) -> Result<Self> {
        dims.ensure_nonempty()?;
        let mut mask = PixelMask::empty(dims);
        for &(r, c) in pixels {
            if r >= dims.height || c >= dims.width {
                return Err(Error::contract(format!(
                    "pixel ({r}, {c}) outside {}x{} mask",
                    dims.width, dims.height
                )));
            }
            mask.set(r, c, true);
        }
        Ok(mask)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[self.dims.index(row, col)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        let i = self.dims.index(row, col);
        self.data[i] = on;
    }

    pub fn count_on(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&b| b)
    }

    pub fn flip_horizontal(&self) -> PixelMask {
        PixelMask {
            dims: self.dims,
            data: flip_h(&self.data, self.dims),
        }
    }

    pub fn flip_vertical(&self) -> PixelMask {
        PixelMask {
            dims: self.dims,
            data: flip_v(&self.data, self.dims),
        }
    }

    /// Writes the mask as a PGM with values {0, 255}.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        write_pgm(path, self.dims, &bytes)
    }

    /// Reads a PGM; any nonzero sample is an on-pixel.
    pub fn read_pgm(path: &Path) -> Result<Self> {
        let (dims, _, bytes) = read_pgm(path)?;
        Ok(PixelMask {
            dims,
            data: bytes.iter().map(|&b| b != 0).collect(),
        })
    }
}

/// Per-pixel foreground probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    dims: Dims,
    data: Vec<f64>,
}

impl ProbabilityMap {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        check_len(dims, data.len())?;
        check_unit_interval(&data, "probability")?;
        Ok(ProbabilityMap { dims, data })
    }

    pub fn filled(dims: Dims, p: f64) -> Result<Self> {
        Self::new(dims, vec![p; dims.len()])
    }

    /// Probability map that is exactly the mask (1 on, 0 off).
    pub fn from_mask(mask: &PixelMask) -> Self {
        ProbabilityMap {
            dims: mask.dims,
            data: mask.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[self.dims.index(row, col)]
    }
}

fn flip_h<T: Copy>(data: &[T], dims: Dims) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(dims.width) {
        out.extend(row.iter().rev());
    }
    out
}

fn flip_v<T: Copy>(data: &[T], dims: Dims) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(dims.width).rev() {
        out.extend_from_slice(row);
    }
    out
}

/// Encodes a P5 PGM with maxval 255.
pub fn encode_pgm(dims: Dims, bytes: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", dims.width, dims.height).into_bytes();
    out.extend_from_slice(bytes);
    out
}

fn write_pgm(path: &Path, dims: Dims, bytes: &[u8]) -> Result<()> {
    fs::write(path, encode_pgm(dims, bytes)).map_err(|e| Error::io(path, e))
}

fn read_pgm(path: &Path) -> Result<(Dims, u8, Vec<u8>)> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&raw).map_err(|msg| Error::parse(path, 1, msg))
}

/// Decodes an 8-bit P5 PGM, returning dimensions, maxval and samples.
pub fn decode_pgm(raw: &[u8]) -> std::result::Result<(Dims, u8, Vec<u8>), String> {
    let mut pos = 0usize;

    fn skip_ws(raw: &[u8], pos: &mut usize) {
        loop {
            while *pos < raw.len() && raw[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < raw.len() && raw[*pos] == b'#' {
                while *pos < raw.len() && raw[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn token(raw: &[u8], pos: &mut usize) -> std::result::Result<usize, String> {
        skip_ws(raw, pos);
        let start = *pos;
        while *pos < raw.len() && raw[*pos].is_ascii_digit() {
            *pos += 1;
        }
        if start == *pos {
            return Err("expected a decimal header field".into());
        }
        std::str::from_utf8(&raw[start..*pos])
            .unwrap()
            .parse()
            .map_err(|e| format!("bad header field: {e}"))
    }

    if raw.len() < 2 || &raw[..2] != b"P5" {
        return Err("not a binary PGM (missing P5 magic)".into());
    }
    pos += 2;
    let width = token(raw, &mut pos)?;
    let height = token(raw, &mut pos)?;
    let maxval = token(raw, &mut pos)?;
    if width == 0 || height == 0 {
        return Err(format!("invalid dimensions {width}x{height}"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval} (need 1..=255)"));
    }
    if pos >= raw.len() || !raw[pos].is_ascii_whitespace() {
        return Err("missing whitespace after maxval".into());
    }
    pos += 1;
    let dims = Dims::new(width, height);
    let body = &raw[pos..];
    if body.len() != dims.len() {
        return Err(format!("expected {} samples, found {}", dims.len(), body.len()));
    }
    Ok((dims, maxval as u8, body.to_vec()))
}
