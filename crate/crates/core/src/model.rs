//! A per-pixel logistic segmenter over local intensity features.
//!
//! Each pixel is described by four features: its intensity, the mean and
//! (population) standard deviation of its 3×3 neighbourhood with
//! edge-replicated borders, and a constant 1 for the bias.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{mean_cross_entropy, pixel_cross_entropy};
use crate::raster::{Dims, GrayImage, PixelMask, ProbabilityMap};

pub const FEATURE_COUNT: usize = 4;
pub const MODEL_FORMAT: &str = "iem-model/1";

/// Logits are clamped to this magnitude so probabilities stay strictly
/// inside (0, 1).
const LOGIT_LIMIT: f64 = 30.0;

pub type Feature = [f64; FEATURE_COUNT];

/// Anything that maps an image to per-pixel foreground probabilities and can
/// take a gradient step on one labeled example.
pub trait Segmenter {
    fn forward(&self, image: &GrayImage) -> ProbabilityMap;

    /// Takes one SGD step on the mean pixel cross-entropy of `(image, mask)`.
    fn sgd_step(&mut self, image: &GrayImage, mask: &PixelMask, learning_rate: f64) -> Result<()>;
}

/// Per-pixel feature vectors for an image, row-major.
pub fn featurize(img: &GrayImage) -> Vec<Feature> {
    let Dims { width, height } = img.dims();
    let clamp_r = |r: isize| r.clamp(0, height as isize - 1) as usize;
    let clamp_c = |c: isize| c.clamp(0, width as isize - 1) as usize;
    let mut out = Vec::with_capacity(width * height);
    for r in 0..height {
        for c in 0..width {
            let mut window = [0.0; 9];
            let mut k = 0;
            for dr in -1..=1isize {
                for dc in -1..=1isize {
                    window[k] = img.get(clamp_r(r as isize + dr), clamp_c(c as isize + dc));
                    k += 1;
                }
            }
            let mean = window.iter().sum::<f64>() / 9.0;
            let var = window.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 9.0;
            out.push([img.get(r, c), mean, var.sqrt(), 1.0]);
        }
    }
    out
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z.clamp(-LOGIT_LIMIT, LOGIT_LIMIT)).exp())
}

#[inline]
fn dot(w: &[f64; FEATURE_COUNT], f: &Feature) -> f64 {
    w.iter().zip(f).map(|(a, b)| a * b).sum()
}

/// Weights of the logistic segmenter in feature order
/// (intensity, local mean, local std, bias).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub weights: [f64; FEATURE_COUNT],
    /// Number of SGD steps taken since initialisation.
    pub version: u64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::zeros()
    }
}

impl ModelParams {
    pub fn zeros() -> Self {
        Self::from_weights([0.0; FEATURE_COUNT])
    }

    pub fn from_weights(weights: [f64; FEATURE_COUNT]) -> Self {
        ModelParams { weights, version: 0 }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    pub fn forward_features(&self, features: &[Feature], dims: Dims) -> ProbabilityMap {
        let p = features.iter().map(|f| sigmoid(dot(&self.weights, f))).collect();
        ProbabilityMap::new(dims, p).expect("sigmoid output lies in (0, 1)")
    }

    /// Analytic gradient of the mean pixel cross-entropy:
    /// `(1/HW) Σ (p - y) · feature`.
    pub fn gradient(&self, image: &GrayImage, mask: &PixelMask) -> Result<[f64; FEATURE_COUNT]> {
        image.dims().ensure_same(mask.dims())?;
        let features = featurize(image);
        Ok(self.gradient_features(&features, mask))
    }

    fn gradient_features(&self, features: &[Feature], mask: &PixelMask) -> [f64; FEATURE_COUNT] {
        let mut g = [0.0; FEATURE_COUNT];
        for (f, &y) in features.iter().zip(mask.data()) {
            let residual = sigmoid(dot(&self.weights, f)) - if y { 1.0 } else { 0.0 };
            for (gk, fk) in g.iter_mut().zip(f) {
                *gk += residual * fk;
            }
        }
        let n = features.len() as f64;
        g.map(|v| v / n)
    }

    pub fn loss(&self, image: &GrayImage, mask: &PixelMask) -> Result<f64> {
        mean_cross_entropy(&self.forward(image), mask)
    }

    /// Unclamped-logit loss, used by the finite-difference checks.
    pub fn raw_loss(&self, image: &GrayImage, mask: &PixelMask) -> f64 {
        let features = featurize(image);
        let total: f64 = features
            .iter()
            .zip(mask.data())
            .map(|(f, &y)| pixel_cross_entropy(sigmoid(dot(&self.weights, f)), y))
            .sum();
        total / features.len() as f64
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MODEL_FORMAT}\n{FEATURE_COUNT}\n");
        for w in &self.weights {
            out.push_str(&format!("{w:.16e}\n"));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MODEL_FORMAT) {
            return Err(Error::parse(origin, 1, format!("expected `{MODEL_FORMAT}` header")));
        }
        let count: usize = lines
            .next()
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| Error::parse(origin, 2, "missing feature count"))?;
        if count != FEATURE_COUNT {
            return Err(Error::parse(
                origin,
                2,
                format!("model has {count} features, expected {FEATURE_COUNT}"),
            ));
        }
        let mut weights = [0.0; FEATURE_COUNT];
        for (k, w) in weights.iter_mut().enumerate() {
            let line_no = k + 3;
            let v: f64 = lines
                .next()
                .ok_or_else(|| Error::parse(origin, line_no, "missing weight"))?
                .trim()
                .parse()
                .map_err(|e| Error::parse(origin, line_no, format!("bad weight: {e}")))?;
            if !v.is_finite() {
                return Err(Error::parse(origin, line_no, "weight is not finite"));
            }
            *w = v;
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::parse(origin, FEATURE_COUNT + 3, "trailing content"));
        }
        Ok(ModelParams::from_weights(weights))
    }
}

impl Segmenter for ModelParams {
    fn forward(&self, image: &GrayImage) -> ProbabilityMap {
        self.forward_features(&featurize(image), image.dims())
    }

    fn sgd_step(&mut self, image: &GrayImage, mask: &PixelMask, learning_rate: f64) -> Result<()> {
        let g = self.gradient(image, mask)?;
        let mut next = self.weights;
        for (w, gk) in next.iter_mut().zip(g) {
            *w -= learning_rate * gk;
        }
        if next.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite weights after step {} (learning rate {learning_rate} too high?)",
                self.version + 1
            )));
        }
        self.weights = next;
        self.version += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(w: usize, h: usize, data: Vec<f64>) -> GrayImage {
        GrayImage::new(Dims::new(w, h), data).unwrap()
    }

    #[test]
    fn constant_image_features() {
        let f = featurize(&GrayImage::filled(Dims::new(4, 3), 0.3).unwrap());
        for feat in f {
            assert!((feat[0] - 0.3).abs() < 1e-15);
            assert!((feat[1] - 0.3).abs() < 1e-15);
            assert!(feat[2].abs() < 1e-15);
            assert_eq!(feat[3], 1.0);
        }
    }

    #[test]
    fn bright_pixel_has_max_std_at_center() {
        let mut data = vec![0.0; 25];
        data[12] = 1.0;
        let f = featurize(&img(5, 5, data));
        let stds: Vec<f64> = f.iter().map(|x| x[2]).collect();
        let max = stds.iter().cloned().fold(f64::MIN, f64::max);
        // Every window holding the bright pixel has the same spread, up to rounding.
        assert!(stds[12] >= max - 1e-12);
        assert!(stds[0] < max);
    }

    #[test]
    fn checkerboard_center_features() {
        // 1 0 1 / 0 1 0 / 1 0 1: five ones among nine.
        let f = featurize(&img(3, 3, vec![1., 0., 1., 0., 1., 0., 1., 0., 1.]));
        let center = f[4];
        let mean = 5.0 / 9.0;
        let var = (5.0 * (1.0 - mean) * (1.0 - mean) + 4.0 * mean * mean) / 9.0;
        assert_eq!(center[0], 1.0);
        assert!((center[1] - mean).abs() < 1e-15);
        assert!((center[2] - var.sqrt()).abs() < 1e-15);
        assert!((center[2] - 20f64.sqrt() / 9.0).abs() < 1e-15);
    }

    #[test]
    fn corner_uses_edge_replication() {
        // Top-left 3x3 replicated window of [[a, b], [c, d]] at (0,0):
        // a a b / a a b / c c d
        let f = featurize(&img(2, 2, vec![0.1, 0.2, 0.3, 0.4]));
        let expected = (4.0 * 0.1 + 2.0 * 0.2 + 2.0 * 0.3 + 0.4) / 9.0;
        assert!((f[0][1] - expected).abs() < 1e-15);
    }

    #[test]
    fn forward_examples() {
        let image = GrayImage::filled(Dims::new(3, 3), 0.3).unwrap();
        let p = ModelParams::zeros().forward(&image);
        assert!(p.data().iter().all(|&v| v == 0.5));

        let p = ModelParams::from_weights([0.0, 0.0, 0.0, 100.0]).forward(&image);
        assert!(p.data().iter().all(|&v| v > 0.999_999 && v < 1.0));
        let p = ModelParams::from_weights([0.0, 0.0, 0.0, -100.0]).forward(&image);
        assert!(p.data().iter().all(|&v| v > 0.0 && v < 1e-6));

        let p = ModelParams::from_weights([1.0, 0.0, 0.0, 0.0]).forward(&image);
        let expected = 1.0 / (1.0 + (-0.3f64).exp());
        assert!((expected - 0.574443).abs() < 1e-6);
        assert!(p.data().iter().all(|&v| (v - expected).abs() < 1e-15));
    }

    #[test]
    fn gradient_zero_weights_all_positive() {
        let image = img(2, 2, vec![0.1, 0.5, 0.9, 0.3]);
        let mask = PixelMask::new(Dims::new(2, 2), vec![true; 4]).unwrap();
        let g = ModelParams::zeros().gradient(&image, &mask).unwrap();
        let feats = featurize(&image);
        for k in 0..FEATURE_COUNT {
            let expected = -feats.iter().map(|f| 0.5 * f[k]).sum::<f64>() / 4.0;
            assert!((g[k] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_vanishes_at_saturated_optimum() {
        let image = GrayImage::filled(Dims::new(3, 3), 0.5).unwrap();
        let mask = PixelMask::new(Dims::new(3, 3), vec![true; 9]).unwrap();
        let g = ModelParams::from_weights([0.0, 0.0, 0.0, 40.0])
            .gradient(&image, &mask)
            .unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn step_aborts_on_non_finite() {
        let image = img(2, 1, vec![0.2, 0.8]);
        let mask = PixelMask::new(Dims::new(2, 1), vec![false, true]).unwrap();
        let mut m = ModelParams::zeros();
        assert!(matches!(
            m.sgd_step(&image, &mask, f64::INFINITY),
            Err(Error::Numeric(_))
        ));
        assert_eq!(m, ModelParams::zeros());
        m.sgd_step(&image, &mask, 0.5).unwrap();
        assert_eq!(m.version, 1);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = ModelParams::from_weights([1.0 / 3.0, -2.5e-7, 12.0, -0.1]);
        let text = m.to_text();
        assert!(text.starts_with("iem-model/1\n4\n"));
        let back = ModelParams::from_text(&text, Path::new("m")).unwrap();
        assert_eq!(back.weights.map(f64::to_bits), m.weights.map(f64::to_bits));
        assert!(ModelParams::from_text("iem-model/1\n3\n1\n2\n3\n", Path::new("m")).is_err());
        assert!(ModelParams::from_text("iem-model/1\n4\n1\n2\n", Path::new("m")).is_err());
    }
}
