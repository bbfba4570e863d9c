//! Pixel and lesion-level metrics, and the composite per-example error term.
//!
//! The error term combines the mean pixel cross-entropy `L`, lesion-level
//! false positive and false negative counts, and one minus the pixel Jaccard
//! index:
//!
//! ```text
//! full:     E = L + FP + FN + (1 - JI)
//! loss_ji:  E = L + (1 - JI)
//! ```
//!
//! Lesions are 8-connected components of a binary mask. A predicted lesion
//! counts as a hit when it is greedily paired with a ground-truth lesion whose
//! mask IoU reaches the match threshold.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::raster::{Dims, PixelMask, ProbabilityMap};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logarithms.
pub const CE_EPSILON: f64 = 1e-7;

/// Mean binary cross-entropy in nats over all pixels.
pub fn mean_cross_entropy(p: &ProbabilityMap, y: &PixelMask) -> Result<f64> {
    p.dims().ensure_same(y.dims())?;
    let total: f64 = p
        .data()
        .iter()
        .zip(y.data())
        .map(|(&prob, &on)| pixel_cross_entropy(prob, on))
        .sum();
    Ok(total / p.data().len() as f64)
}

#[inline]
pub(crate) fn pixel_cross_entropy(prob: f64, on: bool) -> f64 {
    let q = prob.clamp(CE_EPSILON, 1.0 - CE_EPSILON);
    if on {
        -q.ln()
    } else {
        -(1.0 - q).ln()
    }
}

/// `|a ∩ b| / |a ∪ b|`; two empty masks score 1.
pub fn jaccard_index(a: &PixelMask, b: &PixelMask) -> Result<f64> {
    a.dims().ensure_same(b.dims())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Pixel is on iff `p >= threshold`.
pub fn binarize(p: &ProbabilityMap, threshold: f64) -> Result<PixelMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::contract(format!(
            "binarize threshold {threshold} outside (0, 1)"
        )));
    }
    PixelMask::new(p.dims(), p.data().iter().map(|&v| v >= threshold).collect())
}

/// One connected component: sorted row-major pixel indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Component {
    pixels: Vec<usize>,
}

impl Component {
    pub fn from_indices(mut pixels: Vec<usize>) -> Self {
        pixels.sort_unstable();
        pixels.dedup();
        Component { pixels }
    }

    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Mask IoU between two components (sorted-merge intersection).
    pub fn iou(&self, other: &Component) -> f64 {
        let (a, b) = (&self.pixels, &other.pixels);
        let (mut i, mut j, mut inter) = (0, 0, 0usize);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    inter += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        let union = a.len() + b.len() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// 8-connected components of the on-pixels, ordered by their first pixel in
/// raster order, i.e. by (min row, min col).
pub fn connected_components(mask: &PixelMask) -> Vec<Component> {
    let Dims { width, height } = mask.dims();
    let data = mask.data();
    let mut seen = vec![false; data.len()];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();

    for start in 0..data.len() {
        if !data[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(idx) = queue.pop_front() {
            pixels.push(idx);
            let (r, c) = ((idx / width) as isize, (idx % width) as isize);
            for dr in -1..=1isize {
                for dc in -1..=1isize {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= height as isize || nc >= width as isize {
                        continue;
                    }
                    let n = nr as usize * width + nc as usize;
                    if data[n] && !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        components.push(Component::from_indices(pixels));
    }
    components
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LesionMatch {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
}

/// Outcome of pairing predicted with ground-truth lesions. Ids are indices
/// into the component lists passed to [`match_lesions`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LesionMatchResult {
    pub matches: Vec<LesionMatch>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
}

impl LesionMatchResult {
    pub fn tp(&self) -> usize {
        self.matches.len()
    }

    pub fn fp(&self) -> usize {
        self.false_positives.len()
    }

    pub fn fn_(&self) -> usize {
        self.false_negatives.len()
    }
}

/// Greedy one-to-one matching in descending IoU order. Ties break on
/// (pred id, gt id) ascending. Only pairs with `iou >= tau` are accepted.
pub fn match_lesions(pred: &[Component], gt: &[Component], tau: f64) -> Result<LesionMatchResult> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::contract(format!("IoU threshold {tau} outside (0, 1]")));
    }
    let mut pairs = Vec::new();
    for (pi, p) in pred.iter().enumerate() {
        for (gi, g) in gt.iter().enumerate() {
            let iou = p.iou(g);
            if iou >= tau {
                pairs.push(LesionMatch { pred: pi, gt: gi, iou });
            }
        }
    }
    pairs.sort_by(|a, b| b.iou.total_cmp(&a.iou).then(a.pred.cmp(&b.pred)).then(a.gt.cmp(&b.gt)));

    let mut pred_used = vec![false; pred.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut matches = Vec::new();
    for pair in pairs {
        if pred_used[pair.pred] || gt_used[pair.gt] {
            continue;
        }
        pred_used[pair.pred] = true;
        gt_used[pair.gt] = true;
        matches.push(pair);
    }
    Ok(LesionMatchResult {
        matches,
        false_positives: (0..pred.len()).filter(|&i| !pred_used[i]).collect(),
        false_negatives: (0..gt.len()).filter(|&i| !gt_used[i]).collect(),
    })
}

/// Which terms enter the per-example error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ErrorVariant {
    /// `L + FP + FN + (1 - JI)`
    #[default]
    Full,
    /// `L + (1 - JI)`
    LossJi,
}

impl fmt::Display for ErrorVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorVariant::Full => "full",
            ErrorVariant::LossJi => "loss_ji",
        })
    }
}

impl FromStr for ErrorVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "full" => Ok(ErrorVariant::Full),
            "loss_ji" => Ok(ErrorVariant::LossJi),
            other => Err(format!("unknown error variant `{other}` (expected full|loss_ji)")),
        }
    }
}

/// Multipliers on the FP, FN and `(1 - JI)` terms. All 1 by default, which is
/// the unweighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorWeights {
    pub fp: f64,
    pub fn_: f64,
    pub ji: f64,
}

impl Default for ErrorWeights {
    fn default() -> Self {
        ErrorWeights {
            fp: 1.0,
            fn_: 1.0,
            ji: 1.0,
        }
    }
}

/// Unweighted error term.
pub fn error_term(loss: f64, fp: usize, fn_: usize, ji: f64, variant: ErrorVariant) -> Result<f64> {
    weighted_error_term(loss, fp, fn_, ji, variant, ErrorWeights::default())
}

pub fn weighted_error_term(
    loss: f64,
    fp: usize,
    fn_: usize,
    ji: f64,
    variant: ErrorVariant,
    weights: ErrorWeights,
) -> Result<f64> {
    if !loss.is_finite() || loss < 0.0 {
        return Err(Error::contract(format!("loss {loss} must be finite and >= 0")));
    }
    if !(0.0..=1.0).contains(&ji) {
        return Err(Error::contract(format!("jaccard index {ji} outside [0, 1]")));
    }
    Ok(match variant {
        ErrorVariant::Full => loss + weights.fp * fp as f64 + weights.fn_ * fn_ as f64 + weights.ji * (1.0 - ji),
        ErrorVariant::LossJi => loss + weights.ji * (1.0 - ji),
    })
}

/// Knobs shared by everything that scores a prediction against a mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringConfig {
    /// Lesion IoU match threshold.
    pub tau: f64,
    pub binarize_threshold: f64,
    pub variant: ErrorVariant,
    pub weights: ErrorWeights,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            tau: 0.5,
            binarize_threshold: 0.5,
            variant: ErrorVariant::Full,
            weights: ErrorWeights::default(),
        }
    }
}

/// All ingredients of one example's error term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsBreakdown {
    pub loss: f64,
    pub fp: usize,
    pub fn_: usize,
    pub ji: f64,
    pub error: f64,
}

/// Scores a probability map against its ground truth.
pub fn score_prediction(p: &ProbabilityMap, gt: &PixelMask, cfg: &ScoringConfig) -> Result<MetricsBreakdown> {
    let loss = mean_cross_entropy(p, gt)?;
    let pred_mask = binarize(p, cfg.binarize_threshold)?;
    let ji = jaccard_index(&pred_mask, gt)?;
    let matched = match_lesions(&connected_components(&pred_mask), &connected_components(gt), cfg.tau)?;
    let (fp, fn_) = (matched.fp(), matched.fn_());
    let error = weighted_error_term(loss, fp, fn_, ji, cfg.variant, cfg.weights)?;
    Ok(MetricsBreakdown {
        loss,
        fp,
        fn_,
        ji,
        error,
    })
}

/// Aggregated lesion-level detection counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DetectionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl DetectionCounts {
    pub fn add(&mut self, m: &LesionMatchResult) {
        self.tp += m.tp();
        self.fp += m.fp();
        self.fn_ += m.fn_();
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn scores(&self) -> DetectionScores {
        let (precision, recall) = (self.precision(), self.recall());
        DetectionScores {
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Lesion-level detection counts over aligned prediction/ground-truth lists.
pub fn detection_counts(pred_masks: &[PixelMask], gt_masks: &[PixelMask], tau: f64) -> Result<DetectionCounts> {
    if pred_masks.len() != gt_masks.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} ground-truth masks",
            pred_masks.len(),
            gt_masks.len()
        )));
    }
    let mut counts = DetectionCounts::default();
    for (p, g) in pred_masks.iter().zip(gt_masks) {
        p.dims().ensure_same(g.dims())?;
        counts.add(&match_lesions(&connected_components(p), &connected_components(g), tau)?);
    }
    Ok(counts)
}

pub fn evaluate_detection(pred_masks: &[PixelMask], gt_masks: &[PixelMask], tau: f64) -> Result<DetectionScores> {
    Ok(detection_counts(pred_masks, gt_masks, tau)?.scores())
}
