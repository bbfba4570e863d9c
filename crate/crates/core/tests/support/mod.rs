//! Brute-force reference implementations shared by the property tests and
//! the acceptance runner. Deliberately naive: set-based, quadratic, no reuse
//! of library internals beyond public types.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use iem::pool::{ExampleRecord, PoolState};
use iem::raster::{Dims, PixelMask, ProbabilityMap};
use iem::selector::SelectedSubset;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn jaccard(a: &PixelMask, b: &PixelMask) -> f64 {
    let on = |m: &PixelMask| -> HashSet<usize> { (0..m.data().len()).filter(|&i| m.data()[i]).collect() };
    let (sa, sb) = (on(a), on(b));
    let union = sa.union(&sb).count();
    if union == 0 {
        1.0
    } else {
        sa.intersection(&sb).count() as f64 / union as f64
    }
}

pub fn cross_entropy(p: &ProbabilityMap, y: &PixelMask) -> f64 {
    let mut total = 0.0;
    for i in 0..p.data().len() {
        let q = p.data()[i].clamp(1e-7, 1.0 - 1e-7);
        let t = if y.data()[i] { 1.0 } else { 0.0 };
        total -= t * q.ln() + (1.0 - t) * (1.0 - q).ln();
    }
    total / p.data().len() as f64
}

/// Min-label propagation until nothing changes; returns components as
/// sorted pixel sets, ordered by smallest pixel.
pub fn components(mask: &PixelMask) -> Vec<Vec<usize>> {
    let Dims { width, height } = mask.dims();
    let n = width * height;
    let mut label: Vec<usize> = (0..n).collect();
    loop {
        let mut changed = false;
        for r in 0..height {
            for c in 0..width {
                let i = r * width + c;
                if !mask.data()[i] {
                    continue;
                }
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                        if rr < 0 || cc < 0 || rr >= height as i64 || cc >= width as i64 {
                            continue;
                        }
                        let j = rr as usize * width + cc as usize;
                        if mask.data()[j] && label[j] < label[i] {
                            label[i] = label[j];
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    let roots: BTreeSet<usize> = (0..n).filter(|&i| mask.data()[i]).map(|i| label[i]).collect();
    roots
        .into_iter()
        .map(|root| (0..n).filter(|&i| mask.data()[i] && label[i] == root).collect())
        .collect()
}

pub fn set_iou(a: &[usize], b: &[usize]) -> f64 {
    let sa: HashSet<_> = a.iter().collect();
    let sb: HashSet<_> = b.iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        0.0
    } else {
        sa.intersection(&sb).count() as f64 / union as f64
    }
}

/// Repeatedly takes the best remaining (iou, -pred, -gt) pair at or above tau.
pub fn greedy_match(pred: &[Vec<usize>], gt: &[Vec<usize>], tau: f64) -> (Vec<(usize, usize)>, usize, usize) {
    let mut pred_free = vec![true; pred.len()];
    let mut gt_free = vec![true; gt.len()];
    let mut pairs = Vec::new();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for p in 0..pred.len() {
            for g in 0..gt.len() {
                if !pred_free[p] || !gt_free[g] {
                    continue;
                }
                let iou = set_iou(&pred[p], &gt[g]);
                if iou < tau {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bi, bp, bg)) => iou > bi || (iou == bi && (p, g) < (bp, bg)),
                };
                if better {
                    best = Some((iou, p, g));
                }
            }
        }
        match best {
            Some((_, p, g)) => {
                pred_free[p] = false;
                gt_free[g] = false;
                pairs.push((p, g));
            }
            None => break,
        }
    }
    let fp = pred_free.iter().filter(|f| **f).count();
    let fn_ = gt_free.iter().filter(|f| **f).count();
    (pairs, fp, fn_)
}

/// Straight transcription of the selection loop: sort, split, balance,
/// take hard, shuffle the rest, take easy.
pub fn select(pool: &PoolState, k: usize, rng: &mut impl Rng) -> SelectedSubset {
    let mut active: Vec<&ExampleRecord> = Vec::new();
    for r in pool.records() {
        if !r.dropped {
            active.push(r);
        }
    }
    // Insertion sort on (E desc, id asc).
    for i in 1..active.len() {
        let mut j = i;
        while j > 0 {
            let (a, b) = (active[j - 1], active[j]);
            let out_of_order = a.error < b.error || (a.error == b.error && a.id > b.id);
            if !out_of_order {
                break;
            }
            active.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut pos: Vec<String> = active
        .iter()
        .filter(|r| r.label.is_positive())
        .map(|r| r.id.clone())
        .collect();
    let mut neg: Vec<String> = active
        .iter()
        .filter(|r| !r.label.is_positive())
        .map(|r| r.id.clone())
        .collect();
    if neg.len() > pos.len() {
        neg.truncate(pos.len());
    } else {
        pos.truncate(neg.len());
    }
    let h = k.min(pos.len());
    let hard_positives: Vec<String> = pos[..h].to_vec();
    let hard_negatives: Vec<String> = neg[..h].to_vec();
    let mut rest_pos: Vec<String> = pos[h..].to_vec();
    let mut rest_neg: Vec<String> = neg[h..].to_vec();
    rest_pos.shuffle(rng);
    rest_neg.shuffle(rng);
    let e = k.min(rest_pos.len());
    SelectedSubset {
        hard_positives,
        hard_negatives,
        easy_positives: rest_pos[..e].to_vec(),
        easy_negatives: rest_neg[..e].to_vec(),
    }
}
