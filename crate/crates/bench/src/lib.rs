//! Seeded fixtures for the kernel benchmarks.

use iem::selector::seeded_rng;
use iem::synth::{default_scenario, render_example};
use iem::{Dims, ExampleRecord, GrayImage, Label, PixelMask, PoolState, ProbabilityMap};
use rand::Rng;

/// A lesion-bearing synthetic image and its mask, 32x32.
pub fn lesion_sample(seed: u64) -> (GrayImage, PixelMask) {
    let spec = &default_scenario(seed).train[0];
    let (image, mask, _) = render_example(spec, 0, true).expect("default spec renders");
    (image, mask)
}

/// A noisy probability map agreeing with `mask` on most pixels.
pub fn noisy_prediction(mask: &PixelMask, seed: u64) -> ProbabilityMap {
    let mut rng = seeded_rng(seed);
    let probs = mask
        .data()
        .iter()
        .map(|&on| {
            let base: f64 = if on { 0.8 } else { 0.15 };
            (base + rng.random_range(-0.3..0.3)).clamp(0.0, 1.0)
        })
        .collect();
    ProbabilityMap::new(mask.dims(), probs).expect("clamped probabilities")
}

/// Random speckle mask at the given on-pixel density.
pub fn speckle(dims: Dims, density: f64, seed: u64) -> PixelMask {
    let mut rng = seeded_rng(seed);
    PixelMask::new(dims, (0..dims.len()).map(|_| rng.random_bool(density)).collect()).expect("sized data")
}

/// Pool of `n` records, 40% positive, with random error terms.
pub fn random_pool(n: usize, seed: u64) -> PoolState {
    let mut rng = seeded_rng(seed);
    let mut pool = PoolState::new("bench");
    let records = (0..n)
        .map(|i| {
            let label = if rng.random_bool(0.4) {
                Label::Positive
            } else {
                Label::Negative
            };
            ExampleRecord::new(format!("r{i:05}"), "img", "mask", label, 0)
        })
        .collect();
    pool.add_chunk(records, 0).expect("fresh pool");
    for i in 0..n {
        pool.set_error(&format!("r{i:05}"), rng.random_range(0.0..5.0))
            .expect("known id");
    }
    pool
}
