#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refkit::synthetic::SyntheticConfig;
use refkit::ImageGrid;

/// Smooth random texture in roughly [0.15, 0.85]: a few low-frequency
/// sinusoids with random orientation and phase.
pub fn texture(seed: u64, w: usize, h: usize) -> ImageGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let f = rng.random_range(0.08..0.35);
            (
                f * theta.cos(),
                f * theta.sin(),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.3..1.0),
            )
        })
        .collect();
    let norm: f64 = waves.iter().map(|w| w.3).sum();
    ImageGrid::from_fn(w, h, |x, y| {
        let s: f64 = waves
            .iter()
            .map(|&(fx, fy, p, a)| a * (fx * x as f64 + fy * y as f64 + p).sin())
            .sum();
        0.5 + 0.35 * s / norm
    })
}

/// Small scenes that keep property tests quick.
pub fn small_config(seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        seed,
        n_views: 9,
        lr_size: 48,
        ..SyntheticConfig::default()
    }
}
