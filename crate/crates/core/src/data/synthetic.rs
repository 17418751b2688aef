use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::LabeledDataset;
use crate::error::{config_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticKind {
    /// A class-colored Gaussian blob at a random position over noise.
    Separable,
    /// Flat class-colored images; the stem alone decides the label.
    RedundantBlocks,
}

fn class_color(k: usize, classes: usize, ch: usize) -> f64 {
    let t = std::f64::consts::TAU;
    128.0 + 80.0 * (t * k as f64 / classes as f64 + t * ch as f64 / 3.0).cos()
}

/// Class-balanced 3×hw×hw byte images with labels shuffled by `seed`.
pub fn synthetic_make(kind: SyntheticKind, n: usize, num_classes: usize, hw: usize, seed: u64) -> Result<LabeledDataset> {
    if num_classes < 2 || n < 2 * num_classes || hw < 2 {
        return Err(config_err!(
            "synthetic data needs at least 2 classes, n >= 2 per class and size >= 2; got n={n}, {num_classes} classes, size {hw}"
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    labels.shuffle(&mut rng);
    let noise = Normal::new(0.0, 12.0).expect("valid");
    let sigma = hw as f64 / 4.0;
    let mut images = Vec::with_capacity(n * 3 * hw * hw);
    for &k in &labels {
        let (cy, cx) = (
            rng.random_range(0.25..0.75) * hw as f64,
            rng.random_range(0.25..0.75) * hw as f64,
        );
        for ch in 0..3 {
            let color = class_color(k, num_classes, ch);
            for y in 0..hw {
                for x in 0..hw {
                    let weight = match kind {
                        SyntheticKind::Separable => {
                            let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                            (-d2 / (2.0 * sigma * sigma)).exp()
                        }
                        SyntheticKind::RedundantBlocks => 1.0,
                    };
                    let v = 128.0 + weight * (color - 128.0) + noise.sample(&mut rng);
                    images.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
    }
    LabeledDataset::new(images, labels, (3, hw, hw), num_classes)
}
