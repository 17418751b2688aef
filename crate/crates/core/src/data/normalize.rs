use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{data_err, Result};

/// Per-channel mean and standard deviation in byte units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Population statistics of a training split.
    pub fn from_dataset(train: &LabeledDataset) -> Result<Self> {
        let (c, h, w) = train.shape();
        let hw = h * w;
        let mut sum = vec![0.0f64; c];
        let mut sum_sq = vec![0.0f64; c];
        for img in train.images().chunks(c * hw) {
            for (ch, plane) in img.chunks(hw).enumerate() {
                let (s, ss) = plane.iter().fold((0u64, 0u64), |(s, ss), &v| {
                    (s + v as u64, ss + (v as u64) * (v as u64))
                });
                sum[ch] += s as f64;
                sum_sq[ch] += ss as f64;
            }
        }
        let count = (train.len() * hw) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std: Vec<f64> = sum_sq
            .iter()
            .zip(&mean)
            .map(|(ss, m)| (ss / count - m * m).max(0.0).sqrt())
            .collect();
        let stats = ChannelStats { mean, std };
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() {
            return Err(data_err!("channel statistics have mismatched lengths"));
        }
        for (ch, (&m, &s)) in self.mean.iter().zip(&self.std).enumerate() {
            if !m.is_finite() || !s.is_finite() || s <= 0.0 {
                return Err(data_err!(
                    "channel {ch} has mean {m} and standard deviation {s}; a constant channel cannot be normalized"
                ));
            }
        }
        Ok(())
    }

    pub fn normalize_image(&self, img: &[u8], hw: usize) -> Vec<f64> {
        img.chunks(hw)
            .zip(self.mean.iter().zip(&self.std))
            .flat_map(|(plane, (&m, &s))| plane.iter().map(move |&v| (v as f64 - m) / s))
            .collect()
    }

    pub fn normalize(&self, values: &mut [f64], hw: usize) {
        for (i, v) in values.iter_mut().enumerate() {
            let ch = (i / hw) % self.mean.len();
            *v = (*v - self.mean[ch]) / self.std[ch];
        }
    }

    pub fn denormalize(&self, values: &mut [f64], hw: usize) {
        for (i, v) in values.iter_mut().enumerate() {
            let ch = (i / hw) % self.mean.len();
            *v = *v * self.std[ch] + self.mean[ch];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_make, SyntheticKind};

    #[test]
    fn constant_channel_rejected() {
        let mut images = vec![128u8; 4 * 3 * 2 * 2];
        for (i, v) in images.iter_mut().enumerate().filter(|(i, _)| (i / 4) % 3 != 1) {
            *v = (i * 37 % 256) as u8;
        }
        let ds = LabeledDataset::new(images, vec![0, 1, 0, 1], (3, 2, 2), 2).unwrap();
        let msg = ChannelStats::from_dataset(&ds).unwrap_err().to_string();
        assert!(msg.contains("channel 1"), "{msg}");
    }

    #[test]
    fn normalized_training_split_is_standard() {
        let ds = synthetic_make(SyntheticKind::Separable, 200, 4, 8, 1).unwrap();
        let stats = ChannelStats::from_dataset(&ds).unwrap();
        let hw = 64;
        let values: Vec<f64> = (0..ds.len()).flat_map(|i| stats.normalize_image(ds.image(i), hw)).collect();
        for ch in 0..3 {
            let xs: Vec<f64> = values.chunks(hw).skip(ch).step_by(3).flatten().copied().collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let sd = (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt();
            assert!(m.abs() < 1e-6 && (sd - 1.0).abs() < 1e-6, "channel {ch}: {m} {sd}");
        }
    }

    #[test]
    fn inverse_round_trip() {
        let stats = ChannelStats { mean: vec![120.5, 99.0], std: vec![61.25, 3.5] };
        let orig: Vec<f64> = (0..16).map(|i| i as f64 * 13.7 - 40.0).collect();
        let mut v = orig.clone();
        stats.denormalize(&mut v, 8);
        stats.normalize(&mut v, 8);
        assert!(v.iter().zip(&orig).all(|(a, b)| (a - b).abs() < 1e-9));
    }
}
