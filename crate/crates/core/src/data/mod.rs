//! Image datasets stored as bytes, with normalization applied at batch assembly.

mod augment;
mod cifar;
mod idx;
mod normalize;
mod resize;
mod synthetic;

pub use augment::{augment_image, Augmentation, PAD};
pub use cifar::{load_cifar10, CifarSplits, CIFAR_RECORD_LEN};
pub use idx::{load_idx, write_idx};
pub use normalize::ChannelStats;
pub use resize::{resize_bilinear, resize_scale, scaled_len};
pub use synthetic::{synthetic_make, SyntheticKind};

use crate::autodiff::Tensor;
use crate::error::{data_err, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    /// N×C×H×W bytes.
    images: Vec<u8>,
    labels: Vec<usize>,
    /// (channels, height, width)
    shape: (usize, usize, usize),
    num_classes: usize,
    pub class_names: Option<Vec<String>>,
}

impl LabeledDataset {
    pub fn new(images: Vec<u8>, labels: Vec<usize>, shape: (usize, usize, usize), num_classes: usize) -> Result<Self> {
        let (c, h, w) = shape;
        let per = c * h * w;
        if per == 0 || num_classes == 0 {
            return Err(data_err!("image shape {shape:?} and {num_classes} classes must be nonzero"));
        }
        if images.len() != labels.len() * per {
            return Err(data_err!(
                "{} image bytes for {} labels of shape {shape:?}",
                images.len(),
                labels.len()
            ));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(data_err!("label {l} of sample {i} is not below {num_classes}"));
        }
        Ok(LabeledDataset { images, labels, shape, num_classes, class_names: None })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn image_len(&self) -> usize {
        self.shape.0 * self.shape.1 * self.shape.2
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn images(&self) -> &[u8] {
        &self.images
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// The first `k` samples of each class, in file order.
    pub fn first_per_class(&self, k: usize) -> Self {
        let mut taken = vec![0; self.num_classes];
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let l = self.labels[i];
                taken[l] += 1;
                taken[l] <= k
            })
            .collect();
        self.select(&idx)
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mut images = Vec::with_capacity(idx.len() * self.image_len());
        for &i in idx {
            images.extend_from_slice(self.image(i));
        }
        LabeledDataset {
            images,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            shape: self.shape,
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
        }
    }

    /// Normalized N×C×H×W tensor of the samples `idx`, optionally augmented.
    pub fn batch<T: Scalar>(
        &self,
        idx: &[usize],
        stats: &ChannelStats,
        augment: Option<&Augmentation>,
    ) -> Result<(Tensor<T>, Vec<usize>)> {
        let (c, h, w) = self.shape;
        let mut data = Vec::with_capacity(idx.len() * self.image_len());
        let mut scratch = vec![0u8; self.image_len()];
        for &i in idx {
            let img = match augment {
                Some(a) => {
                    augment_image(self.image(i), self.shape, a.draw(i), &mut scratch);
                    &scratch[..]
                }
                None => self.image(i),
            };
            data.extend(stats.normalize_image(img, h * w).into_iter().map(T::lit));
        }
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        Ok((Tensor::new(&[idx.len(), c, h, w], data)?, labels))
    }
}
