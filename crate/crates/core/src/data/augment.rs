use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Zero padding on each side before the random crop.
pub const PAD: usize = 4;

/// Random draws for one image: mirror flag and crop offsets into the padded image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Draw {
    pub flip: bool,
    pub dy: usize,
    pub dx: usize,
}

impl Draw {
    pub const IDENTITY: Draw = Draw { flip: false, dy: PAD, dx: PAD };
}

/// Mirror/shift augmentation whose draws depend only on (seed, epoch, sample index).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augmentation {
    pub seed: u64,
    pub epoch: u64,
}

impl Augmentation {
    pub fn draw(&self, index: usize) -> Draw {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.epoch);
        rng.set_word_pos(index as u128 * 16);
        let flip = rng.random::<f64>() >= 0.5;
        let dy = rng.random_range(0..=2 * PAD);
        let dx = rng.random_range(0..=2 * PAD);
        Draw { flip, dy, dx }
    }
}

/// Horizontal flip, then zero-pad by [`PAD`] and crop back to the original size.
pub fn augment_image(img: &[u8], shape: (usize, usize, usize), d: Draw, out: &mut [u8]) {
    let (c, h, w) = shape;
    for ch in 0..c {
        let plane = &img[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                // position in the padded image
                let (py, px) = (y + d.dy, x + d.dx);
                let v = if py < PAD || px < PAD || py >= h + PAD || px >= w + PAD {
                    0
                } else {
                    let (sy, sx) = (py - PAD, px - PAD);
                    let sx = if d.flip { w - 1 - sx } else { sx };
                    plane[sy * w + sx]
                };
                out[(ch * h + y) * w + x] = v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image() -> Vec<u8> {
        (0..2 * 3 * 3).map(|v| v as u8 + 1).collect()
    }

    #[test]
    fn centered_unflipped_is_identity() {
        let img = image();
        let mut out = vec![0; img.len()];
        augment_image(&img, (2, 3, 3), Draw::IDENTITY, &mut out);
        assert_eq!(out, img);
    }

    #[test]
    fn flip_is_an_involution() {
        let img = image();
        let d = Draw { flip: true, ..Draw::IDENTITY };
        let mut once = vec![0; img.len()];
        let mut twice = vec![0; img.len()];
        augment_image(&img, (2, 3, 3), d, &mut once);
        assert_ne!(once, img);
        augment_image(&once, (2, 3, 3), d, &mut twice);
        assert_eq!(twice, img);
    }

    #[test]
    fn shift_fills_with_zeros() {
        let img = image();
        let mut out = vec![0; img.len()];
        augment_image(&img, (2, 3, 3), Draw { flip: false, dy: PAD + 1, dx: PAD }, &mut out);
        assert_eq!(&out[..6], &img[3..9]);
        assert_eq!(&out[6..9], &[0, 0, 0]);
    }

    #[test]
    fn draws_are_reproducible_per_index() {
        let a = Augmentation { seed: 3, epoch: 2 };
        let draws: Vec<Draw> = (0..50).map(|i| a.draw(i)).collect();
        let again: Vec<Draw> = (0..50).rev().map(|i| a.draw(i)).collect();
        assert_eq!(draws, again.into_iter().rev().collect::<Vec<_>>());
        assert!(draws.iter().any(|d| d.flip) && draws.iter().any(|d| !d.flip));
        assert_ne!(draws, (0..50).map(|i| Augmentation { seed: 3, epoch: 3 }.draw(i)).collect::<Vec<_>>());
    }
}
