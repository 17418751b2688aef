use crate::autodiff::Tensor;
use crate::error::{config_err, Result};
use crate::scalar::Scalar;

/// `round(s·len)` with halves rounded up.
pub fn scaled_len(len: usize, s: f64) -> usize {
    (s * len as f64 + 0.5).floor() as usize
}

/// Bilinear resampling of one C×H×W image with half-pixel centers and edge clamping.
pub fn resize_bilinear(img: &[f64], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let axis = |out_len: usize, in_len: usize| -> Vec<(usize, usize, f64)> {
        let scale = in_len as f64 / out_len as f64;
        (0..out_len)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(in_len - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let (ys, xs) = (axis(oh, h), axis(ow, w));
    let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
    let mut out = Vec::with_capacity(c * oh * ow);
    for plane in img.chunks(h * w) {
        for &(y0, y1, ty) in &ys {
            for &(x0, x1, tx) in &xs {
                let top = lerp(plane[y0 * w + x0], plane[y0 * w + x1], tx);
                let bottom = lerp(plane[y1 * w + x0], plane[y1 * w + x1], tx);
                out.push(lerp(top, bottom, ty));
            }
        }
    }
    out
}

/// Resizes an N×C×H×W batch by `s`. The result's spatial size must be divisible by `divisor`.
pub fn resize_scale<T: Scalar>(batch: &Tensor<T>, s: f64, divisor: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = batch.dims4()?;
    if s == 1.0 {
        return Ok(batch.clone());
    }
    let (oh, ow) = (scaled_len(h, s), scaled_len(w, s));
    if oh == 0 || ow == 0 || oh % divisor != 0 || ow % divisor != 0 {
        return Err(config_err!(
            "scale {s} maps {h}x{w} to {oh}x{ow}, which the network cannot pool (needs multiples of {divisor})"
        ));
    }
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for img in batch.data().chunks(c * h * w) {
        let f: Vec<f64> = img.iter().map(|v| v.as_f64()).collect();
        out.extend(resize_bilinear(&f, c, h, w, oh, ow).into_iter().map(T::lit));
    }
    Tensor::new(&[n, c, oh, ow], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkerboard_to_single_pixel_is_mean() {
        assert_eq!(resize_bilinear(&[0.0, 1.0, 1.0, 0.0], 1, 2, 2, 1, 1), vec![0.5]);
    }

    #[test]
    fn constant_survives_round_trip() {
        let img = vec![0.37; 2 * 8 * 8];
        let down = resize_bilinear(&img, 2, 8, 8, 6, 6);
        let up = resize_bilinear(&down, 2, 6, 6, 8, 8);
        assert!(up.iter().all(|&v| v == 0.37));
    }

    #[test]
    fn unit_scale_is_identity() {
        let t = Tensor::<f64>::from_f64(&[1, 1, 4, 4], &(0..16).map(f64::from).collect::<Vec<_>>()).unwrap();
        assert_eq!(resize_scale(&t, 1.0, 4).unwrap(), t);
        let same = resize_bilinear(t.data(), 1, 4, 4, 4, 4);
        assert_eq!(same, t.data());
    }

    #[test]
    fn rounding_and_divisibility() {
        assert_eq!(scaled_len(32, 0.75), 24);
        assert_eq!(scaled_len(5, 0.5), 3);
        let t = Tensor::<f64>::zeros(&[1, 1, 32, 32]);
        assert_eq!(resize_scale(&t, 1.25, 4).unwrap().shape(), &[1, 1, 40, 40]);
        assert!(resize_scale(&t, 0.9, 4).is_err());
    }
}
