//! 2-d cross-correlation over NCHW tensors with square kernels.
//!
//! The fast path lowers each sample to a column matrix and multiplies it by
//! the flattened filter bank. Columns are rebuilt during backward instead of
//! being kept alive, which keeps peak memory at one sample's worth.
//! [`conv2d_direct`] is the plain nested-loop definition used as a test oracle.

use crate::autodiff::graph::Var;
use crate::autodiff::tensor::Tensor;
use crate::error::{config_err, Result};
use crate::scalar::{gemm, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

/// Output side length of a convolution or pooling window.
pub fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(config_err!("stride must be positive"));
    }
    let padded = len + 2 * pad;
    if padded < k {
        return Err(config_err!(
            "window {k} larger than padded input {padded} (input {len}, padding {pad})"
        ));
    }
    Ok((padded - k) / stride + 1)
}

fn im2col<T: Scalar>(x: &[T], g: &Geometry, col: &mut [T]) {
    let ohw = g.oh * g.ow;
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut col[row * ohw..(row + 1) * ohw];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], g: &Geometry, dx: &mut [T]) {
    let ohw = g.oh * g.ow;
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &col[row * ohw..(row + 1) * ohw];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn geometry<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, Geometry)> {
    let (n, c, h, w) = input.dims4()?;
    let (o, wc, kh, kw) = weight.dims4()?;
    if wc != c {
        return Err(config_err!(
            "conv2d: input has {c} channels but weight expects {wc} (weight shape {:?})",
            weight.shape()
        ));
    }
    if kh != kw {
        return Err(config_err!("conv2d: non-square kernel {kh}x{kw}"));
    }
    let oh = conv_out_len(h, kh, stride, pad)?;
    let ow = conv_out_len(w, kw, stride, pad)?;
    Ok((
        n,
        o,
        Geometry {
            c,
            h,
            w,
            k: kh,
            stride,
            pad,
            oh,
            ow,
        },
    ))
}

impl<'g, T: Scalar> Var<'g, T> {
    /// Convolution of `self` (N×C×H×W) with `weight` (O×C×k×k), no bias.
    pub fn conv2d(self, weight: Var<'g, T>, stride: usize, pad: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        let wt = weight.value();
        let (n, o, g) = geometry(&x, &wt, stride, pad)?;
        let ckk = g.c * g.k * g.k;
        let ohw = g.oh * g.ow;
        let in_len = g.c * g.h * g.w;
        let mut out = vec![T::zero(); n * o * ohw];
        let mut col = vec![T::zero(); ckk * ohw];
        for s in 0..n {
            im2col(&x.data()[s * in_len..(s + 1) * in_len], &g, &mut col);
            gemm(o, ckk, ohw, wt.data(), false, &col, false, T::zero(), &mut out[s * o * ohw..(s + 1) * o * ohw]);
        }
        let out = Tensor::new(&[n, o, g.oh, g.ow], out)?;
        Ok(self.graph().record(
            out,
            &[self, weight],
            Box::new(move |a| {
                let (x, wt, gout) = (a.inputs[0], a.inputs[1], a.grad.data());
                let mut dx = a.needs[0].then(|| vec![T::zero(); x.numel()]);
                let mut dw = a.needs[1].then(|| vec![T::zero(); wt.numel()]);
                let mut col = vec![T::zero(); ckk * ohw];
                for s in 0..n {
                    let go = &gout[s * o * ohw..(s + 1) * o * ohw];
                    if let Some(dw) = dw.as_mut() {
                        im2col(&x.data()[s * in_len..(s + 1) * in_len], &g, &mut col);
                        // dW (o×ckk) += gout (o×ohw) · colᵀ
                        gemm(o, ohw, ckk, go, false, &col, true, T::one(), dw);
                    }
                    if let Some(dx) = dx.as_mut() {
                        // dcol (ckk×ohw) = Wᵀ · gout
                        gemm(ckk, o, ohw, wt.data(), true, go, false, T::zero(), &mut col);
                        col2im(&col, &g, &mut dx[s * in_len..(s + 1) * in_len]);
                    }
                }
                vec![
                    dx.map(|d| Tensor::new(x.shape(), d).expect("shape")),
                    dw.map(|d| Tensor::new(wt.shape(), d).expect("shape")),
                ]
            }),
        ))
    }
}

/// Direct nested-loop convolution: the reference definition.
pub fn conv2d_direct<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (n, o, g) = geometry(input, weight, stride, pad)?;
    let mut out = Tensor::zeros(&[n, o, g.oh, g.ow]);
    let (x, w) = (input.data(), weight.data());
    let od = out.data_mut();
    for s in 0..n {
        for oc in 0..o {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = T::zero();
                    for c in 0..g.c {
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                acc += x[((s * g.c + c) * g.h + iy as usize) * g.w + ix as usize]
                                    * w[((oc * g.c + c) * g.k + ky) * g.k + kx];
                            }
                        }
                    }
                    od[((s * o + oc) * g.oh + oy) * g.ow + ox] = acc;
                }
            }
        }
    }
    Ok(out)
}
