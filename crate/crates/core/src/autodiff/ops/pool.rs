use crate::autodiff::graph::Var;
use crate::autodiff::tensor::Tensor;
use crate::error::{config_err, Result};
use crate::scalar::Scalar;

fn check_window<T: Scalar>(op: &str, x: &Tensor<T>, k: usize) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(config_err!(
            "{op}: spatial size {h}x{w} is not divisible by window {k}"
        ));
    }
    Ok((n, c, h, w))
}

impl<'g, T: Scalar> Var<'g, T> {
    /// Max pooling with window `k` and stride `k`. Ties go to the first
    /// position in row-major scan order.
    pub fn max_pool2d(self, k: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        let (n, c, h, w) = check_window("max_pool2d", &x, k)?;
        let (oh, ow) = (h / k, w / k);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        let xd = x.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * k * w + ox * k;
                    for dy in 0..k {
                        for dx in 0..k {
                            let i = base + (oy * k + dy) * w + ox * k + dx;
                            if xd[i] > xd[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        let out = Tensor::new(&[n, c, oh, ow], out)?;
        Ok(self.graph().record(
            out,
            &[self],
            Box::new(move |a| {
                let mut dx = Tensor::zeros(a.inputs[0].shape());
                let d = dx.data_mut();
                for (&i, &g) in argmax.iter().zip(a.grad.data()) {
                    d[i] += g;
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Average pooling with window `k` and stride `k`.
    pub fn avg_pool2d(self, k: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        let (n, c, h, w) = check_window("avg_pool2d", &x, k)?;
        let (oh, ow) = (h / k, w / k);
        let inv = T::one() / T::lit((k * k) as f64);
        let xd = x.data();
        let mut out = vec![T::zero(); n * c * oh * ow];
        for plane in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    for dy in 0..k {
                        for dx in 0..k {
                            acc += xd[plane * h * w + (oy * k + dy) * w + ox * k + dx];
                        }
                    }
                    out[(plane * oh + oy) * ow + ox] = acc * inv;
                }
            }
        }
        let out = Tensor::new(&[n, c, oh, ow], out)?;
        Ok(self.graph().record(
            out,
            &[self],
            Box::new(move |a| {
                let mut dx = Tensor::zeros(a.inputs[0].shape());
                let d = dx.data_mut();
                let g = a.grad.data();
                for plane in 0..n * c {
                    for y in 0..h {
                        for x in 0..w {
                            d[plane * h * w + y * w + x] = g[(plane * oh + y / k) * ow + x / k] * inv;
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Per-channel spatial mean: N×C×H×W → N×C.
    pub fn global_avg_pool(self) -> Result<Var<'g, T>> {
        let x = self.value();
        let (n, c, h, w) = x.dims4()?;
        let hw = h * w;
        let inv = T::one() / T::lit(hw as f64);
        let out: Vec<T> = x
            .data()
            .chunks(hw)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::new(&[n, c], out)?;
        Ok(self.graph().record(
            out,
            &[self],
            Box::new(move |a| {
                let data = a
                    .grad
                    .data()
                    .iter()
                    .flat_map(|&g| std::iter::repeat_n(g * inv, hw))
                    .collect();
                vec![Some(Tensor::new(a.inputs[0].shape(), data).expect("shape"))]
            }),
        ))
    }
}
