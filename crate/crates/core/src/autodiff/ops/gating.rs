//! Operations specific to per-sample gating of residual blocks.

use crate::autodiff::graph::Var;
use crate::autodiff::tensor::Tensor;
use crate::error::{config_err, Result};
use crate::scalar::Scalar;

/// Gate probabilities are clipped to `[LOG_PROB_CLAMP, 1 − LOG_PROB_CLAMP]` before taking logs.
pub const LOG_PROB_CLAMP: f64 = 1e-6;

fn gate_column<T: Scalar>(op: &str, s: &Tensor<T>, rows: usize) -> Result<()> {
    if s.shape() != [rows, 1] {
        return Err(config_err!(
            "{op}: gate tensor must be {rows}x1, got {:?}",
            s.shape()
        ));
    }
    Ok(())
}

impl<'g, T: Scalar> Var<'g, T> {
    /// Per-sample convex combination `s·self + (1−s)·skip` with `s` of shape N×1.
    pub fn mix(self, skip: Var<'g, T>, s: Var<'g, T>) -> Result<Var<'g, T>> {
        let (f, x, sv) = (self.value(), skip.value(), s.value());
        if f.shape() != x.shape() {
            return Err(config_err!(
                "mix: block output {:?} and skip path {:?} differ",
                f.shape(),
                x.shape()
            ));
        }
        let n = f.rows();
        gate_column("mix", &sv, n)?;
        let len = f.row_len();
        let mut out = Vec::with_capacity(f.numel());
        for r in 0..n {
            let g = sv.data()[r];
            let h = T::one() - g;
            out.extend(f.row(r).iter().zip(x.row(r)).map(|(&a, &b)| g * a + h * b));
        }
        let out = Tensor::new(f.shape(), out)?;
        Ok(self.graph().record(
            out,
            &[self, skip, s],
            Box::new(move |a| {
                let (f, x, s, g) = (a.inputs[0], a.inputs[1], a.inputs[2], a.grad);
                let scaled = |weight: &dyn Fn(T) -> T| {
                    let mut d = Vec::with_capacity(g.numel());
                    for r in 0..n {
                        let w = weight(s.data()[r]);
                        d.extend(g.row(r).iter().map(|&v| v * w));
                    }
                    Tensor::new(g.shape(), d).expect("shape")
                };
                let df = a.needs[0].then(|| scaled(&|s| s));
                let dx = a.needs[1].then(|| scaled(&|s| T::one() - s));
                let ds = a.needs[2].then(|| {
                    let d = (0..n)
                        .map(|r| {
                            let (gr, fr, xr) = (g.row(r), f.row(r), x.row(r));
                            (0..len).map(|i| gr[i] * (fr[i] - xr[i])).sum()
                        })
                        .collect();
                    Tensor::new(&[n, 1], d).expect("shape")
                });
                vec![df, dx, ds]
            }),
        ))
    }

    /// Hard threshold `I(s ≥ 0.5)` forward, identity backward.
    pub fn straight_through(self) -> Var<'g, T> {
        let half = T::lit(0.5);
        let out = self.value().map(|v| if v >= half { T::one() } else { T::zero() });
        self.graph()
            .record(out, &[self], Box::new(|a| vec![Some(a.grad.clone())]))
    }

    /// `s` where the decision is 1 and `1 − s` where it is 0.
    pub fn bernoulli_prob(self, decisions: &[bool]) -> Result<Var<'g, T>> {
        let s = self.value();
        gate_column("bernoulli_prob", &s, decisions.len())?;
        let out = s
            .data()
            .iter()
            .zip(decisions)
            .map(|(&p, &d)| if d { p } else { T::one() - p })
            .collect();
        let out = Tensor::new(s.shape(), out)?;
        let decisions = decisions.to_vec();
        Ok(self.graph().record(
            out,
            &[self],
            Box::new(move |a| {
                let d = a
                    .grad
                    .data()
                    .iter()
                    .zip(&decisions)
                    .map(|(&g, &d)| if d { g } else { -g })
                    .collect();
                vec![Some(Tensor::new(a.grad.shape(), d).expect("shape"))]
            }),
        ))
    }

    /// `log p(decision | s)` with `s` clipped away from 0 and 1.
    pub fn bernoulli_log_prob(self, decisions: &[bool]) -> Result<Var<'g, T>> {
        let s = self.value();
        gate_column("bernoulli_log_prob", &s, decisions.len())?;
        let lo = T::lit(LOG_PROB_CLAMP);
        let hi = T::one() - lo;
        let out = s
            .data()
            .iter()
            .zip(decisions)
            .map(|(&p, &d)| {
                let p = p.max(lo).min(hi);
                if d {
                    p.ln()
                } else {
                    (T::one() - p).ln()
                }
            })
            .collect();
        let out = Tensor::new(s.shape(), out)?;
        let decisions = decisions.to_vec();
        Ok(self.graph().record(
            out,
            &[self],
            Box::new(move |a| {
                let d = a
                    .inputs[0]
                    .data()
                    .iter()
                    .zip(a.grad.data())
                    .zip(&decisions)
                    .map(|((&p, &g), &d)| {
                        if p < lo || p > hi {
                            T::zero()
                        } else if d {
                            g / p
                        } else {
                            -g / (T::one() - p)
                        }
                    })
                    .collect();
                vec![Some(Tensor::new(a.grad.shape(), d).expect("shape"))]
            }),
        ))
    }

    /// Appends `extra` zero channels to an NCHW tensor.
    pub fn pad_channels(self, extra: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        let (n, c, h, w) = x.dims4()?;
        let hw = h * w;
        let oc = c + extra;
        let mut out = vec![T::zero(); n * oc * hw];
        for s in 0..n {
            out[s * oc * hw..(s * oc + c) * hw].copy_from_slice(x.row(s));
        }
        let out = Tensor::new(&[n, oc, h, w], out)?;
        Ok(self.graph().record(
            out,
            &[self],
            Box::new(move |a| {
                let g = a.grad.data();
                let d = (0..n)
                    .flat_map(|s| g[s * oc * hw..(s * oc + c) * hw].iter().copied())
                    .collect();
                vec![Some(Tensor::new(&[n, c, h, w], d).expect("shape"))]
            }),
        ))
    }

    /// Rows `idx` of the leading dimension.
    pub fn gather_rows(self, idx: &[usize]) -> Result<Var<'g, T>> {
        let out = self.value().gather_rows(idx)?;
        let idx = idx.to_vec();
        Ok(self.graph().record(
            out,
            &[self],
            Box::new(move |a| {
                let mut d = Tensor::zeros(a.inputs[0].shape());
                let len = a.grad.row_len();
                for (j, &r) in idx.iter().enumerate() {
                    let dst = &mut d.data_mut()[r * len..(r + 1) * len];
                    for (v, &g) in dst.iter_mut().zip(a.grad.row(j)) {
                        *v += g;
                    }
                }
                vec![Some(d)]
            }),
        ))
    }

    /// Copy of `self` with rows `idx` replaced by the rows of `rows`.
    pub fn scatter_rows(self, idx: &[usize], rows: Var<'g, T>) -> Result<Var<'g, T>> {
        let (base, src) = (self.value(), rows.value());
        if src.rows() != idx.len() || src.row_len() != base.row_len() {
            return Err(config_err!(
                "scatter_rows: {:?} rows into {:?} at {} indices",
                src.shape(),
                base.shape(),
                idx.len()
            ));
        }
        let len = base.row_len();
        let mut out = base.as_ref().clone();
        let mut replaced = vec![false; base.rows()];
        for (j, &r) in idx.iter().enumerate() {
            if r >= base.rows() || replaced[r] {
                return Err(config_err!("scatter_rows: index {r} invalid or repeated"));
            }
            replaced[r] = true;
            out.data_mut()[r * len..(r + 1) * len].copy_from_slice(src.row(j));
        }
        let idx = idx.to_vec();
        Ok(self.graph().record(
            out,
            &[self, rows],
            Box::new(move |a| {
                let g = a.grad;
                let dbase = a.needs[0].then(|| {
                    let mut d = g.clone();
                    for (r, &rep) in replaced.iter().enumerate() {
                        if rep {
                            d.data_mut()[r * len..(r + 1) * len].fill(T::zero());
                        }
                    }
                    d
                });
                let drows = a.needs[1].then(|| g.gather_rows(&idx).expect("rows"));
                vec![dbase, drows]
            }),
        ))
    }
}
