use crate::autodiff::graph::Var;
use crate::autodiff::tensor::Tensor;
use crate::error::{config_err, data_err, Result};
use crate::scalar::{gemm, Scalar};

impl<'g, T: Scalar> Var<'g, T> {
    /// Affine map `x·W + b` for `x` N×D, `W` D×K, `b` K.
    pub fn linear(self, weight: Var<'g, T>, bias: Var<'g, T>) -> Result<Var<'g, T>> {
        let x = self.value();
        let (n, d) = x.dims2()?;
        let wt = weight.value();
        let (wd, k) = wt.dims2()?;
        if wd != d {
            return Err(config_err!(
                "linear: input has {d} features but weight is {wd}x{k}"
            ));
        }
        let b = bias.value();
        if b.numel() != k {
            return Err(config_err!("linear: bias has {} entries, expected {k}", b.numel()));
        }
        let mut out: Vec<T> = (0..n).flat_map(|_| b.data().iter().copied()).collect();
        gemm(n, d, k, x.data(), false, wt.data(), false, T::one(), &mut out);
        let out = Tensor::new(&[n, k], out)?;
        Ok(self.graph().record(
            out,
            &[self, weight, bias],
            Box::new(move |a| {
                let (x, w, g) = (a.inputs[0], a.inputs[1], a.grad.data());
                let dx = a.needs[0].then(|| {
                    let mut dx = vec![T::zero(); n * d];
                    gemm(n, k, d, g, false, w.data(), true, T::zero(), &mut dx);
                    Tensor::new(x.shape(), dx).expect("shape")
                });
                let dw = a.needs[1].then(|| {
                    let mut dw = vec![T::zero(); d * k];
                    gemm(d, n, k, x.data(), true, g, false, T::zero(), &mut dw);
                    Tensor::new(w.shape(), dw).expect("shape")
                });
                let db = a.needs[2].then(|| {
                    let mut db = vec![T::zero(); k];
                    for row in g.chunks(k) {
                        for (acc, &v) in db.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    Tensor::new(&[k], db).expect("shape")
                });
                vec![dx, dw, db]
            }),
        ))
    }

    /// Columns `[start, start+len)` of an N×D matrix.
    pub fn narrow_cols(self, start: usize, len: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        let (n, d) = x.dims2()?;
        if len == 0 || start + len > d {
            return Err(config_err!("narrow_cols: [{start}, {}) outside {d} columns", start + len));
        }
        let out: Vec<T> = x
            .data()
            .chunks(d)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let out = Tensor::new(&[n, len], out)?;
        Ok(self.graph().record(
            out,
            &[self],
            Box::new(move |a| {
                let mut dx = vec![T::zero(); n * d];
                for (r, g) in a.grad.data().chunks(len).enumerate() {
                    dx[r * d + start..r * d + start + len].copy_from_slice(g);
                }
                vec![Some(Tensor::new(&[n, d], dx).expect("shape"))]
            }),
        ))
    }

    /// Per-sample softmax cross-entropy against class indices. Returns the
    /// per-sample loss vector (length N) and its mean.
    pub fn softmax_cross_entropy(self, labels: &[usize]) -> Result<(Var<'g, T>, Var<'g, T>)> {
        let x = self.value();
        let (n, k) = x.dims2()?;
        if labels.len() != n {
            return Err(data_err!("{} labels for {n} logit rows", labels.len()));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(data_err!("label {l} of sample {i} is outside [0, {k})"));
        }
        let probs = softmax_rows(x.data(), k);
        let losses: Vec<T> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let row = &x.data()[i * k..(i + 1) * k];
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
                lse - row[l]
            })
            .collect();
        let labels = labels.to_vec();
        let per_sample = self.graph().record(
            Tensor::new(&[n], losses)?,
            &[self],
            Box::new(move |a| {
                let g = a.grad.data();
                let mut d = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    d[i * k + l] -= T::one();
                    for v in &mut d[i * k..(i + 1) * k] {
                        *v *= g[i];
                    }
                }
                vec![Some(Tensor::new(&[n, k], d).expect("shape"))]
            }),
        );
        let mean = per_sample.mean();
        Ok((per_sample, mean))
    }
}

/// Row-wise numerically stable softmax of an N×K buffer.
pub fn softmax_rows<T: Scalar>(logits: &[T], k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let z: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / z));
    }
    out
}
