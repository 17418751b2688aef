use crate::autodiff::graph::Var;
use crate::autodiff::tensor::Tensor;
use crate::error::{config_err, Result};
use crate::scalar::Scalar;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Statistics source for batch normalization.
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a, T> {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with the given running mean and variance.
    Eval { mean: &'a [T], var: &'a [T] },
}

/// Batch statistics observed in train mode; `var` is the unbiased estimate
/// used for running-average updates.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BnStats<T> {
    /// `running ← (1−m)·running + m·batch`.
    pub fn update_running(&self, running_mean: &mut [T], running_var: &mut [T]) {
        let m = T::lit(BN_MOMENTUM);
        for (r, &b) in running_mean.iter_mut().zip(&self.mean) {
            *r = (T::one() - m) * *r + m * b;
        }
        for (r, &b) in running_var.iter_mut().zip(&self.var) {
            *r = (T::one() - m) * *r + m * b;
        }
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    /// Per-channel normalization of an NCHW tensor followed by `gamma·x̂ + beta`.
    pub fn batch_norm2d(
        self,
        gamma: Var<'g, T>,
        beta: Var<'g, T>,
        mode: BnMode<'_, T>,
    ) -> Result<(Var<'g, T>, Option<BnStats<T>>)> {
        let x = self.value();
        let (n, c, h, w) = x.dims4()?;
        let (gv, bv) = (gamma.value(), beta.value());
        if gv.numel() != c || bv.numel() != c {
            return Err(config_err!(
                "batch_norm2d: {c} channels but gamma/beta have {}/{} entries",
                gv.numel(),
                bv.numel()
            ));
        }
        let hw = h * w;
        let m = n * hw;
        let eps = T::lit(BN_EPS);
        let xd = x.data();
        let plane = |s: usize, ch: usize| &xd[(s * c + ch) * hw..(s * c + ch + 1) * hw];

        let (mean, inv_std, stats) = match mode {
            BnMode::Train => {
                if m < 2 {
                    return Err(config_err!(
                        "batch_norm2d in train mode needs N·H·W ≥ 2, got {m}"
                    ));
                }
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let s: T = (0..n).map(|s| plane(s, ch).iter().copied().sum::<T>()).sum();
                    let mu = s / T::lit(m as f64);
                    let ss: T = (0..n)
                        .map(|s| plane(s, ch).iter().map(|&v| (v - mu) * (v - mu)).sum::<T>())
                        .sum();
                    mean[ch] = mu;
                    var[ch] = ss / T::lit(m as f64);
                }
                let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                let unbiased = var
                    .iter()
                    .map(|&v| v * T::lit(m as f64) / T::lit((m - 1) as f64))
                    .collect();
                let stats = BnStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, inv_std, Some(stats))
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(config_err!("batch_norm2d: running stats do not have {c} channels"));
                }
                let inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                (mean.to_vec(), inv_std, None)
            }
        };

        let (gd, bd) = (gv.data(), bv.data());
        let mut out = vec![T::zero(); x.numel()];
        let mut xhat = vec![T::zero(); x.numel()];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * hw;
                for i in 0..hw {
                    let xh = (xd[off + i] - mean[ch]) * inv_std[ch];
                    xhat[off + i] = xh;
                    out[off + i] = gd[ch] * xh + bd[ch];
                }
            }
        }
        let out = Tensor::new(x.shape(), out)?;
        let train = matches!(mode, BnMode::Train);
        let var = self.graph().record(
            out,
            &[self, gamma, beta],
            Box::new(move |a| {
                let g = a.grad.data();
                let gamma = a.inputs[1].data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for s in 0..n {
                    for ch in 0..c {
                        let off = (s * c + ch) * hw;
                        for i in 0..hw {
                            dgamma[ch] += g[off + i] * xhat[off + i];
                            dbeta[ch] += g[off + i];
                        }
                    }
                }
                let dx = a.needs[0].then(|| {
                    let mut dx = vec![T::zero(); n * c * hw];
                    let mt = T::lit(m as f64);
                    for ch in 0..c {
                        // Σ dx̂ = γ·Σ dy and Σ dx̂·x̂ = γ·Σ dy·x̂
                        let sum_dxhat = gamma[ch] * dbeta[ch];
                        let sum_dxhat_xhat = gamma[ch] * dgamma[ch];
                        for s in 0..n {
                            let off = (s * c + ch) * hw;
                            for i in 0..hw {
                                let dxhat = g[off + i] * gamma[ch];
                                dx[off + i] = if train {
                                    inv_std[ch] / mt
                                        * (mt * dxhat - sum_dxhat - xhat[off + i] * sum_dxhat_xhat)
                                } else {
                                    dxhat * inv_std[ch]
                                };
                            }
                        }
                    }
                    Tensor::new(a.inputs[0].shape(), dx).expect("shape")
                });
                vec![
                    dx,
                    a.needs[1].then(|| Tensor::new(a.inputs[1].shape(), dgamma).expect("shape")),
                    a.needs[2].then(|| Tensor::new(a.inputs[2].shape(), dbeta).expect("shape")),
                ]
            }),
        );
        Ok((var, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::graph::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn train_mode_standardizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::randn(&[4, 3, 5, 5], 5.0, &mut rng).map(|v| v + 7.0));
        let gamma = g.constant(Tensor::full(&[3], 1.0));
        let beta = g.constant(Tensor::zeros(&[3]));
        let (y, stats) = x.batch_norm2d(gamma, beta, BnMode::Train).unwrap();
        assert!(stats.is_some());
        let y = y.value();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|s| y.data()[(s * 3 + ch) * 25..(s * 3 + ch + 1) * 25].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-9);
            // ε shrinks the variance slightly below one
            assert!((var - 1.0).abs() < 1e-6, "{var}");
        }
    }

    #[test]
    fn eval_identity_with_unit_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Graph::<f64>::new();
        let xt = Tensor::randn(&[2, 2, 3, 3], 1.0, &mut rng);
        let x = g.constant(xt.clone());
        let gamma = g.constant(Tensor::full(&[2], 1.0));
        let beta = g.constant(Tensor::zeros(&[2]));
        let (mean, var) = ([0.0; 2], [1.0; 2]);
        let (y, stats) = x
            .batch_norm2d(gamma, beta, BnMode::Eval { mean: &mean, var: &var })
            .unwrap();
        assert!(stats.is_none());
        let scale = 1.0 / (1.0 + BN_EPS).sqrt();
        for (a, b) in y.value().data().iter().zip(xt.data()) {
            assert!((a - b * scale).abs() < 1e-15);
            assert!((a - b).abs() < 1e-5 * b.abs().max(1.0));
        }
    }

    #[test]
    fn constant_channel_does_not_divide_by_zero() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[2, 1, 2, 2], 4.0));
        let gamma = g.constant(Tensor::full(&[1], 1.0));
        let beta = g.constant(Tensor::zeros(&[1]));
        let (y, _) = x.batch_norm2d(gamma, beta, BnMode::Train).unwrap();
        assert!(y.value().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_value_batch_rejected_in_train_mode() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[1, 1, 1, 1], 4.0));
        let gamma = g.constant(Tensor::full(&[1], 1.0));
        let beta = g.constant(Tensor::zeros(&[1]));
        assert!(x.batch_norm2d(gamma, beta, BnMode::Train).is_err());
    }

    #[test]
    fn running_update_uses_momentum() {
        let stats = BnStats { mean: vec![1.0f64], var: vec![3.0] };
        let (mut m, mut v) = (vec![0.0], vec![1.0]);
        stats.update_running(&mut m, &mut v);
        assert!((m[0] - 0.1).abs() < 1e-15);
        assert!((v[0] - 1.2).abs() < 1e-15);
    }
}
