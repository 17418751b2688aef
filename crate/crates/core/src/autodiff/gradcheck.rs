//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::graph::{Graph, Var};
use crate::autodiff::ops::{lstm_cell, BnMode, LstmWeights};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of a gradient check.
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    /// Worst `|a−b| / max(|a|, |b|, 1e−8)` over probed coordinates away from kinks.
    pub max_rel_err: f64,
    /// Worst `|a−b|` over the same coordinates.
    pub max_abs_err: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub probes: usize,
    /// Coordinates whose one-sided slopes disagree: the function is not
    /// differentiable there and the coordinate is left out of `max_rel_err`.
    pub kinks: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Probe at most this many coordinates (chosen at random); `None` probes all.
    pub max_probes: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            max_probes: None,
        }
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` against central
/// differences `(f(x+h) − f(x−h)) / 2h`.
pub fn grad_check<F>(
    f: F,
    inputs: &[Tensor<f64>],
    opts: GradCheckOptions,
    rng: &mut impl Rng,
) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<_> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = f(&g, &vars)?.value();
        if out.numel() != 1 {
            return Err(Error::Contract("grad_check needs a scalar function".into()));
        }
        Ok(out.data()[0])
    };

    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|x| g.leaf(x.clone(), true)).collect();
    let out = f(&g, &vars)?;
    let base = out.value().data()[0];
    if !base.is_finite() {
        return Err(Error::Contract(format!("function value {base} is not finite")));
    }
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
        .collect();

    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, x)| (0..x.numel()).map(move |j| (i, j)))
        .collect();
    let chosen: Vec<(usize, usize)> = match opts.max_probes {
        Some(m) if m < coords.len() => {
            let mut idx = sample(rng, coords.len(), m).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|k| coords[k]).collect()
        }
        _ => coords,
    };

    let h = opts.step;
    let mut report = GradCheckReport::default();
    let mut probe = inputs.to_vec();
    for (i, j) in chosen {
        let orig = probe[i].data()[j];
        let mut at = |d: f64| -> Result<f64> {
            probe[i].data_mut()[j] = orig + d;
            let v = eval(&probe);
            probe[i].data_mut()[j] = orig;
            v
        };
        let (plus, minus) = (at(h)?, at(-h)?);
        let (plus_half, minus_half) = (at(h / 2.0)?, at(-h / 2.0)?);
        let a = analytic[i].data()[j];
        if ![plus, minus, plus_half, minus_half, a].iter().all(|v| v.is_finite()) {
            return Err(Error::Contract(format!(
                "non-finite value while probing input {i} element {j}"
            )));
        }
        report.probes += 1;
        // Smooth functions give a gap between one-sided slopes proportional to
        // the step; a kink inside the probe interval breaks that scaling.
        let gap = (plus - base) / h - (base - minus) / h;
        let gap_half = (plus_half - base) / (h / 2.0) - (base - minus_half) / (h / 2.0);
        let noise = 1e-7 * base.abs().max(1.0);
        if (gap - 2.0 * gap_half).abs() > noise + 1e-3 * gap.abs() {
            report.kinks.push((i, j));
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
        let e = rel_err(a, numeric);
        if report.worst.is_none() || e > report.max_rel_err {
            report.max_rel_err = e;
            report.worst = Some((i, j));
        }
    }
    Ok(report)
}


fn readout<'g>(y: Var<'g, f64>, seed: u64) -> Result<Var<'g, f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w: Vec<f64> = (0..y.value().numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    y.dot_const(&w)
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

/// Finite-difference checks of every differentiable operation on random
/// small inputs, each through a random linear readout.
///
/// `straight_through` is excluded: its backward is a deliberate surrogate.
pub fn op_suite(seed: u64, opts: GradCheckOptions) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    macro_rules! check {
        ($name:expr, $inputs:expr, |$g:ident, $v:ident| $body:expr) => {{
            let inputs: Vec<Tensor<f64>> = $inputs;
            let r = grad_check(|$g, $v| readout($body, seed), &inputs, opts, &mut rng)?;
            out.push(($name, r));
        }};
    }
    let x4 = |rng: &mut ChaCha8Rng| randn(&[2, 3, 4, 4], rng);

    check!("conv2d", vec![randn(&[2, 3, 8, 8], &mut rng), randn(&[4, 3, 3, 3], &mut rng)], |_g, v| v[0].conv2d(v[1], 1, 1)?);
    check!("conv2d stride 2", vec![randn(&[2, 3, 8, 8], &mut rng), randn(&[4, 3, 3, 3], &mut rng)], |_g, v| v[0].conv2d(v[1], 2, 1)?);
    check!("relu", vec![x4(&mut rng)], |_g, v| v[0].relu());
    check!("sigmoid", vec![x4(&mut rng)], |_g, v| v[0].sigmoid());
    check!("tanh", vec![x4(&mut rng)], |_g, v| v[0].tanh());
    check!("exp", vec![x4(&mut rng)], |_g, v| v[0].exp());
    check!("scale", vec![x4(&mut rng)], |_g, v| v[0].scale(-1.7));
    check!("add_scalar", vec![x4(&mut rng)], |_g, v| v[0].add_scalar(0.3).mul(v[0])?);
    check!("add", vec![x4(&mut rng), x4(&mut rng)], |_g, v| v[0].add(v[1])?);
    check!("sub", vec![x4(&mut rng), x4(&mut rng)], |_g, v| v[0].sub(v[1])?);
    check!("mul", vec![x4(&mut rng), x4(&mut rng)], |_g, v| v[0].mul(v[1])?);
    check!("sum", vec![x4(&mut rng)], |_g, v| v[0].mul(v[0])?.sum());
    check!("mean", vec![x4(&mut rng)], |_g, v| v[0].mul(v[0])?.mean());
    check!("reshape", vec![x4(&mut rng)], |_g, v| v[0].reshape(&[2, 48])?.mul(v[0].reshape(&[2, 48])?)?);
    check!("max_pool2d", vec![x4(&mut rng)], |_g, v| v[0].max_pool2d(2)?);
    check!("avg_pool2d", vec![x4(&mut rng)], |_g, v| v[0].avg_pool2d(2)?);
    check!("global_avg_pool", vec![x4(&mut rng)], |_g, v| v[0].global_avg_pool()?);
    check!(
        "batch_norm2d train",
        vec![randn(&[2, 2, 3, 3], &mut rng), uniform(&[2], 0.5, 1.5, &mut rng), randn(&[2], &mut rng)],
        |_g, v| v[0].batch_norm2d(v[1], v[2], BnMode::Train)?.0
    );
    let (rm, rv) = (vec![0.2, -0.1], vec![0.7, 1.3]);
    check!(
        "batch_norm2d eval",
        vec![randn(&[2, 2, 3, 3], &mut rng), uniform(&[2], 0.5, 1.5, &mut rng), randn(&[2], &mut rng)],
        |_g, v| v[0].batch_norm2d(v[1], v[2], BnMode::Eval { mean: &rm, var: &rv })?.0
    );
    check!(
        "linear",
        vec![randn(&[3, 5], &mut rng), randn(&[5, 4], &mut rng), randn(&[4], &mut rng)],
        |_g, v| v[0].linear(v[1], v[2])?
    );
    check!("narrow_cols", vec![randn(&[3, 5], &mut rng)], |_g, v| v[0].narrow_cols(1, 3)?.tanh());
    check!(
        "lstm_cell",
        vec![
            randn(&[2, 10], &mut rng),
            randn(&[2, 10], &mut rng),
            randn(&[2, 10], &mut rng),
            Tensor::randn(&[10, 40], 0.3, &mut rng),
            Tensor::randn(&[10, 40], 0.3, &mut rng),
            Tensor::randn(&[40], 0.3, &mut rng),
        ],
        |_g, v| {
            let w = LstmWeights { w_ih: v[3], w_hh: v[4], bias: v[5] };
            let (h, c) = lstm_cell(v[0], v[1], v[2], &w)?;
            h.mul(c)?
        }
    );
    let labels = [0usize, 4, 2, 1];
    check!("softmax_cross_entropy mean", vec![randn(&[4, 5], &mut rng)], |_g, v| v[0].softmax_cross_entropy(&labels)?.1);
    check!("softmax_cross_entropy per-sample", vec![randn(&[4, 5], &mut rng)], |_g, v| v[0].softmax_cross_entropy(&labels)?.0);
    check!(
        "mix",
        vec![x4(&mut rng), x4(&mut rng), uniform(&[2, 1], 0.05, 0.95, &mut rng)],
        |_g, v| v[0].mix(v[1], v[2])?
    );
    let decisions = [true, false, true];
    check!("bernoulli_prob", vec![uniform(&[3, 1], 0.1, 0.9, &mut rng)], |_g, v| v[0].bernoulli_prob(&decisions)?);
    check!("bernoulli_log_prob", vec![uniform(&[3, 1], 0.1, 0.9, &mut rng)], |_g, v| v[0].bernoulli_log_prob(&decisions)?);
    check!("pad_channels", vec![x4(&mut rng)], |_g, v| v[0].pad_channels(2)?.mul(v[0].pad_channels(2)?)?);
    check!("gather_rows", vec![randn(&[4, 3], &mut rng)], |_g, v| v[0].gather_rows(&[2, 0, 2])?);
    check!(
        "scatter_rows",
        vec![randn(&[4, 3], &mut rng), randn(&[2, 3], &mut rng)],
        |_g, v| v[0].scatter_rows(&[3, 1], v[1])?
    );
    check!("dot_const", vec![x4(&mut rng)], |_g, v| v[0].mul(v[0])?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_at_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = grad_check(
            |_, v| Ok(v[0].mul(v[0])?.sum()),
            &[Tensor::scalar(3.0)],
            GradCheckOptions::default(),
            &mut rng,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-9, "{r:?}");
        assert!(r.kinks.is_empty());
    }

    #[test]
    fn relu_at_zero_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = grad_check(
            |_, v| Ok(v[0].relu().sum()),
            &[Tensor::from_f64(&[2], &[0.0, 0.7]).unwrap()],
            GradCheckOptions::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(r.kinks, vec![(0, 0)]);
        assert!(r.max_rel_err < 1e-9);
    }

    #[test]
    fn non_finite_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = grad_check(
            |_, v| Ok(v[0].exp().sum()),
            &[Tensor::scalar(800.0)],
            GradCheckOptions::default(),
            &mut rng,
        );
        assert!(r.is_err());
    }
}
