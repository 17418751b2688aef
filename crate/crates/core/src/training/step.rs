use rand::RngCore;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{config_err, Result};
use crate::network::{BnPhase, ForwardOptions, GateMode, GateTrace, SkipNet};
use crate::scalar::Scalar;
use crate::training::returns::{compute_returns, ReturnRecord, RewardConfig};

/// Summary of one gradient step.
#[derive(Clone, Debug)]
pub struct StepStats {
    /// Mean per-sample cross-entropy.
    pub loss: f64,
    /// Value of the differentiated objective.
    pub objective: f64,
    pub correct: usize,
    pub trace: GateTrace,
}

impl StepStats {
    pub fn batch_size(&self) -> usize {
        self.trace.batch_size()
    }
}

pub(crate) fn count_correct<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    predictions(logits).iter().zip(labels).filter(|(p, l)| p == l).count()
}

/// Row-wise argmax; the first maximum wins ties.
pub fn predictions<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.row_len();
    logits
        .data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Cross-entropy step: forward, backward, gradients added to the parameter
/// set, batch-norm statistics folded in.
pub fn supervised_step<T: Scalar>(
    net: &mut SkipNet<T>,
    x: &Tensor<T>,
    labels: &[usize],
    opts: &ForwardOptions,
    rng: Option<&mut dyn RngCore>,
) -> Result<StepStats> {
    let graph = Graph::new();
    let out = net.forward(&graph, x, opts, rng, true)?;
    let (_, loss) = out.logits.softmax_cross_entropy(labels)?;
    let mut grads = graph.backward(loss)?;
    let loss_v = loss.value().data()[0].as_f64();
    net.params_mut().accumulate_grads(&out.bindings, &mut grads, T::one());
    net.apply_bn_updates(&out.bn_updates);
    Ok(StepStats {
        loss: loss_v,
        objective: loss_v,
        correct: count_correct(&out.logits.value(), labels),
        trace: out.trace,
    })
}

/// Which return weights the log-probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Weighting {
    /// `r̂_i`, with the loss scaled by β.
    #[default]
    Relaxed,
    /// `r_i`.
    Plain,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HybridOptions {
    pub reward: RewardConfig,
    /// Drop the supervised term; only the policy gradient trains the network.
    pub pure_rl: bool,
    pub weighting: Weighting,
    /// Momentum of an optional per-gate moving-average baseline subtracted from the returns.
    pub baseline_momentum: Option<f64>,
}

impl HybridOptions {
    pub fn new(reward: RewardConfig) -> Self {
        HybridOptions { reward, pure_rl: false, weighting: Weighting::Relaxed, baseline_momentum: None }
    }
}

#[derive(Clone, Debug)]
pub struct HybridStats {
    pub step: StepStats,
    pub returns: ReturnRecord,
}

/// One sampled-gate step on `mean_n [L_n − Σ_i detach(r̂_{n,i})·log p(g_{n,i} | x_n)]`.
///
/// `baseline` holds one running value per gate and is read and updated only
/// when `opts.baseline_momentum` is set.
pub fn hybrid_step<T: Scalar>(
    net: &mut SkipNet<T>,
    x: &Tensor<T>,
    labels: &[usize],
    opts: &HybridOptions,
    bn: BnPhase,
    baseline: &mut Vec<f64>,
    rng: &mut dyn RngCore,
) -> Result<HybridStats> {
    let num_gates = net.num_gates();
    if num_gates == 0 {
        return Err(config_err!("policy-gradient refinement needs a gated network"));
    }
    opts.reward.validate(num_gates)?;
    let graph = Graph::new();
    let fopts = ForwardOptions { mode: GateMode::Sample, decisions: Default::default(), bn };
    let out = net.forward(&graph, x, &fopts, Some(rng), true)?;
    let (per_sample, loss) = out.logits.softmax_cross_entropy(labels)?;
    let losses: Vec<f64> = per_sample.value().data().iter().map(|v| v.as_f64()).collect();
    let returns = compute_returns(&out.trace, &losses, &opts.reward)?;
    let weights = match opts.weighting {
        Weighting::Relaxed => &returns.relaxed,
        Weighting::Plain => &returns.returns,
    };
    let n = labels.len();
    let mut column = vec![0.0; n];
    let mut policy: Option<Var<'_, T>> = None;
    for (i, lp) in out.log_probs.iter().enumerate() {
        for (c, w) in column.iter_mut().zip(weights) {
            *c = w[i];
        }
        if let Some(m) = opts.baseline_momentum {
            if baseline.len() != num_gates {
                *baseline = vec![0.0; num_gates];
            }
            let b = baseline[i];
            baseline[i] = m * b + (1.0 - m) * column.iter().sum::<f64>() / n as f64;
            column.iter_mut().for_each(|c| *c -= b);
        }
        let w: Vec<T> = column.iter().map(|&c| T::lit(-c / n as f64)).collect();
        let term = lp.dot_const(&w)?;
        policy = Some(match policy {
            Some(p) => p.add(term)?,
            None => term,
        });
    }
    let policy = policy.expect("gated network records log-probabilities");
    let objective = if opts.pure_rl { policy } else { loss.add(policy)? };
    let mut grads = graph.backward(objective)?;
    net.params_mut().accumulate_grads(&out.bindings, &mut grads, T::one());
    net.apply_bn_updates(&out.bn_updates);
    Ok(HybridStats {
        step: StepStats {
            loss: loss.value().data()[0].as_f64(),
            objective: objective.value().data()[0].as_f64(),
            correct: count_correct(&out.logits.value(), labels),
            trace: out.trace,
        },
        returns,
    })
}
