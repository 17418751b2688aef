use crate::autodiff::{Graph, Tensor};
use crate::error::{config_err, Result};
use crate::network::{BnPhase, Decisions, ForwardOptions, GateMode, SkipNet};
use crate::scalar::Scalar;
use crate::training::returns::RewardConfig;

/// Largest gate count [`enumerate_exact`] accepts.
pub const MAX_ENUMERATED_GATES: usize = 12;

/// Exact batch-mean objective `J = mean_n Σ_g p(g | x_n)·[L_n(g) − (α/N)·Σ_i R_i(g)]`
/// over all `2^N` decision sequences, with eval batch norm. Its gradient is
/// added to the parameter set.
///
/// Each path is evaluated by a full forward pass with fixed decisions, so a
/// recurrent gate's probability at step i is conditioned on the path prefix.
pub fn enumerate_exact<T: Scalar>(
    net: &mut SkipNet<T>,
    x: &Tensor<T>,
    labels: &[usize],
    reward: &RewardConfig,
) -> Result<f64> {
    let num_gates = net.num_gates();
    if num_gates == 0 {
        return Err(config_err!("exact enumeration needs a gated network"));
    }
    if num_gates > MAX_ENUMERATED_GATES {
        return Err(config_err!(
            "exact enumeration walks 2^N paths and is limited to N <= {MAX_ENUMERATED_GATES}; network has {num_gates} gates"
        ));
    }
    reward.validate(num_gates)?;
    let n = labels.len();
    let scale = reward.alpha / num_gates as f64;
    let mut total = 0.0;
    for code in 0..1usize << num_gates {
        let g: Vec<bool> = (0..num_gates).map(|i| code >> i & 1 == 1).collect();
        let skipped: f64 = g.iter().zip(&reward.costs).filter(|(&gi, _)| !gi).map(|(_, &c)| c).sum();
        let graph = Graph::new();
        let opts = ForwardOptions {
            mode: GateMode::Sample,
            decisions: Decisions::Fixed(g.clone()),
            bn: BnPhase::Eval,
        };
        let out = net.forward(&graph, x, &opts, None, true)?;
        let mut path = None;
        for (s, &gi) in out.gate_probs.iter().zip(&g) {
            let p = s.bernoulli_prob(&vec![gi; n])?;
            path = Some(match path {
                Some(acc) => p.mul(acc)?,
                None => p,
            });
        }
        let path = path.expect("gated").reshape(&[n])?;
        let (losses, _) = out.logits.softmax_cross_entropy(labels)?;
        let term = path.mul(losses.add_scalar(T::lit(-scale * skipped)))?.sum().scale(T::lit(1.0 / n as f64));
        total += term.value().data()[0].as_f64();
        let mut grads = graph.backward(term)?;
        net.params_mut().accumulate_grads(&out.bindings, &mut grads, T::one());
    }
    Ok(total)
}
