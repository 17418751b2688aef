use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::cost::{expected_cost, Convention, CostReport, CostTable};
use crate::data::{resize_scale, ChannelStats, LabeledDataset};
use crate::error::{config_err, Result};
use crate::network::{Decisions, ForwardOptions, GateMode, GateTrace, SkipNet};
use crate::scalar::Scalar;
use crate::training::step::predictions;

#[derive(Clone, Debug, PartialEq)]
pub enum EvalDecisions {
    Policy,
    ExecuteAll,
    SkipAll,
    /// Each block skipped independently with probability `skip_ratio`.
    Random { skip_ratio: f64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    /// `Inference` (sparse) or `DenseHard` (masked).
    pub mode: GateMode,
    pub decisions: EvalDecisions,
    pub batch_size: usize,
    /// Bilinear input rescaling; the network is rebuilt for the new geometry.
    pub scale: f64,
    pub convention: Convention,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mode: GateMode::Inference,
            decisions: EvalDecisions::Policy,
            batch_size: 500,
            scale: 1.0,
            convention: Convention::ConvOnly,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_loss: f64,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    /// Concatenated over all batches, in dataset order.
    pub trace: GateTrace,
    pub cost: CostReport,
}

/// Eval-mode pass over `data` in order.
pub fn evaluate<T: Scalar>(
    net: &SkipNet<T>,
    data: &LabeledDataset,
    stats: &ChannelStats,
    opts: &EvalOptions,
) -> Result<Evaluation> {
    if !matches!(opts.mode, GateMode::Inference | GateMode::DenseHard) {
        return Err(config_err!("evaluation runs in inference or dense-hard mode, not {:?}", opts.mode));
    }
    if data.is_empty() || opts.batch_size == 0 {
        return Err(config_err!("evaluation needs a nonempty dataset and batch size"));
    }
    let rescaled;
    let net = if opts.scale == 1.0 {
        net
    } else {
        let (_, h, w) = data.shape();
        let (oh, ow) = (crate::data::scaled_len(h, opts.scale), crate::data::scaled_len(w, opts.scale));
        rescaled = SkipNet::from_params(net.config().with_geometry(oh, ow), net.params().clone())?;
        &rescaled
    };
    let divisor = 1usize << (net.config().group_widths.len() - 1);
    let table = CostTable::for_config(net.config())?;
    let num_blocks = net.num_blocks();
    let mut random = match opts.decisions {
        EvalDecisions::Random { skip_ratio, seed } => {
            if !(0.0..=1.0).contains(&skip_ratio) {
                return Err(config_err!("skip ratio {skip_ratio} is outside [0, 1]"));
            }
            Some((skip_ratio, ChaCha8Rng::seed_from_u64(seed)))
        }
        _ => None,
    };
    let mut trace = GateTrace { mode: opts.mode, probs: Vec::new(), decisions: Some(Vec::new()), executed: Vec::new() };
    let mut preds = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    let mut loss_sum = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(opts.batch_size) {
        let (x, y) = data.batch::<T>(chunk, stats, None)?;
        let x = resize_scale(&x, opts.scale, divisor)?;
        let decisions = match (&opts.decisions, &mut random) {
            (EvalDecisions::Policy, _) => Decisions::Policy,
            (EvalDecisions::ExecuteAll, _) => Decisions::ExecuteAll,
            (EvalDecisions::SkipAll, _) => Decisions::SkipAll,
            (EvalDecisions::Random { .. }, Some((p, rng))) => Decisions::PerSample(
                chunk
                    .iter()
                    .map(|_| (0..num_blocks).map(|_| rng.random::<f64>() >= *p).collect())
                    .collect(),
            ),
            (EvalDecisions::Random { .. }, None) => unreachable!("rng created above"),
        };
        let graph = Graph::new();
        let fopts = ForwardOptions::eval(opts.mode).with_decisions(decisions);
        let out = net.forward(&graph, &x, &fopts, None, false)?;
        let (_, loss) = out.logits.softmax_cross_entropy(&y)?;
        loss_sum += loss.value().data()[0].as_f64() * chunk.len() as f64;
        preds.extend(predictions(&out.logits.value()));
        labels.extend(y);
        trace.probs.extend(out.trace.probs);
        trace.executed.extend(out.trace.executed);
        if let (Some(all), Some(d)) = (trace.decisions.as_mut(), out.trace.decisions) {
            all.extend(d);
        }
    }
    let correct = preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
    let cost = expected_cost(&trace, &table, opts.convention)?;
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        mean_loss: loss_sum / data.len() as f64,
        predictions: preds,
        labels,
        trace,
        cost,
    })
}
