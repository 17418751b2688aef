use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::init::he_normal;
use crate::autodiff::ops::{lstm_cell, BnMode, BnStats, LstmWeights};
use crate::autodiff::{Binder, Bindings, BufferId, Graph, ParamId, ParameterSet, Tensor, Var};
use crate::error::{config_err, Error, Result};
use crate::network::config::{BlockSpec, GateKind, ShortcutKind, ShortcutSpec, SkipNetConfig};
use crate::scalar::Scalar;

/// How gate outputs enter the block combination.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateMode {
    /// `S·F(x) + (1−S)·x`, gradients through `S`.
    Soft,
    /// Forward with `I(S ≥ 0.5)`, backward as if the gate were `S`.
    HardSt,
    /// `g ~ Bernoulli(S)`; log-probabilities recorded, no gradient through `g`.
    Sample,
    /// `g = I(S ≥ 0.5)`; skipped blocks are not evaluated. Requires eval batch norm.
    Inference,
    /// `g = I(S ≥ 0.5)` applied by masking after evaluating every block.
    DenseHard,
}

impl GateMode {
    pub fn is_hard(self) -> bool {
        self != GateMode::Soft
    }
}

/// Source of the execute/skip decisions in hard modes.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum Decisions {
    /// Decided by the gates according to the mode.
    #[default]
    Policy,
    ExecuteAll,
    SkipAll,
    /// One decision per gate, shared by the whole batch.
    Fixed(Vec<bool>),
    /// `[sample][gate]`.
    PerSample(Vec<Vec<bool>>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnPhase {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOptions {
    pub mode: GateMode,
    pub decisions: Decisions,
    pub bn: BnPhase,
}

impl ForwardOptions {
    pub fn train(mode: GateMode) -> Self {
        ForwardOptions { mode, decisions: Decisions::Policy, bn: BnPhase::Train }
    }

    pub fn eval(mode: GateMode) -> Self {
        ForwardOptions { mode, decisions: Decisions::Policy, bn: BnPhase::Eval }
    }

    pub fn with_decisions(mut self, decisions: Decisions) -> Self {
        self.decisions = decisions;
        self
    }
}

/// Per-sample gate record of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct GateTrace {
    pub mode: GateMode,
    /// `[sample][gate]`; empty rows for ungated networks.
    pub probs: Vec<Vec<f64>>,
    /// `[sample][gate]`; `None` in soft mode.
    pub decisions: Option<Vec<Vec<bool>>>,
    /// Blocks whose output reached the sample (all of them in soft mode).
    pub executed: Vec<usize>,
}

impl GateTrace {
    pub fn batch_size(&self) -> usize {
        self.executed.len()
    }

    pub fn mean_executed(&self) -> f64 {
        self.executed.iter().sum::<usize>() as f64 / self.executed.len().max(1) as f64
    }
}

/// A batch-norm layer's observed statistics, to be folded into its running buffers.
#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    pub mean: BufferId,
    pub var: BufferId,
    pub stats: BnStats<T>,
}

pub struct ForwardOutput<'g, T: Scalar> {
    pub logits: Var<'g, T>,
    pub trace: GateTrace,
    /// Per gate, N×1 gate probabilities `S`.
    pub gate_probs: Vec<Var<'g, T>>,
    /// Per gate, N×1 `log p(g_i | x)`; only in sample mode with gates.
    pub log_probs: Vec<Var<'g, T>>,
    /// Stem output followed by the output of every gated block.
    pub activations: Vec<Var<'g, T>>,
    pub bn_updates: Vec<BnUpdate<T>>,
    pub bindings: Bindings,
}

/// LSTM hidden and cell state threaded through recurrent gates.
pub type Carry<'g, T> = (Var<'g, T>, Var<'g, T>);

#[derive(Clone, Debug)]
struct ConvBn {
    conv: ParamId,
    gamma: ParamId,
    beta: ParamId,
    mean: BufferId,
    var: BufferId,
    stride: usize,
}

#[derive(Clone, Debug)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
struct Block {
    spec: BlockSpec,
    conv1: ConvBn,
    conv2: ConvBn,
}

#[derive(Clone, Debug)]
struct FfGate {
    pre_pool: bool,
    body: Vec<ConvBn>,
    fc: Linear,
}

#[derive(Clone, Debug)]
struct RnnGate {
    /// Keyed by input width.
    proj: Vec<(usize, Linear)>,
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
    out: Linear,
}

#[derive(Clone, Debug)]
enum Gates {
    None,
    Ff(Vec<FfGate>),
    Rnn(RnnGate),
}

/// A residual network whose blocks are each wrapped by a learned gate.
#[derive(Clone, Debug)]
pub struct SkipNet<T: Scalar> {
    config: SkipNetConfig,
    params: ParameterSet<T>,
    stem: ConvBn,
    blocks: Vec<Block>,
    gates: Gates,
    fc: Linear,
}

struct Builder<'a, T: Scalar> {
    params: ParameterSet<T>,
    rng: &'a mut ChaCha8Rng,
}

impl<T: Scalar> Builder<'_, T> {
    fn conv_bn(&mut self, name: &str, bn: &str, ic: usize, oc: usize, stride: usize) -> Result<ConvBn> {
        let conv = self
            .params
            .add(format!("{name}.weight"), he_normal(&[oc, ic, 3, 3], ic * 9, self.rng))?;
        let gamma = self.params.add(format!("{bn}.gamma"), Tensor::full(&[oc], T::one()))?;
        let beta = self.params.add(format!("{bn}.beta"), Tensor::zeros(&[oc]))?;
        let mean = self.params.add_buffer(format!("{bn}.running_mean"), Tensor::zeros(&[oc]))?;
        let var = self.params.add_buffer(format!("{bn}.running_var"), Tensor::full(&[oc], T::one()))?;
        Ok(ConvBn { conv, gamma, beta, mean, var, stride })
    }

    fn linear(&mut self, name: &str, d: usize, k: usize) -> Result<Linear> {
        let weight = self.params.add(format!("{name}.weight"), he_normal(&[d, k], d, self.rng))?;
        let bias = self.params.add(format!("{name}.bias"), Tensor::zeros(&[k]))?;
        Ok(Linear { weight, bias })
    }
}

/// True for parameters that belong to a gate.
pub fn is_gate_param(name: &str) -> bool {
    name.starts_with("gate") || name.starts_with("rnn.")
}

impl<T: Scalar> SkipNet<T> {
    /// Builds the network with deterministic initialization from `seed`.
    pub fn new(config: SkipNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder { params: ParameterSet::new(), rng: &mut rng };
        let (c_in, _, _) = config.input_geometry;
        let stem = b.conv_bn("stem.conv", "stem.bn", c_in, config.group_widths[0], 1)?;
        let specs = config.blocks();
        let mut blocks = Vec::with_capacity(specs.len());
        for s in &specs {
            let i = s.index;
            let conv1 = b.conv_bn(&format!("block{i}.conv1"), &format!("block{i}.bn1"), s.in_channels, s.out_channels, s.stride)?;
            let conv2 = b.conv_bn(&format!("block{i}.conv2"), &format!("block{i}.bn2"), s.out_channels, s.out_channels, 1)?;
            blocks.push(Block { spec: *s, conv1, conv2 });
        }
        let gates = match config.gate_kind {
            GateKind::None => Gates::None,
            GateKind::FfGateI | GateKind::FfGateII => {
                let deep = config.gate_kind == GateKind::FfGateI;
                let mut gates = Vec::with_capacity(specs.len());
                for s in &specs {
                    let i = s.index;
                    let (ic, oc) = (s.in_channels, s.out_channels);
                    let body = if deep {
                        vec![
                            b.conv_bn(&format!("gate{i}.conv1"), &format!("gate{i}.bn1"), ic, oc, 1)?,
                            b.conv_bn(&format!("gate{i}.conv2"), &format!("gate{i}.bn2"), oc, oc, 2)?,
                        ]
                    } else {
                        vec![b.conv_bn(&format!("gate{i}.conv1"), &format!("gate{i}.bn1"), ic, oc, 2)?]
                    };
                    let fc = b.linear(&format!("gate{i}.fc"), oc, 1)?;
                    gates.push(FfGate { pre_pool: deep, body, fc });
                }
                Gates::Ff(gates)
            }
            GateKind::RnnGate => {
                let hdim = config.gate_hidden;
                // One projection per distinct gate input width.
                let mut proj = Vec::with_capacity(config.group_widths.len());
                for (g, &c) in config.group_widths.iter().enumerate() {
                    if specs.iter().any(|s| s.in_channels == c) {
                        proj.push((c, b.linear(&format!("rnn.proj{g}"), c, hdim)?));
                    }
                }
                let w_ih = b.params.add("rnn.lstm.w_ih", he_normal(&[hdim, 4 * hdim], hdim, b.rng))?;
                let w_hh = b.params.add("rnn.lstm.w_hh", he_normal(&[hdim, 4 * hdim], hdim, b.rng))?;
                let mut bias = Tensor::zeros(&[4 * hdim]);
                bias.data_mut()[hdim..2 * hdim].fill(T::one());
                let bias = b.params.add("rnn.lstm.bias", bias)?;
                let out = b.linear("rnn.out", hdim, 1)?;
                Gates::Rnn(RnnGate { proj, w_ih, w_hh, bias, out })
            }
        };
        let fc = b.linear("fc", *config.group_widths.last().expect("validated"), config.num_classes)?;
        let params = b.params;
        Ok(SkipNet { config, params, stem, blocks, gates, fc })
    }

    /// Rebuilds a network around an existing parameter set, checking every
    /// name and shape.
    pub fn from_params(config: SkipNetConfig, params: ParameterSet<T>) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        if params.len() != net.params.len() {
            return Err(config_err!(
                "parameter count {} does not match the architecture's {}",
                params.len(),
                net.params.len()
            ));
        }
        for p in net.params.iter() {
            let q = params
                .by_name(&p.name)
                .ok_or_else(|| config_err!("missing parameter {}", p.name))?;
            if q.value.shape() != p.value.shape() {
                return Err(config_err!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    q.value.shape(),
                    p.value.shape()
                ));
            }
        }
        for b in net.params.buffers() {
            let id = params
                .buffer_id(&b.name)
                .ok_or_else(|| config_err!("missing buffer {}", b.name))?;
            if params.buffer(id).value.shape() != b.value.shape() {
                return Err(config_err!("buffer {} has the wrong shape", b.name));
            }
        }
        // Ids are positional, so the incoming set must list names in build order.
        let same_order = net.params.iter().zip(params.iter()).all(|(a, b)| a.name == b.name)
            && net.params.buffers().zip(params.buffers()).all(|(a, b)| a.name == b.name);
        if !same_order {
            let mut ordered = net.params.clone();
            for p in ordered.iter_mut() {
                let q = params.by_name(&p.name).expect("checked");
                p.clone_from(q);
            }
            for b in ordered.buffers_mut() {
                let q = params.buffer(params.buffer_id(&b.name).expect("checked"));
                b.value = q.value.clone();
            }
            net.params = ordered;
        } else {
            net.params = params;
        }
        Ok(net)
    }

    /// The same residual network without gates, sharing parameter values.
    pub fn to_plain(&self) -> Result<SkipNet<T>> {
        let cfg = SkipNetConfig { gate_kind: GateKind::None, ..self.config.clone() };
        let mut plain = SkipNet::new(cfg, 0)?;
        for p in plain.params.iter_mut() {
            let src = self.params.by_name(&p.name).expect("shared parameter");
            p.value = src.value.clone();
            p.momentum = src.momentum.clone();
        }
        for b in plain.params.buffers_mut() {
            let src = self.params.buffer(self.params.buffer_id(&b.name).expect("shared buffer"));
            b.value = src.value.clone();
        }
        Ok(plain)
    }

    pub fn config(&self) -> &SkipNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.params
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_gates(&self) -> usize {
        match self.gates {
            Gates::None => 0,
            _ => self.blocks.len(),
        }
    }

    pub fn block_specs(&self) -> Vec<BlockSpec> {
        self.blocks.iter().map(|b| b.spec).collect()
    }

    /// Folds batch statistics into the running buffers.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<T>]) {
        for u in updates {
            let mut mean = std::mem::replace(&mut self.params.buffer_mut(u.mean).value, Tensor::scalar(T::zero()));
            let mut var = std::mem::replace(&mut self.params.buffer_mut(u.var).value, Tensor::scalar(T::zero()));
            u.stats.update_running(mean.data_mut(), var.data_mut());
            self.params.buffer_mut(u.mean).value = mean;
            self.params.buffer_mut(u.var).value = var;
        }
    }

    /// Forward pass on a constant input batch.
    pub fn forward<'g>(
        &self,
        graph: &'g Graph<T>,
        input: &Tensor<T>,
        opts: &ForwardOptions,
        rng: Option<&mut dyn RngCore>,
        grad: bool,
    ) -> Result<ForwardOutput<'g, T>> {
        let binder = Binder::new(graph, &self.params, grad);
        let x = graph.constant(input.clone());
        self.forward_with(&binder, x, opts, rng)
    }

    /// Forward pass with caller-provided parameter bindings and input node.
    pub fn forward_with<'g>(
        &self,
        binder: &Binder<'g, '_, T>,
        x: Var<'g, T>,
        opts: &ForwardOptions,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<ForwardOutput<'g, T>> {
        let shape = x.shape();
        let (c, h, w) = self.config.input_geometry;
        if shape.len() != 4 || shape[1..] != [c, h, w] {
            return Err(config_err!("input batch {:?} does not match geometry {c}x{h}x{w}", shape));
        }
        let n = shape[0];
        let num_gates = self.num_gates();
        self.check_options(opts, n, rng.is_some())?;

        let mut ctx = Ctx { binder, bn: opts.bn, updates: Vec::new() };
        let mut hcur = ctx.conv_bn(&self.stem, x, true)?;
        let mut activations = vec![hcur];
        let graph = binder.graph();
        let mut carry = match &self.gates {
            Gates::Rnn(_) => {
                let z = Tensor::zeros(&[n, self.config.gate_hidden]);
                Some((graph.constant(z.clone()), graph.constant(z)))
            }
            _ => None,
        };
        let mut probs = vec![Vec::with_capacity(num_gates); n];
        let mut decisions = vec![Vec::with_capacity(self.blocks.len()); n];
        let mut gate_probs = Vec::new();
        let mut log_probs = Vec::new();
        let mut executed = vec![0usize; n];

        for (i, block) in self.blocks.iter().enumerate() {
            let s = match &self.gates {
                Gates::None => None,
                Gates::Ff(gates) => Some(ctx.ff_gate(&gates[i], hcur)?),
                Gates::Rnn(gate) => {
                    let (hs, cs) = carry.take().expect("rnn carry");
                    let (s, next) = ctx.rnn_gate(gate, self.proj_index(block), hcur, (hs, cs))?;
                    carry = Some(next);
                    Some(s)
                }
            };
            if let Some(s) = s {
                for (row, &p) in probs.iter_mut().zip(s.value().data()) {
                    row.push(p.as_f64());
                }
                gate_probs.push(s);
            }
            let d = self.decide(i, s, n, opts, rng.as_deref_mut())?;
            if let (Some(s), Some(d), GateMode::Sample) = (s, &d, opts.mode) {
                log_probs.push(s.bernoulli_log_prob(d)?);
            }
            hcur = match (opts.mode, &d) {
                (GateMode::Soft, None) => {
                    let s = s.expect("soft mode decisions only exist without gates");
                    ctx.residual(block, hcur)?.mix(ctx.skip(block, hcur)?, s)?
                }
                (_, None) => unreachable!("hard modes always decide"),
                (mode, Some(d)) => self.combine(&mut ctx, block, hcur, s, d, mode, &opts.decisions)?,
            };
            match &d {
                Some(d) => {
                    for (k, &g) in d.iter().enumerate() {
                        decisions[k].push(g);
                        executed[k] += g as usize;
                    }
                }
                None => executed.iter_mut().for_each(|e| *e += 1),
            }
            activations.push(hcur);
        }

        let pooled = hcur.global_avg_pool()?;
        let logits = pooled.linear(binder.var(self.fc.weight), binder.var(self.fc.bias))?;
        let soft = opts.mode == GateMode::Soft && num_gates > 0;
        Ok(ForwardOutput {
            logits,
            trace: GateTrace {
                mode: opts.mode,
                probs,
                decisions: (!soft).then_some(decisions),
                executed,
            },
            gate_probs,
            log_probs,
            activations,
            bn_updates: ctx.updates,
            bindings: binder.bindings(),
        })
    }

    /// Residual function `F^i` of block `i`, including its internal shortcut.
    pub fn residual_block<'g>(
        &self,
        binder: &Binder<'g, '_, T>,
        i: usize,
        x: Var<'g, T>,
        bn: BnPhase,
    ) -> Result<(Var<'g, T>, Vec<BnUpdate<T>>)> {
        let block = self
            .blocks
            .get(i)
            .ok_or_else(|| config_err!("block {i} does not exist"))?;
        let mut ctx = Ctx { binder, bn, updates: Vec::new() };
        let y = ctx.residual(block, x)?;
        Ok((y, ctx.updates))
    }

    /// Gate probability `S` for block `i`. Recurrent gates consume and return
    /// the carry; a missing carry starts from zeros.
    pub fn gate_step<'g>(
        &self,
        binder: &Binder<'g, '_, T>,
        i: usize,
        x: Var<'g, T>,
        carry: Option<Carry<'g, T>>,
        bn: BnPhase,
    ) -> Result<(Var<'g, T>, Option<Carry<'g, T>>)> {
        let block = self
            .blocks
            .get(i)
            .ok_or_else(|| config_err!("block {i} does not exist"))?;
        let mut ctx = Ctx { binder, bn, updates: Vec::new() };
        match &self.gates {
            Gates::None => Err(config_err!("network has no gates")),
            Gates::Ff(gates) => Ok((ctx.ff_gate(&gates[i], x)?, None)),
            Gates::Rnn(gate) => {
                let carry = match carry {
                    Some(c) => c,
                    None => {
                        let z = Tensor::zeros(&[x.value().rows(), self.config.gate_hidden]);
                        (binder.graph().constant(z.clone()), binder.graph().constant(z))
                    }
                };
                let (s, next) = ctx.rnn_gate(gate, self.proj_index(block), x, carry)?;
                Ok((s, Some(next)))
            }
        }
    }

    fn proj_index(&self, block: &Block) -> usize {
        let Gates::Rnn(gate) = &self.gates else { unreachable!("only recurrent gates project") };
        let c = block.spec.in_channels;
        gate.proj.iter().position(|(w, _)| *w == c).expect("projection for every block input width")
    }

    fn check_options(&self, opts: &ForwardOptions, n: usize, has_rng: bool) -> Result<()> {
        let num_blocks = self.blocks.len();
        if opts.mode == GateMode::Inference && opts.bn != BnPhase::Eval {
            return Err(config_err!("inference mode evaluates a subset of the batch and needs eval batch norm"));
        }
        if opts.mode == GateMode::Soft && opts.decisions != Decisions::Policy {
            return Err(config_err!("soft mode has no discrete decisions to override"));
        }
        if opts.mode == GateMode::Sample
            && opts.decisions == Decisions::Policy
            && self.num_gates() > 0
            && !has_rng
        {
            return Err(config_err!("sample mode needs a random number generator"));
        }
        match &opts.decisions {
            Decisions::Fixed(v) if v.len() != num_blocks => {
                Err(config_err!("{} fixed decisions for {num_blocks} blocks", v.len()))
            }
            Decisions::PerSample(m) if m.len() != n || m.iter().any(|r| r.len() != num_blocks) => Err(
                config_err!("per-sample decisions must be {n}x{num_blocks}"),
            ),
            _ => Ok(()),
        }
    }

    fn decide<R: RngCore + ?Sized>(
        &self,
        i: usize,
        s: Option<Var<'_, T>>,
        n: usize,
        opts: &ForwardOptions,
        rng: Option<&mut R>,
    ) -> Result<Option<Vec<bool>>> {
        let d = match &opts.decisions {
            Decisions::ExecuteAll => vec![true; n],
            Decisions::SkipAll => vec![false; n],
            Decisions::Fixed(v) => vec![v[i]; n],
            Decisions::PerSample(m) => m.iter().map(|r| r[i]).collect(),
            Decisions::Policy => {
                let Some(s) = s else { return Ok(Some(vec![true; n])) };
                let half = T::lit(0.5);
                let sv = s.value();
                match opts.mode {
                    GateMode::Soft => return Ok(None),
                    GateMode::Sample => {
                        let rng = rng.ok_or_else(|| config_err!("sample mode needs a random number generator"))?;
                        sv.data().iter().map(|&p| rng.random::<f64>() < p.as_f64()).collect()
                    }
                    _ => sv.data().iter().map(|&p| p >= half).collect(),
                }
            }
        };
        Ok(Some(d))
    }

    #[allow(clippy::too_many_arguments)]
    fn combine<'g>(
        &self,
        ctx: &mut Ctx<'_, 'g, '_, T>,
        block: &Block,
        h: Var<'g, T>,
        s: Option<Var<'g, T>>,
        d: &[bool],
        mode: GateMode,
        source: &Decisions,
    ) -> Result<Var<'g, T>> {
        let graph = h.graph();
        let n = d.len();
        let all = d.iter().all(|&g| g);
        let mask = || {
            Tensor::new(&[n, 1], d.iter().map(|&g| if g { T::one() } else { T::zero() }).collect())
                .map(|t| graph.constant(t))
        };
        if mode == GateMode::Inference {
            if all {
                return ctx.residual(block, h);
            }
            let skip = ctx.skip(block, h)?;
            let idx: Vec<usize> = (0..n).filter(|&k| d[k]).collect();
            if idx.is_empty() {
                return Ok(skip);
            }
            let f = ctx.residual(block, h.gather_rows(&idx)?)?;
            return skip.scatter_rows(&idx, f);
        }
        let g = match (mode, s, source) {
            (GateMode::HardSt, Some(s), Decisions::Policy) => s.straight_through(),
            _ if all => return ctx.residual(block, h),
            _ => mask()?,
        };
        let f = ctx.residual(block, h)?;
        let skip = ctx.skip(block, h)?;
        f.mix(skip, g)
    }
}

struct Ctx<'a, 'g, 'p, T: Scalar> {
    binder: &'a Binder<'g, 'p, T>,
    bn: BnPhase,
    updates: Vec<BnUpdate<T>>,
}

impl<'g, T: Scalar> Ctx<'_, 'g, '_, T> {
    fn conv_bn(&mut self, cb: &ConvBn, x: Var<'g, T>, relu: bool) -> Result<Var<'g, T>> {
        let b = self.binder;
        let y = x.conv2d(b.var(cb.conv), cb.stride, 1)?;
        let mode = match self.bn {
            BnPhase::Train => BnMode::Train,
            BnPhase::Eval => BnMode::Eval {
                mean: b.buffer(cb.mean).data(),
                var: b.buffer(cb.var).data(),
            },
        };
        let (y, stats) = y.batch_norm2d(b.var(cb.gamma), b.var(cb.beta), mode)?;
        if let Some(stats) = stats {
            self.updates.push(BnUpdate { mean: cb.mean, var: cb.var, stats });
        }
        Ok(if relu { y.relu() } else { y })
    }

    fn linear(&self, l: &Linear, x: Var<'g, T>) -> Result<Var<'g, T>> {
        x.linear(self.binder.var(l.weight), self.binder.var(l.bias))
    }

    fn residual(&mut self, block: &Block, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let y = self.conv_bn(&block.conv1, x, true)?;
        let y = self.conv_bn(&block.conv2, y, false)?;
        let sc = shortcut(block.spec.shortcut, x)?;
        if sc.value().shape() != y.value().shape() {
            return Err(Error::Internal(format!(
                "block {}: shortcut {:?} and main path {:?} differ",
                block.spec.index,
                sc.value().shape(),
                y.value().shape()
            )));
        }
        Ok(y.add(sc)?.relu())
    }

    fn skip(&self, block: &Block, x: Var<'g, T>) -> Result<Var<'g, T>> {
        shortcut(block.spec.shortcut, x)
    }

    fn ff_gate(&mut self, gate: &FfGate, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let mut h = if gate.pre_pool { x.max_pool2d(2)? } else { x };
        for cb in &gate.body {
            h = self.conv_bn(cb, h, true)?;
        }
        Ok(self.linear(&gate.fc, h.global_avg_pool()?)?.sigmoid())
    }

    fn rnn_gate(
        &self,
        gate: &RnnGate,
        proj: usize,
        x: Var<'g, T>,
        carry: Carry<'g, T>,
    ) -> Result<(Var<'g, T>, Carry<'g, T>)> {
        let b = self.binder;
        let feat = self.linear(&gate.proj[proj].1, x.global_avg_pool()?)?;
        let weights = LstmWeights { w_ih: b.var(gate.w_ih), w_hh: b.var(gate.w_hh), bias: b.var(gate.bias) };
        let (h, c) = lstm_cell(feat, carry.0, carry.1, &weights)?;
        let s = self.linear(&gate.out, h)?.sigmoid();
        Ok((s, (h, c)))
    }
}

fn shortcut<'g, T: Scalar>(spec: ShortcutSpec, x: Var<'g, T>) -> Result<Var<'g, T>> {
    match spec.kind {
        ShortcutKind::Identity => Ok(x),
        ShortcutKind::PoolPad => x.avg_pool2d(spec.pool_stride)?.pad_channels(spec.pad_channels),
    }
}
