use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Augmentation, ChannelStats, LabeledDataset};
use crate::error::{config_err, Error, Result};
use crate::network::{BnPhase, Decisions, ForwardOptions, GateMode, SkipNet};
use crate::scalar::Scalar;
use crate::training::eval::{evaluate, EvalDecisions, EvalOptions};
use crate::training::schedule::TrainSchedule;
use crate::training::step::{hybrid_step, supervised_step, HybridOptions, StepStats};

const ORDER_SALT: u64 = 0x6f72_6465_7273_6565;
const AUGMENT_SALT: u64 = 0x6175_676d_656e_7473;

/// What a [`Trainer`] optimizes.
#[derive(Clone, Debug, PartialEq)]
pub enum Objective {
    /// Stage 1: cross-entropy with hard straight-through gates, or soft gates.
    Supervised { gate_mode: GateMode },
    /// Stage 2: sampled gates with the hybrid policy-gradient objective.
    Hybrid(HybridOptions),
    /// Blocks skipped i.i.d. with probability `skip_ratio` in training and evaluation.
    Sdv { skip_ratio: f64 },
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub step: u64,
    /// Position of the sampling generator, in 32-bit words.
    pub rng_word_pos: u128,
    pub baseline: Vec<f64>,
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub mean_exec_blocks: f64,
    pub mean_mac_cost: f64,
    pub wall_seconds: f64,
}

/// Training data, held-out data and the normalization fitted on the training split.
#[derive(Clone, Copy, Debug)]
pub struct DataSplits<'a> {
    pub train: &'a LabeledDataset,
    pub test: &'a LabeledDataset,
    pub stats: &'a ChannelStats,
}

pub struct Trainer {
    schedule: TrainSchedule,
    objective: Objective,
    seed: u64,
    step: u64,
    rng: ChaCha8Rng,
    baseline: Vec<f64>,
    order: Option<(usize, Vec<usize>)>,
}

#[derive(Default)]
struct Window {
    loss: f64,
    correct: usize,
    seen: usize,
    steps: usize,
}

impl Window {
    fn add(&mut self, s: &StepStats) {
        self.loss += s.loss;
        self.correct += s.correct;
        self.seen += s.batch_size();
        self.steps += 1;
    }
}

impl Trainer {
    pub fn new(schedule: TrainSchedule, objective: Objective, seed: u64) -> Result<Self> {
        Self::restore(schedule, objective, seed, TrainerState { step: 0, rng_word_pos: 0, baseline: Vec::new() })
    }

    pub fn restore(schedule: TrainSchedule, objective: Objective, seed: u64, state: TrainerState) -> Result<Self> {
        schedule.validate()?;
        match &objective {
            Objective::Supervised { gate_mode } if !matches!(gate_mode, GateMode::HardSt | GateMode::Soft) => {
                return Err(config_err!("supervised training uses hard straight-through or soft gates"));
            }
            Objective::Sdv { skip_ratio } if !(0.0..=1.0).contains(skip_ratio) => {
                return Err(config_err!("skip ratio {skip_ratio} is outside [0, 1]"));
            }
            _ => {}
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_word_pos(state.rng_word_pos);
        Ok(Trainer {
            schedule,
            objective,
            seed,
            step: state.step,
            rng,
            baseline: state.baseline,
            order: None,
        })
    }

    pub fn state(&self) -> TrainerState {
        TrainerState { step: self.step, rng_word_pos: self.rng.get_word_pos(), baseline: self.baseline.clone() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn schedule(&self) -> &TrainSchedule {
        &self.schedule
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    fn batch_indices(&mut self, n: usize) -> Vec<usize> {
        let spe = self.schedule.steps_per_epoch(n) as u64;
        let epoch = (self.step / spe) as usize;
        let b = (self.step % spe) as usize;
        if self.order.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ ORDER_SALT);
            rng.set_stream(epoch as u64);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            self.order = Some((epoch, perm));
        }
        let perm = &self.order.as_ref().expect("set above").1;
        let bs = self.schedule.batch_size;
        perm[b * bs..((b + 1) * bs).min(n)].to_vec()
    }

    fn lr(&self, n: usize) -> f64 {
        match self.objective {
            Objective::Hybrid(_) => self.schedule.stage2_lr,
            _ => {
                let epoch = self.step as usize / self.schedule.steps_per_epoch(n);
                self.schedule.lr_at_epoch(epoch)
            }
        }
    }

    /// One optimizer step on the next mini-batch.
    pub fn step<T: Scalar>(&mut self, net: &mut SkipNet<T>, train: &LabeledDataset, stats: &ChannelStats) -> Result<StepStats> {
        if train.is_empty() {
            return Err(config_err!("training set is empty"));
        }
        let n = train.len();
        let idx = self.batch_indices(n);
        let epoch = self.step / self.schedule.steps_per_epoch(n) as u64;
        let aug = Augmentation { seed: self.seed ^ AUGMENT_SALT, epoch };
        let (x, y) = train.batch::<T>(&idx, stats, self.schedule.augment.then_some(&aug))?;
        let lr = self.lr(n);
        net.params_mut().zero_grad();
        let stats = match &self.objective {
            Objective::Supervised { gate_mode } => {
                supervised_step(net, &x, &y, &ForwardOptions::train(*gate_mode), Some(&mut self.rng))?
            }
            Objective::Sdv { skip_ratio } => {
                let blocks = net.num_blocks();
                let d: Vec<Vec<bool>> = (0..idx.len())
                    .map(|_| (0..blocks).map(|_| self.rng.random::<f64>() >= *skip_ratio).collect())
                    .collect();
                let opts = ForwardOptions::train(GateMode::DenseHard).with_decisions(Decisions::PerSample(d));
                supervised_step(net, &x, &y, &opts, None)?
            }
            Objective::Hybrid(h) => {
                hybrid_step(net, &x, &y, h, BnPhase::Train, &mut self.baseline, &mut self.rng)?.step
            }
        };
        if !stats.objective.is_finite() || !stats.loss.is_finite() {
            return Err(Error::Divergence {
                step: self.step,
                detail: format!("loss {} and objective {} at learning rate {lr}", stats.loss, stats.objective),
            });
        }
        if let Some(p) = net.params().iter().find(|p| p.grad.as_ref().is_some_and(|g| !g.is_finite())) {
            return Err(Error::Divergence { step: self.step, detail: format!("non-finite gradient for {}", p.name) });
        }
        net.params_mut().sgd_step(&self.schedule.sgd(lr))?;
        self.step += 1;
        Ok(stats)
    }

    fn eval_options(&self) -> EvalOptions {
        let decisions = match self.objective {
            Objective::Sdv { skip_ratio } => EvalDecisions::Random { skip_ratio, seed: self.seed },
            _ => EvalDecisions::Policy,
        };
        EvalOptions { decisions, batch_size: self.schedule.eval_batch_size, ..Default::default() }
    }

    fn metrics<T: Scalar>(&self, net: &SkipNet<T>, data: DataSplits, index: usize, w: &Window, start: Instant) -> Result<EpochMetrics> {
        let ev = evaluate(net, data.test, data.stats, &self.eval_options())?;
        Ok(EpochMetrics {
            epoch: index,
            train_loss: w.loss / w.steps.max(1) as f64,
            train_acc: w.correct as f64 / w.seen.max(1) as f64,
            test_acc: ev.accuracy,
            mean_exec_blocks: ev.trace.mean_executed(),
            mean_mac_cost: ev.cost.mean,
            wall_seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Trains until `epochs` passes over the training set are complete,
    /// reporting one row per finished epoch.
    pub fn run_epochs<T: Scalar>(
        &mut self,
        net: &mut SkipNet<T>,
        data: DataSplits,
        mut on_epoch: impl FnMut(&EpochMetrics),
    ) -> Result<Vec<EpochMetrics>> {
        let spe = self.schedule.steps_per_epoch(data.train.len()) as u64;
        let total = spe * self.schedule.epochs as u64;
        let start = Instant::now();
        let mut rows = Vec::new();
        let mut w = Window::default();
        while self.step < total {
            w.add(&self.step(net, data.train, data.stats)?);
            if self.step.is_multiple_of(spe) {
                let m = self.metrics(net, data, (self.step / spe) as usize, &w, start)?;
                on_epoch(&m);
                rows.push(m);
                w = Window::default();
            }
        }
        Ok(rows)
    }

    /// Runs until `iterations` steps in total, reporting every `eval_every` steps and at the end.
    pub fn run_iterations<T: Scalar>(
        &mut self,
        net: &mut SkipNet<T>,
        data: DataSplits,
        iterations: usize,
        mut on_window: impl FnMut(&EpochMetrics),
    ) -> Result<Vec<EpochMetrics>> {
        let every = self.schedule.eval_every as u64;
        let start = Instant::now();
        let mut rows = Vec::new();
        let mut w = Window::default();
        while self.step < iterations as u64 {
            w.add(&self.step(net, data.train, data.stats)?);
            if self.step.is_multiple_of(every) || self.step == iterations as u64 {
                let m = self.metrics(net, data, self.step.div_ceil(every) as usize, &w, start)?;
                on_window(&m);
                rows.push(m);
                w = Window::default();
            }
        }
        Ok(rows)
    }
}

/// Stage 1: supervised pre-training for `schedule.epochs` epochs.
pub fn pretrain_supervised<T: Scalar>(
    net: &mut SkipNet<T>,
    data: DataSplits,
    schedule: &TrainSchedule,
    gate_mode: GateMode,
    seed: u64,
) -> Result<Vec<EpochMetrics>> {
    Trainer::new(schedule.clone(), Objective::Supervised { gate_mode }, seed)?.run_epochs(net, data, |_| {})
}

/// Stage 2: hybrid policy-gradient refinement for `schedule.stage2_iterations` steps.
pub fn refine_hybrid<T: Scalar>(
    net: &mut SkipNet<T>,
    data: DataSplits,
    schedule: &TrainSchedule,
    opts: HybridOptions,
    seed: u64,
) -> Result<Vec<EpochMetrics>> {
    Trainer::new(schedule.clone(), Objective::Hybrid(opts), seed)?.run_iterations(
        net,
        data,
        schedule.stage2_iterations,
        |_| {},
    )
}

/// Stochastic-depth baseline: an ungated network trained with random skipping at `skip_ratio`.
pub fn sdv_baseline<T: Scalar>(
    net: &mut SkipNet<T>,
    data: DataSplits,
    schedule: &TrainSchedule,
    skip_ratio: f64,
    seed: u64,
) -> Result<Vec<EpochMetrics>> {
    if net.num_gates() != 0 {
        return Err(config_err!("the stochastic-depth baseline trains an ungated network"));
    }
    Trainer::new(schedule.clone(), Objective::Sdv { skip_ratio }, seed)?.run_epochs(net, data, |_| {})
}
