//! Acceptance suite A1–A10. Prints one PASS/FAIL line per criterion.
//!
//! Criteria that need CIFAR-10 (A5–A9) read it from `SKIPLAB_CIFAR10_DIR`.
//! Without it they print FAIL (not run) and do not affect the exit status
//! unless `SKIPLAB_ACCEPTANCE_STRICT=1`.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skiplab_cli::checkpoint::{Checkpoint, Stage};
use skiplab_cli::config::{DatasetKind, RunConfig, TrainGateMode};
use skiplab_core::autodiff::gradcheck::{grad_check, op_suite, GradCheckOptions, GradCheckReport};
use skiplab_core::autodiff::ops::{conv2d_direct, conv_out_len};
use skiplab_core::autodiff::{Binder, Graph, Tensor};
use skiplab_core::cost::{conv_macs, Convention, CostTable};
use skiplab_core::data::{load_cifar10, synthetic_make, ChannelStats, LabeledDataset, SyntheticKind};
use skiplab_core::network::{
    is_gate_param, BnPhase, Decisions, ForwardOptions, GateKind, GateMode, SkipNet, SkipNetConfig,
};
use skiplab_core::training::{
    enumerate_exact, evaluate, hybrid_step, DataSplits, EvalDecisions, EvalOptions, Evaluation, HybridOptions,
    Objective, RewardConfig, Trainer,
};

enum Outcome {
    Pass(String),
    Fail(String),
    NotRun(String),
}

type Check = Result<Outcome, String>;
type Criterion = (&'static str, &'static str, u64, fn() -> Check);
type CifarCriterion = (&'static str, &'static str, fn(&CifarResults) -> Check);
type Deferred<'a> = (&'a str, Box<dyn FnOnce(&mut usize, &mut usize)>);

const GATED: [GateKind; 3] = [GateKind::FfGateI, GateKind::FfGateII, GateKind::RnnGate];

fn toy(kind: GateKind, n: usize, widths: &[usize], hw: usize) -> SkipNetConfig {
    SkipNetConfig {
        n,
        group_widths: widths.to_vec(),
        gate_kind: kind,
        num_classes: 3,
        input_geometry: (2, hw, hw),
        gate_hidden: 4,
    }
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn perturb_running_stats(net: &mut SkipNet<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for b in net.params_mut().buffers_mut() {
        let is_var = b.name.ends_with("running_var");
        for v in b.value.data_mut() {
            *v = if is_var { rng.random_range(0.5..2.0) } else { rng.random_range(-0.3..0.3) };
        }
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

// ---------- A1 ----------

fn block_report(net: &SkipNet<f64>, block: usize, gated: bool, step: f64, seed: u64) -> Result<GradCheckReport, String> {
    let spec = net.block_specs()[block];
    let (h, w) = spec.in_hw;
    let prefix_block = format!("block{block}.");
    let prefix_gate = format!("gate{block}.");
    let (names, mut inputs): (Vec<String>, Vec<Tensor<f64>>) = net
        .params()
        .iter()
        .filter(|p| {
            p.name.starts_with(&prefix_block) || (gated && (p.name.starts_with(&prefix_gate) || p.name.starts_with("rnn.")))
        })
        .map(|p| (p.name.clone(), p.value.clone()))
        .unzip();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    inputs.push(Tensor::randn(&[2, spec.in_channels, h, w], 1.0, &mut rng).map(f64::abs));
    let (oh, ow) = spec.out_hw;
    let readout: Vec<f64> = (0..2 * spec.out_channels * oh * ow).map(|_| rng.random_range(-1.0..1.0)).collect();
    grad_check(
        |g, vars| {
            let binder = Binder::new(g, net.params(), true);
            for (name, &v) in names.iter().zip(vars) {
                binder.bind(net.params().id(name).expect("named"), v)?;
            }
            let x = *vars.last().expect("input");
            let (f, _) = net.residual_block(&binder, block, x, BnPhase::Train)?;
            if !gated {
                return f.dot_const(&readout);
            }
            let (s, _) = net.gate_step(&binder, block, x, None, BnPhase::Train)?;
            f.mix(x, s)?.dot_const(&readout)
        },
        &inputs,
        GradCheckOptions { max_probes: Some(50), step },
        &mut rng,
    )
    .map_err(e)
}

fn a1() -> Check {
    let mut lines = Vec::new();
    let mut worst = ("", 0.0f64);
    let mut failed = Vec::new();
    let mut record = |name: String, r: &GradCheckReport| {
        if r.max_rel_err >= 1e-5 || r.probes <= r.kinks.len() {
            failed.push(format!("{name}: rel err {:.2e} ({} probes, {} kinks)", r.max_rel_err, r.probes, r.kinks.len()));
        }
        lines.push(name);
        r.max_rel_err
    };
    for (name, r) in op_suite(2024, GradCheckOptions { max_probes: Some(50), ..Default::default() }).map_err(e)? {
        let v = record(name.to_string(), &r);
        if v > worst.1 {
            worst = (name, v);
        }
    }
    let plain = SkipNet::<f64>::new(toy(GateKind::None, 1, &[2, 4], 8), 81).map_err(e)?;
    let r = block_report(&plain, 1, false, 1e-5, 82)?;
    record("residual block".into(), &r);
    // Composite gated blocks use h = 1e-4: see the conditioning note in the README.
    for kind in GATED {
        let net = SkipNet::<f64>::new(toy(kind, 2, &[3], 8), 0).map_err(e)?;
        let r = block_report(&net, 1, true, 1e-4, 100)?;
        record(format!("gated block {kind:?}"), &r);
    }
    if failed.is_empty() {
        Ok(Outcome::Pass(format!(
            "{} checks x 50 probes, all rel err < 1e-5 (worst op {} at {:.1e})",
            lines.len(),
            worst.0,
            worst.1
        )))
    } else {
        Ok(Outcome::Fail(failed.join("; ")))
    }
}

// ---------- A2 ----------

fn a2_nets() -> Result<Vec<(String, SkipNet<f64>)>, String> {
    let mut nets = Vec::new();
    for (kind, widths) in [
        (GateKind::FfGateII, vec![3, 6]),
        (GateKind::RnnGate, vec![3, 6]),
        (GateKind::FfGateII, vec![2, 4, 8]),
        (GateKind::RnnGate, vec![2, 4, 8]),
    ] {
        let mut net = SkipNet::<f64>::new(toy(kind, 1, &widths, 8), 11).map_err(e)?;
        perturb_running_stats(&mut net, 12);
        // Frozen backbone: only the policy (gate) parameters receive gradient.
        net.params_mut().set_trainable(is_gate_param);
        nets.push((format!("{kind:?}/{} gates", widths.len()), net));
    }
    Ok(nets)
}

/// Hard forward per decision sequence, own softmax, product of gate probabilities.
fn brute_force_objective(net: &SkipNet<f64>, x: &Tensor<f64>, y: &[usize], r: &RewardConfig) -> Result<f64, String> {
    let gates = net.num_gates();
    let n = y.len();
    let mut j = 0.0;
    for code in 0..1usize << gates {
        let g: Vec<bool> = (0..gates).map(|i| (code >> i) & 1 == 1).collect();
        let graph = Graph::new();
        let opts = ForwardOptions::eval(GateMode::DenseHard).with_decisions(Decisions::Fixed(g.clone()));
        let out = net.forward(&graph, x, &opts, None, false).map_err(e)?;
        let logits = out.logits.value();
        let k = logits.row_len();
        let saved: f64 = (0..gates).filter(|&i| !g[i]).map(|i| r.costs[i]).sum();
        for s in 0..n {
            let row = &logits.data()[s * k..(s + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let loss = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - row[y[s]];
            let p: f64 = out.trace.probs[s].iter().zip(&g).map(|(&q, &gi)| if gi { q } else { 1.0 - q }).product();
            j += p * (loss - r.alpha / gates as f64 * saved) / n as f64;
        }
    }
    Ok(j)
}

fn flat_grads(net: &SkipNet<f64>) -> Vec<f64> {
    net.params().iter().filter(|p| p.trainable).flat_map(|p| p.grad.as_ref().expect("grad").data().to_vec()).collect()
}

fn a2() -> Check {
    const REPLICAS: usize = 500;
    const BATCHES: usize = 400;
    let mut notes = Vec::new();
    let mut failures = Vec::new();
    for (label, mut net) in a2_nets()? {
        let cfg = net.config().clone();
        let (c, h, w) = cfg.input_geometry;
        let x = randn(&[2, c, h, w], 5);
        let y = vec![0usize, 2];
        let reward = RewardConfig { alpha: 0.7, beta: 1.0, costs: (0..net.num_gates()).map(|i| 1.0 + 0.5 * i as f64).collect() };

        net.params_mut().zero_grad();
        let j = enumerate_exact(&mut net, &x, &y, &reward).map_err(e)?;
        let oracle = brute_force_objective(&net, &x, &y, &reward)?;
        if (j - oracle).abs() >= 1e-10 {
            failures.push(format!("{label}: exact {j} vs brute force {oracle}"));
        }
        let exact = flat_grads(&net);

        let xb = Tensor::new(&[2 * REPLICAS, c, h, w], x.data().repeat(REPLICAS)).map_err(e)?;
        let yb: Vec<usize> = y.repeat(REPLICAS);
        let opts = HybridOptions::new(reward);
        let mut rng = ChaCha8Rng::seed_from_u64(2_000_000);
        let mut sum = vec![0.0; exact.len()];
        let mut sum_sq = vec![0.0; exact.len()];
        for _ in 0..BATCHES {
            net.params_mut().zero_grad();
            hybrid_step(&mut net, &xb, &yb, &opts, BnPhase::Eval, &mut Vec::new(), &mut rng).map_err(e)?;
            for (i, g) in flat_grads(&net).into_iter().enumerate() {
                sum[i] += g;
                sum_sq[i] += g * g;
            }
        }
        let k = BATCHES as f64;
        let (mut worst, mut beyond, mut constant) = (0.0f64, 0, 0);
        for i in 0..exact.len() {
            let mean = sum[i] / k;
            let var = (sum_sq[i] / k - mean * mean).max(0.0) * k / (k - 1.0);
            let se = (var / k).sqrt();
            let diff = (mean - exact[i]).abs();
            if se == 0.0 {
                constant += 1;
                if diff > 1e-12 {
                    beyond += 1;
                }
                continue;
            }
            worst = worst.max(diff / se);
            beyond += (diff > 3.0 * se) as usize;
        }
        notes.push(format!("{label}: {} coords, max |z| {worst:.2}", exact.len() - constant));
        if beyond > 0 {
            failures.push(format!("{label}: {beyond}/{} coordinates beyond 3 SE (max |z| {worst:.2})", exact.len()));
        }
    }
    let samples = REPLICAS * BATCHES;
    if failures.is_empty() {
        Ok(Outcome::Pass(format!("{samples} samples per net; exact == brute force to 1e-10; {}", notes.join("; "))))
    } else {
        Ok(Outcome::Fail(format!("{samples} samples per net; {}", failures.join("; "))))
    }
}

// ---------- A3 ----------

fn a3() -> Check {
    let mut failures = Vec::new();
    let mut worst_sparse: f64 = 0.0;
    for kind in GATED {
        // g = 0 and g = 1 through the gated combination, and through whole-network decisions.
        let cfg = toy(kind, 2, &[4, 8], 8);
        let mut net = SkipNet::<f64>::new(cfg.clone(), 3).map_err(e)?;
        perturb_running_stats(&mut net, 4);
        let x = randn(&[3, 2, 8, 8], 5);
        let g = Graph::new();
        let binder = Binder::new(&g, net.params(), false);
        let opts = ForwardOptions::eval(GateMode::DenseHard).with_decisions(Decisions::Fixed(vec![false, true, true, true]));
        let out = net.forward_with(&binder, g.constant(x.clone()), &opts, None).map_err(e)?;
        let act = &out.activations;
        if act[1].value().data() != act[0].value().data() {
            failures.push(format!("{kind:?}: skipped block is not the identity"));
        }
        let (f1, _) = net.residual_block(&binder, 1, act[1], BnPhase::Eval).map_err(e)?;
        if act[2].value().data() != f1.value().data() {
            failures.push(format!("{kind:?}: executed block differs from the residual block output"));
        }
        let zeros = g.constant(Tensor::zeros(&[3, 1]));
        let ones = g.constant(Tensor::full(&[3, 1], 1.0));
        let (f0, _) = net.residual_block(&binder, 0, act[0], BnPhase::Eval).map_err(e)?;
        if f0.mix(act[0], zeros).map_err(e)?.value().data() != act[0].value().data()
            || f0.mix(act[0], ones).map_err(e)?.value().data() != f0.value().data()
        {
            failures.push(format!("{kind:?}: mix at g in {{0, 1}} is not exact"));
        }

        // all-execute vs plain, bitwise
        let cfg = toy(kind, 2, &[4, 8, 16], 16);
        let mut net = SkipNet::<f64>::new(cfg.clone(), 21).map_err(e)?;
        perturb_running_stats(&mut net, 22);
        let plain = net.to_plain().map_err(e)?;
        let x = randn(&[4, 2, 16, 16], 23);
        for bn in [BnPhase::Train, BnPhase::Eval] {
            let g = Graph::new();
            let reference = plain
                .forward(&g, &x, &ForwardOptions { mode: GateMode::DenseHard, decisions: Decisions::Policy, bn }, None, false)
                .map_err(e)?
                .logits
                .value();
            let modes: &[GateMode] =
                if bn == BnPhase::Eval { &[GateMode::Inference, GateMode::DenseHard] } else { &[GateMode::DenseHard] };
            for &mode in modes {
                let got = net
                    .forward(&g, &x, &ForwardOptions { mode, decisions: Decisions::ExecuteAll, bn }, None, false)
                    .map_err(e)?
                    .logits
                    .value();
                let same = got.data().iter().zip(reference.data()).all(|(a, b)| a.to_bits() == b.to_bits());
                if !same {
                    failures.push(format!("{kind:?} {mode:?} {bn:?}: all-execute differs from the plain network"));
                }
            }
        }

        // sparse inference vs dense masking
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let random: Vec<Vec<bool>> = (0..4).map(|_| (0..6).map(|_| rng.random_bool(0.5)).collect()).collect();
        for decisions in [Decisions::Policy, Decisions::PerSample(random)] {
            let g = Graph::new();
            let sparse = net
                .forward(&g, &x, &ForwardOptions::eval(GateMode::Inference).with_decisions(decisions.clone()), None, false)
                .map_err(e)?;
            let dense = net
                .forward(&g, &x, &ForwardOptions::eval(GateMode::DenseHard).with_decisions(decisions), None, false)
                .map_err(e)?;
            if sparse.trace.decisions != dense.trace.decisions {
                failures.push(format!("{kind:?}: sparse and dense decisions differ"));
            }
            for (a, b) in sparse.logits.value().data().iter().zip(dense.logits.value().data()) {
                worst_sparse = worst_sparse.max((a - b).abs());
            }
        }
    }
    if worst_sparse >= 1e-9 {
        failures.push(format!("sparse vs dense logits differ by {worst_sparse:.2e}"));
    }
    if failures.is_empty() {
        Ok(Outcome::Pass(format!(
            "g=0/g=1 exact, all-execute bitwise equal to plain, sparse vs dense max diff {worst_sparse:.1e}"
        )))
    } else {
        Ok(Outcome::Fail(failures.join("; ")))
    }
}

// ---------- A4 ----------

/// Runs a direct convolution and counts every multiplication it performs.
fn counted_conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> (Vec<f64>, u64) {
    let (n, c, h, wd) = x.dims4().expect("4d");
    let (o, _, k, _) = w.dims4().expect("4d");
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    let mut count = 0u64;
    for s in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                let v = if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    0.0
                                } else {
                                    x.data()[((s * c + ic) * h + iy as usize) * wd + ix as usize]
                                };
                                acc += v * w.data()[((oc * c + ic) * k + ky) * k + kx];
                                count += 1;
                            }
                        }
                    }
                    out[((s * o + oc) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    (out, count)
}

fn a4() -> Check {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for t in 0..20 {
        let k = [1, 3, 5][rng.random_range(0..3)];
        let stride = rng.random_range(1..=2);
        let pad = rng.random_range(0..=k / 2);
        let (c, o) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let (h, w) = (rng.random_range(k..=11), rng.random_range(k..=11));
        let x = randn(&[1, c, h, w], 1000 + t);
        let wt = randn(&[o, c, k, k], 2000 + t);
        let (values, count) = counted_conv(&x, &wt, stride, pad);
        let oh = conv_out_len(h, k, stride, pad).map_err(e)?;
        let ow = conv_out_len(w, k, stride, pad).map_err(e)?;
        let direct = conv2d_direct(&x, &wt, stride, pad).map_err(e)?;
        if conv_macs(oh, ow, o, c, k) != count {
            failures.push(format!("geometry {t}: conv_macs {} vs counted {count}", conv_macs(oh, ow, o, c, k)));
        }
        if values.iter().zip(direct.data()).any(|(a, b)| (a - b).abs() > 1e-12) {
            failures.push(format!("geometry {t}: counting loop disagrees with conv2d_direct"));
        }
    }
    let table = CostTable::for_config(&SkipNetConfig { gate_kind: GateKind::FfGateII, ..Default::default() }).map_err(e)?;
    let specs = SkipNetConfig::default().blocks();
    let mut same_width = 0;
    for (i, s) in specs.iter().enumerate() {
        if s.in_channels == s.out_channels {
            same_width += 1;
            let r = table.gate_ratio(i, Convention::ConvOnly);
            if r != 0.125 {
                failures.push(format!("FFGate-II ratio at block {i} is {r}"));
            }
        }
    }
    let rnn_cfg = SkipNetConfig {
        n: 1,
        group_widths: vec![64],
        gate_kind: GateKind::RnnGate,
        input_geometry: (3, 8, 8),
        ..Default::default()
    };
    let rnn = CostTable::for_config(&rnn_cfg).map_err(e)?;
    let rnn_ratio = rnn.gate_ratio(0, Convention::Full);
    if rnn_ratio >= 1e-3 {
        failures.push(format!("RNNGate overhead {:.4}% of its block", 100.0 * rnn_ratio));
    }
    if failures.is_empty() {
        Ok(Outcome::Pass(format!(
            "20 geometries exact; FFGate-II = 12.5% on {same_width} same-width blocks; RNNGate = {:.4}% of a width-64 block",
            100.0 * rnn_ratio
        )))
    } else {
        Ok(Outcome::Fail(failures.join("; ")))
    }
}

// ---------- A10 ----------

fn a10() -> Check {
    let dir = tempfile::tempdir().map_err(e)?;
    let ds = synthetic_make(SyntheticKind::Separable, 96, 3, 16, 4).map_err(e)?;
    let stats = ChannelStats::from_dataset(&ds).map_err(e)?;
    let mut failures = Vec::new();
    for kind in GATED {
        let config = RunConfig {
            n: 1,
            group_widths: vec![4, 8],
            gate_kind: kind,
            num_classes: 3,
            input_geometry: (3, 16, 16),
            gate_hidden: 4,
            batch_size: 16,
            epochs: 10,
            stage2_lr: 0.01,
            dataset: DatasetKind::SyntheticSeparable,
            seed: 6,
            ..Default::default()
        };
        for (objective, stage) in [
            (Objective::Supervised { gate_mode: GateMode::HardSt }, Stage::Pretrain),
            (
                Objective::Hybrid(HybridOptions { baseline_momentum: Some(0.9), ..config.hybrid().map_err(e)? }),
                Stage::Refine,
            ),
        ] {
            let label = format!("{kind:?} {stage:?}");
            let schedule = config.schedule();
            let mut straight = SkipNet::<f64>::new(config.network(), 5).map_err(e)?;
            let mut t = Trainer::new(schedule.clone(), objective.clone(), config.seed).map_err(e)?;
            for _ in 0..20 {
                t.step(&mut straight, &ds, &stats).map_err(e)?;
            }

            let mut first = SkipNet::<f64>::new(config.network(), 5).map_err(e)?;
            let mut t1 = Trainer::new(schedule.clone(), objective.clone(), config.seed).map_err(e)?;
            for _ in 0..10 {
                t1.step(&mut first, &ds, &stats).map_err(e)?;
            }
            let path = dir.path().join(format!("{kind:?}-{stage:?}.bin"));
            let ck = Checkpoint { config: config.clone(), stats: stats.clone(), stage, trainer: Some(t1.state()), net: first };
            ck.save(&path).map_err(e)?;
            let loaded = Checkpoint::load(&path).map_err(e)?;
            let bytes = std::fs::read(&path).map_err(e)?;
            if loaded.to_bytes() != bytes {
                failures.push(format!("{label}: save -> load -> save changed the bytes"));
            }
            let eval_opts = EvalOptions::default();
            let a = evaluate(&ck.net, &ds, &stats, &eval_opts).map_err(e)?;
            let b = evaluate(&loaded.net, &ds, &loaded.stats, &eval_opts).map_err(e)?;
            if a.mean_loss.to_bits() != b.mean_loss.to_bits() || a.predictions != b.predictions {
                failures.push(format!("{label}: evaluation changed after reload"));
            }
            let mut resumed = loaded.net;
            let mut t2 = Trainer::restore(schedule, objective.clone(), config.seed, loaded.trainer.expect("state"))
                .map_err(e)?;
            for _ in 0..10 {
                t2.step(&mut resumed, &ds, &stats).map_err(e)?;
            }
            if straight.params() != resumed.params() || t.state() != t2.state() {
                failures.push(format!("{label}: 10 + 10 steps differ from 20 straight"));
            }
        }
    }
    if failures.is_empty() {
        Ok(Outcome::Pass("byte-identical round trip and 10+10 == 20 for FF-I, FF-II, RNN (stage 1 and 2)".into()))
    } else {
        Ok(Outcome::Fail(failures.join("; ")))
    }
}

// ---------- A5–A9: CIFAR-10 ----------

const SEEDS: [u64; 3] = [0, 1, 2];
const ALPHAS: [f64; 4] = [0.0, 0.5, 1.0, 2.0];
const TUNED_ALPHAS: [f64; 3] = [0.5, 1.0, 2.0];

fn cifar_config(seed: u64) -> RunConfig {
    RunConfig {
        n: 2,
        group_widths: vec![16, 32, 64],
        gate_kind: GateKind::RnnGate,
        num_classes: 10,
        input_geometry: (3, 32, 32),
        epochs: 30,
        batch_size: 128,
        stage2_iterations: 2000,
        stage2_lr: 1e-3,
        eval_every: 500,
        dataset: DatasetKind::Cifar10,
        train_subset: Some(1000),
        seed,
        ..Default::default()
    }
}

#[derive(Clone, Debug)]
struct Summary {
    accuracy: f64,
    exec: f64,
    macs: f64,
}

impl From<&Evaluation> for Summary {
    fn from(ev: &Evaluation) -> Self {
        Summary { accuracy: ev.accuracy, exec: ev.trace.mean_executed(), macs: ev.cost.mean }
    }
}

struct SeedRun {
    hard: Summary,
    soft: Summary,
    hard_net: SkipNet<f64>,
    refined: Vec<(f64, Summary)>,
    pure_rl: Summary,
}

struct CifarResults {
    runs: Vec<SeedRun>,
    train: LabeledDataset,
    test: LabeledDataset,
    stats: ChannelStats,
    started: Instant,
    a5_elapsed: Duration,
}

fn eval_policy(net: &SkipNet<f64>, test: &LabeledDataset, stats: &ChannelStats) -> Result<Summary, String> {
    Ok(Summary::from(&evaluate(net, test, stats, &EvalOptions::default()).map_err(e)?))
}

fn cifar_dir() -> Option<PathBuf> {
    std::env::var_os("SKIPLAB_CIFAR10_DIR").map(PathBuf::from).filter(|p| p.is_dir())
}

fn run_cifar(dir: &std::path::Path) -> Result<CifarResults, String> {
    let started = Instant::now();
    let base = cifar_config(0);
    let splits = load_cifar10(dir, base.train_subset, None).map_err(e)?;
    let stats = ChannelStats::from_dataset(&splits.train).map_err(e)?;
    let data = DataSplits { train: &splits.train, test: &splits.test, stats: &stats };
    let mut runs = Vec::new();
    for seed in SEEDS {
        let cfg = cifar_config(seed);
        let schedule = cfg.schedule();
        let mut hard_net = SkipNet::<f64>::new(cfg.network(), seed).map_err(e)?;
        Trainer::new(schedule.clone(), Objective::Supervised { gate_mode: GateMode::HardSt }, seed)
            .map_err(e)?
            .run_epochs(&mut hard_net, data, |m| eprintln!("  [A5 seed {seed}] epoch {} test {:.4}", m.epoch, m.test_acc))
            .map_err(e)?;
        let hard = eval_policy(&hard_net, &splits.test, &stats)?;
        let mut refined = Vec::new();
        for alpha in ALPHAS {
            let c = RunConfig { alpha, ..cfg.clone() };
            let mut net = hard_net.clone();
            Trainer::new(schedule.clone(), Objective::Hybrid(c.hybrid().map_err(e)?), seed)
                .map_err(e)?
                .run_iterations(&mut net, data, cfg.stage2_iterations, |_| {})
                .map_err(e)?;
            refined.push((alpha, eval_policy(&net, &splits.test, &stats)?));
        }
        let soft_cfg = RunConfig { train_gate_mode: TrainGateMode::Soft, ..cfg.clone() };
        let mut soft_net = SkipNet::<f64>::new(soft_cfg.network(), seed).map_err(e)?;
        Trainer::new(schedule.clone(), Objective::Supervised { gate_mode: soft_cfg.gate_mode() }, seed)
            .map_err(e)?
            .run_epochs(&mut soft_net, data, |_| {})
            .map_err(e)?;
        let soft = eval_policy(&soft_net, &splits.test, &stats)?;
        let pure_cfg = RunConfig { pure_rl: true, ..cfg.clone() };
        let mut pure_net = SkipNet::<f64>::new(pure_cfg.network(), seed).map_err(e)?;
        Trainer::new(schedule.clone(), Objective::Hybrid(pure_cfg.hybrid().map_err(e)?), seed)
            .map_err(e)?
            .run_iterations(&mut pure_net, data, cfg.stage2_iterations, |_| {})
            .map_err(e)?;
        let pure_rl = eval_policy(&pure_net, &splits.test, &stats)?;
        runs.push(SeedRun { hard, soft, hard_net, refined, pure_rl });
    }
    let a5_elapsed = started.elapsed();
    Ok(CifarResults { runs, train: splits.train, test: splits.test, stats, started, a5_elapsed })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn refined_mean(r: &CifarResults, alpha: f64, f: impl Fn(&Summary) -> f64) -> f64 {
    mean(r.runs.iter().map(|s| f(&s.refined.iter().find(|(a, _)| *a == alpha).expect("alpha").1)))
}

/// The α from the tuning grid meeting the accuracy bound with the largest reduction.
fn tuned_alpha(r: &CifarResults) -> (f64, f64, f64) {
    let base_acc = mean(r.runs.iter().map(|s| s.hard.accuracy));
    let base_exec = mean(r.runs.iter().map(|s| s.hard.exec));
    let mut best = (TUNED_ALPHAS[0], f64::NEG_INFINITY, f64::INFINITY);
    for alpha in TUNED_ALPHAS {
        let reduction = 1.0 - refined_mean(r, alpha, |s| s.exec) / base_exec;
        let drop = base_acc - refined_mean(r, alpha, |s| s.accuracy);
        let ok = drop <= 0.02;
        let best_ok = best.2 <= 0.02;
        if (ok && (!best_ok || reduction > best.1)) || (!ok && !best_ok && drop < best.2) {
            best = (alpha, reduction, drop);
        }
    }
    best
}

fn a5(r: &CifarResults) -> Check {
    let acc1 = mean(r.runs.iter().map(|s| s.hard.accuracy));
    let (alpha, reduction, drop) = tuned_alpha(r);
    let minutes = r.a5_elapsed.as_secs_f64() / 60.0;
    let detail = format!(
        "stage-1 accuracy {acc1:.4} (need >= 0.55); alpha {alpha}: executed blocks -{:.1}% (need >= 20%), accuracy drop {:.2} pts (need <= 2); {minutes:.1} min for all runs",
        100.0 * reduction,
        100.0 * drop
    );
    if acc1 >= 0.55 && reduction >= 0.20 && drop <= 0.02 && minutes <= 60.0 {
        Ok(Outcome::Pass(detail))
    } else {
        Ok(Outcome::Fail(detail))
    }
}

fn a6(r: &CifarResults) -> Check {
    let (hard_acc, soft_acc) = (mean(r.runs.iter().map(|s| s.hard.accuracy)), mean(r.runs.iter().map(|s| s.soft.accuracy)));
    let (hard_cost, soft_cost) = (mean(r.runs.iter().map(|s| s.hard.macs)), mean(r.runs.iter().map(|s| s.soft.macs)));
    let detail = format!(
        "soft-trained {soft_acc:.4} at {soft_cost:.3e} MACs vs hard-trained {hard_acc:.4} at {hard_cost:.3e} MACs"
    );
    if soft_acc < hard_acc && soft_cost <= hard_cost {
        Ok(Outcome::Pass(detail))
    } else {
        Ok(Outcome::Fail(detail))
    }
}

fn a7(r: &CifarResults) -> Check {
    let exec: Vec<f64> = ALPHAS.iter().map(|&a| refined_mean(r, a, |s| s.exec)).collect();
    let inversions = exec.windows(2).filter(|w| w[1] > w[0]).count();
    let detail = format!("seed-averaged executed blocks over alpha {ALPHAS:?}: {exec:.3?}; {inversions} inversion(s)");
    if inversions <= 1 {
        Ok(Outcome::Pass(detail))
    } else {
        Ok(Outcome::Fail(detail))
    }
}

fn a8(r: &CifarResults) -> Check {
    let (alpha, _, _) = tuned_alpha(r);
    let blocks = r.runs[0].hard_net.num_blocks() as f64;
    let learned_acc = refined_mean(r, alpha, |s| s.accuracy);
    let ratio = 1.0 - refined_mean(r, alpha, |s| s.exec) / blocks;
    let mut sdv_acc = Vec::new();
    let mut sdv_ratio = Vec::new();
    for seed in SEEDS {
        let cfg = RunConfig { sdv_skip_ratio: Some(ratio), ..cifar_config(seed) };
        let mut net = SkipNet::<f64>::new(cfg.network(), seed).map_err(e)?;
        let data = DataSplits { train: &r.train, test: &r.test, stats: &r.stats };
        Trainer::new(cfg.schedule(), Objective::Sdv { skip_ratio: ratio }, seed)
            .map_err(e)?
            .run_epochs(&mut net, data, |_| {})
            .map_err(e)?;
        let opts = EvalOptions { decisions: EvalDecisions::Random { skip_ratio: ratio, seed }, ..Default::default() };
        let ev = evaluate(&net, &r.test, &r.stats, &opts).map_err(e)?;
        sdv_acc.push(ev.accuracy);
        sdv_ratio.push(1.0 - ev.trace.mean_executed() / blocks);
    }
    let (acc, measured) = (mean(sdv_acc.into_iter()), mean(sdv_ratio.into_iter()));
    let matched = (measured - ratio).abs() <= 0.05 * ratio.max(1e-12);
    let detail = format!(
        "learned (alpha {alpha}) {learned_acc:.4} at skip ratio {ratio:.3} vs SDV {acc:.4} at {measured:.3}"
    );
    if matched && learned_acc >= acc {
        Ok(Outcome::Pass(detail))
    } else {
        Ok(Outcome::Fail(detail))
    }
}

fn a9(r: &CifarResults) -> Check {
    let pure = mean(r.runs.iter().map(|s| s.pure_rl.accuracy));
    let (alpha, _, _) = tuned_alpha(r);
    let hybrid = refined_mean(r, alpha, |s| s.accuracy);
    let detail = format!("pure RL from scratch {pure:.4} (need < 0.25); hybrid (alpha {alpha}) {hybrid:.4} (need > 0.50)");
    if pure < 0.25 && hybrid > 0.50 {
        Ok(Outcome::Pass(detail))
    } else {
        Ok(Outcome::Fail(detail))
    }
}

// ---------- driver ----------

fn report(id: &str, title: &str, limit: Option<Duration>, elapsed: Duration, outcome: Check, failed: &mut usize, not_run: &mut usize) {
    let secs = elapsed.as_secs_f64();
    let timing = match limit {
        Some(l) => format!("{secs:.1}s, limit {}s", l.as_secs()),
        None => format!("{secs:.1}s"),
    };
    let (status, detail) = match outcome {
        Ok(Outcome::Pass(d)) if limit.is_none_or(|l| elapsed <= l) => ("PASS", d),
        Ok(Outcome::Pass(d)) => ("FAIL", format!("over time limit; {d}")),
        Ok(Outcome::Fail(d)) => ("FAIL", d),
        Ok(Outcome::NotRun(d)) => {
            *not_run += 1;
            ("FAIL", format!("not run: {d}"))
        }
        Err(err) => ("FAIL", format!("error: {err}")),
    };
    if status == "FAIL" && !detail.starts_with("not run") {
        *failed += 1;
    }
    eprintln!("{id} {status} {title} ({timing}): {detail}");
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with('A')).collect();
    let wanted = |id: &str| filter.is_empty() || filter.iter().any(|f| f == id);
    let mut failed = 0;
    let mut not_run = 0;
    let offline: [Criterion; 5] = [
        ("A1", "gradient suite", 120, a1),
        ("A2", "REINFORCE unbiasedness", 600, a2),
        ("A3", "gated-block degeneracy and equivalences", 60, a3),
        ("A4", "cost model", 60, a4),
        ("A10", "persistence", 300, a10),
    ];
    let mut lines: Vec<Deferred> = Vec::new();
    for (id, title, limit, f) in offline {
        lines.push((
            id,
            Box::new(move |failed, not_run| {
                let t = Instant::now();
                let out = f();
                report(id, title, Some(Duration::from_secs(limit)), t.elapsed(), out, failed, not_run);
            }),
        ));
    }
    // A1–A4 first, then the CIFAR block, then A10, matching the criterion order.
    let mut offline_runs: Vec<_> = lines.into_iter().filter(|(id, _)| wanted(id)).collect();
    let a10 = offline_runs.iter().position(|(id, _)| *id == "A10").map(|i| offline_runs.remove(i));
    for (_, run) in offline_runs {
        run(&mut failed, &mut not_run);
    }

    let cifar: [CifarCriterion; 5] = [
        ("A5", "desk-scale skipping on CIFAR-10", a5),
        ("A6", "hard beats soft", a6),
        ("A7", "alpha monotonicity", a7),
        ("A8", "learned policy vs stochastic depth", a8),
        ("A9", "pure RL fails, hybrid learns", a9),
    ];
    if cifar.iter().any(|(id, _, _)| wanted(id)) {
        match cifar_dir() {
            None => {
                for (id, title, _) in cifar.iter().filter(|(id, _, _)| wanted(id)) {
                    let reason = "CIFAR-10 binary batches not found; set SKIPLAB_CIFAR10_DIR".to_string();
                    report(id, title, None, Duration::ZERO, Ok(Outcome::NotRun(reason)), &mut failed, &mut not_run);
                }
            }
            Some(dir) => {
                let t = Instant::now();
                match run_cifar(&dir) {
                    Err(err) => {
                        for (id, title, _) in cifar.iter().filter(|(id, _, _)| wanted(id)) {
                            report(id, title, None, t.elapsed(), Err(err.clone()), &mut failed, &mut not_run);
                        }
                    }
                    Ok(results) => {
                        for (id, title, f) in cifar.iter().filter(|(id, _, _)| wanted(id)) {
                            let t = Instant::now();
                            let out = f(&results);
                            report(id, title, None, t.elapsed(), out, &mut failed, &mut not_run);
                        }
                        eprintln!("CIFAR-10 block total: {:.1} min", results.started.elapsed().as_secs_f64() / 60.0);
                    }
                }
            }
        }
    }
    if let Some((_, run)) = a10 {
        run(&mut failed, &mut not_run);
    }

    let strict = std::env::var("SKIPLAB_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    eprintln!("acceptance: {failed} failed, {not_run} not run");
    if failed > 0 || (strict && not_run > 0) {
        std::process::exit(1);
    }
}
