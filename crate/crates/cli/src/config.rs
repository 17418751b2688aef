use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use skiplab_core::cost::CostTable;
use skiplab_core::network::{GateKind, GateMode, SkipNetConfig};
use skiplab_core::training::{HybridOptions, RewardConfig, TrainSchedule, Weighting};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Cifar10,
    Idx,
    SyntheticSeparable,
    SyntheticRedundant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainGateMode {
    HardSt,
    Soft,
}

/// Every setting of a run, as one flat JSON object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // network
    pub n: usize,
    pub group_widths: Vec<usize>,
    pub gate_kind: GateKind,
    pub num_classes: usize,
    pub input_geometry: (usize, usize, usize),
    pub gate_hidden: usize,
    // schedule
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_milestones: Vec<f64>,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub stage2_iterations: usize,
    pub stage2_lr: f64,
    pub eval_every: usize,
    pub eval_batch_size: usize,
    pub augment: bool,
    // reward
    pub alpha: f64,
    pub beta: f64,
    pub costs: Option<Vec<f64>>,
    pub use_mac_costs: bool,
    pub pure_rl: bool,
    pub baseline_momentum: Option<f64>,
    // stage 1
    pub train_gate_mode: TrainGateMode,
    /// Train an ungated network with random skipping at this ratio instead of gates.
    pub sdv_skip_ratio: Option<f64>,
    // data
    pub dataset: DatasetKind,
    pub data_dir: Option<PathBuf>,
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,
    pub synthetic_train: usize,
    pub synthetic_test: usize,
    pub idx_train_images: String,
    pub idx_train_labels: String,
    pub idx_test_images: String,
    pub idx_test_labels: String,
    /// Seeds synthetic dataset generation, independent of the training seed.
    pub data_seed: u64,
    // run
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let net = SkipNetConfig::default();
        let s = TrainSchedule::default();
        RunConfig {
            n: net.n,
            group_widths: net.group_widths,
            gate_kind: net.gate_kind,
            num_classes: net.num_classes,
            input_geometry: net.input_geometry,
            gate_hidden: net.gate_hidden,
            epochs: s.epochs,
            lr: s.lr,
            momentum: s.momentum,
            weight_decay: s.weight_decay,
            lr_milestones: s.lr_milestones,
            lr_decay: s.lr_decay,
            batch_size: s.batch_size,
            stage2_iterations: s.stage2_iterations,
            stage2_lr: s.stage2_lr,
            eval_every: s.eval_every,
            eval_batch_size: s.eval_batch_size,
            augment: s.augment,
            alpha: 1.0,
            beta: 1.0,
            costs: None,
            use_mac_costs: false,
            pure_rl: false,
            baseline_momentum: None,
            train_gate_mode: TrainGateMode::HardSt,
            sdv_skip_ratio: None,
            dataset: DatasetKind::Cifar10,
            data_dir: None,
            train_subset: None,
            test_subset: None,
            synthetic_train: 512,
            synthetic_test: 256,
            idx_train_images: "train-images-idx3-ubyte".into(),
            idx_train_labels: "train-labels-idx1-ubyte".into(),
            idx_test_images: "t10k-images-idx3-ubyte".into(),
            idx_test_labels: "t10k-labels-idx1-ubyte".into(),
            data_seed: 0,
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The architecture trained by this run. The stochastic-depth baseline has no gates.
    pub fn network(&self) -> SkipNetConfig {
        SkipNetConfig {
            n: self.n,
            group_widths: self.group_widths.clone(),
            gate_kind: if self.sdv_skip_ratio.is_some() { GateKind::None } else { self.gate_kind },
            num_classes: self.num_classes,
            input_geometry: self.input_geometry,
            gate_hidden: self.gate_hidden,
        }
    }

    pub fn schedule(&self) -> TrainSchedule {
        TrainSchedule {
            epochs: self.epochs,
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            lr_milestones: self.lr_milestones.clone(),
            lr_decay: self.lr_decay,
            batch_size: self.batch_size,
            stage2_iterations: self.stage2_iterations,
            stage2_lr: self.stage2_lr,
            eval_every: self.eval_every,
            eval_batch_size: self.eval_batch_size,
            augment: self.augment,
        }
    }

    pub fn gate_mode(&self) -> GateMode {
        match self.train_gate_mode {
            TrainGateMode::HardSt => GateMode::HardSt,
            TrainGateMode::Soft => GateMode::Soft,
        }
    }

    pub fn reward(&self) -> Result<RewardConfig> {
        let net = self.network();
        let gates = net.num_blocks();
        let costs = match (&self.costs, self.use_mac_costs) {
            (Some(_), true) => return Err(CliError::Usage("set either costs or use_mac_costs, not both".into())),
            (Some(c), false) => c.clone(),
            (None, true) => CostTable::for_config(&net)?.normalized_block_costs(),
            (None, false) => vec![1.0; gates],
        };
        let r = RewardConfig { alpha: self.alpha, beta: self.beta, costs };
        r.validate(gates)?;
        Ok(r)
    }

    pub fn hybrid(&self) -> Result<HybridOptions> {
        Ok(HybridOptions {
            reward: self.reward()?,
            pure_rl: self.pure_rl,
            weighting: Weighting::Relaxed,
            baseline_momentum: self.baseline_momentum,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.network().validate()?;
        self.schedule().validate()?;
        if let Some(p) = self.sdv_skip_ratio {
            if !(0.0..=1.0).contains(&p) {
                return Err(CliError::Usage(format!("sdv_skip_ratio {p} is outside [0, 1]")));
            }
        }
        if self.dataset == DatasetKind::Cifar10 && (self.input_geometry != (3, 32, 32) || self.num_classes != 10) {
            return Err(CliError::Usage("CIFAR-10 runs need input_geometry [3, 32, 32] and num_classes 10".into()));
        }
        if self.sdv_skip_ratio.is_none() {
            self.reward()?;
        }
        Ok(())
    }

    /// Names of architecture fields that differ from `other`.
    pub fn architecture_diff(&self, other: &RunConfig) -> Vec<String> {
        let (a, b) = (self.network(), other.network());
        let mut out = Vec::new();
        let mut cmp = |name: &str, x: String, y: String| {
            if x != y {
                out.push(format!("{name}: {x} vs {y}"));
            }
        };
        cmp("n", a.n.to_string(), b.n.to_string());
        cmp("group_widths", format!("{:?}", a.group_widths), format!("{:?}", b.group_widths));
        cmp("gate_kind", format!("{:?}", a.gate_kind), format!("{:?}", b.gate_kind));
        cmp("num_classes", a.num_classes.to_string(), b.num_classes.to_string());
        cmp("input_geometry", format!("{:?}", a.input_geometry), format!("{:?}", b.input_geometry));
        cmp("gate_hidden", a.gate_hidden.to_string(), b.gate_hidden.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"n": 2, "learning_rate": 0.1}"#).unwrap_err();
        assert!(err.to_string().contains("learning_rate"));
    }

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig { gate_kind: GateKind::FfGateII, costs: Some(vec![1.0; 18]), ..Default::default() };
        let back: RunConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
        let partial: RunConfig = serde_json::from_str(r#"{"alpha": 0.5, "gate_kind": "ffgate_i"}"#).unwrap();
        assert_eq!(partial.alpha, 0.5);
        assert_eq!(partial.n, 6);
        assert_eq!(partial.stage2_lr, 1e-4);
    }

    #[test]
    fn architecture_differences_are_named() {
        let a = RunConfig::default();
        let b = RunConfig { n: 3, gate_kind: GateKind::FfGateII, ..Default::default() };
        let d = a.architecture_diff(&b);
        assert_eq!(d.len(), 2);
        assert!(d[0].starts_with("n:") && d[1].starts_with("gate_kind:"));
    }

    #[test]
    fn mac_costs_have_unit_mean() {
        let c = RunConfig { use_mac_costs: true, ..Default::default() };
        let r = c.reward().unwrap();
        let mean = r.costs.iter().sum::<f64>() / r.costs.len() as f64;
        assert!((mean - 1.0).abs() < 1e-12);
    }
}
