use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateKind {
    /// Plain residual network without gates.
    #[serde(rename = "none")]
    None,
    /// 2×2 max pool, two 3×3 convolutions (stride 1 then 2), pool, linear.
    #[serde(rename = "ffgate_i")]
    FfGateI,
    /// One 3×3 stride-2 convolution, pool, linear.
    #[serde(rename = "ffgate_ii")]
    FfGateII,
    /// Pool, per-stage projection, one LSTM cell shared by every gate, linear.
    #[serde(rename = "rnn")]
    RnnGate,
}

impl GateKind {
    pub fn is_gated(self) -> bool {
        self != GateKind::None
    }
}

/// How a block's input is brought to the block's output shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShortcutKind {
    Identity,
    /// Average pool (window = stride) followed by zero channel padding.
    PoolPad,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShortcutSpec {
    pub kind: ShortcutKind,
    pub pool_stride: usize,
    pub pad_channels: usize,
}

/// Static geometry of one residual block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub index: usize,
    pub group: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub in_hw: (usize, usize),
    pub out_hw: (usize, usize),
    pub shortcut: ShortcutSpec,
}

/// Architecture of a gated residual network with `n` blocks per stage.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipNetConfig {
    pub n: usize,
    pub group_widths: Vec<usize>,
    pub gate_kind: GateKind,
    pub num_classes: usize,
    /// (channels, height, width)
    pub input_geometry: (usize, usize, usize),
    pub gate_hidden: usize,
}

impl Default for SkipNetConfig {
    fn default() -> Self {
        SkipNetConfig {
            n: 6,
            group_widths: vec![16, 32, 64],
            gate_kind: GateKind::RnnGate,
            num_classes: 10,
            input_geometry: (3, 32, 32),
            gate_hidden: 10,
        }
    }
}

impl SkipNetConfig {
    /// Number of gated blocks, `n × stages`.
    pub fn num_blocks(&self) -> usize {
        self.n * self.group_widths.len()
    }

    /// Weighted layers: stem, two per block, classifier (6n+2 for three stages).
    pub fn depth(&self) -> usize {
        2 * self.num_blocks() + 2
    }

    pub fn with_geometry(&self, h: usize, w: usize) -> Self {
        let mut c = self.clone();
        c.input_geometry = (self.input_geometry.0, h, w);
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(config_err!("blocks per stage must be at least 1"));
        }
        if self.group_widths.is_empty() || self.group_widths.contains(&0) {
            return Err(config_err!("group widths {:?} must be nonempty and positive", self.group_widths));
        }
        if let Some(w) = self.group_widths.windows(2).find(|w| w[1] != 2 * w[0]) {
            return Err(config_err!(
                "group widths must double from stage to stage, found {} then {}",
                w[0],
                w[1]
            ));
        }
        if self.num_classes == 0 {
            return Err(config_err!("num_classes must be positive"));
        }
        let (c, h, w) = self.input_geometry;
        if c == 0 || h == 0 || w == 0 {
            return Err(config_err!("input geometry {:?} has a zero dimension", self.input_geometry));
        }
        if self.gate_kind == GateKind::RnnGate && self.gate_hidden == 0 {
            return Err(config_err!("gate_hidden must be positive"));
        }
        let div = 1 << (self.group_widths.len() - 1);
        if h % div != 0 || w % div != 0 {
            return Err(config_err!(
                "input {h}x{w} must be divisible by {div} for {} stages",
                self.group_widths.len()
            ));
        }
        for b in self.blocks() {
            let (bh, bw) = b.in_hw;
            match self.gate_kind {
                GateKind::FfGateI if bh < 4 || bw < 4 || bh % 2 != 0 || bw % 2 != 0 => {
                    return Err(config_err!(
                        "FFGate-I at block {} needs even spatial size ≥ 4, got {bh}x{bw}",
                        b.index
                    ));
                }
                GateKind::FfGateII if bh < 2 || bw < 2 => {
                    return Err(config_err!(
                        "FFGate-II at block {} needs spatial size ≥ 2, got {bh}x{bw}",
                        b.index
                    ));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Block geometry in execution order.
    pub fn blocks(&self) -> Vec<BlockSpec> {
        let (_, mut h, mut w) = self.input_geometry;
        let mut specs = Vec::with_capacity(self.num_blocks());
        for (g, &width) in self.group_widths.iter().enumerate() {
            for j in 0..self.n {
                let downsample = g > 0 && j == 0;
                let in_channels = if downsample { self.group_widths[g - 1] } else { width };
                let stride = if downsample { 2 } else { 1 };
                let out_hw = if downsample { (h / 2, w / 2) } else { (h, w) };
                specs.push(BlockSpec {
                    index: specs.len(),
                    group: g,
                    in_channels,
                    out_channels: width,
                    stride,
                    in_hw: (h, w),
                    out_hw,
                    shortcut: if downsample {
                        ShortcutSpec {
                            kind: ShortcutKind::PoolPad,
                            pool_stride: 2,
                            pad_channels: width - in_channels,
                        }
                    } else {
                        ShortcutSpec {
                            kind: ShortcutKind::Identity,
                            pool_stride: 1,
                            pad_channels: 0,
                        }
                    },
                });
                (h, w) = out_hw;
            }
        }
        specs
    }
}
