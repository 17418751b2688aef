//! Analytic multiply-accumulate (MAC) accounting.
//!
//! Two conventions are reported. The convolution-only convention (the
//! default) counts convolution MACs; the full convention adds fully
//! connected and LSTM matrix products. Batch norm, activations, pooling and additions cost nothing.

use serde::Serialize;

use crate::autodiff::ops::conv_out_len;
use crate::error::{Error, Result};
use crate::network::{GateKind, GateTrace, SkipNetConfig};

/// MACs of a convolution producing `out_h × out_w × out_c` from `in_c` channels with a k×k kernel.
pub fn conv_macs(out_h: usize, out_w: usize, out_c: usize, in_c: usize, k: usize) -> u64 {
    (out_h * out_w * out_c * in_c * k * k) as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convention {
    ConvOnly,
    Full,
}

/// MACs of one component, split by layer type.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Macs {
    pub conv: u64,
    pub dense: u64,
}

impl Macs {
    pub fn get(&self, convention: Convention) -> u64 {
        match convention {
            Convention::ConvOnly => self.conv,
            Convention::Full => self.conv + self.dense,
        }
    }
}

impl std::ops::Add for Macs {
    type Output = Macs;

    fn add(self, o: Macs) -> Macs {
        Macs {
            conv: self.conv + o.conv,
            dense: self.dense + o.dense,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostTable {
    pub gate_kind: GateKind,
    pub stem: Macs,
    pub blocks: Vec<Macs>,
    /// Empty for ungated networks.
    pub gates: Vec<Macs>,
    pub classifier: Macs,
}

/// Known mismatch between the computed FF-I overhead and the published figure.
pub const FFGATE_I_REFERENCE_RATIO: f64 = 0.19;

impl CostTable {
    pub fn for_config(cfg: &SkipNetConfig) -> Result<Self> {
        cfg.validate()?;
        let (c_in, h, w) = cfg.input_geometry;
        let out = |len: usize, stride: usize| conv_out_len(len, 3, stride, 1);
        let stem = Macs {
            conv: conv_macs(h, w, cfg.group_widths[0], c_in, 3),
            dense: 0,
        };
        let specs = cfg.blocks();
        let mut blocks = Vec::with_capacity(specs.len());
        let mut gates = Vec::new();
        for s in &specs {
            let (oh, ow) = s.out_hw;
            blocks.push(Macs {
                conv: conv_macs(oh, ow, s.out_channels, s.in_channels, 3)
                    + conv_macs(oh, ow, s.out_channels, s.out_channels, 3),
                dense: 0,
            });
            let (ih, iw) = s.in_hw;
            let (ic, oc) = (s.in_channels, s.out_channels);
            let gate = match cfg.gate_kind {
                GateKind::None => continue,
                GateKind::FfGateI => {
                    let (ph, pw) = (ih / 2, iw / 2);
                    let (qh, qw) = (out(ph, 2)?, out(pw, 2)?);
                    Macs {
                        conv: conv_macs(ph, pw, oc, ic, 3) + conv_macs(qh, qw, oc, oc, 3),
                        dense: oc as u64,
                    }
                }
                GateKind::FfGateII => Macs {
                    conv: conv_macs(out(ih, 2)?, out(iw, 2)?, oc, ic, 3),
                    dense: oc as u64,
                },
                GateKind::RnnGate => {
                    let hd = cfg.gate_hidden as u64;
                    Macs {
                        conv: 0,
                        // projection, input and recurrent products, output layer
                        dense: ic as u64 * hd + 2 * hd * 4 * hd + hd,
                    }
                }
            };
            gates.push(gate);
        }
        let last = *cfg.group_widths.last().expect("validated");
        let classifier = Macs {
            conv: 0,
            dense: (last * cfg.num_classes) as u64,
        };
        Ok(CostTable {
            gate_kind: cfg.gate_kind,
            stem,
            blocks,
            gates,
            classifier,
        })
    }

    /// Ungated network executing every block.
    pub fn full_cost(&self, c: Convention) -> u64 {
        self.stem.get(c) + self.blocks.iter().map(|b| b.get(c)).sum::<u64>() + self.classifier.get(c)
    }

    pub fn gate_total(&self, c: Convention) -> u64 {
        self.gates.iter().map(|g| g.get(c)).sum()
    }

    /// Stem, classifier, every gate and every block.
    pub fn total(&self, c: Convention) -> u64 {
        self.full_cost(c) + self.gate_total(c)
    }

    /// Gate overhead relative to its block.
    pub fn gate_ratio(&self, i: usize, c: Convention) -> f64 {
        self.gates[i].get(c) as f64 / self.blocks[i].get(c) as f64
    }

    /// Cost of one sample with execution decisions `g`.
    pub fn sample_cost(&self, g: &[bool], c: Convention) -> Result<u64> {
        if g.len() != self.blocks.len() {
            return Err(Error::Contract(format!(
                "{} decisions for {} blocks",
                g.len(),
                self.blocks.len()
            )));
        }
        let executed: u64 = self
            .blocks
            .iter()
            .zip(g)
            .filter(|(_, &gi)| gi)
            .map(|(b, _)| b.get(c))
            .sum();
        Ok(self.stem.get(c) + self.classifier.get(c) + self.gate_total(c) + executed)
    }

    /// Block costs normalized to mean 1, for use as per-gate rewards.
    pub fn normalized_block_costs(&self) -> Vec<f64> {
        let mean = self.blocks.iter().map(|b| b.conv as f64).sum::<f64>() / self.blocks.len() as f64;
        self.blocks.iter().map(|b| b.conv as f64 / mean).collect()
    }

    /// Human-readable caveats about the table.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.gate_kind == GateKind::FfGateI && !self.gates.is_empty() {
            let r = self.gate_ratio(0, Convention::ConvOnly);
            out.push(format!(
                "FFGate-I overhead computes to {:.2}% of its block with block-width gate convolutions; \
                 the published figure is roughly {:.0}%",
                100.0 * r,
                100.0 * FFGATE_I_REFERENCE_RATIO
            ));
        }
        if self.gate_kind == GateKind::RnnGate {
            out.push(
                "RNNGate has no convolutions, so its overhead is zero under the convolution-only convention; \
                 see the full convention"
                    .to_string(),
            );
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub convention: Convention,
    pub per_sample: Vec<u64>,
    pub mean: f64,
    /// Ungated network executing every block.
    pub full_cost: u64,
    /// `1 − mean / full_cost`; negative when gate overhead exceeds savings.
    pub reduction: f64,
}

/// Per-sample and mean cost of the executions recorded in a hard-mode trace.
pub fn expected_cost(trace: &GateTrace, table: &CostTable, c: Convention) -> Result<CostReport> {
    let decisions = trace
        .decisions
        .as_ref()
        .ok_or_else(|| Error::Contract("cost needs hard decisions; got a soft-mode trace".into()))?;
    let per_sample = decisions
        .iter()
        .map(|g| table.sample_cost(g, c))
        .collect::<Result<Vec<_>>>()?;
    let mean = per_sample.iter().map(|&v| v as f64).sum::<f64>() / per_sample.len().max(1) as f64;
    let full_cost = table.full_cost(c);
    Ok(CostReport {
        convention: c,
        per_sample,
        mean,
        full_cost,
        reduction: 1.0 - mean / full_cost as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_macs_examples() {
        assert_eq!(conv_macs(32, 32, 16, 16, 3), 2_359_296);
        assert_eq!(conv_macs(1, 1, 1, 1, 1), 1);
        assert_eq!(conv_macs(5, 7, 8, 3, 3), 2 * conv_macs(5, 7, 4, 3, 3));
    }

    fn width16(kind: GateKind) -> CostTable {
        let cfg = SkipNetConfig {
            n: 1,
            group_widths: vec![16],
            gate_kind: kind,
            num_classes: 10,
            input_geometry: (3, 32, 32),
            gate_hidden: 10,
        };
        CostTable::for_config(&cfg).unwrap()
    }

    #[test]
    fn block_and_gate_costs() {
        let t = width16(GateKind::FfGateII);
        assert_eq!(t.blocks[0].conv, 4_718_592);
        assert_eq!(t.gates[0].conv, 589_824);
        assert_eq!(t.gate_ratio(0, Convention::ConvOnly), 0.125);
        let t = width16(GateKind::FfGateI);
        assert_eq!(t.gates[0].conv, 737_280);
        assert_eq!(t.gate_ratio(0, Convention::ConvOnly), 0.15625);
        assert_eq!(t.warnings().len(), 1);
    }

    #[test]
    fn rnn_gate_is_tiny() {
        let cfg = SkipNetConfig {
            n: 1,
            group_widths: vec![64],
            gate_kind: GateKind::RnnGate,
            num_classes: 10,
            input_geometry: (3, 8, 8),
            gate_hidden: 10,
        };
        let t = CostTable::for_config(&cfg).unwrap();
        assert_eq!(t.gates[0].get(Convention::Full), 1450);
        assert_eq!(t.gates[0].get(Convention::ConvOnly), 0);
        assert!(t.gate_ratio(0, Convention::Full) < 1e-3);
    }

    #[test]
    fn extreme_decisions() {
        let t = width16(GateKind::FfGateII);
        for c in [Convention::ConvOnly, Convention::Full] {
            assert_eq!(t.sample_cost(&[true], c).unwrap(), t.full_cost(c) + t.gate_total(c));
            assert_eq!(
                t.sample_cost(&[false], c).unwrap(),
                t.stem.get(c) + t.classifier.get(c) + t.gate_total(c)
            );
        }
    }

    #[test]
    fn soft_trace_rejected() {
        let t = width16(GateKind::FfGateII);
        let trace = GateTrace {
            mode: crate::network::GateMode::Soft,
            probs: vec![vec![0.3]],
            decisions: None,
            executed: vec![1],
        };
        assert!(matches!(expected_cost(&trace, &t, Convention::ConvOnly), Err(Error::Contract(_))));
    }
}
