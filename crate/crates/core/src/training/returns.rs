use serde::{Deserialize, Serialize};

use crate::autodiff::ops::LOG_PROB_CLAMP;
use crate::cost::CostTable;
use crate::error::{config_err, Error, Result};
use crate::network::GateTrace;

/// Trade-off between prediction loss and skipped computation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub alpha: f64,
    /// Weight of the loss inside the relaxed return.
    pub beta: f64,
    /// Per-gate reward for skipping.
    pub costs: Vec<f64>,
}

impl RewardConfig {
    /// `C_i = 1`, `β = 1`.
    pub fn uniform(alpha: f64, num_gates: usize) -> Self {
        RewardConfig { alpha, beta: 1.0, costs: vec![1.0; num_gates] }
    }

    /// Block MACs normalized to mean 1 as the per-gate costs.
    pub fn with_mac_costs(alpha: f64, table: &CostTable) -> Self {
        RewardConfig { alpha, beta: 1.0, costs: table.normalized_block_costs() }
    }

    pub fn validate(&self, num_gates: usize) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(config_err!("alpha must be finite and non-negative, got {}", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(config_err!("beta must be finite and positive, got {}", self.beta));
        }
        if self.costs.len() != num_gates {
            return Err(config_err!("{} gate costs for {num_gates} gates", self.costs.len()));
        }
        if let Some(c) = self.costs.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
            return Err(config_err!("gate costs must be positive, got {c}"));
        }
        Ok(())
    }
}

/// Per-sample rewards and returns of one sampled batch, indexed `[sample][gate]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnRecord {
    pub rewards: Vec<Vec<f64>>,
    pub returns: Vec<Vec<f64>>,
    pub relaxed: Vec<Vec<f64>>,
    pub losses: Vec<f64>,
    pub log_probs: Vec<Vec<f64>>,
}

/// `log p(g | S)` with the same clamp as the graph op.
pub fn clamped_log_prob(p: f64, g: bool) -> f64 {
    let p = p.clamp(LOG_PROB_CLAMP, 1.0 - LOG_PROB_CLAMP);
    if g {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

/// `R_i = (1 − g_i)·C_i`, `r_i = −[L − (α/N)·Σ_{j≥i} R_j]`, `r̂_i = −[β·L − (α/N)·Σ_{j≥i} R_j]`.
pub fn compute_returns(trace: &GateTrace, losses: &[f64], cfg: &RewardConfig) -> Result<ReturnRecord> {
    let decisions = trace
        .decisions
        .as_ref()
        .ok_or_else(|| Error::Contract("returns need hard decisions; got a soft-mode trace".into()))?;
    if losses.len() != decisions.len() {
        return Err(Error::Contract(format!("{} losses for {} samples", losses.len(), decisions.len())));
    }
    let n = cfg.costs.len();
    cfg.validate(n)?;
    let scale = cfg.alpha / n.max(1) as f64;
    let mut rec = ReturnRecord {
        rewards: Vec::with_capacity(losses.len()),
        returns: Vec::with_capacity(losses.len()),
        relaxed: Vec::with_capacity(losses.len()),
        losses: losses.to_vec(),
        log_probs: Vec::with_capacity(losses.len()),
    };
    for (k, (g, &l)) in decisions.iter().zip(losses).enumerate() {
        if g.len() != n {
            return Err(Error::Contract(format!("sample {k} has {} decisions for {n} gates", g.len())));
        }
        let rewards: Vec<f64> = g.iter().zip(&cfg.costs).map(|(&gi, &c)| if gi { 0.0 } else { c }).collect();
        let mut tail = vec![0.0; n];
        let mut acc = 0.0;
        for i in (0..n).rev() {
            acc += rewards[i];
            tail[i] = acc;
        }
        rec.returns.push(tail.iter().map(|t| -(l - scale * t)).collect());
        rec.relaxed.push(tail.iter().map(|t| -(cfg.beta * l - scale * t)).collect());
        rec.log_probs
            .push(trace.probs[k].iter().zip(g).map(|(&p, &gi)| clamped_log_prob(p, gi)).collect());
        rec.rewards.push(rewards);
    }
    Ok(rec)
}
