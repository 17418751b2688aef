mod config;
mod model;

pub use config::{BlockSpec, GateKind, ShortcutKind, ShortcutSpec, SkipNetConfig};
pub use model::{
    is_gate_param, BnPhase, BnUpdate, Carry, Decisions, ForwardOptions, ForwardOutput, GateMode, GateTrace, SkipNet,
};
