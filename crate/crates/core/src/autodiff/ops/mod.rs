mod conv;
mod elementwise;
mod gating;
mod linear;
mod lstm;
mod norm;
mod pool;

pub use conv::{conv2d_direct, conv_out_len};
pub use gating::LOG_PROB_CLAMP;
pub use linear::softmax_rows;
pub use lstm::{lstm_cell, LstmWeights};
pub use norm::{BnMode, BnStats, BN_EPS, BN_MOMENTUM};
