use crate::autodiff::graph::Var;
use crate::autodiff::tensor::Tensor;
use crate::error::{config_err, Result};
use crate::scalar::Scalar;

/// Weights of a single LSTM cell with input size D and hidden size H.
/// Gate columns are ordered input, forget, candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights<'g, T: Scalar> {
    /// D×4H
    pub w_ih: Var<'g, T>,
    /// H×4H
    pub w_hh: Var<'g, T>,
    /// 4H
    pub bias: Var<'g, T>,
}

/// One LSTM step. Returns the new hidden and cell states.
pub fn lstm_cell<'g, T: Scalar>(
    x: Var<'g, T>,
    h: Var<'g, T>,
    c: Var<'g, T>,
    weights: &LstmWeights<'g, T>,
) -> Result<(Var<'g, T>, Var<'g, T>)> {
    let hidden = h.value().dims2()?.1;
    let four_h = weights.bias.value().numel();
    if four_h != 4 * hidden {
        return Err(config_err!(
            "lstm_cell: bias has {four_h} entries for hidden size {hidden}"
        ));
    }
    if c.value().shape() != h.value().shape() {
        return Err(config_err!("lstm_cell: cell and hidden state shapes differ"));
    }
    let g = x.graph();
    let no_bias = g.constant(Tensor::zeros(&[four_h]));
    let pre = x
        .linear(weights.w_ih, weights.bias)?
        .add(h.linear(weights.w_hh, no_bias)?)?;
    let input = pre.narrow_cols(0, hidden)?.sigmoid();
    let forget = pre.narrow_cols(hidden, hidden)?.sigmoid();
    let candidate = pre.narrow_cols(2 * hidden, hidden)?.tanh();
    let output = pre.narrow_cols(3 * hidden, hidden)?.sigmoid();
    let c_next = forget.mul(c)?.add(input.mul(candidate)?)?;
    let h_next = output.mul(c_next.tanh())?;
    Ok((h_next, c_next))
}
