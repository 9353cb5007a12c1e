use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// One LSTM cell step on the tape.
///
/// `w_ih` is `4H×I`, `w_hh` is `4H×H`, `bias` is `4H`; gate rows are ordered
/// input, forget, candidate, output. `x` is `N×I`, `h` and `c` are `N×H`.
pub fn lstm_step(g: &mut Graph, x: Var, h: Var, c: Var, w_ih: Var, w_hh: Var, bias: Var) -> Result<(Var, Var)> {
    let four_h = g.value(w_ih).dim(0);
    let hidden = four_h / 4;
    if four_h % 4 != 0 || g.value(w_hh).shape() != [four_h, hidden] || g.value(bias).shape() != [four_h] {
        return Err(Error::shape(
            "lstm_step",
            format!(
                "weights {:?}/{:?}/{:?} do not form an LSTM of hidden size {hidden}",
                g.value(w_ih).shape(),
                g.value(w_hh).shape(),
                g.value(bias).shape()
            ),
        ));
    }
    if g.value(h).shape().get(1) != Some(&hidden) || g.value(c).shape() != g.value(h).shape() {
        return Err(Error::shape(
            "lstm_step",
            format!("state shapes {:?}/{:?} vs hidden size {hidden}", g.value(h).shape(), g.value(c).shape()),
        ));
    }
    let a = g.linear(x, w_ih, Some(bias))?;
    let b = g.linear(h, w_hh, None)?;
    let gates = g.add(a, b)?;
    let i = g.slice_cols(gates, 0, hidden)?;
    let f = g.slice_cols(gates, hidden, 2 * hidden)?;
    let cand = g.slice_cols(gates, 2 * hidden, 3 * hidden)?;
    let o = g.slice_cols(gates, 3 * hidden, four_h)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_next = g.add(keep, write)?;
    let squashed = g.tanh(c_next);
    let h_next = g.mul(o, squashed)?;
    Ok((h_next, c_next))
}

/// Plain evaluation of [`lstm_step`].
pub fn lstm_step_eval(x: &Tensor, h: &Tensor, c: &Tensor, w_ih: &Tensor, w_hh: &Tensor, bias: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let vars = [x, h, c, w_ih, w_hh, bias].map(|t| g.input(t.clone()));
    let (hn, cn) = lstm_step(&mut g, vars[0], vars[1], vars[2], vars[3], vars[4], vars[5])?;
    Ok((g.value(hn).clone(), g.value(cn).clone()))
}
