//! Building blocks shared by the model components, expressed on a [`Tape`].

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::model::params::{Bound, Init, ParamLayout};

/// `x W + b` with `b` broadcast over rows.
pub fn linear<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Var {
    let y = tape.matmul(x, w);
    tape.add_row(y, b)
}

pub fn add_gru_params(layout: &mut ParamLayout, prefix: &str, input: usize, hidden: usize) {
    layout.add(&format!("{prefix}.w_ih"), input, 3 * hidden, Init::Xavier);
    layout.add(&format!("{prefix}.w_hh"), hidden, 3 * hidden, Init::Xavier);
    layout.add(&format!("{prefix}.b_ih"), 1, 3 * hidden, Init::Zeros);
    layout.add(&format!("{prefix}.b_hh"), 1, 3 * hidden, Init::Zeros);
}

/// GRU over the rows of `x` from a zero initial state; returns every hidden
/// state stacked as `n x hidden`.
///
/// Gates are packed `[reset | update | candidate]`:
/// `r = σ(x W_ir + b_ir + h W_hr + b_hr)`, `u = σ(...)`,
/// `c = tanh(x W_ic + b_ic + r ⊙ (h W_hc + b_hc))`, `h' = (1-u) ⊙ c + u ⊙ h`.
pub fn gru<T: Real>(tape: &mut Tape<T>, p: &Bound, prefix: &str, x: Var) -> Var {
    let states = gru_states(tape, p, prefix, x);
    tape.concat_rows(&states)
}

/// Final hidden state of the GRU over `x`.
pub fn gru_last<T: Real>(tape: &mut Tape<T>, p: &Bound, prefix: &str, x: Var) -> Var {
    *gru_states(tape, p, prefix, x).last().expect("GRU input has no rows")
}

fn gru_states<T: Real>(tape: &mut Tape<T>, p: &Bound, prefix: &str, x: Var) -> Vec<Var> {
    let w_hh = p.var(&format!("{prefix}.w_hh"));
    let b_hh = p.var(&format!("{prefix}.b_hh"));
    let hidden = tape.shape(w_hh).0;
    let gx = linear(tape, x, p.var(&format!("{prefix}.w_ih")), p.var(&format!("{prefix}.b_ih")));
    let n = tape.shape(x).0;
    let mut h = tape.constant(Tensor::zeros(1, hidden));
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let gxi = tape.row(gx, i);
        let gh = linear(tape, h, w_hh, b_hh);
        let xr = tape.slice_cols(gxi, 0, hidden);
        let hr = tape.slice_cols(gh, 0, hidden);
        let r = tape.add(xr, hr);
        let r = tape.sigmoid(r);
        let xu = tape.slice_cols(gxi, hidden, hidden);
        let hu = tape.slice_cols(gh, hidden, hidden);
        let u = tape.add(xu, hu);
        let u = tape.sigmoid(u);
        let xc = tape.slice_cols(gxi, 2 * hidden, hidden);
        let hc = tape.slice_cols(gh, 2 * hidden, hidden);
        let rc = tape.mul(r, hc);
        let c = tape.add(xc, rc);
        let c = tape.tanh(c);
        let diff = tape.sub(h, c);
        let keep = tape.mul(u, diff);
        h = tape.add(c, keep);
        out.push(h);
    }
    out
}

pub fn add_gate_params(layout: &mut ParamLayout, prefix: &str, d: usize) {
    layout.add(&format!("{prefix}.w"), 2 * d, d, Init::Xavier);
    layout.add(&format!("{prefix}.b"), 1, d, Init::Zeros);
}

/// Learned convex gate `g ⊙ a + (1-g) ⊙ b` with `g = σ([a ∥ b] W + b_g)`.
pub fn gate<T: Real>(tape: &mut Tape<T>, p: &Bound, prefix: &str, a: Var, b: Var) -> Var {
    let ab = tape.concat_cols(&[a, b]);
    let g = linear(tape, ab, p.var(&format!("{prefix}.w")), p.var(&format!("{prefix}.b")));
    let g = tape.sigmoid(g);
    let diff = tape.sub(a, b);
    let mix = tape.mul(g, diff);
    tape.add(b, mix)
}

/// Layer normalization followed by a learned per-channel scale and shift.
pub fn layer_norm<T: Real>(tape: &mut Tape<T>, x: Var, gain: Var, bias: Var) -> Var {
    let n = tape.layer_norm(x);
    let s = tape.mul_row(n, gain);
    tape.add_row(s, bias)
}

/// Row-wise softmax attention `softmax(q kᵀ / sqrt(scale)) v`; returns the
/// output and the attention weights.
pub fn attention<T: Real>(tape: &mut Tape<T>, q: Var, k: Var, v: Var, scale: f64) -> (Var, Var) {
    let kt = tape.transpose(k);
    let s = tape.matmul(q, kt);
    let s = tape.scale(s, 1.0 / scale.sqrt());
    let w = tape.softmax_rows(s);
    (tape.matmul(w, v), w)
}
