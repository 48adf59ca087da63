//! Behavior predictor: a GRU over the road sequence whose states attend to
//! the selected preference vectors, decoded to per-road behavior statistics.

use crate::autodiff::{Real, Tape, Var};
use crate::model::layers::{add_gru_params, attention, gru, linear};
use crate::model::params::{Bound, Init, ParamLayout};
use crate::types::BEHAVIOR_DIM;

pub fn add_predictor_params(layout: &mut ParamLayout, d: usize, heads: usize, road_only: bool) {
    add_gru_params(layout, "gru1", d, d);
    if road_only {
        layout.add("pred.r2b_w", d, BEHAVIOR_DIM, Init::Xavier);
        layout.add("pred.r2b_b", 1, BEHAVIOR_DIM, Init::Zeros);
    } else {
        layout.add("pred.wq", d, heads * d, Init::Xavier);
        layout.add("pred.wk", d, heads * d, Init::Xavier);
        layout.add("pred.wv", d, heads * d, Init::Xavier);
        layout.add("pred.fc_w", heads * d, BEHAVIOR_DIM, Init::Xavier);
        layout.add("pred.fc_b", 1, BEHAVIOR_DIM, Init::Zeros);
    }
}

/// `H^e`: hidden state after each road segment, `n x d`.
pub fn encode_route<T: Real>(tape: &mut Tape<T>, p: &Bound, roads: Var) -> Var {
    gru(tape, p, "gru1", roads)
}

/// Attention of every road state over the `K' x d` preference rows, one
/// full `d x d` projection per head, decoded by one affine layer to
/// `n x 4`. Returns the predictions and the per-head attention weights
/// (`n x K'` each).
pub fn predict_behaviors<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    route_states: Var,
    prefs: Var,
    heads: usize,
) -> (Var, Vec<Var>) {
    let d = tape.shape(route_states).1;
    let q = tape.matmul(route_states, p.var("pred.wq"));
    let k = tape.matmul(prefs, p.var("pred.wk"));
    let v = tape.matmul(prefs, p.var("pred.wv"));
    let mut parts = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * d, d);
        let kh = tape.slice_cols(k, h * d, d);
        let vh = tape.slice_cols(v, h * d, d);
        let (out, w) = attention(tape, qh, kh, vh, d as f64);
        parts.push(out);
        weights.push(w);
    }
    let cat = tape.concat_cols(&parts);
    (linear(tape, cat, p.var("pred.fc_w"), p.var("pred.fc_b")), weights)
}

/// Behaviors decoded from a single `1 x d` preference vector shared by all
/// `n` roads (used when no history is available).
pub fn predict_from_single<T: Real>(tape: &mut Tape<T>, p: &Bound, pref: Var, n: usize, heads: usize) -> Var {
    let d = tape.shape(pref).1;
    let v = tape.matmul(pref, p.var("pred.wv"));
    debug_assert_eq!(tape.shape(v).1, heads * d);
    let y = linear(tape, v, p.var("pred.fc_w"), p.var("pred.fc_b"));
    tape.repeat_rows(y, n)
}

/// Behaviors decoded from the road states alone.
pub fn predict_from_roads<T: Real>(tape: &mut Tape<T>, p: &Bound, route_states: Var) -> Var {
    linear(tape, route_states, p.var("pred.r2b_w"), p.var("pred.r2b_b"))
}
