//! Energy estimator: fuses preferences with trip statistics, re-encodes the
//! route augmented with predicted behaviors, gates the three views together
//! and projects onto the vehicle-type embedding.

use crate::autodiff::{Real, Tape, Var};
use crate::model::layers::{add_gate_params, add_gru_params, gate, gru_last, linear};
use crate::model::params::{Bound, Init, ParamLayout};
use crate::types::VehicleType;

pub fn add_fuse_params(layout: &mut ParamLayout, d: usize) {
    layout.add("fuse.wz", d, d, Init::Xavier);
    layout.add("fuse.bz", 1, d, Init::Zeros);
}

pub fn add_head_params(layout: &mut ParamLayout, d: usize, mlp_hidden: usize) {
    if mlp_hidden > 0 {
        layout.add("mlp.w1", d, mlp_hidden, Init::Xavier);
        layout.add("mlp.b1", 1, mlp_hidden, Init::Zeros);
        layout.add("mlp.w2", mlp_hidden, d, Init::Xavier);
        layout.add("mlp.b2", 1, d, Init::Zeros);
    }
    layout.add("est.vehicle", VehicleType::ALL.len(), d, Init::Xavier);
}

pub fn add_route_params(layout: &mut ParamLayout, d: usize, behavior_dim: usize) {
    add_gru_params(layout, "gru2", d + behavior_dim, d);
}

pub fn add_gates(layout: &mut ParamLayout, d: usize, with_preferences: bool) {
    if with_preferences {
        add_gate_params(layout, "gate1", d);
    }
    add_gate_params(layout, "gate2", d);
}

/// Softmax-weighted sum of the `K' x d` preference rows, with one scalar
/// logit per row: `1ᵀ((x^s ⊙ z_i) W_z + b)`. Returns `h^z` (`1 x d`) and the
/// weights `μ` (`1 x K'`).
pub fn fuse_preferences<T: Real>(tape: &mut Tape<T>, p: &Bound, trip_stat: Var, prefs: Var) -> (Var, Var) {
    let prod = tape.mul_row(prefs, trip_stat);
    let proj = linear(tape, prod, p.var("fuse.wz"), p.var("fuse.bz"));
    let logits = tape.sum_cols(proj);
    let logits = tape.transpose(logits);
    let mu = tape.softmax_rows(logits);
    (tape.matmul(mu, prefs), mu)
}

/// Last GRU state over `[x^e ∥ ŷ^e]` (or `x^e` alone when `behaviors` is
/// `None`).
pub fn encode_augmented_route<T: Real>(tape: &mut Tape<T>, p: &Bound, roads: Var, behaviors: Option<Var>) -> Var {
    let input = match behaviors {
        Some(b) => tape.concat_cols(&[roads, b]),
        None => roads,
    };
    gru_last(tape, p, "gru2", input)
}

/// `(h^z ⋆ x^s) ⋆ ĥ^e_n`, or `x^s ⋆ ĥ^e_n` without preferences.
pub fn gate_fuse<T: Real>(tape: &mut Tape<T>, p: &Bound, pref: Option<Var>, trip_stat: Var, route: Var) -> Var {
    let left = match pref {
        Some(hz) => gate(tape, p, "gate1", hz, trip_stat),
        None => trip_stat,
    };
    gate(tape, p, "gate2", left, route)
}

/// `ŷ = W_tp[type] · MLP(h)`; a model built without MLP weights uses the
/// identity map.
pub fn estimate<T: Real>(tape: &mut Tape<T>, p: &Bound, h: Var, vehicle: usize) -> Var {
    let hidden = if p.has("mlp.w1") {
        let a = linear(tape, h, p.var("mlp.w1"), p.var("mlp.b1"));
        let a = tape.relu(a);
        linear(tape, a, p.var("mlp.w2"), p.var("mlp.b2"))
    } else {
        h
    };
    let w = tape.gather(p.var("est.vehicle"), &[vehicle]);
    let prod = tape.mul(hidden, w);
    tape.sum_all(prod)
}
