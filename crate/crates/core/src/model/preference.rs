//! Preference encoder: a stride-`q` convolution over the encoded state
//! sequence followed by a one-layer transformer encoder and mean pooling.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape, Var};
use crate::model::layers::{attention, layer_norm, linear};
use crate::model::params::{Bound, Init, ParamLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvMode {
    /// Filter `q x d`, one weight per window step and channel.
    #[default]
    Depthwise,
    /// Filter `(q*d) x d`, mixing channels within each window.
    Full,
}

pub fn add_conv_params(layout: &mut ParamLayout, d: usize, q: usize, mode: ConvMode) {
    match mode {
        ConvMode::Depthwise => layout.add("conv.filter", q, d, Init::Xavier),
        ConvMode::Full => layout.add("conv.filter", q * d, d, Init::Xavier),
    }
    layout.add("conv.bias", 1, d, Init::Zeros);
}

pub fn add_encoder_params(layout: &mut ParamLayout, d: usize) {
    for m in ["q", "k", "v", "o"] {
        layout.add(&format!("enc.w{m}"), d, d, Init::Xavier);
        layout.add(&format!("enc.b{m}"), 1, d, Init::Zeros);
    }
    layout.add("enc.ln1_g", 1, d, Init::Ones);
    layout.add("enc.ln1_b", 1, d, Init::Zeros);
    layout.add("enc.ff1_w", d, 2 * d, Init::Xavier);
    layout.add("enc.ff1_b", 1, 2 * d, Init::Zeros);
    layout.add("enc.ff2_w", 2 * d, d, Init::Xavier);
    layout.add("enc.ff2_b", 1, d, Init::Zeros);
    layout.add("enc.ln2_g", 1, d, Init::Ones);
    layout.add("enc.ln2_b", 1, d, Init::Zeros);
}

/// `Z = SELU(conv(X^l) + b)`: `ceil(m/q) x d` local behavior vectors.
pub fn extract_behaviors<T: Real>(tape: &mut Tape<T>, p: &Bound, x: Var, q: usize, mode: ConvMode) -> Var {
    let conv = match mode {
        ConvMode::Depthwise => tape.depthwise_conv(x, p.var("conv.filter"), q),
        ConvMode::Full => {
            let windows = tape.pad_windows(x, q);
            tape.matmul(windows, p.var("conv.filter"))
        }
    };
    let z = tape.add_row(conv, p.var("conv.bias"));
    tape.selu(z)
}

/// Post-LN transformer encoder layer over the rows of `z` (no positional
/// terms), mean-pooled to a `1 x d` preference vector.
pub fn encode_preference<T: Real>(tape: &mut Tape<T>, p: &Bound, z: Var, heads: usize) -> Var {
    let encoded = encoder_layer(tape, p, z, heads);
    tape.mean_rows(encoded)
}

pub fn encoder_layer<T: Real>(tape: &mut Tape<T>, p: &Bound, z: Var, heads: usize) -> Var {
    let d = tape.shape(z).1;
    assert!(heads >= 1 && d % heads == 0, "heads must divide the embedding size");
    let dh = d / heads;
    let q = linear(tape, z, p.var("enc.wq"), p.var("enc.bq"));
    let k = linear(tape, z, p.var("enc.wk"), p.var("enc.bk"));
    let v = linear(tape, z, p.var("enc.wv"), p.var("enc.bv"));
    let mut parts = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh);
        let kh = tape.slice_cols(k, h * dh, dh);
        let vh = tape.slice_cols(v, h * dh, dh);
        parts.push(attention(tape, qh, kh, vh, dh as f64).0);
    }
    let cat = tape.concat_cols(&parts);
    let attn = linear(tape, cat, p.var("enc.wo"), p.var("enc.bo"));
    let res = tape.add(z, attn);
    let y = layer_norm(tape, res, p.var("enc.ln1_g"), p.var("enc.ln1_b"));
    let ff = linear(tape, y, p.var("enc.ff1_w"), p.var("enc.ff1_b"));
    let ff = tape.relu(ff);
    let ff = linear(tape, ff, p.var("enc.ff2_w"), p.var("enc.ff2_b"));
    let res = tape.add(y, ff);
    layer_norm(tape, res, p.var("enc.ln2_g"), p.var("enc.ln2_b"))
}
