//! Sinusoidal distance and time encodings for vehicle-state sequences.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Dimension `2k` holds `sin(a / max^(2k/d))`, dimension `2k+1` the cosine.
pub fn positional_encode(value: f64, max_const: f64, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for i in (0..d).step_by(2) {
        let angle = value / max_const.powf(i as f64 / d as f64);
        out[i] = angle.sin();
        if i + 1 < d {
            out[i + 1] = angle.cos();
        }
    }
    out
}

/// `m x d` matrix whose row `i` is `Enc(p_i; dist_max) + Enc(t_i; time_max)`.
pub fn encoding_matrix(p: &[f64], t: &[f64], d: usize, dist_max: f64, time_max: f64) -> Tensor<f64> {
    assert_eq!(p.len(), t.len(), "distance and time sequences differ in length");
    let mut data = Vec::with_capacity(p.len() * d);
    for (&pi, &ti) in p.iter().zip(t) {
        let a = positional_encode(pi, dist_max, d);
        let b = positional_encode(ti, time_max, d);
        data.extend(a.iter().zip(&b).map(|(x, y)| x + y));
    }
    Tensor::from_vec(p.len(), d, data)
}

/// Adds the distance and time encodings to already embedded states.
pub fn attach_encodings(
    states: &Tensor<f64>,
    p: &[f64],
    t: &[f64],
    dist_max: f64,
    time_max: f64,
) -> Result<Tensor<f64>> {
    if states.rows != p.len() || p.len() != t.len() {
        return Err(Error::Contract(format!(
            "state sequence has {} rows but {} distances and {} times",
            states.rows,
            p.len(),
            t.len()
        )));
    }
    let mut out = encoding_matrix(p, t, states.cols, dist_max, time_max);
    out.add_assign(states);
    Ok(out)
}
