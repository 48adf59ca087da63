//! Model building blocks checked against direct plain-`f64` evaluations.

mod common;

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vecest::autodiff::{Tape, Tensor};
use vecest::model::layers::{add_gate_params, add_gru_params, gate, gru};
use vecest::model::params::{Bound, ParamLayout};
use vecest::model::{estimator, predictor, preference, ConvMode, Variant};

use common::*;

type Mat = Vec<Vec<f64>>;

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    (0..r).map(|_| (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

fn to_tensor(m: &Mat) -> Tensor<f64> {
    Tensor::from_vec(m.len(), m[0].len(), m.iter().flatten().copied().collect())
}

fn rows(t: &Tensor<f64>) -> Mat {
    (0..t.rows).map(|i| t.row(i).to_vec()).collect()
}

fn mm(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .map(|row| (0..b[0].len()).map(|j| row.iter().enumerate().map(|(k, v)| v * b[k][j]).sum()).collect())
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn selu(x: f64) -> f64 {
    let (l, a) = (1.0507009873554805, 1.6732632423543773);
    if x > 0.0 {
        l * x
    } else {
        l * a * (x.exp() - 1.0)
    }
}

fn assert_close(a: &Mat, b: &Mat, tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.iter().zip(y) {
            assert!((p - q).abs() < tol, "{p} vs {q}");
        }
    }
}

/// Layout with random values; returns the tape-bound parameters and the
/// values by name.
fn bind_random(
    layout: ParamLayout,
    seed: u64,
    tape: &mut Tape<f64>,
) -> (Bound, HashMap<String, Mat>) {
    let layout = Arc::new(layout);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..layout.total()).map(|_| rng.gen_range(-0.8..0.8)).collect();
    let named = layout
        .specs()
        .iter()
        .map(|s| {
            let v = &values[s.offset..s.offset + s.len()];
            (s.name.clone(), v.chunks(s.cols.max(1)).map(|c| c.to_vec()).collect())
        })
        .collect();
    (layout.bind(tape, &values), named)
}

fn gru_oracle(x: &Mat, p: &HashMap<String, Mat>, prefix: &str) -> Mat {
    let w_ih = &p[&format!("{prefix}.w_ih")];
    let w_hh = &p[&format!("{prefix}.w_hh")];
    let b_ih = &p[&format!("{prefix}.b_ih")][0];
    let b_hh = &p[&format!("{prefix}.b_hh")][0];
    let hd = w_hh.len();
    let mut h = vec![0.0; hd];
    let mut out = Vec::new();
    for xt in x {
        let gx = mm(&vec![xt.clone()], w_ih)[0].clone();
        let gh = mm(&vec![h.clone()], w_hh)[0].clone();
        let mut next = vec![0.0; hd];
        for j in 0..hd {
            let r = sigmoid(gx[j] + b_ih[j] + gh[j] + b_hh[j]);
            let z = sigmoid(gx[hd + j] + b_ih[hd + j] + gh[hd + j] + b_hh[hd + j]);
            let n = (gx[2 * hd + j] + b_ih[2 * hd + j] + r * (gh[2 * hd + j] + b_hh[2 * hd + j])).tanh();
            next[j] = (1.0 - z) * n + z * h[j];
        }
        h = next;
        out.push(h.clone());
    }
    out
}

#[test]
fn gru_matches_direct_recurrence() {
    for (n, seed) in [(1usize, 1u64), (3, 2), (5, 3)] {
        let mut layout = ParamLayout::new();
        add_gru_params(&mut layout, "g", 3, 4);
        let mut tape = Tape::new();
        let (p, named) = bind_random(layout, seed, &mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let x = rand_mat(&mut rng, n, 3);
        let xv = tape.constant(to_tensor(&x));
        let h = gru(&mut tape, &p, "g", xv);
        assert_close(&rows(tape.value(h)), &gru_oracle(&x, &named, "g"), 1e-12);
    }
}

#[test]
fn gru_with_zero_weights_stays_at_zero() {
    let mut layout = ParamLayout::new();
    add_gru_params(&mut layout, "g", 3, 4);
    let layout = Arc::new(layout);
    let mut tape = Tape::new();
    let p = layout.bind(&mut tape, &vec![0.0; layout.total()]);
    let x = tape.constant(Tensor::from_vec(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.1, -1.0]));
    let h = gru(&mut tape, &p, "g", x);
    assert!(tape.value(h).data.iter().all(|&v| v == 0.0));
}

fn conv_layout(d: usize, q: usize, mode: ConvMode) -> ParamLayout {
    let mut l = ParamLayout::new();
    preference::add_conv_params(&mut l, d, q, mode);
    l
}

#[test]
fn depthwise_conv_matches_window_sums() {
    let (d, q) = (3, 2);
    for m in [4usize, 5, 1] {
        let mut tape = Tape::new();
        let (p, named) = bind_random(conv_layout(d, q, ConvMode::Depthwise), 7, &mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(m as u64);
        let x = rand_mat(&mut rng, m, d);
        let xv = tape.constant(to_tensor(&x));
        let z = preference::extract_behaviors(&mut tape, &p, xv, q, ConvMode::Depthwise);
        let (f, b) = (&named["conv.filter"], &named["conv.bias"][0]);
        let l = m.div_ceil(q);
        let expected: Mat = (0..l)
            .map(|i| {
                (0..d)
                    .map(|c| {
                        let s: f64 = (0..q).filter(|r| i * q + r < m).map(|r| x[i * q + r][c] * f[r][c]).sum();
                        selu(s + b[c])
                    })
                    .collect()
            })
            .collect();
        assert_eq!(tape.shape(z), (l, d));
        assert_close(&rows(tape.value(z)), &expected, 1e-12);
    }
}

#[test]
fn full_conv_mixes_channels_within_windows() {
    let (d, q, m) = (2usize, 2usize, 3usize);
    let mut tape = Tape::new();
    let (p, named) = bind_random(conv_layout(d, q, ConvMode::Full), 8, &mut tape);
    let x = vec![vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.3, -0.7]];
    let xv = tape.constant(to_tensor(&x));
    let z = preference::extract_behaviors(&mut tape, &p, xv, q, ConvMode::Full);
    let (f, b) = (&named["conv.filter"], &named["conv.bias"][0]);
    let windows = vec![vec![1.0, 2.0, -1.0, 0.5], vec![0.3, -0.7, 0.0, 0.0]];
    let lin = mm(&windows, f);
    let expected: Mat = lin.iter().map(|r| r.iter().zip(b).map(|(v, bb)| selu(v + bb)).collect()).collect();
    assert_eq!(m.div_ceil(q), expected.len());
    assert_close(&rows(tape.value(z)), &expected, 1e-12);
}

#[test]
fn identity_filter_gives_selu_of_input() {
    let d = 3;
    let layout = Arc::new(conv_layout(d, 1, ConvMode::Depthwise));
    let mut values = vec![0.0; layout.total()];
    values[..d].fill(1.0);
    let mut tape = Tape::new();
    let p = layout.bind(&mut tape, &values);
    let x = vec![vec![0.5, -1.0, 2.0], vec![-0.2, 0.0, 1.0]];
    let xv = tape.constant(to_tensor(&x));
    let z = preference::extract_behaviors(&mut tape, &p, xv, 1, ConvMode::Depthwise);
    let expected: Mat = x.iter().map(|r| r.iter().map(|&v| selu(v)).collect()).collect();
    assert_close(&rows(tape.value(z)), &expected, 1e-15);
}

fn layer_norm_ref(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + 1e-5).sqrt();
    x.iter().enumerate().map(|(i, v)| (v - mean) * inv * g[i] + b[i]).collect()
}

fn encoder_oracle(z: &Mat, p: &HashMap<String, Mat>, heads: usize) -> Mat {
    let d = z[0].len();
    let dh = d / heads;
    let lin = |x: &Mat, w: &str, b: &str| -> Mat {
        mm(x, &p[w]).into_iter().map(|r| r.iter().zip(&p[b][0]).map(|(v, bb)| v + bb).collect()).collect()
    };
    let (q, k, v) = (lin(z, "enc.wq", "enc.bq"), lin(z, "enc.wk", "enc.bk"), lin(z, "enc.wv", "enc.bv"));
    let l = z.len();
    let mut cat = vec![vec![0.0; d]; l];
    for h in 0..heads {
        for i in 0..l {
            let scores: Vec<f64> = (0..l)
                .map(|j| (0..dh).map(|c| q[i][h * dh + c] * k[j][h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let sum: f64 = e.iter().sum();
            for c in 0..dh {
                cat[i][h * dh + c] = (0..l).map(|j| e[j] / sum * v[j][h * dh + c]).sum();
            }
        }
    }
    let attn = lin(&cat, "enc.wo", "enc.bo");
    let y: Mat = (0..l)
        .map(|i| {
            let r: Vec<f64> = (0..d).map(|c| z[i][c] + attn[i][c]).collect();
            layer_norm_ref(&r, &p["enc.ln1_g"][0], &p["enc.ln1_b"][0])
        })
        .collect();
    let ff = lin(&y, "enc.ff1_w", "enc.ff1_b");
    let ff: Mat = ff.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect();
    let ff = lin(&ff, "enc.ff2_w", "enc.ff2_b");
    (0..l)
        .map(|i| {
            let r: Vec<f64> = (0..d).map(|c| y[i][c] + ff[i][c]).collect();
            layer_norm_ref(&r, &p["enc.ln2_g"][0], &p["enc.ln2_b"][0])
        })
        .collect()
}

fn mean_rows(m: &Mat) -> Vec<f64> {
    (0..m[0].len()).map(|c| m.iter().map(|r| r[c]).sum::<f64>() / m.len() as f64).collect()
}

fn encode(z: &Mat, seed: u64, heads: usize) -> (Vec<f64>, Vec<f64>) {
    let mut layout = ParamLayout::new();
    preference::add_encoder_params(&mut layout, z[0].len());
    let mut tape = Tape::new();
    let (p, named) = bind_random(layout, seed, &mut tape);
    let zv = tape.constant(to_tensor(z));
    let out = preference::encode_preference(&mut tape, &p, zv, heads);
    (tape.value(out).data.clone(), mean_rows(&encoder_oracle(z, &named, heads)))
}

#[test]
fn encoder_matches_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for l in [1usize, 3, 6] {
        let z = rand_mat(&mut rng, l, 4);
        let (got, want) = encode(&z, 11, 2);
        assert_close(&vec![got], &vec![want], 1e-12);
    }
}

#[test]
fn encoder_pooling_is_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let z = rand_mat(&mut rng, 5, 4);
    let mut perm = z.clone();
    perm.rotate_left(2);
    perm.swap(0, 3);
    let (a, _) = encode(&z, 12, 2);
    let (b, _) = encode(&perm, 12, 2);
    assert_close(&vec![a], &vec![b], 1e-12);
}

#[test]
fn duplicated_rows_encode_like_one_row() {
    let row = vec![0.3, -1.2, 0.8, 0.1];
    let (many, _) = encode(&vec![row.clone(); 4], 13, 2);
    let (one, _) = encode(&vec![row], 13, 2);
    assert_close(&vec![many], &vec![one], 1e-12);
}

fn predictor_setup(seed: u64, d: usize, heads: usize) -> (Tape<f64>, Bound, HashMap<String, Mat>) {
    let mut layout = ParamLayout::new();
    predictor::add_predictor_params(&mut layout, d, heads, false);
    let mut tape = Tape::new();
    let (p, named) = bind_random(layout, seed, &mut tape);
    (tape, p, named)
}

#[test]
fn single_preference_gets_all_attention() {
    let (d, heads) = (4, 2);
    let (mut tape, p, named) = predictor_setup(21, d, heads);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let he = tape.constant(to_tensor(&rand_mat(&mut rng, 3, d)));
    let z = rand_mat(&mut rng, 1, d);
    let zv = tape.constant(to_tensor(&z));
    let (y, w) = predictor::predict_behaviors(&mut tape, &p, he, zv, heads);
    for wh in &w {
        assert!(tape.value(*wh).data.iter().all(|&b| b == 1.0));
    }
    let v = mm(&z, &named["pred.wv"]);
    let out = mm(&v, &named["pred.fc_w"]);
    let expected: Vec<f64> = out[0].iter().zip(&named["pred.fc_b"][0]).map(|(a, b)| a + b).collect();
    assert_close(&rows(tape.value(y)), &vec![expected; 3], 1e-12);
}

#[test]
fn attention_over_equal_preferences_is_uniform_and_normalized() {
    let (d, heads) = (4, 2);
    let (mut tape, p, _) = predictor_setup(23, d, heads);
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let he = tape.constant(to_tensor(&rand_mat(&mut rng, 4, d)));
    let row = rand_mat(&mut rng, 1, d);
    let same = tape.constant(to_tensor(&vec![row[0].clone(); 3]));
    let (_, w) = predictor::predict_behaviors(&mut tape, &p, he, same, heads);
    for wh in &w {
        assert!(tape.value(*wh).data.iter().all(|&b| (b - 1.0 / 3.0).abs() < 1e-12));
    }
    let mixed = tape.constant(to_tensor(&rand_mat(&mut rng, 5, d)));
    let (y, w) = predictor::predict_behaviors(&mut tape, &p, he, mixed, heads);
    assert_eq!(tape.shape(y), (4, 4));
    for wh in &w {
        let t = tape.value(*wh);
        for i in 0..t.rows {
            assert!((t.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn predicted_behaviors_match_direct_attention() {
    let (d, heads) = (4, 2);
    let (mut tape, p, named) = predictor_setup(25, d, heads);
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let he = rand_mat(&mut rng, 3, d);
    let z = rand_mat(&mut rng, 2, d);
    let (hv, zv) = (tape.constant(to_tensor(&he)), tape.constant(to_tensor(&z)));
    let (y, _) = predictor::predict_behaviors(&mut tape, &p, hv, zv, heads);
    let (q, k, v) = (mm(&he, &named["pred.wq"]), mm(&z, &named["pred.wk"]), mm(&z, &named["pred.wv"]));
    let mut cat = vec![vec![0.0; heads * d]; 3];
    for h in 0..heads {
        for i in 0..3 {
            let s: Vec<f64> = (0..2)
                .map(|j| (0..d).map(|c| q[i][h * d + c] * k[j][h * d + c]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let e: Vec<f64> = s.iter().map(|x| x.exp()).collect();
            let tot: f64 = e.iter().sum();
            for c in 0..d {
                cat[i][h * d + c] = (0..2).map(|j| e[j] / tot * v[j][h * d + c]).sum();
            }
        }
    }
    let out: Mat = mm(&cat, &named["pred.fc_w"])
        .into_iter()
        .map(|r| r.iter().zip(&named["pred.fc_b"][0]).map(|(a, b)| a + b).collect())
        .collect();
    assert_close(&rows(tape.value(y)), &out, 1e-12);
}

#[test]
fn fusion_weights_are_a_distribution() {
    let d = 4;
    let mut layout = ParamLayout::new();
    estimator::add_fuse_params(&mut layout, d);
    let mut tape = Tape::new();
    let (p, named) = bind_random(layout, 31, &mut tape);
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let xs = rand_mat(&mut rng, 1, d);
    let xsv = tape.constant(to_tensor(&xs));

    let one = rand_mat(&mut rng, 1, d);
    let ov = tape.constant(to_tensor(&one));
    let (hz, mu) = estimator::fuse_preferences(&mut tape, &p, xsv, ov);
    assert_eq!(tape.value(mu).data, vec![1.0]);
    assert_close(&rows(tape.value(hz)), &one, 1e-15);

    let same = tape.constant(to_tensor(&vec![one[0].clone(); 4]));
    let (_, mu) = estimator::fuse_preferences(&mut tape, &p, xsv, same);
    assert!(tape.value(mu).data.iter().all(|&m| (m - 0.25).abs() < 1e-12));

    let z = rand_mat(&mut rng, 3, d);
    let zv = tape.constant(to_tensor(&z));
    let (hz, mu) = estimator::fuse_preferences(&mut tape, &p, xsv, zv);
    let logits: Vec<f64> = z
        .iter()
        .map(|zi| {
            let prod: Vec<f64> = zi.iter().zip(&xs[0]).map(|(a, b)| a * b).collect();
            mm(&vec![prod], &named["fuse.wz"])[0].iter().zip(&named["fuse.bz"][0]).map(|(a, b)| a + b).sum()
        })
        .collect();
    let e: Vec<f64> = logits.iter().map(|l| l.exp()).collect();
    let tot: f64 = e.iter().sum();
    let want_mu: Vec<f64> = e.iter().map(|v| v / tot).collect();
    assert_close(&vec![tape.value(mu).data.clone()], &vec![want_mu.clone()], 1e-12);
    let want_hz: Vec<f64> = (0..d).map(|c| (0..3).map(|i| want_mu[i] * z[i][c]).sum()).collect();
    assert_close(&rows(tape.value(hz)), &vec![want_hz], 1e-12);
}

#[test]
fn gate_is_convex() {
    let d = 5;
    let mut layout = ParamLayout::new();
    add_gate_params(&mut layout, "g", d);
    let layout = Arc::new(layout);
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let a = rand_mat(&mut rng, 1, d);
    let b = rand_mat(&mut rng, 1, d);

    let mut tape = Tape::new();
    let p = layout.bind(&mut tape, &vec![0.0; layout.total()]);
    let (av, bv) = (tape.constant(to_tensor(&a)), tape.constant(to_tensor(&b)));
    let out = gate(&mut tape, &p, "g", av, bv);
    let mid: Vec<f64> = a[0].iter().zip(&b[0]).map(|(x, y)| (x + y) / 2.0).collect();
    assert_close(&rows(tape.value(out)), &vec![mid], 1e-15);

    let mut saturated = vec![0.0; layout.total()];
    let bias = layout.get("g.b").unwrap();
    saturated[bias.offset..bias.offset + d].fill(50.0);
    let mut tape = Tape::new();
    let p = layout.bind(&mut tape, &saturated);
    let (av, bv) = (tape.constant(to_tensor(&a)), tape.constant(to_tensor(&b)));
    let out = gate(&mut tape, &p, "g", av, bv);
    assert_close(&rows(tape.value(out)), &a, 1e-12);

    for seed in 0..20 {
        let mut tape = Tape::new();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..layout.total()).map(|_| r.gen_range(-3.0..3.0)).collect();
        let p = layout.bind(&mut tape, &vals);
        let (x, y) = (rand_mat(&mut r, 1, d), rand_mat(&mut r, 1, d));
        let (xv, yv) = (tape.constant(to_tensor(&x)), tape.constant(to_tensor(&y)));
        let out = gate(&mut tape, &p, "g", xv, yv);
        for (c, o) in tape.value(out).data.iter().enumerate() {
            let (lo, hi) = (x[0][c].min(y[0][c]), x[0][c].max(y[0][c]));
            assert!(*o >= lo - 1e-15 && *o <= hi + 1e-15);
        }
    }
}

#[test]
fn estimate_projects_onto_vehicle_embedding() {
    let d = 4;
    let mut layout = ParamLayout::new();
    estimator::add_head_params(&mut layout, d, 0);
    let layout = Arc::new(layout);
    let spec = layout.get("est.vehicle").unwrap().clone();
    let h = vec![vec![0.7, -0.3, 2.0, 1.0]];

    let mut values = vec![0.0; layout.total()];
    values[spec.offset + 3 * d] = 1.0;
    let mut tape = Tape::new();
    let p = layout.bind(&mut tape, &values);
    let hv = tape.constant(to_tensor(&h));
    let y = estimator::estimate(&mut tape, &p, hv, 3);
    assert_eq!(tape.scalar(y), 0.7);
    let y0 = estimator::estimate(&mut tape, &p, hv, 0);
    assert_eq!(tape.scalar(y0), 0.0);

    let mut layout = ParamLayout::new();
    estimator::add_head_params(&mut layout, d, 3);
    let mut tape = Tape::new();
    let (p, n) = bind_random(layout, 51, &mut tape);
    let hv = tape.constant(to_tensor(&h));
    let y = estimator::estimate(&mut tape, &p, hv, 2);
    let a: Mat = mm(&h, &n["mlp.w1"])
        .into_iter()
        .map(|r| r.iter().zip(&n["mlp.b1"][0]).map(|(v, b)| (v + b).max(0.0)).collect())
        .collect();
    let m: Vec<f64> = mm(&a, &n["mlp.w2"])[0].iter().zip(&n["mlp.b2"][0]).map(|(v, b)| v + b).collect();
    let want: f64 = m.iter().zip(&n["est.vehicle"][2]).map(|(x, w)| x * w).sum();
    assert!((tape.scalar(y) - want).abs() < 1e-12);
}

#[test]
fn augmented_route_encoding_is_the_last_gru_state() {
    let (d, f) = (4, 4);
    let mut layout = ParamLayout::new();
    estimator::add_route_params(&mut layout, d, f);
    let mut tape = Tape::new();
    let (p, named) = bind_random(layout, 61, &mut tape);
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    let (xe, ye) = (rand_mat(&mut rng, 3, d), rand_mat(&mut rng, 3, f));
    let (xv, yv) = (tape.constant(to_tensor(&xe)), tape.constant(to_tensor(&ye)));
    let out = estimator::encode_augmented_route(&mut tape, &p, xv, Some(yv));
    let joined: Mat = xe.iter().zip(&ye).map(|(a, b)| a.iter().chain(b).copied().collect()).collect();
    let want = gru_oracle(&joined, &named, "gru2");
    assert_close(&rows(tape.value(out)), &vec![want[2].clone()], 1e-12);
}

#[test]
fn zero_parameters_give_zero_estimate() {
    let (data, model, prepared) = tiny_model(&tiny_config());
    let params = vecest::model::params::ModelParams::new(model.layout.clone(), vec![0.0; model.layout.total()]).unwrap();
    for (u, d) in prepared.iter().enumerate() {
        for i in 0..d.trips.len() {
            let r = model.predict(&params, d, i, &data.histories[u].trips[i].route.segments);
            assert_eq!(r.total_standardized, 0.0);
        }
    }
}

#[test]
fn estimate_ignores_target_trajectory() {
    for variant in Variant::ALL {
        let cfg = vecest::model::ModelConfig { variant, ..tiny_config() };
        let (data, model, _) = tiny_model(&cfg);
        let params = model.init_params(3);
        for h in &data.histories {
            for t in &h.trips {
                let with = model.forward(t, h, &params, &data.network).unwrap();
                let mut bare = t.clone();
                bare.trajectory = None;
                bare.y_total = None;
                let without = model.forward(&bare, h, &params, &data.network).unwrap();
                assert_eq!(with.total.to_bits(), without.total.to_bits());
            }
        }
    }
}

#[test]
fn layout_matches_variant_components() {
    let names = |v: Variant| {
        let cfg = vecest::model::ModelConfig { variant: v, ..tiny_config() };
        vecest::model::build_layout(&cfg, 3).specs().iter().map(|s| s.group().to_string()).collect::<Vec<_>>()
    };
    assert!(!names(Variant::MetaEc).iter().any(|g| g == "enc" || g == "pred" || g == "gru1"));
    assert!(!names(Variant::State).iter().any(|g| g == "conv"));
    assert!(!names(Variant::NoBehDec).iter().any(|g| g == "pred"));
    assert!(names(Variant::Full).iter().any(|g| g == "conv"));
}
