use std::collections::HashMap;

use super::tensor::Tensor;
use super::*;
use crate::rng::stream_rng;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        n_layers: 1,
        n_heads: 2,
        d_model: 4,
        d_ff: 8,
        vocab_size: 10,
        max_rel_distance: 2,
        dropout: 0.0,
        max_decode_len: 8,
    }
}

fn small_config() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 8,
        d_ff: 16,
        vocab_size: 30,
        max_rel_distance: 3,
        dropout: 0.0,
        max_decode_len: 12,
    }
}

/// Fill every tensor with nonzero noise so zero-initialized projections and
/// bias tables carry real gradients.
fn randomize(params: &mut ModelParams, seed: u64) {
    let mut rng = stream_rng(seed, "randomize", "");
    params.visit_mut(|_, t| {
        for v in &mut t.data {
            *v = gauss(&mut rng, 0.15);
        }
    });
}

fn named(params: &ModelParams) -> HashMap<String, Tensor> {
    let mut map = HashMap::new();
    params.visit(|name, t| {
        map.insert(name.to_string(), t.clone());
    });
    map
}

#[test]
fn config_validation_catches_bad_dims() {
    let mut cfg = tiny_config();
    cfg.n_heads = 3; // 4 % 3 != 0
    assert!(cfg.validate().is_err());
    let mut cfg = tiny_config();
    cfg.d_model = 0;
    assert!(cfg.validate().is_err());
}

#[test]
fn param_count_matches_closed_formula() {
    for cfg in [tiny_config(), small_config(), ModelConfig::new(200)] {
        let params = ModelParams::init(&cfg, &mut stream_rng(1, "init", "")).unwrap();
        assert_eq!(params.param_count(), cfg.param_count(), "config {cfg:?}");
    }
}

#[test]
fn softmax_of_logit_rows_sums_to_one() {
    let cfg = small_config();
    let mut params = ModelParams::init(&cfg, &mut stream_rng(2, "init", "")).unwrap();
    randomize(&mut params, 3);
    let logits = forward(&params, &[5, 6, 7], &[2, 8, 9]).unwrap();
    for t in 0..logits.rows {
        let sum: f64 = softmax_vec(logits.row(t)).iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
    assert!(logits.data.iter().all(|v| v.is_finite()));
}

#[test]
fn forward_is_deterministic() {
    let cfg = small_config();
    let mut params = ModelParams::init(&cfg, &mut stream_rng(4, "init", "")).unwrap();
    randomize(&mut params, 5);
    let a = forward(&params, &[5, 6, 7, 8], &[2, 9]).unwrap();
    let b = forward(&params, &[5, 6, 7, 8], &[2, 9]).unwrap();
    assert_eq!(a.data, b.data, "same params and inputs must give identical bits");
}

#[test]
fn encoder_is_permutation_equivariant_under_zero_bias() {
    let cfg = small_config();
    let mut params = ModelParams::init(&cfg, &mut stream_rng(6, "init", "")).unwrap();
    randomize(&mut params, 7);
    // zero the only source of position information
    params.rel_bias = Tensor::zeros(cfg.n_heads, cfg.bias_cols());
    let logits_a = forward(&params, &[5, 6, 7, 8], &[2, 9, 10]).unwrap();
    let logits_b = forward(&params, &[7, 6, 5, 8], &[2, 9, 10]).unwrap();
    for (a, b) in logits_a.data.iter().zip(&logits_b.data) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn decoder_is_causal() {
    let cfg = small_config();
    let mut params = ModelParams::init(&cfg, &mut stream_rng(8, "init", "")).unwrap();
    randomize(&mut params, 9);
    let a = forward(&params, &[5, 6], &[2, 10, 11, 12]).unwrap();
    let b = forward(&params, &[5, 6], &[2, 10, 13, 14]).unwrap();
    // positions 0 and 1 see identical prefixes; later edits cannot leak back
    for t in 0..2 {
        assert_eq!(a.row(t), b.row(t), "position {t} changed");
    }
    assert_ne!(a.row(2), b.row(2));
}

/// Straight-line scalar re-implementation of the forward pass, reading
/// parameters by name. Written with plain loops and its own helpers so a
/// bookkeeping bug in the main path cannot hide here too.
fn oracle_forward(params: &ModelParams, src: &[u32], dec_in: &[u32]) -> Vec<Vec<f64>> {
    let cfg = &params.config;
    let p = named(params);
    let d = cfg.d_model;
    let dh = d / cfg.n_heads;
    let m = cfg.max_rel_distance as isize;

    let rms = |x: &[Vec<f64>], gain: &Tensor| -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| {
                let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
                let inv = 1.0 / (ms + 1e-8).sqrt();
                row.iter()
                    .enumerate()
                    .map(|(j, v)| gain.data[j] * v * inv)
                    .collect()
            })
            .collect()
    };
    let mul = |x: &[Vec<f64>], w: &Tensor| -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| {
                (0..w.cols)
                    .map(|j| (0..w.rows).map(|k| row[k] * w.at(k, j)).sum())
                    .collect()
            })
            .collect()
    };
    let add = |a: &mut Vec<Vec<f64>>, b: &[Vec<f64>]| {
        for (ra, rb) in a.iter_mut().zip(b) {
            for (x, y) in ra.iter_mut().zip(rb) {
                *x += y;
            }
        }
    };
    let attend = |q_in: &[Vec<f64>],
                  kv_in: &[Vec<f64>],
                  prefix: &str,
                  biased: bool,
                  causal: bool|
     -> Vec<Vec<f64>> {
        let q = mul(q_in, &p[&format!("{prefix}.wq")]);
        let k = mul(kv_in, &p[&format!("{prefix}.wk")]);
        let v = mul(kv_in, &p[&format!("{prefix}.wv")]);
        let bias = &p["rel_bias"];
        let mut concat = vec![vec![0.0; d]; q_in.len()];
        for h in 0..cfg.n_heads {
            for i in 0..q_in.len() {
                let mut scores = Vec::new();
                for j in 0..kv_in.len() {
                    if causal && j > i {
                        scores.push(f64::NEG_INFINITY);
                        continue;
                    }
                    let mut dot = 0.0;
                    for c in 0..dh {
                        dot += q[i][h * dh + c] * k[j][h * dh + c];
                    }
                    let mut s = dot / (dh as f64).sqrt();
                    if biased {
                        let delta = (j as isize - i as isize).clamp(-m, m);
                        s += bias.at(h, (delta + m) as usize);
                    }
                    scores.push(s);
                }
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                let z: f64 = exps.iter().sum();
                for c in 0..dh {
                    let mut acc = 0.0;
                    for j in 0..kv_in.len() {
                        acc += exps[j] / z * v[j][h * dh + c];
                    }
                    concat[i][h * dh + c] = acc;
                }
            }
        }
        mul(&concat, &p[&format!("{prefix}.wo")])
    };
    let ffn = |x: &[Vec<f64>], prefix: &str| -> Vec<Vec<f64>> {
        let h1 = mul(x, &p[&format!("{prefix}.w1")]);
        let r: Vec<Vec<f64>> = h1
            .iter()
            .map(|row| row.iter().map(|v| v.max(0.0)).collect())
            .collect();
        mul(&r, &p[&format!("{prefix}.w2")])
    };

    let emb = &p["embedding"];
    let mut x: Vec<Vec<f64>> = src.iter().map(|&t| emb.row(t as usize).to_vec()).collect();
    for l in 0..cfg.n_layers {
        let xn = rms(&x, &p[&format!("enc.{l}.ln_attn")]);
        let a = attend(&xn, &xn, &format!("enc.{l}.attn"), true, false);
        add(&mut x, &a);
        let xn2 = rms(&x, &p[&format!("enc.{l}.ln_ff")]);
        let f = ffn(&xn2, &format!("enc.{l}.ff"));
        add(&mut x, &f);
    }
    let mem = rms(&x, &p["ln_enc_out"]);

    let mut y: Vec<Vec<f64>> = dec_in.iter().map(|&t| emb.row(t as usize).to_vec()).collect();
    for l in 0..cfg.n_layers {
        let yn = rms(&y, &p[&format!("dec.{l}.ln_self")]);
        let a = attend(&yn, &yn, &format!("dec.{l}.self"), true, true);
        add(&mut y, &a);
        let yn2 = rms(&y, &p[&format!("dec.{l}.ln_cross")]);
        let c = attend(&yn2, &mem, &format!("dec.{l}.cross"), false, false);
        add(&mut y, &c);
        let yn3 = rms(&y, &p[&format!("dec.{l}.ln_ff")]);
        let f = ffn(&yn3, &format!("dec.{l}.ff"));
        add(&mut y, &f);
    }
    let dec = rms(&y, &p["ln_dec_out"]);
    dec.iter()
        .map(|row| {
            (0..cfg.vocab_size)
                .map(|v| {
                    row.iter()
                        .zip(emb.row(v))
                        .map(|(a, b)| a * b)
                        .sum()
                })
                .collect()
        })
        .collect()
}

#[test]
fn forward_matches_straight_line_oracle() {
    let cfg = tiny_config();
    let mut params = ModelParams::init(&cfg, &mut stream_rng(10, "init", "")).unwrap();
    randomize(&mut params, 11);
    let src = [4u32, 7];
    let dec_in = [2u32, 5];
    let logits = forward(&params, &src, &dec_in).unwrap();
    let oracle = oracle_forward(&params, &src, &dec_in);
    for t in 0..dec_in.len() {
        for v in 0..cfg.vocab_size {
            let a = logits.at(t, v);
            let b = oracle[t][v];
            assert!(
                (a - b).abs() < 1e-10,
                "logit [{t},{v}]: main {a} vs oracle {b}"
            );
        }
    }
}

#[test]
fn forward_matches_oracle_on_longer_sequences() {
    let cfg = small_config();
    let mut params = ModelParams::init(&cfg, &mut stream_rng(12, "init", "")).unwrap();
    randomize(&mut params, 13);
    let src = [5u32, 6, 7, 8, 9, 10, 11];
    let dec_in = [2u32, 12, 13, 14, 15];
    let logits = forward(&params, &src, &dec_in).unwrap();
    let oracle = oracle_forward(&params, &src, &dec_in);
    for t in 0..dec_in.len() {
        for v in 0..cfg.vocab_size {
            assert!((logits.at(t, v) - oracle[t][v]).abs() < 1e-10);
        }
    }
}

#[test]
fn initial_loss_is_log_vocab() {
    let cfg = ModelConfig::new(100);
    let params = ModelParams::init(&cfg, &mut stream_rng(14, "init", "")).unwrap();
    let batch = vec![
        Pair {
            source: vec![10, 11, 12, 13],
            target: vec![14, 15, 16],
        },
        Pair {
            source: vec![20, 21],
            target: vec![22, 23, 24, 25],
        },
    ];
    let l = loss(&params, &batch).unwrap();
    let expect = (100f64).ln();
    assert!(
        (l - expect).abs() / expect < 0.05,
        "initial loss {l}, expected about {expect}"
    );
}

#[test]
fn empty_targets_are_filtered_and_empty_batch_errors() {
    let cfg = small_config();
    let params = ModelParams::init(&cfg, &mut stream_rng(15, "init", "")).unwrap();
    let batch = vec![
        Pair {
            source: vec![5, 6],
            target: vec![],
        },
        Pair {
            source: vec![5, 6],
            target: vec![7],
        },
    ];
    let with_empty = loss(&params, &batch).unwrap();
    let without = loss(&params, &batch[1..]).unwrap();
    assert_eq!(with_empty, without);
    assert!(loss(&params, &batch[..1]).is_err());
    assert!(loss_and_grad(&params, &[]).is_err());
}

#[test]
fn batch_loss_is_invariant_to_example_order() {
    let cfg = small_config();
    let mut params = ModelParams::init(&cfg, &mut stream_rng(16, "init", "")).unwrap();
    randomize(&mut params, 17);
    let batch = vec![
        Pair {
            source: vec![5, 6, 7],
            target: vec![8, 9],
        },
        Pair {
            source: vec![10, 11],
            target: vec![12, 13, 14],
        },
        Pair {
            source: vec![15],
            target: vec![16],
        },
    ];
    let mut reversed = batch.clone();
    reversed.reverse();
    let a = loss(&params, &batch).unwrap();
    let b = loss(&params, &reversed).unwrap();
    assert!((a - b).abs() < 1e-9);
}

fn perturb(params: &ModelParams, tensor: &str, idx: usize, eps: f64) -> ModelParams {
    let mut p = params.clone();
    p.visit_mut(|name, t| {
        if name == tensor {
            t.data[idx] += eps;
        }
    });
    p
}

#[test]
fn gradients_match_central_finite_differences() {
    let cfg = small_config();
    let mut params = ModelParams::init(&cfg, &mut stream_rng(18, "init", "")).unwrap();
    randomize(&mut params, 19);
    let batch = vec![
        Pair {
            source: vec![5, 6, 7, 8],
            target: vec![9, 10, 11],
        },
        Pair {
            source: vec![12, 13],
            target: vec![14, 15],
        },
    ];
    let (_, grads) = loss_and_grad(&params, &batch).unwrap();
    let gmap = named(&grads);

    let mut coords: Vec<(String, usize)> = Vec::new();
    params.visit(|name, t| {
        coords.push((name.to_string(), t.data.len()));
    });
    let mut rng = stream_rng(20, "coords", "");
    let eps = 1e-4;
    for _ in 0..20 {
        let (name, len) = &coords[rng.random_range(0..coords.len())];
        let idx = rng.random_range(0..*len);
        let up = loss(&perturb(&params, name, idx, eps), &batch).unwrap();
        let down = loss(&perturb(&params, name, idx, -eps), &batch).unwrap();
        let numeric = (up - down) / (2.0 * eps);
        let analytic = gmap[name].data[idx];
        let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
        assert!(
            err < 1e-3,
            "{name}[{idx}]: analytic {analytic}, numeric {numeric}, rel err {err}"
        );
    }
}

#[test]
fn decode_respects_the_length_cap() {
    let cfg = tiny_config();
    for seed in 0..30u64 {
        let mut params = ModelParams::init(&cfg, &mut stream_rng(seed, "init", "")).unwrap();
        randomize(&mut params, seed + 1000);
        let out = decode_greedy(&params, &[4, 5, 6]).unwrap();
        assert!(out.len() <= cfg.max_decode_len);
        let sampled =
            decode_nucleus(&params, &[4, 5, 6], 0.9, &mut stream_rng(seed, "dec", "")).unwrap();
        assert!(sampled.len() <= cfg.max_decode_len);
    }
}

#[test]
fn nucleus_decode_with_tiny_p_equals_greedy() {
    let cfg = small_config();
    let mut params = ModelParams::init(&cfg, &mut stream_rng(21, "init", "")).unwrap();
    randomize(&mut params, 22);
    let greedy = decode_greedy(&params, &[5, 6, 7]).unwrap();
    let sampled =
        decode_nucleus(&params, &[5, 6, 7], 1e-9, &mut stream_rng(1, "dec", "")).unwrap();
    assert_eq!(greedy, sampled);
}

#[test]
fn empty_source_is_tolerated() {
    let cfg = small_config();
    let params = ModelParams::init(&cfg, &mut stream_rng(23, "init", "")).unwrap();
    let batch = vec![Pair {
        source: vec![],
        target: vec![5, 6],
    }];
    assert!(loss(&params, &batch).unwrap().is_finite());
    assert!(decode_greedy(&params, &[]).is_ok());
}

#[test]
fn invalid_token_ids_error() {
    let cfg = tiny_config();
    let params = ModelParams::init(&cfg, &mut stream_rng(24, "init", "")).unwrap();
    assert!(matches!(
        forward(&params, &[99], &[2]),
        Err(Error::InvalidTokenId(99))
    ));
}
