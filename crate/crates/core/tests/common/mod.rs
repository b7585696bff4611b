//! Shared fixtures and independent reference implementations for the
//! integration tests.
#![allow(dead_code)]

use brighteye::loss::{dual_bce_loss, one_hot, LossForm};
use brighteye::params::ParamSet;
use brighteye::{Activation, BrighteyeModel, ModelConfig, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_config(depth: usize) -> ModelConfig {
    ModelConfig {
        image_height: 32,
        image_width: 32,
        patch_size: 16,
        embed_dim: 16,
        depth,
        heads: 2,
        agg_hidden: 16,
        mlp_ratio: 4,
        activation: Activation::Relu,
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_pixels(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random::<f64>()).collect()
}

/// Adds uniform noise in `[-scale, scale]` to every parameter so gains and
/// biases leave their initial constants.
pub fn jitter_params(params: &mut ParamSet<f64>, r: &mut ChaCha8Rng, scale: f64) {
    for p in params.iter_mut() {
        for v in p.value.data_mut() {
            *v += r.random_range(-scale..scale);
        }
    }
}

/// Loss of the full model on one image.
pub fn model_loss(model: &BrighteyeModel<f64>, image: &[f64], positive: bool) -> f64 {
    let mut tape = Tape::new();
    let bound = model.params.bind_frozen(&mut tape);
    let out = model.forward_on(&mut tape, &bound, image).unwrap();
    let l = dual_bce_loss(&mut tape, one_hot(positive), out.p_cls, out.p_agg, LossForm::Average).unwrap();
    tape.value(l.total).data()[0]
}

// ---------------------------------------------------------------------------
// metrics oracles

/// `(threshold, fp, tp)` for `+inf` and every distinct score, by direct
/// counting at each threshold.
pub fn brute_roc(scores: &[f64], labels: &[bool]) -> Vec<(f64, usize, usize)> {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    thresholds.insert(0, f64::INFINITY);
    thresholds
        .into_iter()
        .map(|t| {
            let mut fp = 0;
            let mut tp = 0;
            for (s, &l) in scores.iter().zip(labels) {
                if *s >= t {
                    if l {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            (t, fp, tp)
        })
        .collect()
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (sp, &lp) in scores.iter().zip(labels) {
        for (sn, &ln) in scores.iter().zip(labels) {
            if lp && !ln {
                pairs += 1.0;
                if sp > sn {
                    wins += 1.0;
                } else if sp == sn {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Best sensitivity over every threshold whose false positives stay within
/// the allowed share of negatives (counted in whole samples).
pub fn brute_tpr_at_spec(scores: &[f64], labels: &[bool], spec: f64) -> f64 {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    let allowed = ((1.0 - spec) * neg as f64 + 1e-9).floor() as usize;
    brute_roc(scores, labels)
        .into_iter()
        .filter(|&(_, fp, _)| fp <= allowed)
        .map(|(_, _, tp)| tp as f64 / pos as f64)
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// straight-line forward pass over plain nested vectors

type Mat = Vec<Vec<f64>>;

fn param(params: &ParamSet<f64>, name: &str) -> Tensor<f64> {
    params.by_name(name).unwrap_or_else(|| panic!("no parameter {name}")).value.clone()
}

fn mat(t: &Tensor<f64>) -> Mat {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

fn linear(x: &Mat, params: &ParamSet<f64>, name: &str) -> Mat {
    let w = mat(&param(params, &format!("{name}.weight")));
    let b = param(params, &format!("{name}.bias"));
    x.iter()
        .map(|row| {
            (0..w[0].len())
                .map(|j| b.data()[j] + row.iter().zip(&w).map(|(xi, wr)| xi * wr[j]).sum::<f64>())
                .collect()
        })
        .collect()
}

fn norm_row(row: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = (var + 1e-5).sqrt();
    row.iter()
        .enumerate()
        .map(|(j, v)| {
            let g = if gain.len() == 1 { gain[0] } else { gain[j] };
            let b = if bias.len() == 1 { bias[0] } else { bias[j] };
            (v - mean) / sd * g + b
        })
        .collect()
}

fn layer_norm(x: &Mat, params: &ParamSet<f64>, name: &str) -> Mat {
    let g = param(params, &format!("{name}.gain"));
    let b = param(params, &format!("{name}.bias"));
    x.iter().map(|r| norm_row(r, g.data(), b.data())).collect()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn act(x: f64, a: Activation) -> f64 {
    match a {
        Activation::Relu => x.max(0.0),
        Activation::Gelu => {
            let c = (2.0 / std::f64::consts::PI).sqrt();
            0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
        }
    }
}

/// `(p_cls, p_agg, patch_weights)` computed without the tape.
pub fn reference_forward(cfg: &ModelConfig, params: &ParamSet<f64>, image: &[f64]) -> ([f64; 2], [f64; 2], Vec<f64>) {
    let p = cfg.patch_size;
    let (gh, gw) = (cfg.image_height / p, cfg.image_width / p);
    let d = cfg.embed_dim;
    let mut patches = Vec::new();
    for pr in 0..gh {
        for pc in 0..gw {
            let mut row = Vec::new();
            for y in 0..p {
                for x in 0..p {
                    let px = ((pr * p + y) * cfg.image_width + pc * p + x) * 3;
                    row.extend_from_slice(&image[px..px + 3]);
                }
            }
            patches.push(row);
        }
    }
    let embedded = linear(&patches, params, "patch_projection");
    let pos = mat(&param(params, "position_embedding"));
    let cls = mat(&param(params, "class_token"));
    let mut x: Mat = std::iter::once(cls[0].clone()).chain(embedded).collect();
    for (t, row) in x.iter_mut().enumerate() {
        for j in 0..d {
            row[j] += pos[t][j];
        }
    }

    let hd = d / cfg.heads;
    for b in 0..cfg.depth {
        let pre = format!("blocks.{b}");
        let h = layer_norm(&x, params, &format!("{pre}.norm1"));
        let qkv = linear(&h, params, &format!("{pre}.attn.qkv"));
        let tokens = x.len();
        let mut merged = vec![vec![0.0; d]; tokens];
        for head in 0..cfg.heads {
            let off = head * hd;
            for i in 0..tokens {
                let scores: Vec<f64> = (0..tokens)
                    .map(|j| (0..hd).map(|k| qkv[i][off + k] * qkv[j][d + off + k]).sum::<f64>() / (hd as f64).sqrt())
                    .collect();
                let a = softmax(&scores);
                for k in 0..hd {
                    merged[i][off + k] = (0..tokens).map(|j| a[j] * qkv[j][2 * d + off + k]).sum();
                }
            }
        }
        let o = linear(&merged, params, &format!("{pre}.attn.out"));
        for (xr, or) in x.iter_mut().zip(&o) {
            for j in 0..d {
                xr[j] += or[j];
            }
        }
        let h = layer_norm(&x, params, &format!("{pre}.norm2"));
        let mut h = linear(&h, params, &format!("{pre}.mlp.fc1"));
        for r in &mut h {
            for v in r.iter_mut() {
                *v = act(*v, cfg.activation);
            }
        }
        let h = linear(&h, params, &format!("{pre}.mlp.fc2"));
        for (xr, hr) in x.iter_mut().zip(&h) {
            for j in 0..d {
                xr[j] += hr[j];
            }
        }
    }

    let cls_logits = linear(&vec![x[0].clone()], params, "mlp_head");
    let p_cls = softmax(&cls_logits[0]);

    let feats: Mat = x[1..].to_vec();
    let mut h = layer_norm(&linear(&feats, params, "agg_head.proj1"), params, "agg_head.norm1");
    for r in &mut h {
        for v in r.iter_mut() {
            *v = v.max(0.0);
        }
    }
    let s: Vec<f64> = linear(&h, params, "agg_head.proj2").iter().map(|r| r[0]).collect();
    let g = param(params, "agg_head.norm2.gain");
    let bb = param(params, "agg_head.norm2.bias");
    let s: Vec<f64> = norm_row(&s, g.data(), bb.data()).into_iter().map(|v| v.max(0.0)).collect();
    let w = softmax(&s);
    let agg: Vec<f64> = (0..d).map(|j| feats.iter().zip(&w).map(|(f, wi)| wi * f[j]).sum()).collect();
    let agg_logits = linear(&vec![agg], params, "final_fc");
    let p_agg = softmax(&agg_logits[0]);
    ([p_cls[0], p_cls[1]], [p_agg[0], p_agg[1]], w)
}
