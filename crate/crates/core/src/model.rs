//! Vision-transformer classifier with two heads: an MLP head on the class
//! token and a learnable patch-feature aggregation head.
//!
//! Token layout: row 0 of the token sequence (and of the position table) is
//! the class token, rows `1..=N` are patches in row-major patch order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::params::ParamSet;
use crate::tensor::{Activation, Result, Scalar, Tape, Tensor, TensorError, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub agg_hidden: usize,
    pub mlp_ratio: usize,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_height: 64,
            image_width: 64,
            patch_size: 16,
            embed_dim: 64,
            depth: 4,
            heads: 4,
            agg_hidden: 64,
            mlp_ratio: 4,
            activation: Activation::Relu,
        }
    }
}

impl ModelConfig {
    /// 512×512 input with 16-pixel patches (1024 patch tokens).
    pub fn full_scale() -> Self {
        Self {
            image_height: 512,
            image_width: 512,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| TensorError::Dimension {
            op: "model config",
            detail,
        };
        let p = self.patch_size;
        if p == 0 || self.image_height == 0 || self.image_width == 0 {
            return Err(bad("image extents and patch size must be positive".into()));
        }
        if self.image_height % p != 0 || self.image_width % p != 0 {
            return Err(bad(format!(
                "{}x{} is not divisible into {p}x{p} patches",
                self.image_height, self.image_width
            )));
        }
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(bad(format!(
                "embedding width {} must be a positive multiple of {} heads",
                self.embed_dim, self.heads
            )));
        }
        if self.agg_hidden == 0 || self.mlp_ratio == 0 {
            return Err(bad("aggregation and MLP widths must be positive".into()));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        (self.image_height / self.patch_size) * (self.image_width / self.patch_size)
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    pub fn mlp_hidden(&self) -> usize {
        self.embed_dim * self.mlp_ratio
    }

    /// Scalar count implied by the configuration, computed without building
    /// a model.
    pub fn parameter_count(&self) -> usize {
        let d = self.embed_dim;
        let a = self.agg_hidden;
        let h = self.mlp_hidden();
        let linear = |i: usize, o: usize| i * o + o;
        let block = 2 * (2 * d) + linear(d, 3 * d) + linear(d, d) + linear(d, h) + linear(h, d);
        linear(self.patch_dim(), d)
            + (self.num_patches() + 1) * d
            + d
            + self.depth * block
            + linear(d, 2)
            + linear(d, a)
            + 2 * a
            + linear(a, 1)
            + 2
            + linear(d, 2)
    }
}

#[derive(Debug, Clone, Copy)]
struct LinearIdx {
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy)]
struct NormIdx {
    gain: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct BlockIdx {
    norm1: NormIdx,
    qkv: LinearIdx,
    attn_out: LinearIdx,
    norm2: NormIdx,
    fc1: LinearIdx,
    fc2: LinearIdx,
}

/// Index of each parameter group inside the model's [`ParamSet`].
#[derive(Debug, Clone)]
struct Layout {
    patch_projection: LinearIdx,
    position_embedding: usize,
    class_token: usize,
    blocks: Vec<BlockIdx>,
    mlp_head: LinearIdx,
    agg_proj1: LinearIdx,
    agg_norm1: NormIdx,
    agg_proj2: LinearIdx,
    agg_norm2: NormIdx,
    final_fc: LinearIdx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    TruncNormal,
    Zeros,
    Ones,
}

/// Name, shape and initializer of every parameter, in layout order.
pub fn parameter_specs(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut specs = Vec::new();
    build_layout(config, &mut |name, shape, init| {
        specs.push((name, shape, init));
        specs.len() - 1
    });
    specs
}

fn build_layout(
    c: &ModelConfig,
    add: &mut dyn FnMut(String, Vec<usize>, Init) -> usize,
) -> Layout {
    let d = c.embed_dim;
    let norm = |add: &mut dyn FnMut(String, Vec<usize>, Init) -> usize, name: &str, n: usize| NormIdx {
        gain: add(format!("{name}.gain"), vec![n], Init::Ones),
        bias: add(format!("{name}.bias"), vec![n], Init::Zeros),
    };
    let lin = |add: &mut dyn FnMut(String, Vec<usize>, Init) -> usize, name: &str, i: usize, o: usize| {
        LinearIdx {
            weight: add(format!("{name}.weight"), vec![i, o], Init::TruncNormal),
            bias: add(format!("{name}.bias"), vec![o], Init::Zeros),
        }
    };
    let patch_projection = lin(add, "patch_projection", c.patch_dim(), d);
    let position_embedding = add(
        "position_embedding".into(),
        vec![c.num_patches() + 1, d],
        Init::TruncNormal,
    );
    let class_token = add("class_token".into(), vec![1, d], Init::TruncNormal);
    let blocks = (0..c.depth)
        .map(|b| {
            let p = format!("blocks.{b}");
            BlockIdx {
                norm1: norm(add, &format!("{p}.norm1"), d),
                qkv: lin(add, &format!("{p}.attn.qkv"), d, 3 * d),
                attn_out: lin(add, &format!("{p}.attn.out"), d, d),
                norm2: norm(add, &format!("{p}.norm2"), d),
                fc1: lin(add, &format!("{p}.mlp.fc1"), d, c.mlp_hidden()),
                fc2: lin(add, &format!("{p}.mlp.fc2"), c.mlp_hidden(), d),
            }
        })
        .collect();
    Layout {
        patch_projection,
        position_embedding,
        class_token,
        blocks,
        mlp_head: lin(add, "mlp_head", d, 2),
        agg_proj1: lin(add, "agg_head.proj1", d, c.agg_hidden),
        agg_norm1: norm(add, "agg_head.norm1", c.agg_hidden),
        agg_proj2: lin(add, "agg_head.proj2", c.agg_hidden, 1),
        // The second projection emits one score per patch; its normalization
        // runs across the patch axis with a shared gain and bias.
        agg_norm2: norm(add, "agg_head.norm2", 1),
        final_fc: lin(add, "final_fc", d, 2),
    }
}

/// Probability outputs of both heads for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs<T> {
    pub p_cls: [T; 2],
    pub p_agg: [T; 2],
    pub patch_weights: Vec<T>,
}

impl<T: Scalar> HeadOutputs<T> {
    /// Mean positive-class probability of the two heads.
    pub fn predict(&self) -> T {
        (self.p_cls[1] + self.p_agg[1]) / T::of(2.0)
    }
}

/// Tape handles for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `[1, 2]` class-token head probabilities.
    pub p_cls: Var,
    /// `[1, 2]` aggregation head probabilities.
    pub p_agg: Var,
    /// `[1, N]` patch weights.
    pub patch_weights: Var,
}

/// Aggregation head parameters as bound on a tape.
#[derive(Debug, Clone, Copy)]
pub struct AggHeadVars {
    pub proj1_weight: Var,
    pub proj1_bias: Var,
    pub norm1_gain: Var,
    pub norm1_bias: Var,
    pub proj2_weight: Var,
    pub proj2_bias: Var,
    pub norm2_gain: Var,
    pub norm2_bias: Var,
}

/// Weighted sum of patch features. Scores come from
/// proj1 → norm → ReLU → proj2 → norm (across patches) → ReLU, and the
/// weights are their softmax over patches. Returns `(aggregated [1×D],
/// weights [1×N])`.
pub fn aggregate_patches<T: Scalar>(
    tape: &mut Tape<T>,
    features: Var,
    head: &AggHeadVars,
) -> Result<(Var, Var)> {
    let shape = tape.value(features).shape().to_vec();
    if shape.len() != 2 {
        return Err(TensorError::Dimension {
            op: "aggregate_patches",
            detail: format!("features must be N×D, got {shape:?}"),
        });
    }
    let n = shape[0];
    let eps = T::of(LAYER_NORM_EPS);
    let h = tape.matmul(features, head.proj1_weight)?;
    let h = tape.add_bias(h, head.proj1_bias)?;
    let h = tape.layer_norm(h, head.norm1_gain, head.norm1_bias, eps)?;
    let h = tape.relu(h)?;
    let s = tape.matmul(h, head.proj2_weight)?;
    let s = tape.add_bias(s, head.proj2_bias)?;
    let s = tape.reshape(s, &[1, n])?;
    let s = tape.layer_norm(s, head.norm2_gain, head.norm2_bias, eps)?;
    let s = tape.relu(s)?;
    let weights = tape.softmax(s, 1)?;
    let aggregated = tape.matmul(weights, features)?;
    Ok((aggregated, weights))
}

/// Splits an `H×W×3` image (row-major, channels interleaved) into an
/// `N×(3P²)` matrix. Row `k` is patch `(k / (W/P), k % (W/P))`; within a row
/// values run over patch rows, then columns, then channels.
pub fn patchify<T: Scalar>(
    pixels: &[T],
    height: usize,
    width: usize,
    patch: usize,
) -> Result<Tensor<T>> {
    check_patch_grid(pixels.len(), height, width, patch)?;
    let (gh, gw) = (height / patch, width / patch);
    let row_len = 3 * patch * patch;
    let mut out = Vec::with_capacity(pixels.len());
    for pr in 0..gh {
        for pc in 0..gw {
            for y in 0..patch {
                let src_row = (pr * patch + y) * width + pc * patch;
                out.extend_from_slice(&pixels[src_row * 3..(src_row + patch) * 3]);
            }
        }
    }
    Tensor::new(vec![gh * gw, row_len], out)
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Scalar>(
    patches: &Tensor<T>,
    height: usize,
    width: usize,
    patch: usize,
) -> Result<Vec<T>> {
    check_patch_grid(height * width * 3, height, width, patch)?;
    let (gh, gw) = (height / patch, width / patch);
    if patches.shape() != [gh * gw, 3 * patch * patch] {
        return Err(TensorError::Dimension {
            op: "unpatchify",
            detail: format!("{:?} is not a patch matrix for {height}x{width}", patches.shape()),
        });
    }
    let mut out = vec![T::zero(); height * width * 3];
    let src = patches.data();
    let mut i = 0;
    for pr in 0..gh {
        for pc in 0..gw {
            for y in 0..patch {
                let dst_row = (pr * patch + y) * width + pc * patch;
                out[dst_row * 3..(dst_row + patch) * 3].copy_from_slice(&src[i..i + patch * 3]);
                i += patch * 3;
            }
        }
    }
    Ok(out)
}

fn check_patch_grid(len: usize, height: usize, width: usize, patch: usize) -> Result<()> {
    if patch == 0 || height % patch != 0 || width % patch != 0 || height == 0 || width == 0 {
        return Err(TensorError::Dimension {
            op: "patchify",
            detail: format!("{height}x{width} is not divisible into {patch}x{patch} patches"),
        });
    }
    if len != height * width * 3 {
        return Err(TensorError::Dimension {
            op: "patchify",
            detail: format!("expected {} values for {height}x{width}x3, got {len}", height * width * 3),
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct BrighteyeModel<T> {
    config: ModelConfig,
    layout: Layout,
    pub params: ParamSet<T>,
}

impl<T: Scalar> BrighteyeModel<T> {
    /// Truncated-normal (σ = 0.02, cut at 2σ) weights and embeddings, zero
    /// biases, unit norm gains.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut params = ParamSet::new();
        let layout = build_layout(&config, &mut |name, shape, init| {
            let value = match init {
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::ones(&shape),
                Init::TruncNormal => Tensor::from_fn(&shape, |_| loop {
                    let v: f64 = normal.sample(&mut rng);
                    if v.abs() <= 2.0 * INIT_STD {
                        break T::of(v);
                    }
                }),
            };
            params.push(name, value)
        });
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    /// Assembles a model from an already-populated parameter set, checking
    /// names and shapes against the layout.
    pub fn from_params(config: ModelConfig, params: ParamSet<T>) -> Result<Self> {
        config.validate()?;
        let specs = parameter_specs(&config);
        if specs.len() != params.len() {
            return Err(TensorError::Dimension {
                op: "model params",
                detail: format!("expected {} tensors, got {}", specs.len(), params.len()),
            });
        }
        for ((name, shape, _), p) in specs.iter().zip(params.iter()) {
            if *name != p.name || shape.as_slice() != p.value.shape() {
                return Err(TensorError::Dimension {
                    op: "model params",
                    detail: format!(
                        "expected {name} {shape:?}, found {} {:?}",
                        p.name,
                        p.value.shape()
                    ),
                });
            }
        }
        let layout = build_layout(&config, &mut {
            let mut i = 0;
            move |_, _, _| {
                i += 1;
                i - 1
            }
        });
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn cast<U: Scalar>(&self) -> BrighteyeModel<U> {
        BrighteyeModel {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.cast(),
        }
    }

    /// Zeroes every aggregation-head score parameter.
    pub fn zero_aggregation_scores(&mut self) {
        let l = &self.layout;
        for idx in [
            l.agg_proj1.weight,
            l.agg_proj1.bias,
            l.agg_norm1.gain,
            l.agg_norm1.bias,
            l.agg_proj2.weight,
            l.agg_proj2.bias,
            l.agg_norm2.gain,
            l.agg_norm2.bias,
        ] {
            self.params.get_mut(idx).value.data_mut().fill(T::zero());
        }
    }

    /// Parameter indices grouped by architectural component, for gradient
    /// flow checks.
    pub fn parameter_groups(&self) -> Vec<(String, Vec<usize>)> {
        let l = &self.layout;
        let lin = |x: &LinearIdx| [x.weight, x.bias];
        let norm = |x: &NormIdx| [x.gain, x.bias];
        let mut groups = vec![
            ("patch_projection".to_string(), lin(&l.patch_projection).to_vec()),
            ("position_embedding".to_string(), vec![l.position_embedding]),
            ("class_token".to_string(), vec![l.class_token]),
        ];
        for (i, b) in l.blocks.iter().enumerate() {
            let mut idx = Vec::new();
            idx.extend(norm(&b.norm1));
            idx.extend(lin(&b.qkv));
            idx.extend(lin(&b.attn_out));
            idx.extend(norm(&b.norm2));
            idx.extend(lin(&b.fc1));
            idx.extend(lin(&b.fc2));
            groups.push((format!("blocks.{i}"), idx));
        }
        groups.push(("mlp_head".to_string(), lin(&l.mlp_head).to_vec()));
        let mut agg = Vec::new();
        agg.extend(lin(&l.agg_proj1));
        agg.extend(norm(&l.agg_norm1));
        agg.extend(lin(&l.agg_proj2));
        agg.extend(norm(&l.agg_norm2));
        agg.extend(lin(&l.final_fc));
        groups.push(("aggregation_head".to_string(), agg));
        groups
    }

    /// Aggregation-head handles from a bound parameter list.
    pub fn agg_head_vars(&self, bound: &[Var]) -> AggHeadVars {
        let l = &self.layout;
        AggHeadVars {
            proj1_weight: bound[l.agg_proj1.weight],
            proj1_bias: bound[l.agg_proj1.bias],
            norm1_gain: bound[l.agg_norm1.gain],
            norm1_bias: bound[l.agg_norm1.bias],
            proj2_weight: bound[l.agg_proj2.weight],
            proj2_bias: bound[l.agg_proj2.bias],
            norm2_gain: bound[l.agg_norm2.gain],
            norm2_bias: bound[l.agg_norm2.bias],
        }
    }

    /// Records the forward pass for one `H×W×3` image with values in `[0, 1]`.
    pub fn forward_on(&self, tape: &mut Tape<T>, bound: &[Var], image: &[T]) -> Result<ForwardVars> {
        let c = &self.config;
        let l = &self.layout;
        if image.len() != c.image_height * c.image_width * 3 {
            return Err(TensorError::Dimension {
                op: "forward",
                detail: format!(
                    "image has {} values, model expects {}x{}x3",
                    image.len(),
                    c.image_height,
                    c.image_width
                ),
            });
        }
        let eps = T::of(LAYER_NORM_EPS);
        let d = c.embed_dim;
        let n = c.num_patches();
        let linear = |tape: &mut Tape<T>, x: Var, idx: &LinearIdx| -> Result<Var> {
            let y = tape.matmul(x, bound[idx.weight])?;
            tape.add_bias(y, bound[idx.bias])
        };

        let patches = tape.constant(patchify(image, c.image_height, c.image_width, c.patch_size)?);
        let embedded = linear(tape, patches, &l.patch_projection)?;
        let tokens = tape.concat(&[bound[l.class_token], embedded], 0)?;
        let mut x = tape.add(tokens, bound[l.position_embedding])?;

        let head_dim = d / c.heads;
        let att_scale = T::of(1.0 / (head_dim as f64).sqrt());
        for b in &l.blocks {
            let h = tape.layer_norm(x, bound[b.norm1.gain], bound[b.norm1.bias], eps)?;
            let qkv = linear(tape, h, &b.qkv)?;
            let mut heads = Vec::with_capacity(c.heads);
            for hd in 0..c.heads {
                let at = hd * head_dim;
                let q = tape.slice(qkv, 1, at, at + head_dim)?;
                let k = tape.slice(qkv, 1, d + at, d + at + head_dim)?;
                let v = tape.slice(qkv, 1, 2 * d + at, 2 * d + at + head_dim)?;
                let kt = tape.transpose(k)?;
                let scores = tape.matmul(q, kt)?;
                let scores = tape.scale(scores, att_scale)?;
                let attn = tape.softmax(scores, 1)?;
                heads.push(tape.matmul(attn, v)?);
            }
            let merged = tape.concat(&heads, 1)?;
            let attn_out = linear(tape, merged, &b.attn_out)?;
            x = tape.add(x, attn_out)?;

            let h = tape.layer_norm(x, bound[b.norm2.gain], bound[b.norm2.bias], eps)?;
            let h = linear(tape, h, &b.fc1)?;
            let h = tape.activation(h, c.activation)?;
            let h = linear(tape, h, &b.fc2)?;
            x = tape.add(x, h)?;
        }

        let cls_out = tape.slice(x, 0, 0, 1)?;
        let cls_logits = linear(tape, cls_out, &l.mlp_head)?;
        let p_cls = tape.softmax(cls_logits, 1)?;

        let patch_out = tape.slice(x, 0, 1, n + 1)?;
        let (aggregated, patch_weights) = aggregate_patches(tape, patch_out, &self.agg_head_vars(bound))?;
        let agg_logits = linear(tape, aggregated, &l.final_fc)?;
        let p_agg = tape.softmax(agg_logits, 1)?;

        Ok(ForwardVars {
            p_cls,
            p_agg,
            patch_weights,
        })
    }

    /// Inference-only forward pass.
    pub fn forward(&self, image: &[T]) -> Result<HeadOutputs<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let out = self.forward_on(&mut tape, &bound, image)?;
        let pair = |v: Var| {
            let d = tape.value(v).data();
            [d[0], d[1]]
        };
        Ok(HeadOutputs {
            p_cls: pair(out.p_cls),
            p_agg: pair(out.p_agg),
            patch_weights: tape.value(out.patch_weights).data().to_vec(),
        })
    }

    /// Positive-class probability averaged over both heads.
    pub fn predict(&self, image: &[T]) -> Result<T> {
        Ok(self.forward(image)?.predict())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            image_height: 32,
            image_width: 32,
            patch_size: 16,
            embed_dim: 16,
            depth: 2,
            heads: 2,
            agg_hidden: 16,
            mlp_ratio: 4,
            activation: Activation::Relu,
        }
    }

    #[test]
    fn config_validation() {
        let mut c = tiny();
        c.image_height = 40;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.heads = 3;
        assert!(c.validate().is_err());
        assert!(tiny().validate().is_ok());
    }

    #[test]
    fn parameter_count_is_pure_function_of_config() {
        for c in [tiny(), ModelConfig::default(), ModelConfig::full_scale()] {
            let m = BrighteyeModel::<f32>::init(c.clone(), 1).unwrap();
            assert_eq!(m.params.numel(), c.parameter_count());
        }
    }

    #[test]
    fn patchify_shapes() {
        let img = vec![0.5f32; 16 * 16 * 3];
        assert_eq!(patchify(&img, 16, 16, 16).unwrap().shape(), &[1, 768]);
        let img = vec![0.0f32; 512 * 512 * 3];
        assert_eq!(patchify(&img, 512, 512, 16).unwrap().shape(), &[1024, 768]);
        assert!(patchify(&vec![0.0f32; 20 * 16 * 3], 20, 16, 16).is_err());
    }

    #[test]
    fn patch_rows_follow_documented_layout() {
        let (h, w, p) = (4, 6, 2);
        let img: Vec<f64> = (0..h * w * 3).map(|i| i as f64).collect();
        let m = patchify(&img, h, w, p).unwrap();
        // patch 4 = patch row 1, patch column 1 → pixel (2, 2) first
        let first = m.at(4, 0) as usize;
        assert_eq!(first, (2 * w + 2) * 3);
        // second value is channel G of the same pixel
        assert_eq!(m.at(4, 1) as usize, first + 1);
        // fourth value is the next pixel to the right
        assert_eq!(m.at(4, 3) as usize, first + 3);
    }

    #[test]
    fn position_row_zero_is_class_slot() {
        let m = BrighteyeModel::<f32>::init(tiny(), 3).unwrap();
        let pos = m.params.by_name("position_embedding").unwrap();
        assert_eq!(pos.value.shape(), &[tiny().num_patches() + 1, 16]);
    }

    #[test]
    fn forward_probabilities_are_normalized() {
        let m = BrighteyeModel::<f64>::init(tiny(), 5).unwrap();
        let img: Vec<f64> = (0..32 * 32 * 3).map(|i| ((i * 37) % 255) as f64 / 255.0).collect();
        let out = m.forward(&img).unwrap();
        assert!((out.p_cls[0] + out.p_cls[1] - 1.0).abs() < 1e-6);
        assert!((out.p_agg[0] + out.p_agg[1] - 1.0).abs() < 1e-6);
        let s: f64 = out.patch_weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert_eq!(out.patch_weights.len(), 4);
        assert_eq!(m.forward(&img).unwrap(), out);
    }

    #[test]
    fn forward_rejects_wrong_image_size() {
        let m = BrighteyeModel::<f32>::init(tiny(), 5).unwrap();
        assert!(m.forward(&[0.0; 10]).is_err());
    }

    #[test]
    fn predict_averages_heads() {
        let out = HeadOutputs {
            p_cls: [0.2, 0.8],
            p_agg: [0.4, 0.6],
            patch_weights: vec![1.0],
        };
        assert!((out.predict() - 0.7f64).abs() < 1e-15);
        let same = HeadOutputs {
            p_cls: [0.3, 0.7],
            p_agg: [0.3, 0.7],
            patch_weights: vec![1.0],
        };
        assert_eq!(same.predict(), 0.7);
    }

    #[test]
    fn from_params_rejects_foreign_layout() {
        let m = BrighteyeModel::<f32>::init(tiny(), 1).unwrap();
        let mut other = tiny();
        other.depth = 1;
        assert!(BrighteyeModel::from_params(other, m.params.clone()).is_err());
        assert!(BrighteyeModel::from_params(tiny(), m.params).is_ok());
    }
}
