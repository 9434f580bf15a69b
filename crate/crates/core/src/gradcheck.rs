//! The finite-difference gradient suite: every differentiable tape op on
//! small random shapes, one full decoder layer, face embedding, and the whole
//! model on a two-face mesh.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::mesh::RawMesh;
use crate::model::layers::{Block, BlockShape, Builder};
use crate::model::{Example, FaceModel, HeadKind, ModelConfig, PoolingMode, QueryMode};
use crate::prep::{normalize, normalize_and_quantize, order_faces, OrderMode};
use crate::rng;
use crate::sampling::sample_surface;
use crate::tensor::gradcheck::{check_inputs, check_inputs_with_params, check_params, weighted_sum};
use crate::tensor::{AttentionSpec, ParamStore, Scalar, Tape, Tensor, Var};
use crate::tokenizer::encode;

/// Finite-difference step.
pub const EPS: f64 = 1e-5;
/// Tolerance for single ops and layers.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Tolerance for the sampled end-to-end check.
pub const MODEL_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub relative_error: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.relative_error < self.tolerance
    }
}

fn random(shape: &[usize], r: &mut rng::Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

type OpFn = fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>;

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    fn mask() -> Vec<bool> {
        // Second batch item hides its last two keys.
        vec![true, true, true, true, true, true, false, false]
    }
    vec![
        ("add", vec![vec![3, 4], vec![3, 4]], |t, v| t.add(v[0], v[1])),
        ("sub", vec![vec![3, 4], vec![3, 4]], |t, v| t.sub(v[0], v[1])),
        ("mul", vec![vec![3, 4], vec![3, 4]], |t, v| t.mul(v[0], v[1])),
        ("scale", vec![vec![2, 5]], |t, v| Ok(t.scale(v[0], -1.7))),
        ("add_row", vec![vec![4, 3], vec![3]], |t, v| t.add_row(v[0], v[1])),
        ("matmul", vec![vec![3, 4], vec![4, 5]], |t, v| t.matmul(v[0], v[1])),
        ("linear", vec![vec![2, 3, 4], vec![4, 5], vec![5]], |t, v| t.linear(v[0], v[1], Some(v[2]))),
        ("linear_no_bias", vec![vec![3, 4], vec![4, 2]], |t, v| t.linear(v[0], v[1], None)),
        ("gelu", vec![vec![4, 5]], |t, v| Ok(t.gelu(v[0]))),
        ("layer_norm", vec![vec![3, 6], vec![6], vec![6]], |t, v| t.layer_norm(v[0], v[1], v[2])),
        ("softmax", vec![vec![3, 5]], |t, v| Ok(t.softmax(v[0]))),
        ("embedding_lookup", vec![vec![5, 3]], |t, v| t.gather_rows(v[0], &[4, 0, 4, 2, 1, 1])),
        ("concat_cols", vec![vec![3, 2], vec![3, 4]], |t, v| t.concat_cols(&[v[0], v[1]])),
        ("concat_rows", vec![vec![2, 3], vec![4, 3]], |t, v| t.concat_rows(&[v[0], v[1]])),
        ("slice_rows", vec![vec![5, 3]], |t, v| t.slice_rows(v[0], 1, 3)),
        ("slice_cols", vec![vec![3, 5]], |t, v| t.slice_cols(v[0], 2, 2)),
        ("reshape", vec![vec![3, 4]], |t, v| t.reshape(v[0], &[2, 6])),
        ("prefix_sum_exclusive", vec![vec![6, 2]], |t, v| t.group_prefix_sum(v[0], 3, true)),
        ("prefix_sum_inclusive", vec![vec![6, 2]], |t, v| t.group_prefix_sum(v[0], 3, false)),
        ("slot_linear", vec![vec![6, 4], vec![3, 4, 5], vec![3, 5]], |t, v| t.slot_linear(v[0], v[1], v[2])),
        ("attention", vec![vec![6, 4], vec![8, 4], vec![8, 4]], |t, v| {
            t.attention(v[0], v[1], v[2], &AttentionSpec::new(2, 2))
        }),
        ("attention_causal", vec![vec![8, 4], vec![8, 4], vec![8, 4]], |t, v| {
            t.attention(v[0], v[1], v[2], &AttentionSpec::new(2, 2).causal())
        }),
        ("attention_masked", vec![vec![8, 4], vec![8, 4], vec![8, 4]], |t, v| {
            t.attention(v[0], v[1], v[2], &AttentionSpec::new(1, 2).causal().with_mask(mask()))
        }),
        ("attention_shared_input", vec![vec![6, 4]], |t, v| {
            t.attention(v[0], v[0], v[0], &AttentionSpec::new(2, 2).causal())
        }),
        ("cross_entropy", vec![vec![4, 6]], |t, v| t.cross_entropy(v[0], &[0, 5, 2, 2], None)),
        ("cross_entropy_weighted", vec![vec![3, 5]], |t, v| t.cross_entropy(v[0], &[4, 0, 1], Some(&[0.5, 0.2, 1.3]))),
        ("sum", vec![vec![3, 4]], |t, v| Ok(t.sum(v[0]))),
        ("mean", vec![vec![3, 4]], |t, v| Ok(t.mean(v[0]))),
    ]
}

/// Every differentiable op against central differences, one outcome per
/// op and input.
pub fn op_checks(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for (i, (name, shapes, f)) in op_cases().into_iter().enumerate() {
        let mut r = rng::derive(seed, &[i as u64]);
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random(s, &mut r)).collect();
        let weights_seed = rng::mix(seed, 1000 + i as u64);
        let errors = check_inputs(&inputs, EPS, |tape, vars| {
            let y = f(tape, vars)?;
            if tape.value(y).numel() == 1 {
                Ok(y)
            } else {
                weighted_sum(tape, y, weights_seed)
            }
        })?;
        for (j, e) in errors.into_iter().enumerate() {
            let name = if shapes.len() == 1 { String::from(name) } else { format!("{name}[{j}]") };
            out.push(CheckOutcome { name, relative_error: e, tolerance: OP_TOLERANCE });
        }
    }
    Ok(out)
}

/// Replaces every parameter with `N(0, 0.5²)` noise (layer-norm gains
/// around 1) so zero-initialized projections do not hide gradients.
pub fn randomize<T: Scalar>(store: &mut ParamStore<T>, seed: u64) {
    let mut r = rng::from_seed(seed);
    for p in store.iter_mut() {
        let gain = p.name.ends_with(".gamma");
        for x in p.value.data_mut() {
            let z: f64 = r.sample(StandardNormal);
            *x = T::from_f64(if gain { 1.0 + 0.3 * z } else { 0.5 * z });
        }
    }
}

/// One decoder layer (causal self-attention, cross-attention, MLP) with a
/// padded batch: gradients w.r.t. its inputs, the latent source and all of
/// its parameters.
pub fn decoder_layer_checks(seed: u64) -> Result<Vec<CheckOutcome>> {
    let (dim, src_dim, heads, batch, len, k) = (8, 6, 2, 2, 4, 3);
    let mut store = ParamStore::<f64>::new();
    let mut bld = Builder { store: &mut store, rng: rng::from_seed(seed) };
    let block = Block::new(
        &mut bld,
        "layer",
        BlockShape { dim, cross_source: Some(src_dim), self_attention: true, ffn_mult: 2 },
    );
    randomize(&mut store, seed);
    let self_spec = AttentionSpec::new(heads, batch).causal().with_mask(vec![true, true, true, true, true, true, true, false]);
    let cross_spec = AttentionSpec::new(heads, batch);
    let mut r = rng::derive(seed, &[1]);
    let x = random(&[batch * len, dim], &mut r);
    let c = random(&[batch * k, src_dim], &mut r);
    let wseed = rng::mix(seed, 2);

    let mut out = Vec::new();
    // Input gradients, parameters held fixed.
    let errors = check_inputs_with_params(&store, &[x.clone(), c.clone()], EPS, |tape, v| {
        let y = block.forward(tape, v[0], &self_spec, Some((v[1], &cross_spec)))?;
        weighted_sum(tape, y, wseed)
    })?;
    for (name, e) in ["decoder_layer.input", "decoder_layer.latents"].into_iter().zip(errors) {
        out.push(CheckOutcome { name: name.into(), relative_error: e, tolerance: OP_TOLERANCE });
    }
    let params = check_params(&mut store, 1.0, seed, EPS, |tape| {
        let xv = tape.constant(x.clone());
        let cv = tape.constant(c.clone());
        let y = block.forward(tape, xv, &self_spec, Some((cv, &cross_spec)))?;
        weighted_sum(tape, y, wseed)
    })?;
    out.push(CheckOutcome {
        name: "decoder_layer.params".into(),
        relative_error: params.relative_error,
        tolerance: OP_TOLERANCE,
    });
    Ok(out)
}

/// A model small enough to finite-difference: every width is a few units.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        resolution: 8,
        d_model: 8,
        d_latent: 8,
        bottleneck_dim: 4,
        latent_tokens: 4,
        encoder_layers: 1,
        decoder_layers: 1,
        heads: 2,
        max_faces: 4,
        points: 16,
        freq_bands: 2,
        coord_embed_dim: 3,
        head_dim: 8,
        ffn_mult: 2,
        ..ModelConfig::default()
    }
}

/// Two triangles sharing an edge, folded so the normals differ.
pub fn two_face_mesh() -> RawMesh {
    RawMesh {
        vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.1], [0.0, 1.0, 0.0], [1.0, 1.0, 0.8]],
        faces: vec![[0, 1, 2], [1, 3, 2]],
    }
}

/// The training example for [`two_face_mesh`] under `cfg`.
pub fn two_face_example(cfg: &ModelConfig, seed: u64) -> Result<Example> {
    let mesh = two_face_mesh();
    let q = normalize_and_quantize(&mesh, cfg.resolution)?;
    let tokens = encode(&order_faces(&q, OrderMode::Zyx))?;
    let (normalized, _) = normalize(&mesh)?;
    let cloud = sample_surface(&normalized, cfg.points, seed)?;
    Ok(Example { cloud, tokens })
}

/// Face embedding (slot tables, MLP, BOS/EOS and positions) w.r.t. all of
/// its parameters.
pub fn embedding_check(seed: u64) -> Result<CheckOutcome> {
    let cfg = toy_config();
    let (model, mut store) = FaceModel::new::<f64>(cfg.clone(), seed)?;
    randomize(&mut store, seed);
    let example = two_face_example(&cfg, seed)?;
    let wseed = rng::mix(seed, 3);
    let check = check_params(&mut store, 1.0, seed, EPS, |tape| {
        let e = model.embed_faces(tape, &example.tokens.tokens)?;
        weighted_sum(tape, e, wseed)
    })?;
    Ok(CheckOutcome { name: "face_embedding".into(), relative_error: check.relative_error, tolerance: OP_TOLERANCE })
}

/// The full teacher-forced loss w.r.t. a sampled 1% of the parameters, for
/// the default model and each head, pooling and query variant.
pub fn end_to_end_checks(seed: u64) -> Result<Vec<CheckOutcome>> {
    let base = toy_config();
    let variants = [
        ("model", base.clone()),
        ("model.parallel_head", ModelConfig { head: HeadKind::Parallel, ..base.clone() }),
        ("model.attention_head", ModelConfig { head: HeadKind::Attention, ..base.clone() }),
        ("model.continuous_pooling", ModelConfig { pooling: PoolingMode::Continuous, ..base.clone() }),
        ("model.learnable_queries", ModelConfig { queries: QueryMode::Learnable, ..base }),
    ];
    let mut out = Vec::new();
    for (name, cfg) in variants {
        let (model, mut store) = FaceModel::new::<f64>(cfg.clone(), seed)?;
        randomize(&mut store, seed);
        let example = two_face_example(&cfg, seed)?;
        let check = check_params(&mut store, 0.01, seed, EPS, |tape| {
            Ok(model.forward_loss(tape, &[&example], None)?.loss)
        })?;
        out.push(CheckOutcome { name: name.into(), relative_error: check.relative_error, tolerance: MODEL_TOLERANCE });
    }
    Ok(out)
}

/// Everything above, in order.
pub fn run_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = op_checks(seed)?;
    out.extend(decoder_layer_checks(seed)?);
    out.push(embedding_check(seed)?);
    out.extend(end_to_end_checks(seed)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let outcomes = run_suite(7).unwrap();
        let failed: Vec<_> = outcomes.iter().filter(|o| !o.passed()).collect();
        assert!(failed.is_empty(), "{failed:#?}");
    }

    #[test]
    fn toy_example_has_two_faces() {
        let ex = two_face_example(&toy_config(), 0).unwrap();
        assert_eq!(ex.tokens.face_count(), 2);
        assert!(ex.tokens.has_eos());
    }
}
