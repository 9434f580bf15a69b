//! Shape encoder, face decoder and coordinate heads.
//!
//! The model is split into an immutable architecture ([`FaceModel`], which
//! only holds parameter handles) and a [`ParamStore`] with the values. The
//! same architecture runs in `f32` for training and in `f64` for gradient
//! checks.

use alloc::vec;
use alloc::vec::Vec;

mod config;
mod decoder;
mod encoder;
mod head;
pub(crate) mod layers;

pub use config::{HeadKind, ModelConfig, PoolingMode, QueryMode};
pub use decoder::InputRow;
pub use encoder::point_features;

use decoder::{FaceDecoder, FacePooling};
use encoder::ShapeEncoder;
use head::CoordinateHead;
use layers::Builder;

use crate::error::{shape_err, Error, Result};
use crate::prep::{NormRecord, QuantizedMesh};
use crate::rng;
use crate::sampling::PointCloud;
use crate::tensor::{ParamStore, Scalar, Tape, Var};
use crate::tokenizer::{decode, FaceToken, FaceTokenSequence, SLOTS};

#[derive(Debug, Clone)]
pub struct FaceModel {
    config: ModelConfig,
    encoder: ShapeEncoder,
    pooling: FacePooling,
    decoder: FaceDecoder,
    head: CoordinateHead,
}

/// A teacher-forcing example: a surface sample and the token stream (with
/// EOS) of the mesh it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub cloud: PointCloud,
    pub tokens: FaceTokenSequence,
}

/// Loss and teacher-forced statistics of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    pub loss: Var,
    pub logits: Var,
    /// Slots whose argmax equals the target.
    pub correct: usize,
    /// Scored slots (nine per content or EOS face).
    pub scored: usize,
}

impl ForwardOutput {
    pub fn slot_accuracy(&self) -> f64 {
        self.correct as f64 / self.scored.max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Slot 0 of a face decoded to EOS.
    Eos,
    /// The face limit was reached first.
    Limit,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::Eos => "eos",
            StopReason::Limit => "limit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    /// Generated tokens; ends in EOS when `stop` is [`StopReason::Eos`].
    pub tokens: FaceTokenSequence,
    pub mesh: QuantizedMesh,
    pub stop: StopReason,
    pub degenerate_dropped: usize,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl FaceModel {
    /// Builds the architecture and freshly initialized parameters.
    pub fn new<T: Scalar>(config: ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut bld = Builder { store: &mut store, rng: rng::from_seed(seed) };
        let encoder = ShapeEncoder::new(&mut bld, &config);
        let pooling = FacePooling::new(&mut bld, &config);
        let decoder = FaceDecoder::new(&mut bld, &config);
        let head = CoordinateHead::new(&mut bld, &config);
        Ok((Self { config, encoder, pooling, decoder, head }, store))
    }

    /// Rebuilds the architecture for `config` and checks that `store` has
    /// exactly its parameters (names and shapes, in order).
    pub fn for_store<T: Scalar>(config: ModelConfig, store: &ParamStore<T>) -> Result<Self> {
        let (model, template) = Self::new::<T>(config, 0)?;
        if template.len() != store.len() {
            return Err(shape_err!("expected {} parameters, found {}", template.len(), store.len()));
        }
        for ((_, want), (_, got)) in template.iter().zip(store.iter()) {
            if want.name != got.name || want.value.shape() != got.value.shape() {
                return Err(shape_err!(
                    "parameter {} {:?} does not match {} {:?}",
                    got.name,
                    got.value.shape(),
                    want.name,
                    want.value.shape()
                ));
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Latent set `[clouds * k, d_latent]`. `pinned_queries` fixes the FPS
    /// query indices per cloud.
    pub fn encode_shape<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        clouds: &[&PointCloud],
        pinned_queries: Option<&[Vec<usize>]>,
    ) -> Result<Var> {
        self.encoder.forward(tape, &self.config, clouds, pinned_queries)
    }

    /// Decoder inputs for a prefix: BOS followed by one row per token
    /// (`[prefix + 1, d_model]`).
    pub fn embed_faces<T: Scalar>(&self, tape: &mut Tape<'_, T>, prefix: &[FaceToken]) -> Result<Var> {
        if prefix.len() > self.config.max_faces {
            return Err(Error::TooManyFaces { len: prefix.len(), max: self.config.max_faces });
        }
        let r = self.config.resolution;
        let mut rows = vec![InputRow::Bos];
        rows.extend(prefix.iter().map(|t| if t.is_eos(r) { InputRow::Eos } else { InputRow::Face(t.slots) }));
        let positions: Vec<usize> = (0..rows.len()).collect();
        self.pooling.forward(tape, &self.config, &rows, &positions)
    }

    /// Embeds arbitrary rows at the given positions.
    pub fn embed_rows<T: Scalar>(&self, tape: &mut Tape<'_, T>, rows: &[InputRow], positions: &[usize]) -> Result<Var> {
        if let Some(&p) = positions.iter().max() {
            if p > self.config.max_faces {
                return Err(Error::TooManyFaces { len: p, max: self.config.max_faces });
            }
        }
        self.pooling.forward(tape, &self.config, rows, positions)
    }

    /// Latent face vectors `[batch * len, d_model]` from decoder inputs.
    pub fn decode_faces<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        inputs: Var,
        latents: Var,
        batch: usize,
        key_mask: Option<Vec<bool>>,
    ) -> Result<Var> {
        self.decoder.forward(tape, &self.config, inputs, latents, batch, key_mask)
    }

    /// Slot logits `[rows * 9, vocab]`; see the coordinate head contract:
    /// slot `j` of row `r` only reads slots `< j` of `tokens[r]`.
    pub fn head_logits<T: Scalar>(&self, tape: &mut Tape<'_, T>, h: Var, tokens: &[FaceToken]) -> Result<Var> {
        if tape.shape(h).first() != Some(&tokens.len()) {
            return Err(shape_err!("{} latent rows for {} tokens", tape.value(h).rows(), tokens.len()));
        }
        self.head.forward(tape, &self.config, h, tokens)
    }

    /// Teacher-forced loss: decoder input is BOS plus the content faces,
    /// targets are the content faces plus EOS. Per mesh the nine slot
    /// cross-entropies are summed and averaged over its `N + 1` scored faces;
    /// the batch loss is the mean over meshes. Sequences are padded to the
    /// longest one (or to `pad_to` positions) and padding is masked.
    pub fn forward_loss<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        batch: &[&Example],
        pad_to: Option<usize>,
    ) -> Result<ForwardOutput> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let r = self.config.resolution;
        let mut lens = Vec::with_capacity(batch.len());
        for ex in batch {
            if ex.tokens.resolution != r {
                return Err(Error::InvalidParameter(alloc::format!(
                    "tokens at resolution {} for a model at {r}",
                    ex.tokens.resolution
                )));
            }
            ex.tokens.validate()?;
            if !ex.tokens.has_eos() {
                return Err(Error::MalformedTokens("training sequence without EOS".into()));
            }
            let n = ex.tokens.len() - 1;
            if n > self.config.max_faces {
                return Err(Error::TooManyFaces { len: n, max: self.config.max_faces });
            }
            lens.push(n + 1);
        }
        let mut len = *lens.iter().max().unwrap();
        if let Some(p) = pad_to {
            if p < len || p > self.config.max_faces + 1 {
                return Err(shape_err!("cannot pad {len} positions to {p}"));
            }
            len = p;
        }
        let b = batch.len();
        let mut rows = Vec::with_capacity(b * len);
        let mut positions = Vec::with_capacity(b * len);
        let mut mask = Vec::with_capacity(b * len);
        let mut valid_rows = Vec::new();
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        for (bi, ex) in batch.iter().enumerate() {
            let content = ex.tokens.content();
            let scored = lens[bi];
            let w = T::one() / T::from_usize(b * scored);
            for p in 0..len {
                positions.push(if p < scored { p } else { 0 });
                mask.push(p < scored);
                rows.push(match p {
                    0 => InputRow::Bos,
                    p if p < scored => InputRow::Face(content[p - 1].slots),
                    _ => InputRow::Pad,
                });
                if p < scored {
                    valid_rows.push(bi * len + p);
                    targets.push(ex.tokens.tokens[p]);
                    weights.extend(core::iter::repeat_n(w, SLOTS));
                }
            }
        }
        let clouds: Vec<&PointCloud> = batch.iter().map(|e| &e.cloud).collect();
        let latents = self.encode_shape(tape, &clouds, None)?;
        let x = self.pooling.forward(tape, &self.config, &rows, &positions)?;
        let all_valid = mask.iter().all(|&m| m);
        let h = self.decode_faces(tape, x, latents, b, (!all_valid).then_some(mask))?;
        let h = if all_valid { h } else { tape.gather_rows(h, &valid_rows)? };
        let logits = self.head_logits(tape, h, &targets)?;
        let target_ids: Vec<usize> = targets.iter().flat_map(|t| t.slots.iter().map(|&c| c as usize)).collect();
        let loss = tape.cross_entropy(logits, &target_ids, Some(&weights))?;

        let lt = tape.value(logits);
        let correct = target_ids.iter().enumerate().filter(|&(i, &t)| argmax(lt.row(i)) == t).count();
        Ok(ForwardOutput { loss, logits, correct, scored: target_ids.len() })
    }

    /// Greedy decoding from a point cloud: one decoder pass per face over the
    /// current prefix, then nine slot steps with each argmax fed back. Slot 0
    /// may pick EOS (which ends the mesh); later slots only pick coordinates.
    pub fn reconstruct<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        cloud: &PointCloud,
        max_faces: usize,
    ) -> Result<Reconstruction> {
        let cfg = &self.config;
        let r = cfg.resolution;
        let limit = max_faces.min(cfg.max_faces);
        let latents = {
            let mut tape = Tape::inference(store);
            let v = self.encode_shape(&mut tape, &[cloud], None)?;
            tape.value(v).clone()
        };
        let mut tokens: Vec<FaceToken> = Vec::new();
        let mut stop = StopReason::Limit;
        // At the limit one more position is decoded, only to see whether
        // the model closes the mesh there. A zero limit decodes nothing.
        if limit > 0 {
            loop {
                let mut tape = Tape::inference(store);
                let c = tape.constant(latents.clone());
                let x = self.embed_faces(&mut tape, &tokens)?;
                let h = self.decode_faces(&mut tape, x, c, 1, None)?;
                let h = tape.slice_rows(h, tokens.len(), 1)?;
                let token = self.decode_slots(&mut tape, h)?;
                if token.is_eos(r) {
                    stop = StopReason::Eos;
                    tokens.push(token);
                    break;
                }
                if tokens.len() == limit {
                    break;
                }
                tokens.push(token);
            }
        }
        let seq = FaceTokenSequence { tokens, resolution: r };
        let (mesh, degenerate_dropped) = if seq.face_count() == 0 {
            (QuantizedMesh { resolution: r, vertices: Vec::new(), faces: Vec::new(), norm: NormRecord::IDENTITY }, 0)
        } else {
            let d = decode(&seq)?;
            (d.mesh, d.degenerate_dropped)
        };
        Ok(Reconstruction { tokens: seq, mesh, stop, degenerate_dropped })
    }

    /// Picks the nine slots of one face from its latent row `h` (`[1, d]`).
    fn decode_slots<T: Scalar>(&self, tape: &mut Tape<'_, T>, h: Var) -> Result<FaceToken> {
        let r = self.config.resolution;
        let mut token = FaceToken { slots: [0; SLOTS] };
        for j in 0..SLOTS {
            let logits = self.head_logits(tape, h, &[token])?;
            let row = tape.value(logits).row(j);
            let pick = if j == 0 { argmax(row) } else { argmax(&row[..r as usize]) };
            token.slots[j] = pick as u16;
            if j == 0 && pick as u32 == r {
                return Ok(FaceToken::eos(r));
            }
        }
        Ok(token)
    }
}

/// Casts every parameter to another precision.
pub fn cast_store<T: Scalar, U: Scalar>(store: &ParamStore<T>) -> ParamStore<U> {
    let mut out = ParamStore::new();
    for (_, p) in store.iter() {
        out.add(p.name.clone(), p.value.cast::<U>(), p.decay);
    }
    out
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{randomize, toy_config, two_face_example};
    use crate::prep::{normalize, normalize_and_quantize, order_faces, OrderMode};
    use crate::sampling::sample_surface;
    use crate::synth::{generate, SyntheticKind, SyntheticSpec};
    use crate::tensor::Tensor;
    use crate::tokenizer::encode;

    fn random_model(cfg: ModelConfig, seed: u64) -> (FaceModel, ParamStore<f64>) {
        let (model, mut store) = FaceModel::new::<f64>(cfg, seed).unwrap();
        randomize(&mut store, seed + 1);
        (model, store)
    }

    fn example(cfg: &ModelConfig, kind: SyntheticKind, seed: u64) -> Example {
        let mesh = generate(&SyntheticSpec::new(kind, seed)).unwrap();
        let q = normalize_and_quantize(&mesh, cfg.resolution).unwrap();
        let tokens = encode(&order_faces(&q, OrderMode::Zyx)).unwrap();
        let (n, _) = normalize(&mesh).unwrap();
        Example { cloud: sample_surface(&n, cfg.points, seed).unwrap(), tokens }
    }

    fn small_config() -> ModelConfig {
        ModelConfig { max_faces: 24, ..toy_config() }
    }

    #[test]
    fn untrained_loss_is_uniform_over_vocabulary() {
        for cfg in [toy_config(), ModelConfig { head: HeadKind::Parallel, ..toy_config() }] {
            let (model, store) = FaceModel::new::<f64>(cfg.clone(), 3).unwrap();
            let ex = two_face_example(&cfg, 0).unwrap();
            let mut tape = Tape::with_params(&store);
            let out = model.forward_loss(&mut tape, &[&ex], None).unwrap();
            let loss = tape.value(out.loss).item().unwrap();
            let expected = 9.0 * ((cfg.resolution + 1) as f64).ln();
            assert!((loss - expected).abs() < 1e-12 * expected, "{loss} vs {expected}");
        }
    }

    #[test]
    fn embedding_has_one_row_per_token_plus_bos() {
        let cfg = toy_config();
        let (model, store) = random_model(cfg.clone(), 0);
        let ex = two_face_example(&cfg, 0).unwrap();
        for p in 0..=ex.tokens.len() {
            let mut tape = Tape::inference(&store);
            let e = model.embed_faces(&mut tape, &ex.tokens.tokens[..p]).unwrap();
            assert_eq!(tape.shape(e), &[p + 1, cfg.d_model]);
        }
    }

    #[test]
    fn identical_faces_differ_only_by_position() {
        let cfg = toy_config();
        let (model, store) = random_model(cfg.clone(), 1);
        let face = FaceToken { slots: [1, 2, 3, 4, 5, 6, 7, 0, 1] };
        let mut tape = Tape::inference(&store);
        let e = model.embed_faces(&mut tape, &[face, face]).unwrap();
        let pos = store.get(store.find("pooling.positions").unwrap()).value.clone();
        let v = tape.value(e);
        for c in 0..cfg.d_model {
            let a = v.row(1)[c] - pos.row(1)[c];
            let b = v.row(2)[c] - pos.row(2)[c];
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn too_long_prefix_is_rejected() {
        let cfg = toy_config();
        let (model, store) = random_model(cfg.clone(), 0);
        let face = FaceToken { slots: [0; 9] };
        let mut tape = Tape::inference(&store);
        let err = model.embed_faces(&mut tape, &vec![face; cfg.max_faces + 1]).unwrap_err();
        assert!(matches!(err, Error::TooManyFaces { .. }));
    }

    #[test]
    fn decoder_is_causal_at_every_prefix() {
        let cfg = small_config();
        let (model, store) = random_model(cfg.clone(), 2);
        let ex = example(&cfg, SyntheticKind::Icosphere { subdiv: 0 }, 4);
        let toks = &ex.tokens.tokens;
        let run = |p: usize| {
            let mut tape = Tape::inference(&store);
            let c = model.encode_shape(&mut tape, &[&ex.cloud], None).unwrap();
            let x = model.embed_faces(&mut tape, &toks[..p]).unwrap();
            let h = model.decode_faces(&mut tape, x, c, 1, None).unwrap();
            tape.value(h).clone()
        };
        let full = run(toks.len());
        for p in 0..toks.len() {
            let part = run(p);
            assert_eq!(part.data(), &full.data()[..part.numel()], "prefix {p}");
        }
    }

    #[test]
    fn slot_logits_only_see_earlier_slots() {
        for head in [HeadKind::CausalMlp, HeadKind::Attention, HeadKind::Parallel] {
            let cfg = ModelConfig { head, ..toy_config() };
            let (model, store) = random_model(cfg.clone(), 5);
            let h = Tensor::from_fn(&[1, cfg.d_model], |i| (i as f64 * 0.37).sin());
            let base = FaceToken { slots: [3, 1, 4, 1, 5, 2, 6, 5, 3] };
            let logits = |t: FaceToken| {
                let mut tape = Tape::inference(&store);
                let hv = tape.constant(h.clone());
                let l = model.head_logits(&mut tape, hv, &[t]).unwrap();
                tape.value(l).clone()
            };
            let reference = logits(base);
            for j in 0..SLOTS {
                let mut changed = base;
                changed.slots[j] = (base.slots[j] + 1) % cfg.resolution as u16;
                let out = logits(changed);
                let vocab = cfg.vocab_size();
                for s in 0..SLOTS {
                    let same = out.row(s) == reference.row(s);
                    if s <= j || head == HeadKind::Parallel {
                        assert!(same, "{head:?}: slot {s} changed when slot {j} input changed");
                    } else if head != HeadKind::Parallel && s == j + 1 {
                        assert!(!same, "{head:?}: slot {s} ignores slot {j}");
                    }
                    assert_eq!(out.row(s).len(), vocab);
                }
            }
        }
    }

    #[test]
    fn loss_is_invariant_to_padding() {
        let cfg = small_config();
        let (model, store) = random_model(cfg.clone(), 6);
        let ex = two_face_example(&cfg, 1).unwrap();
        let loss = |pad: Option<usize>| {
            let mut tape = Tape::with_params(&store);
            let out = model.forward_loss(&mut tape, &[&ex], pad).unwrap();
            tape.value(out.loss).item().unwrap()
        };
        let plain = loss(None);
        for pad in [4, 9, cfg.max_faces + 1] {
            assert!((loss(Some(pad)) - plain).abs() < 1e-12 * plain.abs(), "pad {pad}");
        }
    }

    #[test]
    fn batch_loss_is_mean_of_mesh_losses() {
        let cfg = small_config();
        let (model, store) = random_model(cfg.clone(), 7);
        let a = two_face_example(&cfg, 2).unwrap();
        let b = example(&cfg, SyntheticKind::Icosphere { subdiv: 0 }, 3);
        let loss = |batch: &[&Example]| {
            let mut tape = Tape::with_params(&store);
            let out = model.forward_loss(&mut tape, batch, None).unwrap();
            tape.value(out.loss).item().unwrap()
        };
        let both = loss(&[&a, &b]);
        let mean = 0.5 * (loss(&[&a]) + loss(&[&b]));
        assert!((both - mean).abs() < 1e-10 * mean, "{both} vs {mean}");
    }

    #[test]
    fn permuted_points_with_pinned_queries_give_same_latents() {
        let cfg = small_config();
        let (model, store) = random_model(cfg.clone(), 8);
        let ex = example(&cfg, SyntheticKind::Icosphere { subdiv: 1 }, 5);
        let queries = crate::sampling::fps(&ex.cloud.positions, cfg.latent_tokens, 0).unwrap();
        let m = ex.cloud.len();
        let perm: Vec<usize> = (0..m).map(|i| (i * 7 + 3) % m).collect();
        let permuted = ex.cloud.permuted(&perm);
        // permuted[i] = cloud[perm[i]], so original index q sits at perm⁻¹(q).
        let mut inverse = vec![0; m];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let moved: Vec<usize> = queries.iter().map(|&q| inverse[q]).collect();
        let latents = |cloud: &PointCloud, pinned: Vec<usize>| {
            let mut tape = Tape::inference(&store);
            let c = model.encode_shape(&mut tape, &[cloud], Some(&[pinned])).unwrap();
            tape.value(c).clone()
        };
        let a = latents(&ex.cloud, queries);
        let b = latents(&permuted, moved);
        assert_eq!(a.shape(), &[cfg.latent_tokens, cfg.d_latent]);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn forward_loss_rejects_bad_batches() {
        let cfg = toy_config();
        let (model, store) = random_model(cfg.clone(), 0);
        let mut tape = Tape::with_params(&store);
        assert!(matches!(model.forward_loss(&mut tape, &[], None), Err(Error::EmptyBatch)));
        let mut ex = two_face_example(&cfg, 0).unwrap();
        ex.tokens.tokens.pop();
        assert!(model.forward_loss(&mut tape, &[&ex], None).is_err());
    }

    #[test]
    fn greedy_reconstruction_respects_the_face_limit() {
        let cfg = toy_config();
        let (model, store) = random_model(cfg.clone(), 9);
        let ex = two_face_example(&cfg, 0).unwrap();
        for limit in [0, 1, 3] {
            let rec = model.reconstruct(&store, &ex.cloud, limit).unwrap();
            assert!(rec.tokens.face_count() <= limit);
            if limit == 0 {
                assert_eq!(rec.stop, StopReason::Limit);
                assert!(rec.tokens.is_empty() && rec.mesh.faces.is_empty());
            }
            if rec.stop == StopReason::Limit {
                assert_eq!(rec.tokens.face_count(), limit);
                assert!(!rec.tokens.has_eos());
            } else {
                assert!(rec.tokens.has_eos());
            }
        }
    }

    #[test]
    fn store_shape_mismatch_is_reported() {
        let (_, store) = FaceModel::new::<f32>(toy_config(), 0).unwrap();
        let other = ModelConfig { d_model: 16, ..toy_config() };
        assert!(FaceModel::for_store(other, &store).is_err());
        assert!(FaceModel::for_store(toy_config(), &store).is_ok());
    }

    #[test]
    fn f32_and_f64_models_agree() {
        let cfg = toy_config();
        let (model, store) = random_model(cfg.clone(), 10);
        let single: ParamStore<f32> = cast_store(&store);
        let ex = two_face_example(&cfg, 0).unwrap();
        let mut t64 = Tape::with_params(&store);
        let l64 = model.forward_loss(&mut t64, &[&ex], None).unwrap();
        let mut t32 = Tape::with_params(&single);
        let l32 = model.forward_loss(&mut t32, &[&ex], None).unwrap();
        let (a, b) = (t64.value(l64.loss).item().unwrap(), t32.value(l32.loss).item().unwrap() as f64);
        assert!((a - b).abs() < 1e-4 * a.abs(), "{a} vs {b}");
    }
}
