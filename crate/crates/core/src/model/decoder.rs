//! Face embedding and the causal face decoder.

use alloc::vec::Vec;

use super::config::{ModelConfig, PoolingMode};
use super::layers::{Block, BlockShape, Builder, LayerNorm, Mlp, INIT_STD};
use crate::error::Result;
use crate::prep::dequantize_coord;
use crate::tensor::{AttentionSpec, ParamId, Scalar, Tape, Tensor, Var};
use crate::tokenizer::SLOTS;

/// One decoder input position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputRow {
    Bos,
    Eos,
    /// Filler for batch padding; masked out as a key and never scored.
    Pad,
    Face([u16; SLOTS]),
}

/// Maps face tokens to `d_model` vectors: slot embeddings plus slot
/// positions, concatenated and mixed by an MLP (or, in continuous mode, the
/// raw coordinates through the MLP). BOS and EOS have their own vectors.
#[derive(Debug, Clone)]
pub(crate) struct FacePooling {
    coords: Option<ParamId>,
    slots: Option<ParamId>,
    mlp: Mlp,
    bos: ParamId,
    eos: ParamId,
    positions: ParamId,
}

impl FacePooling {
    pub fn new<T: Scalar>(bld: &mut Builder<'_, T>, cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let e = cfg.coord_embed_dim;
        let (coords, slots, mlp_in) = match cfg.pooling {
            PoolingMode::Discrete => (
                Some(bld.normal("pooling.coords", &[cfg.resolution as usize, e], INIT_STD, false)),
                Some(bld.normal("pooling.slots", &[SLOTS, e], INIT_STD, false)),
                SLOTS * e,
            ),
            PoolingMode::Continuous => (None, None, SLOTS),
        };
        Self {
            coords,
            slots,
            mlp: Mlp::new(bld, "pooling.mlp", mlp_in, d, d),
            bos: bld.normal("pooling.bos", &[1, d], INIT_STD, false),
            eos: bld.normal("pooling.eos", &[1, d], INIT_STD, false),
            positions: bld.normal("pooling.positions", &[cfg.max_faces + 1, d], INIT_STD, false),
        }
    }

    /// Embeds `rows` (with absolute sequence positions) into `[rows, d]`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        cfg: &ModelConfig,
        rows: &[InputRow],
        positions: &[usize],
    ) -> Result<Var> {
        let faces: Vec<&[u16; SLOTS]> = rows
            .iter()
            .filter_map(|r| match r {
                InputRow::Face(f) => Some(f),
                _ => None,
            })
            .collect();
        let nf = faces.len();
        let mut parts = Vec::with_capacity(3);
        if nf > 0 {
            let pooled_in = match (self.coords, self.slots) {
                (Some(coords), Some(slots)) => {
                    let table = tape.param(coords);
                    let ids: Vec<usize> = faces.iter().flat_map(|f| f.iter().map(|&c| c as usize)).collect();
                    let e = tape.gather_rows(table, &ids)?;
                    let slot_table = tape.param(slots);
                    let slot_ids: Vec<usize> = (0..nf).flat_map(|_| 0..SLOTS).collect();
                    let s = tape.gather_rows(slot_table, &slot_ids)?;
                    let sum = tape.add(e, s)?;
                    tape.reshape(sum, &[nf, SLOTS * cfg.coord_embed_dim])?
                }
                _ => {
                    let data = faces
                        .iter()
                        .flat_map(|f| f.iter().map(|&c| T::from_f64(dequantize_coord(c as u32, cfg.resolution))))
                        .collect();
                    tape.constant(Tensor::new(&[nf, SLOTS], data)?)
                }
            };
            parts.push(self.mlp.forward(tape, pooled_in)?);
        }
        parts.push(tape.param(self.bos));
        parts.push(tape.param(self.eos));
        let all = tape.concat_rows(&parts)?;
        let mut next_face = 0;
        let idx: Vec<usize> = rows
            .iter()
            .map(|r| match r {
                InputRow::Face(_) => {
                    next_face += 1;
                    next_face - 1
                }
                InputRow::Bos | InputRow::Pad => nf,
                InputRow::Eos => nf + 1,
            })
            .collect();
        let tokens = tape.gather_rows(all, &idx)?;
        let table = tape.param(self.positions);
        let pos = tape.gather_rows(table, positions)?;
        tape.add(tokens, pos)
    }
}

/// Pre-norm stack of causal self-attention, cross-attention into the latent
/// set and a feed-forward MLP.
#[derive(Debug, Clone)]
pub(crate) struct FaceDecoder {
    pub(crate) layers: Vec<Block>,
    out_norm: LayerNorm,
}

impl FaceDecoder {
    pub fn new<T: Scalar>(bld: &mut Builder<'_, T>, cfg: &ModelConfig) -> Self {
        let layers = (0..cfg.decoder_layers)
            .map(|l| {
                Block::new(
                    bld,
                    &alloc::format!("decoder.layers.{l}"),
                    BlockShape {
                        dim: cfg.d_model,
                        cross_source: Some(cfg.d_latent),
                        self_attention: true,
                        ffn_mult: cfg.ffn_mult,
                    },
                )
            })
            .collect();
        Self { layers, out_norm: LayerNorm::new(bld, "decoder.out_norm", cfg.d_model) }
    }

    /// `x`: `[batch * len, d_model]`, `latents`: `[batch * k, d_latent]`.
    /// `key_mask` marks the real (non-padding) positions.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        cfg: &ModelConfig,
        x: Var,
        latents: Var,
        batch: usize,
        key_mask: Option<Vec<bool>>,
    ) -> Result<Var> {
        let mut self_spec = AttentionSpec::new(cfg.heads, batch).causal();
        self_spec.key_mask = key_mask;
        let cross_spec = AttentionSpec::new(cfg.heads, batch);
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(tape, h, &self_spec, Some((latents, &cross_spec)))?;
        }
        self.out_norm.forward(tape, h)
    }
}
