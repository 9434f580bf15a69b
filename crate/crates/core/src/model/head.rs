//! Coordinate heads: nine slot distributions per face latent vector.

use alloc::vec::Vec;

use super::config::{HeadKind, ModelConfig};
use super::layers::{Block, BlockShape, Builder, LayerNorm, Linear, INIT_STD};
use crate::error::Result;
use crate::tensor::{AttentionSpec, ParamId, Scalar, Tape, Var};
use crate::tokenizer::{FaceToken, SLOTS};

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)] // one per model
pub(crate) enum CoordinateHead {
    CausalMlp {
        latent: Linear,
        prefix: Linear,
        embed: ParamId,
        slot_pos: ParamId,
        out_w: ParamId,
        out_b: ParamId,
    },
    Parallel {
        hidden: Linear,
        out: Linear,
    },
    Attention {
        latent: Linear,
        embed: ParamId,
        slot_pos: ParamId,
        block: Block,
        norm: LayerNorm,
        out_w: ParamId,
        out_b: ParamId,
    },
}

fn slot_output<T: Scalar>(bld: &mut Builder<'_, T>, hidden: usize, vocab: usize) -> (ParamId, ParamId) {
    // Zero-initialized so the untrained head predicts a uniform distribution.
    let w = bld.normal("head.out.w", &[SLOTS, hidden, vocab], 0.0, true);
    let b = bld.constant("head.out.b", &[SLOTS, vocab], 0.0);
    (w, b)
}

impl CoordinateHead {
    pub fn new<T: Scalar>(bld: &mut Builder<'_, T>, cfg: &ModelConfig) -> Self {
        let (d, hd, vocab) = (cfg.d_model, cfg.head_dim, cfg.vocab_size());
        match cfg.head {
            HeadKind::CausalMlp => {
                let latent = Linear::new(bld, "head.latent", d, hd, true);
                let prefix = Linear::new(bld, "head.prefix", hd, hd, false);
                let embed = bld.normal("head.embed", &[vocab, hd], INIT_STD, false);
                let slot_pos = bld.normal("head.slot_pos", &[SLOTS, hd], INIT_STD, false);
                let (out_w, out_b) = slot_output(bld, hd, vocab);
                CoordinateHead::CausalMlp { latent, prefix, embed, slot_pos, out_w, out_b }
            }
            HeadKind::Parallel => CoordinateHead::Parallel {
                hidden: Linear::new(bld, "head.hidden", d, hd, true),
                out: Linear::zeros(bld, "head.out", hd, SLOTS * vocab),
            },
            HeadKind::Attention => {
                let latent = Linear::new(bld, "head.latent", d, hd, true);
                let embed = bld.normal("head.embed", &[vocab, hd], INIT_STD, false);
                let slot_pos = bld.normal("head.slot_pos", &[SLOTS, hd], INIT_STD, false);
                let block = Block::new(
                    bld,
                    "head.block",
                    BlockShape { dim: hd, cross_source: None, self_attention: true, ffn_mult: cfg.ffn_mult },
                );
                let norm = LayerNorm::new(bld, "head.norm", hd);
                let (out_w, out_b) = slot_output(bld, hd, vocab);
                CoordinateHead::Attention { latent, embed, slot_pos, block, norm, out_w, out_b }
            }
        }
    }

    /// Logits `[rows * 9, vocab]` for latent rows `h` (`[rows, d_model]`).
    /// Row `9 r + j` scores slot `j` of face `r` given slots `< j` of
    /// `tokens[r]`; later slots of `tokens[r]` are never read.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        cfg: &ModelConfig,
        h: Var,
        tokens: &[FaceToken],
    ) -> Result<Var> {
        let rows = tokens.len();
        let repeat: Vec<usize> = (0..rows).flat_map(|r| core::iter::repeat_n(r, SLOTS)).collect();
        let slot_idx: Vec<usize> = (0..rows).flat_map(|_| 0..SLOTS).collect();
        match self {
            CoordinateHead::CausalMlp { latent, prefix, embed, slot_pos, out_w, out_b } => {
                // [h ‖ Σ_{j'<j} (emb(c_j') + pos_j')] W1 split into its two
                // halves; the latent half is computed once per face.
                let ids: Vec<usize> = tokens.iter().flat_map(|t| t.slots.iter().map(|&c| c as usize)).collect();
                let table = tape.param(*embed);
                let e = tape.gather_rows(table, &ids)?;
                let pos_table = tape.param(*slot_pos);
                let p = tape.gather_rows(pos_table, &slot_idx)?;
                let g = tape.add(e, p)?;
                let s = tape.group_prefix_sum(g, SLOTS, true)?;
                let s = prefix.forward(tape, s)?;
                let a = latent.forward(tape, h)?;
                let a = tape.gather_rows(a, &repeat)?;
                let pre = tape.add(a, s)?;
                let z = tape.gelu(pre);
                let w = tape.param(*out_w);
                let b = tape.param(*out_b);
                tape.slot_linear(z, w, b)
            }
            CoordinateHead::Parallel { hidden, out } => {
                let z = hidden.forward(tape, h)?;
                let z = tape.gelu(z);
                let logits = out.forward(tape, z)?;
                tape.reshape(logits, &[rows * SLOTS, cfg.vocab_size()])
            }
            CoordinateHead::Attention { latent, embed, slot_pos, block, norm, out_w, out_b } => {
                // Sequence per face: [proj(h), emb(c_0), ..., emb(c_7)].
                let x0 = latent.forward(tape, h)?;
                let ids: Vec<usize> =
                    tokens.iter().flat_map(|t| t.slots[..SLOTS - 1].iter().map(|&c| c as usize)).collect();
                let table = tape.param(*embed);
                let e = tape.gather_rows(table, &ids)?;
                let both = tape.concat_rows(&[x0, e])?;
                let order: Vec<usize> = (0..rows)
                    .flat_map(|r| (0..SLOTS).map(move |j| if j == 0 { r } else { rows + r * (SLOTS - 1) + j - 1 }))
                    .collect();
                let seq = tape.gather_rows(both, &order)?;
                let pos_table = tape.param(*slot_pos);
                let p = tape.gather_rows(pos_table, &slot_idx)?;
                let seq = tape.add(seq, p)?;
                let spec = AttentionSpec::new(cfg.heads, rows).causal();
                let y = block.forward(tape, seq, &spec, None)?;
                let y = norm.forward(tape, y)?;
                let w = tape.param(*out_w);
                let b = tape.param(*out_b);
                tape.slot_linear(y, w, b)
            }
        }
    }
}
