//! Point cloud to latent vector set.

use alloc::vec::Vec;

use super::config::{ModelConfig, QueryMode};
use super::layers::{Block, BlockShape, Builder, LayerNorm, Linear, INIT_STD};
use crate::error::{shape_err, Error, Result};
use crate::sampling::{fps, PointCloud};
use crate::tensor::{AttentionSpec, ParamId, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub(crate) struct ShapeEncoder {
    input: Linear,
    queries: Option<ParamId>,
    source_norm: LayerNorm,
    cross: Block,
    layers: Vec<Block>,
    out_norm: LayerNorm,
    down: Linear,
    up: Linear,
}

/// Sinusoidal point features: `xyz`, `sin`/`cos` of `2^b π x` for every axis
/// and octave, and the normal.
pub fn point_features(cloud: &PointCloud, freq_bands: usize) -> Vec<f64> {
    let width = 6 + 6 * freq_bands;
    let mut out = Vec::with_capacity(cloud.len() * width);
    for (p, n) in cloud.positions.iter().zip(&cloud.normals) {
        out.extend_from_slice(p);
        for axis in p {
            let mut f = core::f64::consts::PI;
            for _ in 0..freq_bands {
                let (s, c) = num_traits::Float::sin_cos(f * axis);
                out.push(s);
                out.push(c);
                f *= 2.0;
            }
        }
        out.extend_from_slice(n);
    }
    out
}

impl ShapeEncoder {
    pub fn new<T: Scalar>(bld: &mut Builder<'_, T>, cfg: &ModelConfig) -> Self {
        let d = cfg.d_latent;
        let input = Linear::new(bld, "encoder.input", cfg.point_features(), d, true);
        let queries = (cfg.queries == QueryMode::Learnable)
            .then(|| bld.normal("encoder.queries", &[cfg.latent_tokens, d], INIT_STD, false));
        let source_norm = LayerNorm::new(bld, "encoder.source_norm", d);
        let cross = Block::new(
            bld,
            "encoder.cross",
            BlockShape { dim: d, cross_source: Some(d), self_attention: false, ffn_mult: cfg.ffn_mult },
        );
        let layers = (0..cfg.encoder_layers)
            .map(|l| {
                Block::new(
                    bld,
                    &alloc::format!("encoder.layers.{l}"),
                    BlockShape { dim: d, cross_source: None, self_attention: true, ffn_mult: cfg.ffn_mult },
                )
            })
            .collect();
        Self {
            input,
            queries,
            source_norm,
            cross,
            layers,
            out_norm: LayerNorm::new(bld, "encoder.out_norm", d),
            down: Linear::new(bld, "encoder.down", d, cfg.bottleneck_dim, true),
            up: Linear::new(bld, "encoder.up", cfg.bottleneck_dim, d, true),
        }
    }

    /// Latent vectors `[batch * k, d_latent]`. With FPS queries,
    /// `pinned_queries` overrides the FPS indices per cloud.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        cfg: &ModelConfig,
        clouds: &[&PointCloud],
        pinned_queries: Option<&[Vec<usize>]>,
    ) -> Result<Var> {
        let batch = clouds.len();
        if batch == 0 {
            return Err(Error::EmptyBatch);
        }
        let m = clouds[0].len();
        let k = cfg.latent_tokens;
        if clouds.iter().any(|c| c.len() != m) {
            return Err(shape_err!("clouds in one batch must have equal point counts"));
        }
        if k > m {
            return Err(Error::TooManySamples { k, m });
        }
        let width = cfg.point_features();
        let mut feats = Vec::with_capacity(batch * m * width);
        for c in clouds {
            feats.extend(point_features(c, cfg.freq_bands).into_iter().map(T::from_f64));
        }
        let feats = tape.constant(Tensor::new(&[batch * m, width], feats)?);
        let x = self.input.forward(tape, feats)?;

        let q = match self.queries {
            Some(id) => {
                let table = tape.param(id);
                let idx: Vec<usize> = (0..batch).flat_map(|_| 0..k).collect();
                tape.gather_rows(table, &idx)?
            }
            None => {
                let mut idx = Vec::with_capacity(batch * k);
                for (b, c) in clouds.iter().enumerate() {
                    let picks = match pinned_queries {
                        Some(p) => {
                            if p[b].len() != k || p[b].iter().any(|&i| i >= m) {
                                return Err(shape_err!("pinned queries for cloud {b} must be {k} indices < {m}"));
                            }
                            p[b].clone()
                        }
                        None => fps(&c.positions, k, 0)?,
                    };
                    idx.extend(picks.into_iter().map(|i| b * m + i));
                }
                tape.gather_rows(x, &idx)?
            }
        };

        let source = self.source_norm.forward(tape, x)?;
        let cross_spec = AttentionSpec::new(cfg.heads, batch);
        let self_spec = AttentionSpec::new(cfg.heads, batch);
        let mut h = self.cross.forward(tape, q, &self_spec, Some((source, &cross_spec)))?;
        for layer in &self.layers {
            h = layer.forward(tape, h, &self_spec, None)?;
        }
        let h = self.out_norm.forward(tape, h)?;
        let z = self.down.forward(tape, h)?;
        self.up.forward(tape, z)
    }
}
