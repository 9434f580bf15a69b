//! Parameterized building blocks shared by the encoder, decoder and heads.

use alloc::format;
use alloc::string::String;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{AttentionSpec, ParamId, ParamStore, Scalar, Tape, Tensor, Var};

/// Standard deviation of the initial weights.
pub(crate) const INIT_STD: f64 = 0.02;

/// Registers parameters in creation order with normally distributed or
/// constant initial values.
pub(crate) struct Builder<'s, T: Scalar> {
    pub store: &'s mut ParamStore<T>,
    pub rng: Rng,
}

impl<T: Scalar> Builder<'_, T> {
    pub fn normal(&mut self, name: impl Into<String>, shape: &[usize], std: f64, decay: bool) -> ParamId {
        let rng = &mut self.rng;
        let value = Tensor::from_fn(shape, |_| T::from_f64(std * rng.sample::<f64, _>(StandardNormal)));
        self.store.add(name, value, decay)
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> ParamId {
        self.store.add(name, Tensor::full(shape, T::from_f64(value)), false)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar>(bld: &mut Builder<'_, T>, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        Self::with_std(bld, name, fan_in, fan_out, bias, INIT_STD)
    }

    /// Output projections start at zero so that untrained logits are uniform.
    pub fn zeros<T: Scalar>(bld: &mut Builder<'_, T>, name: &str, fan_in: usize, fan_out: usize) -> Self {
        Self::with_std(bld, name, fan_in, fan_out, true, 0.0)
    }

    fn with_std<T: Scalar>(
        bld: &mut Builder<'_, T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        std: f64,
    ) -> Self {
        let w = bld.normal(format!("{name}.w"), &[fan_in, fan_out], std, true);
        let b = bias.then(|| bld.constant(format!("{name}.b"), &[fan_out], 0.0));
        Self { w, b }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let b = self.b.map(|b| tape.param(b));
        tape.linear(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(bld: &mut Builder<'_, T>, name: &str, dim: usize) -> Self {
        let gamma = bld.constant(format!("{name}.gamma"), &[dim], 1.0);
        let beta = bld.constant(format!("{name}.beta"), &[dim], 0.0);
        Self { gamma, beta }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        tape.layer_norm(x, g, b)
    }
}

/// `Linear -> GELU -> Linear`.
#[derive(Debug, Clone)]
pub(crate) struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<T: Scalar>(bld: &mut Builder<'_, T>, name: &str, dim_in: usize, hidden: usize, dim_out: usize) -> Self {
        Self {
            fc1: Linear::new(bld, &format!("{name}.fc1"), dim_in, hidden, true),
            fc2: Linear::new(bld, &format!("{name}.fc2"), hidden, dim_out, true),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, x)?;
        let h = tape.gelu(h);
        self.fc2.forward(tape, h)
    }
}

/// Multi-head attention with input and output projections. Keys and values
/// may come from a source of a different width.
#[derive(Debug, Clone)]
pub(crate) struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(bld: &mut Builder<'_, T>, name: &str, dim: usize, source_dim: usize) -> Self {
        Self {
            q: Linear::new(bld, &format!("{name}.q"), dim, dim, true),
            k: Linear::new(bld, &format!("{name}.k"), source_dim, dim, true),
            v: Linear::new(bld, &format!("{name}.v"), source_dim, dim, true),
            o: Linear::new(bld, &format!("{name}.o"), dim, dim, true),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var, source: Var, spec: &AttentionSpec) -> Result<Var> {
        let q = self.q.forward(tape, x)?;
        let k = self.k.forward(tape, source)?;
        let v = self.v.forward(tape, source)?;
        let a = tape.attention(q, k, v, spec)?;
        self.o.forward(tape, a)
    }
}

/// Pre-norm residual block: optional self-attention, optional
/// cross-attention, then a feed-forward MLP.
#[derive(Debug, Clone)]
pub(crate) struct Block {
    pub self_norm: Option<LayerNorm>,
    pub self_attn: Option<MultiHeadAttention>,
    pub cross_norm: Option<LayerNorm>,
    pub cross_attn: Option<MultiHeadAttention>,
    pub ffn_norm: LayerNorm,
    pub ffn: Mlp,
}

pub(crate) struct BlockShape {
    pub dim: usize,
    pub cross_source: Option<usize>,
    pub self_attention: bool,
    pub ffn_mult: usize,
}

impl Block {
    pub fn new<T: Scalar>(bld: &mut Builder<'_, T>, name: &str, shape: BlockShape) -> Self {
        let d = shape.dim;
        let (self_norm, self_attn) = if shape.self_attention {
            (
                Some(LayerNorm::new(bld, &format!("{name}.self_norm"), d)),
                Some(MultiHeadAttention::new(bld, &format!("{name}.self_attn"), d, d)),
            )
        } else {
            (None, None)
        };
        let (cross_norm, cross_attn) = match shape.cross_source {
            Some(src) => (
                Some(LayerNorm::new(bld, &format!("{name}.cross_norm"), d)),
                Some(MultiHeadAttention::new(bld, &format!("{name}.cross_attn"), d, src)),
            ),
            None => (None, None),
        };
        Self {
            self_norm,
            self_attn,
            cross_norm,
            cross_attn,
            ffn_norm: LayerNorm::new(bld, &format!("{name}.ffn_norm"), d),
            ffn: Mlp::new(bld, &format!("{name}.ffn"), d, shape.ffn_mult * d, d),
        }
    }

    /// `source`/`cross_spec` are required when the block has
    /// cross-attention.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        x: Var,
        self_spec: &AttentionSpec,
        source: Option<(Var, &AttentionSpec)>,
    ) -> Result<Var> {
        let mut h = x;
        if let (Some(norm), Some(attn)) = (&self.self_norm, &self.self_attn) {
            let n = norm.forward(tape, h)?;
            let a = attn.forward(tape, n, n, self_spec)?;
            h = tape.add(h, a)?;
        }
        if let (Some(norm), Some(attn)) = (&self.cross_norm, &self.cross_attn) {
            let (src, spec) = source.expect("cross-attention block needs a source");
            let n = norm.forward(tape, h)?;
            let a = attn.forward(tape, n, src, spec)?;
            h = tape.add(h, a)?;
        }
        let n = self.ffn_norm.forward(tape, h)?;
        let f = self.ffn.forward(tape, n)?;
        tape.add(h, f)
    }
}
