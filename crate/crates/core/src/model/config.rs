use alloc::string::String;

use crate::error::{Error, Result};
use crate::prep::check_resolution;

/// Where the encoder's initial query vectors come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum QueryMode {
    /// Embedded points picked by farthest point sampling.
    #[default]
    Fps,
    /// A learned `[k, d_latent]` table shared by all shapes.
    Learnable,
}

/// How the nine coordinates of a face are decoded from its latent vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum HeadKind {
    /// Slot `j` sees the latent vector and the embeddings of slots `< j`.
    #[default]
    CausalMlp,
    /// All nine slots from the latent vector alone.
    Parallel,
    /// A one-block causal transformer over the latent vector and slot
    /// embeddings.
    Attention,
}

/// How a face token is turned into a decoder input vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum PoolingMode {
    /// Per-slot embedding lookups, concatenated and mixed by an MLP.
    #[default]
    Discrete,
    /// The nine dequantized coordinates fed straight into the MLP.
    Continuous,
}

macro_rules! impl_names {
    ($ty:ty, $($variant:ident => $name:literal),+) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$(<$ty>::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $(<$ty>::$variant => $name),+
                }
            }
        }

        impl core::fmt::Display for $ty {
            fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
                f.write_str(self.name())
            }
        }

        impl core::str::FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok(<$ty>::$variant),)+
                    _ => Err(Error::InvalidParameter(alloc::format!("unknown {} `{s}`", stringify!($ty)))),
                }
            }
        }
    };
}

impl_names!(QueryMode, Fps => "fps", Learnable => "learnable");
impl_names!(HeadKind, CausalMlp => "causal-mlp", Parallel => "parallel", Attention => "attention");
impl_names!(PoolingMode, Discrete => "discrete", Continuous => "continuous");

/// Architecture hyperparameters. Activation (GELU, tanh form), pre-norm
/// residual blocks, FFN expansion and the absence of dropout are fixed and
/// recorded in the read-only fields.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ModelConfig {
    /// Quantization bins `R`; the vocabulary has `R + 1` ids.
    pub resolution: u32,
    pub d_model: usize,
    /// Width of the shape encoder and of the latent vectors.
    pub d_latent: usize,
    pub bottleneck_dim: usize,
    /// Number of latent vectors `k`.
    pub latent_tokens: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub max_faces: usize,
    /// Surface points per shape `m`.
    pub points: usize,
    /// Sinusoidal octaves of the point embedding.
    pub freq_bands: usize,
    /// Width of the per-slot coordinate embeddings in face pooling.
    pub coord_embed_dim: usize,
    /// Width of the coordinate-head embeddings and hidden layer.
    pub head_dim: usize,
    pub ffn_mult: usize,
    pub queries: QueryMode,
    pub head: HeadKind,
    pub pooling: PoolingMode,
    pub activation: String,
    pub norm: String,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            resolution: 128,
            d_model: 256,
            d_latent: 128,
            bottleneck_dim: 32,
            latent_tokens: 64,
            encoder_layers: 2,
            decoder_layers: 6,
            heads: 8,
            max_faces: 800,
            points: 2048,
            freq_bands: 8,
            coord_embed_dim: 32,
            head_dim: 128,
            ffn_mult: 4,
            queries: QueryMode::Fps,
            head: HeadKind::CausalMlp,
            pooling: PoolingMode::Discrete,
            activation: "gelu".into(),
            norm: "pre".into(),
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    /// The small configuration used for overfitting experiments.
    pub fn desk() -> Self {
        Self {
            resolution: 32,
            d_model: 128,
            d_latent: 64,
            bottleneck_dim: 16,
            latent_tokens: 32,
            encoder_layers: 2,
            decoder_layers: 4,
            heads: 4,
            max_faces: 120,
            points: 1024,
            freq_bands: 6,
            coord_embed_dim: 32,
            head_dim: 128,
            ..Self::default()
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.resolution as usize + 1
    }

    /// Input width of the point embedding: position, sin/cos features per
    /// axis and octave, and the normal.
    pub fn point_features(&self) -> usize {
        3 + 6 * self.freq_bands + 3
    }

    pub fn validate(&self) -> Result<()> {
        check_resolution(self.resolution)?;
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.into()));
        let positive = [
            ("d_model", self.d_model),
            ("d_latent", self.d_latent),
            ("bottleneck_dim", self.bottleneck_dim),
            ("latent_tokens", self.latent_tokens),
            ("heads", self.heads),
            ("max_faces", self.max_faces),
            ("points", self.points),
            ("coord_embed_dim", self.coord_embed_dim),
            ("head_dim", self.head_dim),
            ("ffn_mult", self.ffn_mult),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidParameter(alloc::format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.heads) || !self.d_latent.is_multiple_of(self.heads) {
            return bad("d_model and d_latent must be divisible by heads");
        }
        if self.head == HeadKind::Attention && !self.head_dim.is_multiple_of(self.heads) {
            return bad("head_dim must be divisible by heads for the attention head");
        }
        if self.latent_tokens > self.points {
            return Err(Error::TooManySamples { k: self.latent_tokens, m: self.points });
        }
        if self.activation != "gelu" {
            return bad("only activation = \"gelu\" is supported");
        }
        if self.norm != "pre" {
            return bad("only norm = \"pre\" is supported");
        }
        if self.dropout != 0.0 {
            return bad("dropout is not supported");
        }
        Ok(())
    }
}
