//! Face-level autoregressive autoencoder for triangle meshes.
//!
//! A mesh is normalized, quantized onto an `R`-bin integer grid and written as
//! a canonically ordered sequence of faces. Every face becomes one token of
//! nine coordinate slots, so the decoder sees a sequence of `N + 1` tokens
//! instead of the `9N` coordinate tokens of per-coordinate schemes.
//!
//! The crate is `no_std` (it needs `alloc`). The `std` feature enables
//! runtime CPU feature detection in the matrix kernels and parallel
//! nearest-neighbour search in the metrics.
//!
//! Layout:
//!
//! - [`mesh`]: triangle mesh container and structural analysis
//! - [`prep`]: normalization, quantization, augmentation and face ordering
//! - [`tokenizer`]: one-face-one-token encoding and compression statistics
//! - [`sampling`]: surface sampling and farthest point sampling
//! - [`tensor`]: dense tensors, reverse-mode tape and optimizers
//! - [`model`]: shape encoder, face decoder and coordinate heads
//! - [`metrics`]: Chamfer / Hausdorff distances and compression reports
//! - [`synth`]: procedural training meshes

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod geom;
pub mod gradcheck;
pub mod mesh;
pub mod metrics;
pub mod model;
pub mod prep;
pub mod rng;
pub mod sampling;
pub mod synth;
pub mod tensor;
pub mod tokenizer;

pub use error::{Error, Result};
pub use mesh::{MeshReport, RawMesh};
pub use prep::{NormRecord, OrderMode, OrderedFaceSequence, QuantizedMesh};
pub use sampling::PointCloud;
pub use tokenizer::{FaceToken, FaceTokenSequence, Vocabulary};
