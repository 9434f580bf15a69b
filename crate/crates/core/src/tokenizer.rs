//! One-face-one-token encoding.
//!
//! Each face becomes a single token with nine coordinate slots. Coordinate
//! ids are `0..R`; the id `R` is the end-of-sequence marker and only ever
//! appears in slot 0 of the terminal token.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::prep::{check_resolution, NormRecord, OrderedFaceSequence, QuantizedMesh};

pub const SLOTS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocabulary {
    pub resolution: u32,
}

impl Vocabulary {
    pub fn new(resolution: u32) -> Result<Self> {
        check_resolution(resolution)?;
        Ok(Self { resolution })
    }

    #[inline]
    pub fn eos(&self) -> u16 {
        self.resolution as u16
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.resolution as usize + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FaceToken {
    pub slots: [u16; SLOTS],
}

impl FaceToken {
    pub fn eos(resolution: u32) -> Self {
        let mut slots = [0; SLOTS];
        slots[0] = resolution as u16;
        Self { slots }
    }

    #[inline]
    pub fn is_eos(&self, resolution: u32) -> bool {
        self.slots[0] as u32 == resolution
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaceTokenSequence {
    pub tokens: Vec<FaceToken>,
    pub resolution: u32,
}

impl FaceTokenSequence {
    /// Number of content (non-EOS) faces.
    pub fn face_count(&self) -> usize {
        self.tokens.iter().filter(|t| !t.is_eos(self.resolution)).count()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens without the trailing EOS, if present.
    pub fn content(&self) -> &[FaceToken] {
        match self.tokens.last() {
            Some(t) if t.is_eos(self.resolution) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }

    pub fn has_eos(&self) -> bool {
        self.tokens.last().is_some_and(|t| t.is_eos(self.resolution))
    }

    /// Checks slot ranges and EOS placement. A stream without EOS (a
    /// truncated generation) is accepted.
    pub fn validate(&self) -> Result<()> {
        check_resolution(self.resolution)?;
        if self.tokens.is_empty() {
            return Err(Error::EmptyTokens);
        }
        let r = self.resolution;
        let last = self.tokens.len() - 1;
        for (i, t) in self.tokens.iter().enumerate() {
            for (j, &s) in t.slots.iter().enumerate().skip(1) {
                if s as u32 == r {
                    return Err(Error::MalformedTokens(alloc::format!("EOS id in slot {} of token {i}", j + 1)));
                }
            }
            if t.is_eos(r) {
                if i != last {
                    return Err(Error::MalformedTokens(alloc::format!("EOS at token {i} is not final")));
                }
            } else if let Some(&s) = t.slots.iter().find(|&&s| s as u32 > r) {
                return Err(Error::CoordinateOutOfRange { value: s as u32, resolution: r });
            }
        }
        Ok(())
    }
}

/// Writes each face's nine integers into one token and appends EOS.
pub fn encode(seq: &OrderedFaceSequence) -> Result<FaceTokenSequence> {
    let r = seq.resolution;
    check_resolution(r)?;
    let mut tokens = Vec::with_capacity(seq.faces.len() + 1);
    for f in &seq.faces {
        let mut slots = [0u16; SLOTS];
        for (slot, &c) in slots.iter_mut().zip(f) {
            if c >= r {
                return Err(Error::CoordinateOutOfRange { value: c, resolution: r });
            }
            *slot = c as u16;
        }
        tokens.push(FaceToken { slots });
    }
    tokens.push(FaceToken::eos(r));
    Ok(FaceTokenSequence { tokens, resolution: r })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub mesh: QuantizedMesh,
    /// Faces dropped because two of their vertices coincide.
    pub degenerate_dropped: usize,
}

/// Rebuilds a mesh from a token stream. Vertices are the distinct coordinate
/// triples in order of first appearance; connectivity follows from exact
/// equality.
pub fn decode(tokens: &FaceTokenSequence) -> Result<Decoded> {
    tokens.validate()?;
    let mut index_of: BTreeMap<[u32; 3], u32> = BTreeMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut degenerate = 0;
    for t in tokens.content() {
        let mut tri = [0u32; 3];
        for (k, slot) in tri.iter_mut().enumerate() {
            let p = [t.slots[3 * k] as u32, t.slots[3 * k + 1] as u32, t.slots[3 * k + 2] as u32];
            *slot = *index_of.entry(p).or_insert_with(|| {
                vertices.push(p);
                (vertices.len() - 1) as u32
            });
        }
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            degenerate += 1;
        } else {
            faces.push(tri);
        }
    }
    // Vertices only referenced by dropped faces are removed.
    let mut used = alloc::vec![false; vertices.len()];
    for f in &faces {
        for &v in f {
            used[v as usize] = true;
        }
    }
    let mut remap = alloc::vec![u32::MAX; vertices.len()];
    let mut kept = Vec::with_capacity(vertices.len());
    for (i, v) in vertices.into_iter().enumerate() {
        if used[i] {
            remap[i] = kept.len() as u32;
            kept.push(v);
        }
    }
    for f in &mut faces {
        for v in f.iter_mut() {
            *v = remap[*v as usize];
        }
    }
    Ok(Decoded {
        mesh: QuantizedMesh { resolution: tokens.resolution, vertices: kept, faces, norm: NormRecord::IDENTITY },
        degenerate_dropped: degenerate,
    })
}

/// Per-coordinate baseline: nine tokens per face.
pub fn flatten_baseline(seq: &OrderedFaceSequence) -> Vec<u16> {
    seq.faces.iter().flat_map(|f| f.iter().map(|&c| c as u16)).collect()
}

/// Face-token length over the per-coordinate baseline: `(N + 1) / 9N`,
/// counting the EOS token.
pub fn compression_ratio(tokens: &FaceTokenSequence) -> Result<f64> {
    let n = tokens.face_count();
    if n == 0 {
        return Err(Error::NoFaces);
    }
    Ok(tokens.len() as f64 / (9 * n) as f64)
}

/// The same ratio with the EOS token excluded; exactly `1/9`.
pub fn compression_ratio_without_eos(tokens: &FaceTokenSequence) -> Result<f64> {
    let n = tokens.face_count();
    if n == 0 {
        return Err(Error::NoFaces);
    }
    Ok(n as f64 / (9 * n) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prep::{normalize_and_quantize, order_faces, OrderMode};
    use crate::synth::{generate, SyntheticKind, SyntheticSpec};
    use alloc::vec;

    fn seq(faces: Vec<[u32; 9]>, resolution: u32) -> OrderedFaceSequence {
        OrderedFaceSequence { faces, mode: OrderMode::Zyx, resolution }
    }

    #[test]
    fn empty_mesh_is_one_eos() {
        let t = encode(&seq(vec![], 128)).unwrap();
        assert_eq!(t.tokens, vec![FaceToken::eos(128)]);
        assert_eq!(t.face_count(), 0);
        assert_eq!(compression_ratio(&t).unwrap_err(), Error::NoFaces);
    }

    #[test]
    fn single_face() {
        let t = encode(&seq(vec![[0, 0, 0, 1, 0, 0, 0, 1, 0]], 128)).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.tokens[0].slots, [0, 0, 0, 1, 0, 0, 0, 1, 0]);
        assert!(t.tokens[1].is_eos(128));
        assert!((compression_ratio(&t).unwrap() - 2.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn length_law() {
        let raw = generate(&SyntheticSpec::new(SyntheticKind::Torus { major: 10, minor: 5 }, 0)).unwrap();
        let q = normalize_and_quantize(&raw, 128).unwrap();
        let s = order_faces(&q, OrderMode::Zyx);
        assert_eq!(s.len(), 100);
        let t = encode(&s).unwrap();
        assert_eq!(t.len(), 101);
        assert_eq!(flatten_baseline(&s).len(), 900);
        let stripped: Vec<u16> = t.content().iter().flat_map(|t| t.slots).collect();
        assert_eq!(stripped, flatten_baseline(&s));
    }

    #[test]
    fn ratio_at_1000_faces() {
        let faces = (0..1000u32).map(|i| [i % 7, 0, 0, 1, 0, 0, 0, 1, 0]).collect();
        let t = encode(&seq(faces, 128)).unwrap();
        let r = compression_ratio(&t).unwrap();
        assert_eq!(r, 1001.0 / 9000.0);
        assert_eq!((r * 100.0).round() / 100.0, 0.11);
        assert_eq!(compression_ratio_without_eos(&t).unwrap(), 1.0 / 9.0);
    }

    #[test]
    fn encode_rejects_out_of_range() {
        let err = encode(&seq(vec![[0, 0, 0, 1, 0, 0, 0, 128, 0]], 128)).unwrap_err();
        assert_eq!(err, Error::CoordinateOutOfRange { value: 128, resolution: 128 });
    }

    #[test]
    fn shared_edge_dedups_vertices() {
        let t = encode(&seq(
            vec![[0, 0, 0, 1, 0, 0, 0, 1, 0], [1, 0, 0, 1, 1, 0, 0, 1, 0]],
            8,
        ))
        .unwrap();
        let d = decode(&t).unwrap();
        assert_eq!(d.mesh.vertices.len(), 4);
        assert_eq!(d.mesh.faces.len(), 2);
    }

    #[test]
    fn eos_in_inner_slot_is_rejected() {
        let mut t = encode(&seq(vec![[0, 0, 0, 1, 0, 0, 0, 1, 0]], 8)).unwrap();
        t.tokens[0].slots[2] = 8;
        assert!(matches!(decode(&t), Err(Error::MalformedTokens(_))));
    }

    #[test]
    fn early_eos_is_rejected() {
        let mut t = encode(&seq(vec![[0, 0, 0, 1, 0, 0, 0, 1, 0]; 2], 8)).unwrap();
        t.tokens[0] = FaceToken::eos(8);
        assert!(matches!(decode(&t), Err(Error::MalformedTokens(_))));
    }

    #[test]
    fn empty_stream_is_rejected() {
        let t = FaceTokenSequence { tokens: vec![], resolution: 8 };
        assert_eq!(decode(&t).unwrap_err(), Error::EmptyTokens);
    }

    #[test]
    fn degenerate_faces_are_counted() {
        let t = FaceTokenSequence {
            tokens: vec![
                FaceToken { slots: [0, 0, 0, 0, 0, 0, 1, 1, 1] },
                FaceToken { slots: [0, 0, 0, 1, 0, 0, 0, 1, 0] },
            ],
            resolution: 8,
        };
        let d = decode(&t).unwrap();
        assert_eq!(d.degenerate_dropped, 1);
        assert_eq!(d.mesh.faces.len(), 1);
        assert_eq!(d.mesh.vertices.len(), 3);
        d.mesh.validate().unwrap();
    }

    #[test]
    fn truncated_stream_decodes() {
        let mut t = encode(&seq(vec![[0, 0, 0, 1, 0, 0, 0, 1, 0]], 8)).unwrap();
        t.tokens.pop();
        assert_eq!(decode(&t).unwrap().mesh.faces.len(), 1);
    }
}
