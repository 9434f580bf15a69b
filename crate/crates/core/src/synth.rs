//! Procedural meshes used as training and evaluation data.
//!
//! Each primitive is generated around the origin at roughly unit size, then
//! jittered by a seeded anisotropic scale and a rotation about the z axis.

use alloc::collections::BTreeMap;
use alloc::string::ToString as _;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use num_traits::Float;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::mesh::RawMesh;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields))]
pub enum SyntheticKind {
    Cube,
    Icosphere { subdiv: u32 },
    Cylinder { segments: u32 },
    Torus { major: u32, minor: u32 },
    MultiComponent { parts: u32 },
}

impl SyntheticKind {
    /// Face count of the generated mesh.
    pub fn face_count(&self) -> usize {
        match *self {
            SyntheticKind::Cube => 12,
            SyntheticKind::Icosphere { subdiv } => 20 * 4usize.pow(subdiv),
            SyntheticKind::Cylinder { segments } => 4 * segments as usize - 4,
            SyntheticKind::Torus { major, minor } => 2 * major as usize * minor as usize,
            // Parts are drawn from the seed; use `generate(..).faces.len()`.
            SyntheticKind::MultiComponent { .. } => 0,
        }
    }

    fn check(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        match *self {
            SyntheticKind::Cube => Ok(()),
            SyntheticKind::Icosphere { subdiv } if subdiv > 3 => bad("icosphere subdiv must be <= 3"),
            SyntheticKind::Cylinder { segments } if !(3..=48).contains(&segments) => {
                bad("cylinder segments must be in [3, 48]")
            }
            SyntheticKind::Torus { major, minor } if !(3..=32).contains(&major) || !(3..=16).contains(&minor) => {
                bad("torus needs major in [3, 32] and minor in [3, 16]")
            }
            SyntheticKind::MultiComponent { parts } if !(1..=8).contains(&parts) => {
                bad("multi_component parts must be in [1, 8]")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    /// Relative anisotropic scale jitter, in `[0, 0.3]`.
    pub jitter: f64,
    /// Apply a seeded rotation about the z axis.
    pub rotate: bool,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(kind: SyntheticKind, seed: u64) -> Self {
        Self { kind, jitter: 0.15, rotate: true, seed }
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<RawMesh> {
    spec.kind.check()?;
    if !(0.0..=0.3).contains(&spec.jitter) {
        return Err(Error::InvalidParameter(alloc::format!("jitter {} not in [0, 0.3]", spec.jitter)));
    }
    let mut rng = rng::from_seed(spec.seed);
    let mut mesh = match spec.kind {
        SyntheticKind::Cube => cube_mesh(),
        SyntheticKind::Icosphere { subdiv } => icosphere(subdiv),
        SyntheticKind::Cylinder { segments } => cylinder(segments),
        SyntheticKind::Torus { major, minor } => torus(major, minor),
        SyntheticKind::MultiComponent { parts } => {
            let mut out = RawMesh::default();
            for p in 0..parts {
                let mut part = match rng.random_range(0..3) {
                    0 => cube_mesh(),
                    1 => icosphere(0),
                    _ => cylinder(6),
                };
                let s = 0.6 + 0.4 * rng.random::<f64>();
                let offset = [1.5 * p as f64, 0.3 * (rng.random::<f64>() - 0.5), 0.3 * (rng.random::<f64>() - 0.5)];
                for v in &mut part.vertices {
                    *v = geom::add(geom::scale(*v, s), offset);
                }
                out.append(&part);
            }
            out
        }
    };
    let scales: [f64; 3] = core::array::from_fn(|_| 1.0 + spec.jitter * (2.0 * rng.random::<f64>() - 1.0));
    let angle = rng.random::<f64>() * TAU;
    let (s, c) = if spec.rotate { (Float::sin(angle), Float::cos(angle)) } else { (0.0, 1.0) };
    for v in &mut mesh.vertices {
        let p = [v[0] * scales[0], v[1] * scales[1], v[2] * scales[2]];
        *v = [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]];
    }
    Ok(mesh)
}

/// Axis-aligned cube spanning `[-0.5, 0.5]^3`, outward winding.
pub fn cube_mesh() -> RawMesh {
    let vertices = (0..8)
        .map(|i| {
            [
                if i & 1 == 0 { -0.5 } else { 0.5 },
                if i & 2 == 0 { -0.5 } else { 0.5 },
                if i & 4 == 0 { -0.5 } else { 0.5 },
            ]
        })
        .collect();
    let faces = vec![
        [0, 2, 1], [1, 2, 3], // z-
        [4, 5, 6], [5, 7, 6], // z+
        [0, 1, 4], [1, 5, 4], // y-
        [2, 6, 3], [3, 6, 7], // y+
        [0, 4, 2], [2, 4, 6], // x-
        [1, 3, 5], [3, 7, 5], // x+
    ];
    RawMesh { vertices, faces }
}

/// Subdivided icosahedron on the sphere of radius 0.5.
pub fn icosphere(subdiv: u32) -> RawMesh {
    let t = (1.0 + Float::sqrt(5.0)) / 2.0;
    let mut vertices: Vec<Vec3> = vec![
        [-1.0, t, 0.0], [1.0, t, 0.0], [-1.0, -t, 0.0], [1.0, -t, 0.0],
        [0.0, -1.0, t], [0.0, 1.0, t], [0.0, -1.0, -t], [0.0, 1.0, -t],
        [t, 0.0, -1.0], [t, 0.0, 1.0], [-t, 0.0, -1.0], [-t, 0.0, 1.0],
    ];
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..subdiv {
        let mut midpoint: BTreeMap<(u32, u32), u32> = BTreeMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0u32; 3];
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                mid[k] = *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    let p = geom::scale(geom::add(vertices[a as usize], vertices[b as usize]), 0.5);
                    vertices.push(p);
                    (vertices.len() - 1) as u32
                });
            }
            next.push([f[0], mid[0], mid[2]]);
            next.push([f[1], mid[1], mid[0]]);
            next.push([f[2], mid[2], mid[1]]);
            next.push(mid);
        }
        faces = next;
    }
    for v in &mut vertices {
        *v = geom::scale(*v, 0.5 / geom::norm(*v));
    }
    RawMesh { vertices, faces }
}

/// Capped cylinder of radius 0.5 and height 1 along z. Caps are fans from
/// the first ring vertex: `2n` side faces plus `2(n - 2)` cap faces.
pub fn cylinder(segments: u32) -> RawMesh {
    let n = segments;
    let mut vertices = Vec::with_capacity(2 * n as usize);
    for z in [-0.5, 0.5] {
        for i in 0..n {
            let a = TAU * i as f64 / n as f64;
            vertices.push([0.5 * Float::cos(a), 0.5 * Float::sin(a), z]);
        }
    }
    let mut faces = Vec::with_capacity(4 * n as usize - 4);
    for i in 0..n {
        let j = (i + 1) % n;
        faces.push([i, j, n + j]);
        faces.push([i, n + j, n + i]);
    }
    for i in 1..n - 1 {
        faces.push([0, i + 1, i]);
        faces.push([n, n + i, n + i + 1]);
    }
    RawMesh { vertices, faces }
}

/// Torus around z with `major * minor` quads split into triangles.
pub fn torus(major: u32, minor: u32) -> RawMesh {
    let (ring, tube) = (0.35, 0.15);
    let mut vertices = Vec::with_capacity((major * minor) as usize);
    for i in 0..major {
        let u = TAU * i as f64 / major as f64;
        for j in 0..minor {
            // Offset the tube angle by half a step so no vertex sits exactly
            // on the equator.
            let w = TAU * (j as f64 + 0.5) / minor as f64 + PI / 7.0;
            let r = ring + tube * Float::cos(w);
            vertices.push([r * Float::cos(u), r * Float::sin(u), tube * Float::sin(w)]);
        }
    }
    let idx = |i: u32, j: u32| (i % major) * minor + (j % minor);
    let mut faces = Vec::with_capacity(2 * (major * minor) as usize);
    for i in 0..major {
        for j in 0..minor {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    RawMesh { vertices, faces }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::analyze;
    use crate::prep::{normalize, quantize_with_stats};
    use proptest::prelude::*;

    #[test]
    fn face_counts() {
        let cube = generate(&SyntheticSpec::new(SyntheticKind::Cube, 0)).unwrap();
        assert_eq!((cube.faces.len(), cube.vertices.len()), (12, 8));
        for s in 0..=3 {
            let m = generate(&SyntheticSpec::new(SyntheticKind::Icosphere { subdiv: s }, 0)).unwrap();
            assert_eq!(m.faces.len(), 20 * 4usize.pow(s));
        }
        let m = generate(&SyntheticSpec::new(SyntheticKind::Cylinder { segments: 10 }, 0)).unwrap();
        assert_eq!(m.faces.len(), 36);
        let m = generate(&SyntheticSpec::new(SyntheticKind::Torus { major: 7, minor: 5 }, 0)).unwrap();
        assert_eq!(m.faces.len(), 70);
    }

    #[test]
    fn multi_component_parts_are_disjoint() {
        for seed in 0..10 {
            let m = generate(&SyntheticSpec::new(SyntheticKind::MultiComponent { parts: 3 }, seed)).unwrap();
            assert_eq!(analyze(&m).component_count, 3);
        }
    }

    #[test]
    fn closed_primitives_are_single_components() {
        for kind in [
            SyntheticKind::Cube,
            SyntheticKind::Icosphere { subdiv: 2 },
            SyntheticKind::Cylinder { segments: 12 },
            SyntheticKind::Torus { major: 8, minor: 6 },
        ] {
            let m = generate(&SyntheticSpec::new(kind, 1)).unwrap();
            let r = analyze(&m);
            assert_eq!(r.component_count, 1, "{kind:?}");
            assert_eq!(r.degenerate_face_count, 0);
            assert_eq!(r.duplicate_face_count, 0);
        }
    }

    #[test]
    fn outward_winding() {
        // Signed volume of a closed outward-wound mesh is positive.
        for kind in [
            SyntheticKind::Cube,
            SyntheticKind::Icosphere { subdiv: 1 },
            SyntheticKind::Cylinder { segments: 7 },
            SyntheticKind::Torus { major: 9, minor: 5 },
        ] {
            let m = generate(&SyntheticSpec { jitter: 0.0, rotate: false, ..SyntheticSpec::new(kind, 0) }).unwrap();
            let vol: f64 = m
                .faces
                .iter()
                .map(|f| {
                    let [a, b, c] = [f[0], f[1], f[2]].map(|i| m.vertices[i as usize]);
                    geom::dot(a, geom::cross(b, c)) / 6.0
                })
                .sum();
            assert!(vol > 0.0, "{kind:?}: {vol}");
        }
    }

    #[test]
    fn rejects_out_of_range_parameters() {
        for kind in [
            SyntheticKind::Icosphere { subdiv: 4 },
            SyntheticKind::Cylinder { segments: 2 },
            SyntheticKind::Torus { major: 2, minor: 4 },
            SyntheticKind::MultiComponent { parts: 0 },
        ] {
            assert!(generate(&SyntheticSpec::new(kind, 0)).is_err());
        }
    }

    fn kind_strategy() -> impl Strategy<Value = SyntheticKind> {
        prop_oneof![
            Just(SyntheticKind::Cube),
            (0u32..=3).prop_map(|subdiv| SyntheticKind::Icosphere { subdiv }),
            (3u32..=48).prop_map(|segments| SyntheticKind::Cylinder { segments }),
            (3u32..=32, 3u32..=16).prop_map(|(major, minor)| SyntheticKind::Torus { major, minor }),
            (1u32..=8).prop_map(|parts| SyntheticKind::MultiComponent { parts }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn quantizes_without_drops_at_r64(kind in kind_strategy(), seed in any::<u64>(), r in 64u32..=1024) {
            let raw = generate(&SyntheticSpec::new(kind, seed)).unwrap();
            raw.validate().unwrap();
            let (norm, _) = normalize(&raw).unwrap();
            let (q, stats) = quantize_with_stats(&norm, r).unwrap();
            prop_assert_eq!(stats.dropped_degenerate, 0);
            prop_assert_eq!(stats.dropped_duplicate, 0);
            prop_assert_eq!(q.faces.len(), raw.faces.len());
        }
    }
}
