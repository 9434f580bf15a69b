//! Normalization, quantization, augmentation and canonical face ordering.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use num_traits::Float;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::{face_components, RawMesh};
use crate::rng;

/// Largest supported grid resolution (token slots are stored as `u16`).
pub const MAX_RESOLUTION: u32 = 65535;

/// Center/scale record produced by [`normalize`]; maps normalized coordinates
/// back to the source frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormRecord {
    pub center: Vec3,
    /// Largest bounding-box extent of the source mesh. Always positive.
    pub scale: f64,
}

impl NormRecord {
    pub const IDENTITY: NormRecord = NormRecord { center: [0.0; 3], scale: 1.0 };

    #[inline]
    pub fn apply(&self, p: Vec3) -> Vec3 {
        [
            (p[0] - self.center[0]) / self.scale,
            (p[1] - self.center[1]) / self.scale,
            (p[2] - self.center[2]) / self.scale,
        ]
    }

    #[inline]
    pub fn invert(&self, p: Vec3) -> Vec3 {
        [
            p[0] * self.scale + self.center[0],
            p[1] * self.scale + self.center[1],
            p[2] * self.scale + self.center[2],
        ]
    }

    pub fn apply_mesh(&self, mesh: &RawMesh) -> RawMesh {
        RawMesh {
            vertices: mesh.vertices.iter().map(|&p| self.apply(p)).collect(),
            faces: mesh.faces.clone(),
        }
    }
}

/// Centers the mesh on its bounding-box center and scales it uniformly so the
/// largest extent is 1. All output coordinates lie in `[-0.5, 0.5]`.
pub fn normalize(mesh: &RawMesh) -> Result<(RawMesh, NormRecord)> {
    let (lo, hi) = mesh.bbox().ok_or(Error::EmptyMesh)?;
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    if extent.is_nan() || extent <= 0.0 {
        return Err(Error::ZeroExtent);
    }
    let center = [
        0.5 * (lo[0] + hi[0]),
        0.5 * (lo[1] + hi[1]),
        0.5 * (lo[2] + hi[2]),
    ];
    let record = NormRecord { center, scale: extent };
    Ok((record.apply_mesh(mesh), record))
}

/// A mesh on the integer grid `[0, R-1]^3`.
///
/// Vertices are unique, and no face repeats a vertex index.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMesh {
    pub resolution: u32,
    pub vertices: Vec<[u32; 3]>,
    pub faces: Vec<[u32; 3]>,
    pub norm: NormRecord,
}

impl QuantizedMesh {
    #[inline]
    pub fn face_coords(&self, face: usize) -> [[u32; 3]; 3] {
        let [a, b, c] = self.faces[face];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Checks the grid, uniqueness and non-degeneracy invariants.
    pub fn validate(&self) -> Result<()> {
        check_resolution(self.resolution)?;
        let mut seen = BTreeSet::new();
        for v in &self.vertices {
            for &c in v {
                if c >= self.resolution {
                    return Err(Error::CoordinateOutOfRange { value: c, resolution: self.resolution });
                }
            }
            if !seen.insert(*v) {
                return Err(Error::InvalidParameter(alloc::format!("duplicate vertex {v:?}")));
            }
        }
        let count = self.vertices.len();
        for (face, f) in self.faces.iter().enumerate() {
            for &index in f {
                if index as usize >= count {
                    return Err(Error::IndexOutOfRange { face, index, count });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidParameter(alloc::format!("degenerate face {face}")));
            }
        }
        Ok(())
    }
}

/// Counts of what quantization merged or removed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QuantizeStats {
    pub merged_vertices: usize,
    pub dropped_degenerate: usize,
    pub dropped_duplicate: usize,
}

pub(crate) fn check_resolution(resolution: u32) -> Result<()> {
    if (2..=MAX_RESOLUTION).contains(&resolution) {
        Ok(())
    } else {
        Err(Error::InvalidResolution(resolution))
    }
}

/// `clamp(round_half_up((x + 0.5)(R - 1)), 0, R - 1)`.
#[inline]
pub fn quantize_coord(x: f64, resolution: u32) -> u32 {
    let top = (resolution - 1) as f64;
    let q = Float::floor((x + 0.5) * top + 0.5);
    if q.is_nan() || q <= 0.0 {
        0
    } else if q >= top {
        resolution - 1
    } else {
        q as u32
    }
}

#[inline]
pub fn dequantize_coord(q: u32, resolution: u32) -> f64 {
    q as f64 / (resolution - 1) as f64 - 0.5
}

/// Quantizes a normalized mesh. The result carries the identity
/// [`NormRecord`]; see [`normalize_and_quantize`] for the full path.
pub fn quantize(mesh: &RawMesh, resolution: u32) -> Result<QuantizedMesh> {
    quantize_with_stats(mesh, resolution).map(|(q, _)| q)
}

pub fn quantize_with_stats(mesh: &RawMesh, resolution: u32) -> Result<(QuantizedMesh, QuantizeStats)> {
    check_resolution(resolution)?;
    mesh.validate()?;
    let mut stats = QuantizeStats::default();
    let mut index_of: BTreeMap<[u32; 3], u32> = BTreeMap::new();
    let mut vertices = Vec::new();
    let remap: Vec<u32> = mesh
        .vertices
        .iter()
        .map(|p| {
            let q = [
                quantize_coord(p[0], resolution),
                quantize_coord(p[1], resolution),
                quantize_coord(p[2], resolution),
            ];
            *index_of.entry(q).or_insert_with(|| {
                vertices.push(q);
                (vertices.len() - 1) as u32
            })
        })
        .collect();
    stats.merged_vertices = mesh.vertices.len() - vertices.len();

    // Faces over the same vertex set collapse to one. Of opposite windings
    // the one with the smaller canonical key survives, so the result does
    // not depend on input face order.
    let mut slot_of: BTreeMap<[u32; 3], usize> = BTreeMap::new();
    let mut faces: Vec<[u32; 3]> = Vec::with_capacity(mesh.faces.len());
    let canon_key = |g: [u32; 3]| face_key(&canonical_rotation(g.map(|i| vertices[i as usize])));
    for f in &mesh.faces {
        let g = [remap[f[0] as usize], remap[f[1] as usize], remap[f[2] as usize]];
        if g[0] == g[1] || g[1] == g[2] || g[0] == g[2] {
            stats.dropped_degenerate += 1;
            continue;
        }
        let mut key = g;
        key.sort_unstable();
        match slot_of.get(&key) {
            Some(&slot) => {
                stats.dropped_duplicate += 1;
                if canon_key(g) < canon_key(faces[slot]) {
                    faces[slot] = g;
                }
            }
            None => {
                slot_of.insert(key, faces.len());
                faces.push(g);
            }
        }
    }
    Ok((
        QuantizedMesh { resolution, vertices, faces, norm: NormRecord::IDENTITY },
        stats,
    ))
}

pub fn normalize_and_quantize(mesh: &RawMesh, resolution: u32) -> Result<QuantizedMesh> {
    let (normalized, norm) = normalize(mesh)?;
    let mut q = quantize(&normalized, resolution)?;
    q.norm = norm;
    Ok(q)
}

/// Maps grid coordinates back to `[-0.5, 0.5]`, optionally undoing the
/// normalization as well.
pub fn dequantize(qmesh: &QuantizedMesh, denormalize: bool) -> RawMesh {
    let r = qmesh.resolution;
    let vertices = qmesh
        .vertices
        .iter()
        .map(|v| {
            let p = [dequantize_coord(v[0], r), dequantize_coord(v[1], r), dequantize_coord(v[2], r)];
            if denormalize {
                qmesh.norm.invert(p)
            } else {
                p
            }
        })
        .collect();
    RawMesh { vertices, faces: qmesh.faces.clone() }
}

/// Face ordering strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum OrderMode {
    /// Sort faces by the (z, y, x) key of their first (minimal) vertex.
    #[default]
    Zyx,
    /// Group faces by connected component, components ordered by their
    /// smallest face key, ZYX inside each component.
    ZyxComponent,
    /// Depth-first traversal over edge-adjacent faces.
    Dfs,
    /// Breadth-first traversal over edge-adjacent faces.
    Bfs,
}

impl OrderMode {
    pub const ALL: [OrderMode; 4] = [OrderMode::Zyx, OrderMode::ZyxComponent, OrderMode::Dfs, OrderMode::Bfs];

    pub fn name(self) -> &'static str {
        match self {
            OrderMode::Zyx => "zyx",
            OrderMode::ZyxComponent => "zyx-component",
            OrderMode::Dfs => "dfs",
            OrderMode::Bfs => "bfs",
        }
    }
}

impl fmt::Display for OrderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OrderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OrderMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(alloc::format!("unknown order mode `{s}`")))
    }
}

/// Faces as flattened `(v0.x, v0.y, v0.z, v1.x, ..., v2.z)` grid coordinates,
/// in generation order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderedFaceSequence {
    pub faces: Vec<[u32; 9]>,
    pub mode: OrderMode,
    pub resolution: u32,
}

impl OrderedFaceSequence {
    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Rebuilds a quantized mesh by deduplicating coordinate triples.
    pub fn to_mesh(&self) -> QuantizedMesh {
        let mut index_of: BTreeMap<[u32; 3], u32> = BTreeMap::new();
        let mut vertices = Vec::new();
        let mut faces = Vec::with_capacity(self.faces.len());
        for f in &self.faces {
            let mut tri = [0u32; 3];
            for (k, slot) in tri.iter_mut().enumerate() {
                let p = [f[3 * k], f[3 * k + 1], f[3 * k + 2]];
                *slot = *index_of.entry(p).or_insert_with(|| {
                    vertices.push(p);
                    (vertices.len() - 1) as u32
                });
            }
            faces.push(tri);
        }
        QuantizedMesh { resolution: self.resolution, vertices, faces, norm: NormRecord::IDENTITY }
    }
}

#[inline]
fn zyx(p: [u32; 3]) -> [u32; 3] {
    [p[2], p[1], p[0]]
}

/// Rotates the vertex triple cyclically so the (z, y, x)-minimal vertex comes
/// first. Winding is preserved.
#[inline]
pub fn canonical_rotation(tri: [[u32; 3]; 3]) -> [[u32; 3]; 3] {
    let mut first = 0;
    for k in 1..3 {
        if zyx(tri[k]) < zyx(tri[first]) {
            first = k;
        }
    }
    [tri[first], tri[(first + 1) % 3], tri[(first + 2) % 3]]
}

/// The total ordering key of a canonically rotated face: its three vertices'
/// (z, y, x) triples, concatenated.
#[inline]
pub fn face_key(tri: &[[u32; 3]; 3]) -> [u32; 9] {
    let mut key = [0; 9];
    for k in 0..3 {
        key[3 * k..3 * k + 3].copy_from_slice(&zyx(tri[k]));
    }
    key
}

#[inline]
fn flatten(tri: &[[u32; 3]; 3]) -> [u32; 9] {
    let mut out = [0; 9];
    for k in 0..3 {
        out[3 * k..3 * k + 3].copy_from_slice(&tri[k]);
    }
    out
}

/// Produces the face sequence for `mode`. Deterministic for every mode and
/// independent of the input's face order and per-face vertex rotation.
pub fn order_faces(qmesh: &QuantizedMesh, mode: OrderMode) -> OrderedFaceSequence {
    let n = qmesh.faces.len();
    let canon: Vec<[[u32; 3]; 3]> = (0..n).map(|f| canonical_rotation(qmesh.face_coords(f))).collect();
    let keys: Vec<[u32; 9]> = canon.iter().map(face_key).collect();

    // Faces sorted by key; the face index breaks ties between exact duplicates.
    let mut by_key: Vec<usize> = (0..n).collect();
    by_key.sort_by(|&a, &b| keys[a].cmp(&keys[b]).then(a.cmp(&b)));

    let order = match mode {
        OrderMode::Zyx => by_key,
        OrderMode::ZyxComponent => {
            let (labels, count) = face_components(qmesh.vertices.len(), &qmesh.faces);
            // Walking faces in key order, components appear in order of their
            // smallest face key.
            let mut rank = vec![usize::MAX; count];
            let mut next = 0;
            for &f in &by_key {
                if rank[labels[f]] == usize::MAX {
                    rank[labels[f]] = next;
                    next += 1;
                }
            }
            let mut order = by_key;
            order.sort_by_key(|&f| rank[labels[f]]);
            order
        }
        OrderMode::Dfs | OrderMode::Bfs => traverse(qmesh, &by_key, mode == OrderMode::Dfs),
    };

    OrderedFaceSequence {
        faces: order.iter().map(|&f| flatten(&canon[f])).collect(),
        mode,
        resolution: qmesh.resolution,
    }
}

/// Graph traversal over faces that share an (undirected) edge. Neighbours are
/// expanded in key order; each unreached component restarts from its
/// smallest face.
fn traverse(qmesh: &QuantizedMesh, by_key: &[usize], depth_first: bool) -> Vec<usize> {
    let n = qmesh.faces.len();
    let mut rank = vec![0usize; n];
    for (r, &f) in by_key.iter().enumerate() {
        rank[f] = r;
    }
    let mut edge_faces: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
    for (f, tri) in qmesh.faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            edge_faces.entry((a.min(b), a.max(b))).or_default().push(f);
        }
    }
    let mut neighbours: Vec<Vec<usize>> = vec![Vec::new(); n];
    for faces in edge_faces.values() {
        for &a in faces {
            for &b in faces {
                if a != b {
                    neighbours[a].push(b);
                }
            }
        }
    }
    for list in &mut neighbours {
        list.sort_by_key(|&f| rank[f]);
        list.dedup();
    }

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for &start in by_key {
        if visited[start] {
            continue;
        }
        if depth_first {
            // Preorder DFS: descend into the smallest unvisited neighbour first.
            visited[start] = true;
            order.push(start);
            let mut stack = vec![(start, 0usize)];
            while let Some((face, cursor)) = stack.last_mut() {
                let list = &neighbours[*face];
                match list[*cursor..].iter().position(|&g| !visited[g]) {
                    Some(offset) => {
                        let next = list[*cursor + offset];
                        *cursor += offset + 1;
                        visited[next] = true;
                        order.push(next);
                        stack.push((next, 0));
                    }
                    None => {
                        stack.pop();
                    }
                }
            }
        } else {
            visited[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(face) = queue.pop_front() {
                order.push(face);
                for &next in &neighbours[face] {
                    if !visited[next] {
                        visited[next] = true;
                        queue.push_back(next);
                    }
                }
            }
        }
    }
    order
}

/// Augmentation switches. With every switch off, [`augment`] reduces to
/// [`normalize`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct AugmentParams {
    pub rotate: bool,
    pub flip: bool,
    pub scale: bool,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Axis the random rotation turns about (0 = x, 1 = y, 2 = z).
    pub up_axis: usize,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self { rotate: true, flip: true, scale: true, scale_min: 0.75, scale_max: 1.25, up_axis: 2 }
    }
}

impl AugmentParams {
    pub fn disabled() -> Self {
        Self { rotate: false, flip: false, scale: false, ..Self::default() }
    }

    pub fn is_disabled(&self) -> bool {
        !(self.rotate || self.flip || self.scale)
    }
}

/// Rotation about the up axis, per-axis mirror flips, per-axis scaling, then
/// re-normalization. All draws are taken in a fixed order whatever the
/// switches, so toggling one augmentation never changes another's sample.
pub fn augment(mesh: &RawMesh, seed: u64, params: &AugmentParams) -> Result<RawMesh> {
    if params.up_axis > 2 {
        return Err(Error::InvalidParameter(alloc::format!("up_axis {} not in 0..3", params.up_axis)));
    }
    let mut rng = rng::from_seed(seed);
    let angle = rng.random::<f64>() * core::f64::consts::TAU;
    let flips: [bool; 3] = [rng.random(), rng.random(), rng.random()];
    let scales: [f64; 3] = core::array::from_fn(|_| {
        params.scale_min + (params.scale_max - params.scale_min) * rng.random::<f64>()
    });

    let mut out = mesh.clone();
    if params.rotate {
        let (s, c) = (Float::sin(angle), Float::cos(angle));
        let (a, b) = match params.up_axis {
            0 => (1, 2),
            1 => (2, 0),
            _ => (0, 1),
        };
        for v in &mut out.vertices {
            let (pa, pb) = (v[a], v[b]);
            v[a] = c * pa - s * pb;
            v[b] = s * pa + c * pb;
        }
    }
    if params.flip {
        out = flip_axes(&out, flips);
    }
    if params.scale {
        for v in &mut out.vertices {
            for a in 0..3 {
                v[a] *= scales[a];
            }
        }
    }
    normalize(&out).map(|(m, _)| m)
}

/// Mirrors the selected axes. An odd number of mirrors reverses the winding
/// of every face so outward normals stay outward.
pub fn flip_axes(mesh: &RawMesh, axes: [bool; 3]) -> RawMesh {
    let mut out = mesh.clone();
    for v in &mut out.vertices {
        for a in 0..3 {
            if axes[a] {
                v[a] = -v[a];
            }
        }
    }
    if axes.iter().filter(|&&f| f).count() % 2 == 1 {
        for f in &mut out.faces {
            f.swap(1, 2);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{self, SyntheticKind, SyntheticSpec};
    use rand::seq::SliceRandom;

    fn box_mesh(lo: Vec3, hi: Vec3) -> RawMesh {
        let mut m = synth::cube_mesh();
        for v in &mut m.vertices {
            for a in 0..3 {
                v[a] = if v[a] < 0.0 { lo[a] } else { hi[a] };
            }
        }
        m
    }

    #[test]
    fn normalize_cube_0_2() {
        let (m, rec) = normalize(&box_mesh([0.0; 3], [2.0; 3])).unwrap();
        assert_eq!(rec.scale, 2.0);
        assert_eq!(rec.center, [1.0; 3]);
        let (lo, hi) = m.bbox().unwrap();
        assert_eq!(lo, [-0.5; 3]);
        assert_eq!(hi, [0.5; 3]);
    }

    #[test]
    fn normalize_fixed_point() {
        let src = box_mesh([-0.5; 3], [0.5; 3]);
        let (m, rec) = normalize(&src).unwrap();
        assert_eq!(rec, NormRecord::IDENTITY);
        assert_eq!(m, src);
    }

    #[test]
    fn normalize_elongated_box() {
        let (m, _) = normalize(&box_mesh([0.0; 3], [4.0, 1.0, 1.0])).unwrap();
        let (lo, hi) = m.bbox().unwrap();
        assert_eq!((lo[0], hi[0]), (-0.5, 0.5));
        assert_eq!((lo[1], hi[1]), (-0.125, 0.125));
        assert_eq!((lo[2], hi[2]), (-0.125, 0.125));
    }

    #[test]
    fn normalize_rejects_degenerate_inputs() {
        assert_eq!(normalize(&RawMesh::default()).unwrap_err(), Error::EmptyMesh);
        let point = RawMesh { vertices: vec![[1.0, 2.0, 3.0]; 4], faces: vec![] };
        assert_eq!(normalize(&point).unwrap_err(), Error::ZeroExtent);
    }

    #[test]
    fn quantize_endpoints_and_midpoint() {
        assert_eq!(quantize_coord(-0.5, 128), 0);
        assert_eq!(quantize_coord(0.5, 128), 127);
        // 0.5 * 127 = 63.5 rounds half up.
        assert_eq!(quantize_coord(0.0, 128), 64);
        assert_eq!(quantize_coord(-3.0, 128), 0);
        assert_eq!(quantize_coord(3.0, 128), 127);
    }

    #[test]
    fn quantize_rejects_small_resolution() {
        let m = box_mesh([-0.5; 3], [0.5; 3]);
        assert_eq!(quantize(&m, 1).unwrap_err(), Error::InvalidResolution(1));
        assert!(quantize(&m, 2).is_ok());
    }

    #[test]
    fn sliver_collapses_and_is_dropped() {
        // Two vertices 1e-4 apart merge at R = 128; the sliver face degenerates.
        let m = RawMesh::new(
            vec![[-0.5, -0.5, -0.5], [0.5, 0.5, 0.5], [0.5, 0.5, 0.5 - 1e-4], [-0.5, 0.5, 0.0]],
            vec![[0, 1, 2], [0, 1, 3]],
        )
        .unwrap();
        let (q, stats) = quantize_with_stats(&m, 128).unwrap();
        assert_eq!(stats.dropped_degenerate, 1);
        assert_eq!(stats.merged_vertices, 1);
        assert_eq!(q.faces.len(), 1);
        q.validate().unwrap();
    }

    #[test]
    fn quantize_drops_duplicate_faces() {
        let m = RawMesh::new(
            vec![[-0.5, -0.5, -0.5], [0.5, -0.5, -0.5], [0.0, 0.5, 0.5]],
            vec![[0, 1, 2], [2, 1, 0]],
        )
        .unwrap();
        let (q, stats) = quantize_with_stats(&m, 16).unwrap();
        assert_eq!(stats.dropped_duplicate, 1);
        assert_eq!(q.faces.len(), 1);
        // The surviving winding does not depend on which copy came first.
        let swapped = RawMesh { faces: vec![[2, 1, 0], [0, 1, 2]], ..m };
        assert_eq!(quantize(&swapped, 16).unwrap().faces, q.faces);
    }

    #[test]
    fn dequantize_formula() {
        assert_eq!(dequantize_coord(0, 128), -0.5);
        assert_eq!(dequantize_coord(127, 128), 0.5);
    }

    #[test]
    fn dequantize_denormalizes() {
        let src = box_mesh([0.0; 3], [2.0, 4.0, 1.0]);
        let q = normalize_and_quantize(&src, 1024).unwrap();
        let back = dequantize(&q, true);
        for (a, b) in back.vertices.iter().zip(&src.vertices) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 0.5 / 1023.0 * 4.0 + 1e-12);
            }
        }
    }

    fn tri_mesh(tris: &[[[u32; 3]; 3]], resolution: u32) -> QuantizedMesh {
        let seq = OrderedFaceSequence {
            faces: tris.iter().map(flatten).collect(),
            mode: OrderMode::Zyx,
            resolution,
        };
        seq.to_mesh()
    }

    #[test]
    fn zyx_orders_by_minimal_vertex() {
        // Face B's minimal vertex is (x=1, y=0, z=0); face A's is the origin.
        let b = [[1, 0, 0], [3, 0, 0], [1, 2, 0]];
        let a = [[0, 0, 0], [0, 5, 5], [0, 0, 5]];
        let seq = order_faces(&tri_mesh(&[b, a], 8), OrderMode::Zyx);
        assert_eq!(seq.faces[0][..3], [0, 0, 0]);
        assert_eq!(seq.faces[1][..3], [1, 0, 0]);
    }

    #[test]
    fn rotation_keeps_winding() {
        let tri = [[5, 5, 5], [1, 2, 3], [4, 4, 0]];
        let c = canonical_rotation(tri);
        assert_eq!(c, [[4, 4, 0], [5, 5, 5], [1, 2, 3]]);
    }

    fn sample_mesh(seed: u64) -> QuantizedMesh {
        let raw = synth::generate(&SyntheticSpec::new(SyntheticKind::MultiComponent { parts: 3 }, seed)).unwrap();
        normalize_and_quantize(&raw, 64).unwrap()
    }

    #[test]
    fn ordering_is_idempotent_for_every_mode() {
        let q = sample_mesh(3);
        for mode in OrderMode::ALL {
            let first = order_faces(&q, mode);
            let again = order_faces(&first.to_mesh(), mode);
            assert_eq!(first, again, "{mode}");
            assert_eq!(first.len(), q.faces.len());
        }
    }

    #[test]
    fn traversals_visit_every_face_once() {
        let q = sample_mesh(11);
        let reference = order_faces(&q, OrderMode::Zyx);
        let mut want = reference.faces.clone();
        want.sort();
        for mode in [OrderMode::Dfs, OrderMode::Bfs, OrderMode::ZyxComponent] {
            let mut got = order_faces(&q, mode).faces;
            got.sort();
            assert_eq!(got, want, "{mode}");
        }
    }

    #[test]
    fn component_mode_keeps_components_contiguous() {
        let q = sample_mesh(5);
        let seq = order_faces(&q, OrderMode::ZyxComponent);
        let mesh = seq.to_mesh();
        let (labels, count) = face_components(mesh.vertices.len(), &mesh.faces);
        assert_eq!(count, 3);
        let mut changes = 0;
        for w in labels.windows(2) {
            if w[0] != w[1] {
                changes += 1;
            }
        }
        assert_eq!(changes, count - 1);
    }

    #[test]
    fn dfs_and_bfs_differ_on_closed_parts() {
        let q = sample_mesh(2);
        assert_ne!(order_faces(&q, OrderMode::Dfs), order_faces(&q, OrderMode::Bfs));
    }

    #[test]
    fn zyx_invariant_to_face_permutation_and_rotation() {
        let q = sample_mesh(9);
        let reference = order_faces(&q, OrderMode::Zyx);
        let mut rng = rng::from_seed(1);
        let mut shuffled = q.clone();
        shuffled.faces.shuffle(&mut rng);
        for f in &mut shuffled.faces {
            let r = rng.random_range(0..3);
            f.rotate_left(r);
        }
        assert_eq!(order_faces(&shuffled, OrderMode::Zyx), reference);
    }

    #[test]
    fn augment_disabled_is_normalize() {
        let raw = synth::generate(&SyntheticSpec::new(SyntheticKind::Torus { major: 6, minor: 4 }, 1)).unwrap();
        let out = augment(&raw, 17, &AugmentParams::disabled()).unwrap();
        assert_eq!(out, normalize(&raw).unwrap().0);
    }

    #[test]
    fn augment_is_deterministic() {
        let raw = synth::generate(&SyntheticSpec::new(SyntheticKind::Cylinder { segments: 9 }, 4)).unwrap();
        let p = AugmentParams::default();
        let a = augment(&raw, 99, &p).unwrap();
        let b = augment(&raw, 99, &p).unwrap();
        assert_eq!(a, b);
        let c = augment(&raw, 100, &p).unwrap();
        assert_ne!(a, c);
        let (lo, hi) = a.bbox().unwrap();
        let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
        assert!((extent - 1.0).abs() < 1e-12);
    }

    #[test]
    fn double_flip_is_identity() {
        let raw = synth::cube_mesh();
        let once = flip_axes(&raw, [true, false, false]);
        assert_ne!(once, raw);
        assert_eq!(flip_axes(&once, [true, false, false]), raw);
    }

    #[test]
    fn order_mode_names_round_trip() {
        for m in OrderMode::ALL {
            assert_eq!(m.name().parse::<OrderMode>().unwrap(), m);
        }
        assert!("xyz".parse::<OrderMode>().is_err());
    }
}
