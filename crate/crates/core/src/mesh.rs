//! Triangle mesh container and structural analysis.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

/// A triangle mesh with continuous coordinates.
///
/// Faces are 0-based vertex index triples. [`RawMesh::new`] checks that every
/// index is in range; the fields stay public for callers that build meshes
/// incrementally and call [`RawMesh::validate`] afterwards.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl RawMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = Self { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let count = self.vertices.len();
        for (face, f) in self.faces.iter().enumerate() {
            for &index in f {
                if index as usize >= count {
                    return Err(Error::IndexOutOfRange { face, index, count });
                }
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    #[inline]
    pub fn face_positions(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.face_positions(face);
        geom::triangle_area(a, b, c)
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Axis-aligned bounding box; `None` for a mesh without vertices.
    pub fn bbox(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        let mut lo = first;
        let mut hi = first;
        for v in &self.vertices[1..] {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        Some((lo, hi))
    }

    /// Appends `other`, offsetting its indices.
    pub fn append(&mut self, other: &RawMesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.faces
            .extend(other.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
    }
}

/// Structural summary of a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshReport {
    pub vertex_count: usize,
    pub face_count: usize,
    /// Faces that repeat a vertex index.
    pub degenerate_face_count: usize,
    /// Faces whose unordered vertex set already occurred earlier.
    pub duplicate_face_count: usize,
    /// Connected components of faces, joined through shared vertices.
    pub component_count: usize,
    pub bbox_min: Vec3,
    pub bbox_max: Vec3,
}

pub fn analyze(mesh: &RawMesh) -> MeshReport {
    let mut degenerate = 0;
    let mut duplicate = 0;
    let mut seen = BTreeSet::new();
    for f in &mesh.faces {
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            degenerate += 1;
        }
        let mut key = *f;
        key.sort_unstable();
        if !seen.insert(key) {
            duplicate += 1;
        }
    }
    let (bbox_min, bbox_max) = mesh.bbox().unwrap_or(([0.0; 3], [0.0; 3]));
    MeshReport {
        vertex_count: mesh.vertices.len(),
        face_count: mesh.faces.len(),
        degenerate_face_count: degenerate,
        duplicate_face_count: duplicate,
        component_count: face_components(mesh.vertices.len(), &mesh.faces).1,
        bbox_min,
        bbox_max,
    }
}

/// Labels faces by connected component (shared vertices join faces).
///
/// Returns per-face component labels, numbered by first appearance in face
/// order, and the number of components.
pub fn face_components(vertex_count: usize, faces: &[[u32; 3]]) -> (Vec<usize>, usize) {
    let mut uf = UnionFind::new(vertex_count);
    for f in faces {
        uf.union(f[0] as usize, f[1] as usize);
        uf.union(f[1] as usize, f[2] as usize);
    }
    let mut label_of_root = alloc::vec![usize::MAX; vertex_count];
    let mut next = 0;
    let labels = faces
        .iter()
        .map(|f| {
            let root = uf.find(f[0] as usize);
            if label_of_root[root] == usize::MAX {
                label_of_root[root] = next;
                next += 1;
            }
            label_of_root[root]
        })
        .collect();
    (labels, next)
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), rank: alloc::vec![0; n] }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            core::cmp::Ordering::Less => self.parent[ra] = rb,
            core::cmp::Ordering::Greater => self.parent[rb] = ra,
            core::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}
