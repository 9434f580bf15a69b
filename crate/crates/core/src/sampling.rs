//! Surface point sampling and farthest point sampling.

use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::mesh::RawMesh;
use crate::rng;

/// Oriented points on a surface. Normals have unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(positions: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        if positions.len() != normals.len() {
            return Err(crate::error::shape_err!(
                "{} positions but {} normals",
                positions.len(),
                normals.len()
            ));
        }
        Ok(Self { positions, normals })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Reorders points by `perm` (`out[i] = self[perm[i]]`).
    pub fn permuted(&self, perm: &[usize]) -> PointCloud {
        PointCloud {
            positions: perm.iter().map(|&i| self.positions[i]).collect(),
            normals: perm.iter().map(|&i| self.normals[i]).collect(),
        }
    }
}

/// Draws `m` points uniformly over the surface area: faces are picked with
/// probability proportional to area and points are placed with uniform
/// barycentric coordinates. Each point carries its face's normal.
pub fn sample_surface(mesh: &RawMesh, m: usize, seed: u64) -> Result<PointCloud> {
    mesh.validate()?;
    if m == 0 {
        return Err(Error::InvalidParameter("sample count must be positive".into()));
    }
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut normals = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        let [a, b, c] = mesh.face_positions(f);
        let n = geom::triangle_cross(a, b, c);
        let len = geom::norm(n);
        total += 0.5 * len;
        cumulative.push(total);
        normals.push(if len > 0.0 { geom::scale(n, 1.0 / len) } else { [0.0; 3] });
    }
    if total.is_nan() || total <= 0.0 {
        return Err(Error::ZeroArea);
    }

    let mut rng = rng::from_seed(seed);
    let mut positions = Vec::with_capacity(m);
    let mut out_normals = Vec::with_capacity(m);
    for _ in 0..m {
        let u = rng.random::<f64>() * total;
        // First face whose cumulative area exceeds u; zero-area faces are
        // never selected.
        let face = cumulative.partition_point(|&c| c <= u).min(mesh.faces.len() - 1);
        let r1 = Float::sqrt(rng.random::<f64>());
        let r2 = rng.random::<f64>();
        let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
        let [a, b, c] = mesh.face_positions(face);
        positions.push([
            wa * a[0] + wb * b[0] + wc * c[0],
            wa * a[1] + wb * b[1] + wc * c[1],
            wa * a[2] + wb * b[2] + wc * c[2],
        ]);
        out_normals.push(normals[face]);
    }
    Ok(PointCloud { positions, normals: out_normals })
}

/// Greedy farthest point sampling from `start`: every pick maximizes the
/// minimum Euclidean distance to the points already picked, ties going to
/// the lowest index.
pub fn fps(positions: &[Vec3], k: usize, start: usize) -> Result<Vec<usize>> {
    let m = positions.len();
    if k > m {
        return Err(Error::TooManySamples { k, m });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    if start >= m {
        return Err(Error::InvalidParameter(alloc::format!("start index {start} >= {m}")));
    }
    let mut picked = Vec::with_capacity(k);
    let mut nearest = alloc::vec![f64::INFINITY; m];
    let mut current = start;
    loop {
        picked.push(current);
        if picked.len() == k {
            return Ok(picked);
        }
        nearest[current] = f64::NEG_INFINITY;
        let anchor = positions[current];
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in positions.iter().enumerate() {
            if nearest[i] == f64::NEG_INFINITY {
                continue;
            }
            let d = geom::distance(*p, anchor);
            if d < nearest[i] {
                nearest[i] = d;
            }
            if nearest[i] > best_d {
                best_d = nearest[i];
                best = i;
            }
        }
        current = best;
    }
}

/// FPS with the start index drawn from `seed`.
pub fn fps_seeded(positions: &[Vec3], k: usize, seed: u64) -> Result<Vec<usize>> {
    if positions.is_empty() {
        return fps(positions, k, 0);
    }
    let start = rng::from_seed(seed).random_range(0..positions.len());
    fps(positions, k, start)
}
