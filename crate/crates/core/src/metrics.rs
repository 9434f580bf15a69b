//! Reconstruction metrics and token-efficiency reporting.
//!
//! Distances are plain Euclidean (not squared). Chamfer is the average of the
//! two directed mean nearest-neighbour distances; Hausdorff is the larger of
//! the two directed maxima.

use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::mesh::RawMesh;
use crate::prep::{normalize, normalize_and_quantize};
use crate::rng;
use crate::sampling::sample_surface;

/// Above this many point pairs the grid index is used for nearest-neighbour
/// queries. Both paths return identical distances.
const GRID_THRESHOLD: usize = 1 << 16;

/// Nearest-neighbour distance from every point of `from` to the set `to`.
pub fn nearest_distances(from: &[Vec3], to: &[Vec3]) -> Result<Vec<f64>> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if from.len() * to.len() <= GRID_THRESHOLD {
        Ok(nearest_brute(from, to))
    } else {
        Ok(GridIndex::new(to).nearest_all(from))
    }
}

pub fn nearest_brute(from: &[Vec3], to: &[Vec3]) -> Vec<f64> {
    from.iter()
        .map(|&a| to.iter().fold(f64::INFINITY, |best, &b| best.min(geom::distance(a, b))))
        .collect()
}

fn directed_mean(d: &[f64]) -> f64 {
    d.iter().sum::<f64>() / d.len() as f64
}

fn directed_max(d: &[f64]) -> f64 {
    d.iter().fold(0.0, |m, &x| m.max(x))
}

pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    let ab = nearest_distances(a, b)?;
    let ba = nearest_distances(b, a)?;
    Ok(0.5 * (directed_mean(&ab) + directed_mean(&ba)))
}

pub fn hausdorff(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    let ab = nearest_distances(a, b)?;
    let ba = nearest_distances(b, a)?;
    Ok(directed_max(&ab).max(directed_max(&ba)))
}

/// Both metrics from one pair of nearest-neighbour sweeps.
pub fn chamfer_hausdorff(a: &[Vec3], b: &[Vec3]) -> Result<(f64, f64)> {
    let ab = nearest_distances(a, b)?;
    let ba = nearest_distances(b, a)?;
    Ok((
        0.5 * (directed_mean(&ab) + directed_mean(&ba)),
        directed_max(&ab).max(directed_max(&ba)),
    ))
}

/// Uniform grid over a point set for exact nearest-neighbour queries.
///
/// Cells are searched in growing cubic shells; a shell is only skipped once
/// its distance lower bound exceeds the best candidate, so the result is the
/// same floating-point value brute force produces.
pub struct GridIndex<'a> {
    points: &'a [Vec3],
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<usize>,
    items: Vec<usize>,
}

impl<'a> GridIndex<'a> {
    pub fn new(points: &'a [Vec3]) -> Self {
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max).max(1e-12);
        // About two points per cell for surface samples.
        let per_axis = Float::sqrt(points.len() as f64 / 2.0).max(1.0);
        let cell = extent / per_axis;
        let dims: [usize; 3] = core::array::from_fn(|a| (((hi[a] - lo[a]) / cell) as usize + 1).min(1024));
        let mut grid = Self { points, origin: lo, cell, dims, starts: Vec::new(), items: Vec::new() };
        let n_cells = dims[0] * dims[1] * dims[2];
        let mut counts = alloc::vec![0usize; n_cells + 1];
        let keys: Vec<usize> = points.iter().map(|p| grid.flat(grid.cell_of(*p))).collect();
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for i in 0..n_cells {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut items = alloc::vec![0; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            items[fill[k]] = i;
            fill[k] += 1;
        }
        grid.starts = counts;
        grid.items = items;
        grid
    }

    fn cell_of(&self, p: Vec3) -> [usize; 3] {
        core::array::from_fn(|a| {
            let c = ((p[a] - self.origin[a]) / self.cell).floor();
            if c < 0.0 {
                0
            } else {
                (c as usize).min(self.dims[a] - 1)
            }
        })
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    pub fn nearest(&self, q: Vec3) -> f64 {
        let home = self.cell_of(q);
        let max_ring = self.dims.iter().copied().max().unwrap_or(1);
        let mut best = f64::INFINITY;
        for ring in 0..=max_ring {
            // Any point in a cell at Chebyshev ring `ring` is at least
            // (ring - 1) * cell away from q (q may sit anywhere in its cell,
            // or outside the grid, where the bound is only stronger).
            if ring >= 1 && ((ring - 1) as f64) * self.cell > best {
                break;
            }
            self.visit_ring(home, ring, |i| {
                let d = geom::distance(q, self.points[i]);
                if d < best {
                    best = d;
                }
            });
        }
        best
    }

    fn visit_ring(&self, home: [usize; 3], ring: usize, mut f: impl FnMut(usize)) {
        let r = ring as isize;
        let range = |a: usize| {
            let lo = (home[a] as isize - r).max(0);
            let hi = (home[a] as isize + r).min(self.dims[a] as isize - 1);
            (lo, hi)
        };
        let (x0, x1) = range(0);
        let (y0, y1) = range(1);
        let (z0, z1) = range(2);
        for z in z0..=z1 {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let on_shell = (x - home[0] as isize).abs() == r
                        || (y - home[1] as isize).abs() == r
                        || (z - home[2] as isize).abs() == r;
                    if !on_shell {
                        continue;
                    }
                    let c = self.flat([x as usize, y as usize, z as usize]);
                    for &i in &self.items[self.starts[c]..self.starts[c + 1]] {
                        f(i);
                    }
                }
            }
        }
    }

    pub fn nearest_all(&self, queries: &[Vec3]) -> Vec<f64> {
        #[cfg(feature = "std")]
        {
            use rayon::prelude::*;
            queries.par_iter().map(|&q| self.nearest(q)).collect()
        }
        #[cfg(not(feature = "std"))]
        {
            queries.iter().map(|&q| self.nearest(q)).collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub chamfer: f64,
    pub hausdorff: f64,
    pub n_samples: usize,
    pub seed: u64,
}

/// Samples `n` surface points from each mesh after mapping both through the
/// ground truth's normalization record, then compares the point sets.
pub fn eval_reconstruction(gt: &RawMesh, pred: &RawMesh, n: usize, seed: u64) -> Result<EvalResult> {
    let (gt_norm, record) = normalize(gt)?;
    let pred_norm = record.apply_mesh(pred);
    let a = sample_surface(&gt_norm, n, rng::mix(seed, 0))?;
    let b = sample_surface(&pred_norm, n, rng::mix(seed, 1))?;
    let (chamfer, hausdorff) = chamfer_hausdorff(&a.positions, &b.positions)?;
    Ok(EvalResult { chamfer, hausdorff, n_samples: n, seed })
}

/// One reference compression ratio, echoed in reports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PublishedRatio {
    pub method: &'static str,
    pub ratio: f64,
}

/// Reference token-efficiency figures (per-coordinate baseline = 1.00).
pub const PUBLISHED_RATIOS: [PublishedRatio; 12] = [
    PublishedRatio { method: "MeshXL", ratio: 1.00 },
    PublishedRatio { method: "MeshAnything", ratio: 1.00 },
    PublishedRatio { method: "MeshGPT", ratio: 0.67 },
    PublishedRatio { method: "PivotMesh", ratio: 0.67 },
    PublishedRatio { method: "EdgeRunner", ratio: 0.47 },
    PublishedRatio { method: "MeshAnything v2", ratio: 0.46 },
    PublishedRatio { method: "DeepMesh", ratio: 0.28 },
    PublishedRatio { method: "Nautilus", ratio: 0.27 },
    PublishedRatio { method: "BPT", ratio: 0.26 },
    PublishedRatio { method: "Mesh-Silksong", ratio: 0.22 },
    PublishedRatio { method: "TreeMeshGPT", ratio: 0.22 },
    PublishedRatio { method: "face tokens", ratio: 0.11 },
];

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionRow {
    pub name: String,
    pub faces: usize,
    pub face_tokens: usize,
    pub baseline_tokens: usize,
    /// `None` for meshes that quantize to zero faces.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionReport {
    pub resolution: u32,
    pub rows: Vec<CompressionRow>,
    pub aggregate: CompressionRow,
    pub published: &'static [PublishedRatio],
}

fn row(name: String, faces: usize) -> CompressionRow {
    let face_tokens = faces + 1;
    let baseline_tokens = 9 * faces;
    CompressionRow {
        name,
        faces,
        face_tokens,
        baseline_tokens,
        ratio: (faces > 0).then(|| face_tokens as f64 / baseline_tokens as f64),
    }
}

/// Face counts are measured after normalization and quantization at
/// `resolution`, i.e. on exactly the sequence a model would see.
pub fn compression_report(dataset: &[(String, RawMesh)], resolution: u32) -> Result<CompressionReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidParameter("compression report needs at least one mesh".into()));
    }
    let mut rows = Vec::with_capacity(dataset.len());
    for (name, mesh) in dataset {
        let q = normalize_and_quantize(mesh, resolution)?;
        rows.push(row(name.clone(), q.faces.len()));
    }
    let total_faces: usize = rows.iter().map(|r| r.faces).sum();
    let mut aggregate = row("aggregate".into(), total_faces);
    // Aggregate counts one EOS per mesh: sum(N_i + 1) / sum(9 N_i).
    aggregate.face_tokens = rows.iter().map(|r| r.face_tokens).sum();
    aggregate.ratio = (total_faces > 0).then(|| aggregate.face_tokens as f64 / aggregate.baseline_tokens as f64);
    Ok(CompressionReport { resolution, rows, aggregate, published: &PUBLISHED_RATIOS })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::Rng as _;

    #[test]
    fn identical_sets_are_zero() {
        let a = vec![[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]];
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn unit_separated_singletons() {
        let a = vec![[0.0; 3]];
        let b = vec![[1.0, 0.0, 0.0]];
        assert_eq!(chamfer(&a, &b).unwrap(), 1.0);
        assert_eq!(hausdorff(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn hausdorff_takes_worse_direction() {
        let a = vec![[0.0; 3]];
        let b = vec![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        assert_eq!(hausdorff(&a, &b).unwrap(), 2.0);
        assert_eq!(hausdorff(&b, &a).unwrap(), 2.0);
    }

    #[test]
    fn empty_sets_are_errors() {
        assert_eq!(chamfer(&[], &[[0.0; 3]]).unwrap_err(), Error::EmptyPointSet);
        assert_eq!(hausdorff(&[[0.0; 3]], &[]).unwrap_err(), Error::EmptyPointSet);
    }

    #[test]
    fn grid_matches_brute_force() {
        let mut rng = rng::from_seed(5);
        for trial in 0..20 {
            let n = 50 + 40 * trial;
            let a: Vec<Vec3> = (0..n).map(|_| [rng.random(), rng.random(), rng.random::<f64>() * 0.1]).collect();
            let b: Vec<Vec3> = (0..n / 2 + 3)
                .map(|_| [rng.random::<f64>() * 1.5 - 0.2, rng.random(), rng.random()])
                .collect();
            assert_eq!(GridIndex::new(&b).nearest_all(&a), nearest_brute(&a, &b));
        }
    }

    #[test]
    fn grid_handles_coincident_points() {
        let b = vec![[0.25; 3]; 10];
        let a = vec![[0.0; 3], [0.25; 3], [1.0, 0.0, 0.0]];
        assert_eq!(GridIndex::new(&b).nearest_all(&a), nearest_brute(&a, &b));
    }

    #[test]
    fn self_comparison_is_small() {
        let m = crate::synth::icosphere(2);
        let r = eval_reconstruction(&m, &m, 4096, 0).unwrap();
        assert!(r.chamfer < 0.05 && r.hausdorff < 0.1, "{r:?}");
    }

    #[test]
    fn translation_lower_bounds_hausdorff() {
        let gt = crate::synth::cube_mesh();
        let mut pred = gt.clone();
        for v in &mut pred.vertices {
            v[0] += 0.5;
        }
        let r = eval_reconstruction(&gt, &pred, 2048, 1).unwrap();
        assert!(r.hausdorff >= 0.5, "{r:?}");
    }

    #[test]
    fn far_triangle_hausdorff_near_diagonal() {
        // A tiny triangle at one corner of the unit cube: every gt sample on
        // the far corner region is ~ a diagonal away.
        let gt = crate::synth::cube_mesh();
        let pred = RawMesh::new(
            vec![[-0.5, -0.5, -0.5], [-0.49, -0.5, -0.5], [-0.5, -0.49, -0.5]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let r = eval_reconstruction(&gt, &pred, 4096, 2).unwrap();
        let diag = Float::sqrt(3.0);
        assert!(r.hausdorff <= diag && r.hausdorff > 0.9 * diag, "{r:?}");
    }

    #[test]
    fn published_table_is_complete() {
        assert_eq!(PUBLISHED_RATIOS.len(), 12);
        assert_eq!(PUBLISHED_RATIOS[0].method, "MeshXL");
        assert_eq!(PUBLISHED_RATIOS[11], PublishedRatio { method: "face tokens", ratio: 0.11 });
    }

    #[test]
    fn aggregate_ratio_definition() {
        let data = vec![
            ("a".into(), crate::synth::cube_mesh()),
            ("b".into(), crate::synth::icosphere(1)),
        ];
        let rep = compression_report(&data, 128).unwrap();
        assert_eq!(rep.rows[0].faces, 12);
        assert_eq!(rep.rows[1].faces, 80);
        assert_eq!(rep.aggregate.ratio.unwrap(), (13.0 + 81.0) / (9.0 * 92.0));
    }
}
