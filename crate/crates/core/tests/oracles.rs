use face_core::geom::Vec3;
use face_core::metrics::{chamfer, chamfer_hausdorff, hausdorff};
use face_core::sampling::fps;
use proptest::prelude::*;

fn dist(a: Vec3, b: Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Recomputes every unpicked point's distance to the whole picked set at
/// each step; ties go to the lowest index.
fn fps_oracle(points: &[Vec3], k: usize, start: usize) -> Vec<usize> {
    let mut picked = vec![start];
    while picked.len() < k {
        let mut best = None::<(f64, usize)>;
        for (i, &p) in points.iter().enumerate() {
            if picked.contains(&i) {
                continue;
            }
            let d = picked.iter().map(|&j| dist(p, points[j])).fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(bd, _)| d > bd) {
                best = Some((d, i));
            }
        }
        picked.push(best.unwrap().1);
    }
    picked
}

fn naive(a: &[Vec3], b: &[Vec3]) -> (f64, f64) {
    let directed = |x: &[Vec3], y: &[Vec3]| -> Vec<f64> {
        x.iter().map(|&p| y.iter().map(|&q| dist(p, q)).fold(f64::INFINITY, f64::min)).collect()
    };
    let ab = directed(a, b);
    let ba = directed(b, a);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let max = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
    (0.5 * (mean(&ab) + mean(&ba)), max(&ab).max(max(&ba)))
}

fn cloud(max: usize) -> impl Strategy<Value = Vec<Vec3>> {
    prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 1..=max)
}

/// Points on a coarse lattice, so exact distance ties are common.
fn lattice_cloud(max: usize) -> impl Strategy<Value = Vec<Vec3>> {
    prop::collection::vec(prop::array::uniform3((0i32..4).prop_map(f64::from)), 1..=max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fps_matches_oracle(points in cloud(64), kf in 0.0f64..=1.0, sf in 0.0f64..1.0) {
        let k = 1 + ((points.len() - 1) as f64 * kf) as usize;
        let start = (sf * points.len() as f64) as usize;
        prop_assert_eq!(fps(&points, k, start).unwrap(), fps_oracle(&points, k, start));
    }

    #[test]
    fn fps_matches_oracle_with_ties(points in lattice_cloud(64), kf in 0.0f64..=1.0) {
        let k = 1 + ((points.len() - 1) as f64 * kf) as usize;
        prop_assert_eq!(fps(&points, k, 0).unwrap(), fps_oracle(&points, k, 0));
    }

    #[test]
    fn metrics_match_naive(a in cloud(200), b in cloud(200)) {
        let (cd, hd) = naive(&a, &b);
        prop_assert_eq!(chamfer(&a, &b).unwrap(), cd);
        prop_assert_eq!(hausdorff(&a, &b).unwrap(), hd);
        prop_assert_eq!(chamfer_hausdorff(&a, &b).unwrap(), (cd, hd));
    }
}

#[test]
fn large_sets_use_the_grid_and_still_match() {
    use rand::Rng;
    let mut rng = face_core::rng::from_seed(5);
    let mut pts = |n: usize| -> Vec<Vec3> { (0..n).map(|_| [rng.random(), rng.random(), rng.random::<f64>() * 0.1]).collect() };
    let a = pts(600);
    let b = pts(700);
    let (cd, hd) = naive(&a, &b);
    assert_eq!(chamfer_hausdorff(&a, &b).unwrap(), (cd, hd));
}

#[test]
fn analytic_cases() {
    let a = vec![[0.25, -1.0, 3.0], [2.0, 2.0, 2.0]];
    assert_eq!(chamfer_hausdorff(&a, &a).unwrap(), (0.0, 0.0));
    assert_eq!(chamfer_hausdorff(&[[0.0; 3]], &[[0.0, 0.0, 1.0]]).unwrap(), (1.0, 1.0));
}
