use approx::assert_relative_eq;
use proptest::prelude::*;

use mrect::curvature::CurvatureKind;
use mrect::geom::{norm, plane_distance, Plane, SimplexTuple};
use mrect::measure::PointCloud;

const KINDS: [CurvatureKind; 5] = [
    CurvatureKind::Kappa,
    CurvatureKind::KappaH,
    CurvatureKind::KappaMin,
    CurvatureKind::KappaMax,
    CurvatureKind::KappaDls,
];

fn coord() -> impl Strategy<Value = f64> {
    -1.0..1.0f64
}

/// Three points in R^3 (an m = 1 tuple).
fn triangle() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(coord(), 3), 3)
}

/// Four points in R^4 (an m = 2 tuple).
fn tetra() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(coord(), 4), 4)
}

fn well_spread(pts: &[Vec<f64>]) -> bool {
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            let d: Vec<f64> = pts[i].iter().zip(&pts[j]).map(|(a, b)| a - b).collect();
            if norm(&d) < 1e-3 {
                return false;
            }
        }
    }
    true
}

fn eval_all(pts: &[Vec<f64>]) -> Vec<f64> {
    let t = SimplexTuple::from_points(pts).unwrap();
    KINDS.iter().map(|k| k.eval(&t)).collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-7 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #[test]
    fn kernels_are_nonnegative_and_finite(pts in tetra()) {
        prop_assume!(well_spread(&pts));
        for v in eval_all(&pts) {
            prop_assert!(v.is_finite() && v >= 0.0);
        }
    }

    #[test]
    fn kernels_ignore_translation(pts in triangle(), shift in prop::collection::vec(coord(), 3)) {
        prop_assume!(well_spread(&pts));
        let moved: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect();
        for (a, b) in eval_all(&pts).into_iter().zip(eval_all(&moved)) {
            prop_assert!(close(a, b), "{a} vs {b}");
        }
    }

    #[test]
    fn kernels_ignore_vertex_order(pts in tetra()) {
        prop_assume!(well_spread(&pts));
        let mut rev = pts.clone();
        rev.reverse();
        rev.swap(0, 2);
        for (a, b) in eval_all(&pts).into_iter().zip(eval_all(&rev)) {
            prop_assert!(close(a, b), "{a} vs {b}");
        }
    }

    #[test]
    fn kernels_are_scale_invariant(pts in triangle(), s in 0.1..10.0f64) {
        prop_assume!(well_spread(&pts));
        let scaled: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|x| x * s).collect()).collect();
        for (a, b) in eval_all(&pts).into_iter().zip(eval_all(&scaled)) {
            prop_assert!(close(a, b), "{a} vs {b}");
        }
    }

    #[test]
    fn plane_distance_is_a_bounded_symmetric_metric(
        a in prop::collection::vec(coord(), 4),
        b in prop::collection::vec(coord(), 4),
        c in prop::collection::vec(coord(), 4),
        d in prop::collection::vec(coord(), 4),
    ) {
        prop_assume!(norm(&a) > 1e-2 && norm(&b) > 1e-2 && norm(&c) > 1e-2 && norm(&d) > 1e-2);
        let Ok(p) = Plane::from_owned_vectors(&[a.clone(), b.clone()]) else { return Ok(()) };
        let Ok(q) = Plane::from_owned_vectors(&[c, d]) else { return Ok(()) };
        let pq = plane_distance(&p, &q).unwrap();
        let qp = plane_distance(&q, &p).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&pq));
        prop_assert!((pq - qp).abs() < 1e-10);
        prop_assert!(plane_distance(&p, &p).unwrap() < 1e-7);
    }

    #[test]
    fn rejection_is_orthogonal_to_the_plane(
        a in prop::collection::vec(coord(), 4),
        b in prop::collection::vec(coord(), 4),
        v in prop::collection::vec(coord(), 4),
    ) {
        let Ok(p) = Plane::from_owned_vectors(&[a, b]) else { return Ok(()) };
        let r = p.reject(&v);
        prop_assert!(norm(&p.project(&r)) < 1e-10);
        prop_assert!((norm(&r) - p.reject_norm(&v)).abs() < 1e-12);
        let back: Vec<f64> = p.project(&v).iter().zip(&r).map(|(x, y)| x + y).collect();
        for (x, y) in back.iter().zip(&v) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_ball_query_matches_brute_force(
        pts in prop::collection::vec(prop::collection::vec(coord(), 3), 1..200),
        center in prop::collection::vec(-1.5..1.5f64, 3),
        r in 0.0..2.0f64,
    ) {
        let cloud = PointCloud::with_uniform_weights(pts, 1, 1.0).unwrap();
        let mut fast = cloud.ball_indices(&center, r);
        let mut slow = cloud.ball_indices_brute(&center, r);
        fast.sort_unstable();
        slow.sort_unstable();
        prop_assert_eq!(fast, slow);
    }
}

#[test]
fn ball_mass_matches_sum_of_weights() {
    let pts: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 / 99.0, 0.0]).collect();
    let cloud = PointCloud::with_uniform_weights(pts, 1, 2.0).unwrap();
    assert_relative_eq!(cloud.total_mass(), 2.0, epsilon = 1e-12);
    let idx = cloud.ball_indices(&[0.0, 0.0], 0.5);
    assert_relative_eq!(cloud.ball_mass(&[0.0, 0.0], 0.5), cloud.mass_of(&idx), epsilon = 1e-12);
    assert_eq!(idx.len(), 50);
}
