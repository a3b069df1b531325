use kge_core::evaluation::js_distance;
use kge_core::geometry::{cosine_distance, distance, project_unit_sphere, similarity};
use kge_core::Metric;
use proptest::prelude::*;

fn vec_pair(max_dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max_dim).prop_flat_map(|d| {
        (
            prop::collection::vec(-10.0f64..10.0, d),
            prop::collection::vec(-10.0f64..10.0, d),
        )
    })
}

fn nonzero(v: &[f64]) -> bool {
    v.iter().map(|x| x * x).sum::<f64>() > 1e-6
}

fn distributions(max_len: usize, count: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2..=max_len).prop_flat_map(move |n| {
        prop::collection::vec(
            prop::collection::vec(0.0f64..1.0, n).prop_filter("needs mass", |v| v.iter().sum::<f64>() > 1e-3),
            count,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn cosine_distance_is_scale_invariant((a, b) in vec_pair(16), s in 1e-3f64..1e3, t in 1e-3f64..1e3) {
        prop_assume!(nonzero(&a) && nonzero(&b));
        let base = cosine_distance(&a, &b).unwrap();
        let sa: Vec<f64> = a.iter().map(|x| s * x).collect();
        let tb: Vec<f64> = b.iter().map(|x| t * x).collect();
        prop_assert!((cosine_distance(&sa, &tb).unwrap() - base).abs() < 1e-9);
    }

    #[test]
    fn cosine_distance_and_similarity_are_bounded((a, b) in vec_pair(16)) {
        prop_assume!(nonzero(&a) && nonzero(&b));
        let d = distance(&a, &b, Metric::Cosine).unwrap();
        prop_assert!((0.0..=2.0).contains(&d), "d = {}", d);
        let s = similarity(&a, &b, Metric::Cosine).unwrap();
        prop_assert!((0.0..=1.0).contains(&s), "sim = {}", s);
    }

    #[test]
    fn manhattan_distance_in_unit_ball_is_bounded((a, b) in vec_pair(16)) {
        let (pa, pb) = (project_unit_sphere(&a), project_unit_sphere(&b));
        let d = distance(&pa, &pb, Metric::Manhattan).unwrap();
        let l1: f64 = pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum();
        prop_assert!((d - l1).abs() < 1e-12);
        prop_assert!(d >= 0.0 && d <= 2.0 * (a.len() as f64).sqrt() + 1e-12, "d = {}", d);
    }

    #[test]
    fn projection_is_idempotent_and_lands_in_ball(v in prop::collection::vec(-10.0f64..10.0, 1..16)) {
        let p = project_unit_sphere(&v);
        let pp = project_unit_sphere(&p);
        prop_assert!(p.iter().map(|x| x * x).sum::<f64>().sqrt() <= 1.0 + 1e-12);
        for (x, y) in p.iter().zip(&pp) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn js_is_symmetric_and_bounded(d in distributions(12, 2)) {
        let (p, q) = (&d[0], &d[1]);
        let pq = js_distance(p, q).unwrap();
        let qp = js_distance(q, p).unwrap();
        prop_assert!((pq - qp).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&pq));
        prop_assert!(js_distance(p, p).unwrap() < 1e-6);
    }

    #[test]
    fn js_satisfies_triangle_inequality(d in distributions(12, 3)) {
        let (p, q, r) = (&d[0], &d[1], &d[2]);
        let lhs = js_distance(p, r).unwrap();
        let rhs = js_distance(p, q).unwrap() + js_distance(q, r).unwrap();
        prop_assert!(lhs <= rhs + 1e-9, "{} > {}", lhs, rhs);
    }
}
