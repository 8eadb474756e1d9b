use mfcov::metric::{gmml_geodesic, gmml_metric, mean_relative_error, similarity_dissimilarity, MetricMatrix};
use mfcov::models::{random_spd, standard_normal_vector};
use mfcov::SpdMatrix;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn inputs(seed: u64, d: usize) -> (SpdMatrix, SpdMatrix, DVector<f64>, DVector<f64>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g0 = random_spd(d, 1.0, &mut rng);
    let g1 = random_spd(d, 1.0, &mut rng);
    let m0 = standard_normal_vector(d, &mut rng);
    let m1 = standard_normal_vector(d, &mut rng);
    (g0, g1, m0, m1, rng)
}

proptest! {
    #[test]
    fn closed_form_is_the_geodesic(seed in any::<u64>(), d in 2usize..7, t in 0.0..=1.0f64) {
        let (g0, g1, m0, m1, _) = inputs(seed, d);
        let (tm, dm) = similarity_dissimilarity(&g0, &g1, &m0, &m1).unwrap();
        let a = gmml_metric(&tm, &dm, t).unwrap();
        let b = gmml_geodesic(&tm, &dm, t).unwrap();
        prop_assert!((a.matrix() - b.matrix()).norm() <= 1e-10 * b.matrix().norm());
    }

    #[test]
    fn endpoints_are_exact(seed in any::<u64>(), d in 2usize..7) {
        let (g0, g1, m0, m1, _) = inputs(seed, d);
        let (tm, dm) = similarity_dissimilarity(&g0, &g1, &m0, &m1).unwrap();
        let a0 = gmml_metric(&tm, &dm, 0.0).unwrap();
        let a1 = gmml_metric(&tm, &dm, 1.0).unwrap();
        prop_assert!((a0.matrix() - tm.inverse_matrix()).norm() <= 1e-10 * a0.matrix().norm());
        prop_assert!((a1.matrix() - dm.matrix()).norm() <= 1e-10 * dm.matrix().norm());
    }

    #[test]
    fn dissimilarity_gap_is_rank_one(seed in any::<u64>(), d in 2usize..7) {
        let (g0, g1, m0, m1, _) = inputs(seed, d);
        let (tm, dm) = similarity_dissimilarity(&g0, &g1, &m0, &m1).unwrap();
        let gap = (dm.matrix() - tm.matrix()).symmetric_eigen();
        let mut ev: Vec<f64> = gap.eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        let top = ev[d - 1];
        prop_assert!((top - (&m0 - &m1).norm_squared()).abs() <= 1e-10 * top.max(1.0));
        prop_assert!(ev[..d - 1].iter().all(|x| x.abs() <= 1e-10 * top.max(1.0)));
    }

    #[test]
    fn mre_permutation_invariant_and_positive(seed in any::<u64>()) {
        let (g0, g1, _, _, mut rng) = inputs(seed, 3);
        let a = MetricMatrix::new(g0, 0.1, "ref");
        let b = MetricMatrix::new(g1, 0.1, "est");
        let mut pts: Vec<DVector<f64>> = (0..50).map(|_| standard_normal_vector(3, &mut rng)).collect();
        let e1 = mean_relative_error(&b, &a, &pts).unwrap();
        pts.reverse();
        pts.rotate_left(7);
        let e2 = mean_relative_error(&b, &a, &pts).unwrap();
        prop_assert!((e1 - e2).abs() <= 1e-14 * e1.max(1.0));
        prop_assert!(e1 > 0.0);
    }
}

#[test]
fn mre_of_scaled_metric() {
    let (g0, _, _, _, mut rng) = inputs(1, 4);
    let a = MetricMatrix::new(g0.clone(), 0.1, "ref");
    let pts: Vec<DVector<f64>> = (0..100).map(|_| standard_normal_vector(4, &mut rng)).collect();
    for c in [0.5, 1.0, 3.0] {
        let b = MetricMatrix::new(SpdMatrix::new(g0.matrix() * (c * c)).unwrap(), 0.1, "x");
        assert!((mean_relative_error(&b, &a, &pts).unwrap() - (c - 1.0f64).abs()).abs() < 1e-12);
    }
}
