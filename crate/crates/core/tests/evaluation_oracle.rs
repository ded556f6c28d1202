mod common;

use common::{brute_force, meta, random_scores};
use reid_lstm::evaluation::{cmc, evaluate, fuse_scores, mean_average_precision, Protocol};
use reid_lstm::numerics::Matrix;
use reid_lstm::{ScoreMatrix, SeededRng};

#[test]
fn four_by_six_matches_exhaustive_oracle() {
    for seed in 0..20 {
        let mut rng = SeededRng::new(seed);
        let m = random_scores(&mut rng, 4, 6, 3);
        let (curve, map, valid) = brute_force(&m);
        let got = cmc(&m).unwrap();
        assert_eq!(got.curve, curve, "seed {seed}");
        assert_eq!(got.valid_queries, valid);
        assert_eq!(mean_average_precision(&m).unwrap(), map, "seed {seed}");
    }
}

#[test]
fn ties_and_same_camera_items_follow_oracle() {
    let m = ScoreMatrix::new(
        Matrix::from_rows(&[vec![1.0, 1.0, 1.0, 0.0], vec![2.0, 2.0, 2.0, 2.0]]).unwrap(),
        vec![meta("a", 0, 0), meta("b", 1, 0)],
        vec![meta("g0", 2, 1), meta("g1", 0, 1), meta("g2", 1, 1), meta("g3", 0, 0)],
    )
    .unwrap();
    let (curve, map, _) = brute_force(&m);
    assert_eq!(cmc(&m).unwrap().curve, curve);
    assert_eq!(curve, vec![0.0, 0.5, 1.0, 1.0]);
    assert_eq!(mean_average_precision(&m).unwrap(), map);
}

#[test]
fn cmc_monotone_and_rank_invariant() {
    for seed in 0..100 {
        let mut rng = SeededRng::new(1000 + seed);
        let m = random_scores(&mut rng, 7, 11, 4);
        let report = evaluate(&m, Protocol::SingleQuery).unwrap();
        assert!(report.cmc.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*report.cmc.last().unwrap(), 1.0);

        let mut t = m.clone();
        t.distances = m.distances.map(|d| (3.0 * d).exp() + 1.0);
        let moved = evaluate(&t, Protocol::SingleQuery).unwrap();
        assert_eq!(moved.cmc, report.cmc);
        assert_eq!(moved.map, report.map);
    }
}

#[test]
fn single_feature_fusion_preserves_ranking() {
    let mut rng = SeededRng::new(77);
    let m = random_scores(&mut rng, 5, 9, 3);
    let fused = fuse_scores(std::slice::from_ref(&m)).unwrap();
    assert!(fused.distances.data().iter().all(|v| (0.0..=1.0).contains(v)));
    let a = evaluate(&m, Protocol::SingleQuery).unwrap();
    let b = evaluate(&fused, Protocol::SingleQuery).unwrap();
    assert_eq!(a.cmc, b.cmc);
    assert_eq!(a.map, b.map);
}
