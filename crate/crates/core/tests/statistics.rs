use bpire::tailstats::{
    default_hill_k, empirical_tail, grid_for_levels, hill_estimate, ks_two_sample, tail_ratio,
    tv_distance, SortedSample,
};
use bpire::{ImmigrationFamily, RngState};
use proptest::prelude::*;

#[test]
fn hill_recovers_continuous_pareto_index() {
    let root = RngState::from_seed(1);
    let n = 200_000u64;
    for (i, kappa) in [0.8f64, 1.5, 2.5].into_iter().enumerate() {
        let mut rng = root.split(i as u64);
        let v: Vec<f64> = (0..n).map(|_| rng.open01().powf(-1.0 / kappa)).collect();
        let sample = SortedSample::new(v);
        let k = default_hill_k(n);
        let h = hill_estimate(&sample, k, 0.0).unwrap();
        assert!(
            (h.kappa_hat - kappa).abs() < 2.0 * h.ci95,
            "kappa {kappa}: {}",
            h.kappa_hat
        );
    }
}

#[test]
fn tail_ratio_of_immigration_against_itself() {
    let law = ImmigrationFamily::DiscretePareto {
        kappa: 1.5,
        c: 1.0,
        beta: 0.5,
    };
    let mut rng = RngState::from_seed(2);
    let n = 2_000_000u64;
    let draws: Vec<u64> = (0..n).map(|_| law.sample(&mut rng).unwrap()).collect();
    let sample = SortedSample::from_counts(&draws);
    let grid = grid_for_levels(|x| law.survival(x), &[1e-2, 1e-3, 1e-4]).unwrap();
    let report = tail_ratio(&sample, |x| law.survival(x), &grid).unwrap();
    for ((x, r), se) in grid.iter().zip(&report.ratio).zip(&report.ratio_se) {
        assert!((r - 1.0).abs() < 4.0 * se, "x={x}: {r}");
    }
}

#[test]
fn censoring_keeps_tail_estimates() {
    let law = ImmigrationFamily::pareto(2.0, 1.0);
    let mut rng = RngState::from_seed(3);
    let draws: Vec<u64> = (0..100_000)
        .map(|_| law.sample(&mut rng).unwrap())
        .collect();
    let kept: Vec<f64> = draws
        .iter()
        .filter(|&&d| d > 8)
        .map(|&d| d as f64)
        .collect();
    let censored = SortedSample::censored(kept, draws.len() as u64, 8.0).unwrap();
    let full = SortedSample::from_counts(&draws);
    let grid = [9.0, 31.0, 99.0];
    assert_eq!(
        empirical_tail(&full, &grid).unwrap(),
        empirical_tail(&censored, &grid).unwrap()
    );
    assert_eq!(
        hill_estimate(&full, 500, 0.5).unwrap(),
        hill_estimate(&censored, 500, 0.5).unwrap()
    );
}

proptest! {
    #[test]
    fn ks_is_a_bounded_symmetric_statistic(
        mut a in proptest::collection::vec(0u32..50, 1..200),
        mut b in proptest::collection::vec(0u32..50, 1..200),
    ) {
        a.sort_unstable();
        b.sort_unstable();
        let fa: Vec<f64> = a.iter().map(|&v| v as f64).collect();
        let fb: Vec<f64> = b.iter().map(|&v| v as f64).collect();
        let d = ks_two_sample(&fa, &fb).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, ks_two_sample(&fb, &fa).unwrap());
        prop_assert_eq!(ks_two_sample(&fa, &fa).unwrap(), 0.0);
    }

    #[test]
    fn tv_is_a_metric_on_pmfs(
        p in proptest::collection::vec(0.0f64..1.0, 1..20),
        q in proptest::collection::vec(0.0f64..1.0, 1..20),
        r in proptest::collection::vec(0.0f64..1.0, 1..20),
    ) {
        let norm = |v: Vec<f64>| {
            let s: f64 = v.iter().sum::<f64>().max(1e-300);
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let (p, q, r) = (norm(p), norm(q), norm(r));
        let pq = tv_distance(&p, &q);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&pq));
        prop_assert!((pq - tv_distance(&q, &p)).abs() < 1e-15);
        prop_assert!(pq <= tv_distance(&p, &r) + tv_distance(&r, &q) + 1e-12);
    }

    #[test]
    fn grid_points_are_minimal(kappa in 0.5f64..3.0, c in 0.2f64..1.0, level in 1e-6f64..0.5) {
        let law = ImmigrationFamily::pareto(kappa, c);
        let x = grid_for_levels(|x| law.survival(x), &[level]).unwrap()[0];
        prop_assert!(law.survival(x) <= level);
        if x > 0.0 {
            prop_assert!(law.survival(x - 1.0) > level);
        }
    }
}
