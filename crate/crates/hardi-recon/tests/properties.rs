//! Property tests for invariants that hold over whole input families
//! rather than single examples.

use proptest::prelude::*;

use hardi_recon::cs_solvers::{fista, soft_threshold, SolverConfig};
use hardi_recon::geometry::{
    make_permutation, select_subset, upsample_to_full, GradientScheme, SubsetStrategy,
    UpsampleMethod,
};
use hardi_recon::linalg::Mat;
use hardi_recon::metrics::nmse;
use hardi_recon::synth::{simulate_voxel, FiberConfig};

fn scheme90() -> GradientScheme {
    GradientScheme::fibonacci_hemisphere(90, 2000.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn idw_upsampling_stays_within_value_range(
        seed in 0u64..1000,
        k in 6usize..40,
        values in prop::collection::vec(0.05f64..1.0, 40),
    ) {
        let scheme = scheme90();
        let subset = select_subset(&scheme, k, SubsetStrategy::Random, seed).unwrap();
        let vals = &values[..k];
        let up = upsample_to_full(vals, &subset, &scheme, UpsampleMethod::Idw).unwrap();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for &v in &up {
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12, "value {v} outside [{lo}, {hi}]");
        }
        // measured indices are bitwise exact
        for (pos, &idx) in subset.indices().iter().enumerate() {
            prop_assert_eq!(up[idx].to_bits(), vals[pos].to_bits());
        }
    }

    #[test]
    fn permutation_preserves_channel_multisets(
        seed in 0u64..10_000,
        channel in prop::collection::vec(-10.0f64..10.0, 90),
    ) {
        let p = make_permutation(90, seed).unwrap();
        let permuted = p.apply_slice(&channel).unwrap();
        let mut a: Vec<u64> = channel.iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u64> = permuted.iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn nmse_is_scale_invariant(
        alpha in prop::sample::select(vec![-3.0f64, -0.5, 0.125, 2.0, 10.0]),
        pred in prop::collection::vec(-1.0f64..1.0, 24),
        target in prop::collection::vec(0.1f64..1.0, 24),
    ) {
        let base = nmse(&pred, &target).unwrap();
        let ps: Vec<f64> = pred.iter().map(|v| alpha * v).collect();
        let ts: Vec<f64> = target.iter().map(|v| alpha * v).collect();
        let scaled = nmse(&ps, &ts).unwrap();
        prop_assert!((base - scaled).abs() < 1e-12 * base.max(1.0));
    }

    #[test]
    fn soft_threshold_is_nonexpansive(
        a in prop::collection::vec(-5.0f64..5.0, 16),
        b in prop::collection::vec(-5.0f64..5.0, 16),
        t in 0.0f64..3.0,
    ) {
        let sa = soft_threshold(&a, t).unwrap();
        let sb = soft_threshold(&b, t).unwrap();
        for i in 0..16 {
            prop_assert!((sa[i] - sb[i]).abs() <= (a[i] - b[i]).abs() + 1e-15);
        }
    }

    #[test]
    fn simulated_voxels_are_antipodally_symmetric(
        z in -0.99f64..0.99,
        phi in 0.0f64..6.28,
        weight in 0.3f64..0.7,
    ) {
        let r = (1.0 - z * z).sqrt();
        let u = [r * phi.cos(), r * phi.sin(), z];
        let fibers = FiberConfig {
            weights: vec![weight, 1.0 - weight],
            orientations: vec![u, [0.0, 0.0, 1.0]],
            eigenvalues: vec![(1.7e-3, 0.3e-3), (1.4e-3, 0.4e-3)],
        };
        let scheme = scheme90();
        let flipped = GradientScheme::new(
            scheme.directions().iter().map(|d| [-d[0], -d[1], -d[2]]).collect(),
            scheme.bvalue(),
        ).unwrap();
        let s = simulate_voxel(&fibers, &scheme).unwrap();
        let s_neg = simulate_voxel(&fibers, &flipped).unwrap();
        for (x, y) in s.iter().zip(&s_neg) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

proptest! {
    // FISTA runs are heavier; keep the case count low.
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn fista_trace_is_monotone_on_random_instances(
        seed in 0u64..10_000,
        lambda in prop::sample::select(vec![0.001f64, 0.03, 0.2]),
    ) {
        let mut rng = hardi_recon::rng::Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..10 * 20).map(|_| rng.next_f64_in(-1.0, 1.0)).collect();
        let a = Mat::from_vec(10, 20, data).unwrap();
        let l: Vec<f64> = (0..10).map(|_| rng.next_f64_in(-1.0, 1.0)).collect();
        let mut cfg = SolverConfig::new(lambda).unwrap();
        cfg.max_iters = 500;
        cfg.tolerance = 1e-14;
        let report = fista(&a, &l, &cfg).unwrap();
        for w in report.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0], "objective rose from {} to {}", w[0], w[1]);
        }
    }
}
