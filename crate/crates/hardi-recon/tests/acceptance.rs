//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `--nocapture` to see them). Tolerances are
//! pinned in the constants below.
//!
//! The heavyweight criterion (trend reproduction) trains three networks on
//! an 8000/2000-voxel synthetic dataset and compares them against the
//! dictionary baselines; expect roughly an hour of wall time on two cores.

use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;

use hardi_recon::cs_solvers::{
    fista, reconstruct_from_measurement, ridge_solve, SolveMethod, SolverConfig,
};
use hardi_recon::dictionary::{
    build_dictionary, odf_from_coeffs, reconstruct_signal, restrict_dictionary, BasisDescriptor,
    CoefficientVector,
};
use hardi_recon::experiment::{run_full, ExperimentConfig, Method};
use hardi_recon::geometry::{select_subset, GradientScheme, SubsetStrategy};
use hardi_recon::linalg::{dot, Mat};
use hardi_recon::model::{decode, encode, ModelConfig, ModelParams, TrainData, TrainOptions};
use hardi_recon::nn::graph::nmse_forward;
use hardi_recon::nn::Tensor;
use hardi_recon::rng::Rng;
use hardi_recon::selftest::{self, SelftestOptions};

fn pass(criterion: &str, detail: &str) {
    println!("criterion {criterion}: PASS ({detail})");
}

/// Criteria run one at a time so the wall-clock budgets measure the work
/// itself, not co-scheduling against the other criteria.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_gradient_correctness() {
    let _serial = serial();
    let start = Instant::now();
    let opts = SelftestOptions {
        samples_per_layer: 100,
        composed_samples: 120,
        adjoint_draws: 0,
        solver_instances: 0,
        sabotage: None,
    };
    let report = selftest::run(&opts);
    for check in report.checks.iter().filter(|c| c.name.starts_with("gradcheck")) {
        assert!(check.passed, "criterion 1: FAIL {} ({})", check.name, check.detail);
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        elapsed < 60.0,
        "criterion 1: FAIL gradient checks took {elapsed:.1}s (budget 60s)"
    );
    pass(
        "1 gradient correctness",
        &format!("central differences < 1e-5 on every layer and composed model, {elapsed:.1}s"),
    );
}

// ---------------------------------------------------------------------------
// 2. Adjoint identity
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_adjoint_identity() {
    let _serial = serial();
    // 47 random geometry draws + the three reference layer geometries = 50
    let opts = SelftestOptions {
        samples_per_layer: 0,
        composed_samples: 0,
        adjoint_draws: 47,
        solver_instances: 0,
        sabotage: None,
    };
    let report = selftest::run(&opts);
    let adjoint = report
        .checks
        .iter()
        .find(|c| c.name == "adjoint conv/convT")
        .expect("adjoint check present");
    assert!(
        adjoint.passed,
        "criterion 2: FAIL adjoint identity ({})",
        adjoint.detail
    );
    pass("2 adjoint identity", &adjoint.detail);
}

// ---------------------------------------------------------------------------
// 3. Shape chain
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_shape_chain() {
    let _serial = serial();
    let cfg = ModelConfig::new(30);
    let specs = cfg.layer_specs().expect("reference config is valid");
    let mut n = 90usize;
    let mut encoder_lengths = vec![n];
    for spec in &specs.encoder {
        n = spec.out_len(n).expect("positive length");
        encoder_lengths.push(n);
    }
    assert_eq!(encoder_lengths, vec![90, 30, 10, 5], "criterion 3: FAIL encoder chain");
    let mut decoder_lengths = vec![n];
    for spec in &specs.decoder {
        n = spec.out_len(n).expect("positive length");
        decoder_lengths.push(n);
    }
    assert_eq!(decoder_lengths, vec![5, 10, 30, 90], "criterion 3: FAIL decoder chain");

    // code shape [B, 100, 5] through the real forward pass
    let params = ModelParams::<f32>::init(&cfg, 3).unwrap();
    let x0 = Tensor::<f32>::zeros(&[4, 4, 90]);
    let code = encode(&x0, &params, &cfg).unwrap();
    assert_eq!(code.tensor().shape(), &[4, 100, 5], "criterion 3: FAIL code shape");
    let out = decode(&code, &params, &cfg).unwrap();
    assert_eq!(out.shape(), &[4, 1, 90], "criterion 3: FAIL output shape");
    pass("3 shape chain", "90->30->10->5 and 5->10->30->90, code [B,100,5]");
}

// ---------------------------------------------------------------------------
// 4. FISTA optimality
// ---------------------------------------------------------------------------

/// Independent lasso oracle: cyclic coordinate descent with incremental
/// residual updates on ||A f - l||^2 + lambda ||f||_1.
fn cd_lasso(a: &Mat, l: &[f64], lambda: f64, max_passes: usize, tol: f64) -> Vec<f64> {
    let n = a.cols();
    let col_sq: Vec<f64> = (0..n)
        .map(|j| (0..a.rows()).map(|i| a.get(i, j) * a.get(i, j)).sum())
        .collect();
    let mut f = vec![0.0; n];
    let mut residual: Vec<f64> = l.to_vec();
    let objective = |f: &[f64], residual: &[f64]| -> f64 {
        dot(residual, residual) + lambda * f.iter().map(|x| x.abs()).sum::<f64>()
    };
    let mut prev = objective(&f, &residual);
    for pass_idx in 0..max_passes {
        for j in 0..n {
            if col_sq[j] == 0.0 {
                continue;
            }
            let fj_old = f[j];
            let mut rho = 0.0;
            for i in 0..a.rows() {
                rho += a.get(i, j) * (residual[i] + a.get(i, j) * fj_old);
            }
            let thr = lambda / 2.0;
            let mag = rho.abs() - thr;
            let fj_new = if mag > 0.0 { mag * rho.signum() / col_sq[j] } else { 0.0 };
            if fj_new != fj_old {
                let delta = fj_new - fj_old;
                for i in 0..a.rows() {
                    residual[i] -= delta * a.get(i, j);
                }
                f[j] = fj_new;
            }
        }
        if pass_idx % 8 == 7 {
            let obj = objective(&f, &residual);
            if (prev - obj).abs() <= tol * prev.abs().max(1e-300) {
                break;
            }
            prev = obj;
        }
    }
    f
}

fn lasso_objective(a: &Mat, l: &[f64], lambda: f64, f: &[f64]) -> f64 {
    let af = a.matvec(f);
    let r: f64 = af.iter().zip(l).map(|(p, m)| (p - m) * (p - m)).sum();
    r + lambda * f.iter().map(|x| x.abs()).sum::<f64>()
}

#[test]
fn criterion_4_fista_optimality() {
    let _serial = serial();
    let start = Instant::now();
    let lambda = 0.05;
    let worst: Vec<(f64, f64)> = (0..100u64)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&seed| {
            let mut rng = Rng::seed_from_u64(1000 + seed);
            let a = Mat::from_vec(
                30,
                45,
                (0..30 * 45).map(|_| rng.next_f64_in(-1.0, 1.0)).collect(),
            )
            .unwrap();
            let l: Vec<f64> = (0..30).map(|_| rng.next_f64_in(-1.0, 1.0)).collect();
            let mut cfg = SolverConfig::new(lambda).unwrap();
            cfg.max_iters = 100_000;
            cfg.tolerance = 1e-16;
            let report = fista(&a, &l, &cfg).unwrap();
            let f = &report.coeffs.values;

            // objective gap vs the coordinate-descent oracle
            let oracle = cd_lasso(&a, &l, lambda, 400_000, 1e-14);
            let f_fista = lasso_objective(&a, &l, lambda, f);
            let f_cd = lasso_objective(&a, &l, lambda, &oracle);
            let gap = (f_fista - f_cd) / f_cd.abs().max(1e-300);

            // KKT residuals
            let af = a.matvec(f);
            let diff: Vec<f64> = af.iter().zip(&l).map(|(p, m)| p - m).collect();
            let grad: Vec<f64> = a.matvec_t(&diff).iter().map(|g| 2.0 * g).collect();
            let mut worst_kkt = 0.0f64;
            for j in 0..f.len() {
                if f[j] != 0.0 {
                    worst_kkt = worst_kkt.max((grad[j] + lambda * f[j].signum()).abs());
                } else {
                    // inactive: |grad| <= lambda (1 + 1e-4)
                    assert!(
                        grad[j].abs() <= lambda * (1.0 + 1e-4),
                        "criterion 4: FAIL inactive KKT at seed {seed}, atom {j}"
                    );
                }
            }
            (gap, worst_kkt)
        })
        .collect();

    let max_gap = worst.iter().map(|w| w.0).fold(f64::NEG_INFINITY, f64::max);
    let max_kkt = worst.iter().map(|w| w.1).fold(0.0f64, f64::max);
    assert!(
        max_gap < 1e-6,
        "criterion 4: FAIL objective gap {max_gap:.3e} vs coordinate-descent oracle"
    );
    assert!(
        max_kkt < 1e-4 * lambda,
        "criterion 4: FAIL KKT residual {max_kkt:.3e} exceeds 1e-4*lambda"
    );

    // planted-sparse recovery: 5 nonzeros of 45, noiseless, K_L = 30
    let scheme = GradientScheme::fibonacci_hemisphere(90, 2000.0).unwrap();
    let basis = BasisDescriptor::new(8).unwrap();
    let dict_h = build_dictionary(&scheme, &basis).unwrap();
    let subset = select_subset(&scheme, 30, SubsetStrategy::UniformAngular, 0).unwrap();
    let dict_l = restrict_dictionary(&dict_h, &subset).unwrap();
    let mut worst_planted = 0.0f64;
    for seed in 0..10 {
        let mut rng = Rng::seed_from_u64(2000 + seed);
        let mut f_true = vec![0.0; 45];
        let mut placed = 0;
        while placed < 5 {
            let j = rng.below(45) as usize;
            if f_true[j] == 0.0 {
                let mag = rng.next_f64_in(0.5, 1.5);
                f_true[j] = if rng.next_f64() < 0.5 { -mag } else { mag };
                placed += 1;
            }
        }
        let measurement = dict_l.matrix().matvec(&f_true);
        let truth = dict_h.matrix().matvec(&f_true);
        let mut cfg = SolverConfig::new(1e-5).unwrap();
        cfg.max_iters = 200_000;
        cfg.tolerance = 1e-16;
        let recon =
            reconstruct_from_measurement(&dict_l, &dict_h, &measurement, &cfg, SolveMethod::L1)
                .unwrap();
        let err = hardi_recon::metrics::nmse(&recon, &truth).unwrap();
        worst_planted = worst_planted.max(err);
    }
    assert!(
        worst_planted < 1e-3,
        "criterion 4: FAIL planted-sparse NMSE {worst_planted:.3e}"
    );

    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        elapsed < 300.0,
        "criterion 4: FAIL runtime {elapsed:.0}s exceeds 5 min"
    );
    pass(
        "4 fista optimality",
        &format!(
            "objective gap {max_gap:.2e}, KKT {max_kkt:.2e}, planted NMSE {worst_planted:.2e}, {elapsed:.0}s"
        ),
    );
}

// ---------------------------------------------------------------------------
// 5. Ridge closed form vs iterative minimizer
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_ridge_matches_iterative() {
    let _serial = serial();
    let lambda = 0.01;
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = Rng::seed_from_u64(3000 + seed);
        let a = Mat::from_vec(
            30,
            45,
            (0..30 * 45).map(|_| rng.next_f64_in(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let l: Vec<f64> = (0..30).map(|_| rng.next_f64_in(-1.0, 1.0)).collect();
        let f = ridge_solve(&a, &[], &l, lambda).unwrap();

        // conjugate-gradient oracle on the normal equations
        let mut normal = a.gram();
        for j in 0..45 {
            normal.set(j, j, normal.get(j, j) + lambda);
        }
        let b = a.matvec_t(&l);
        let mut x = vec![0.0; 45];
        let mut r = b.clone();
        let mut p = r.clone();
        let mut rs = dot(&r, &r);
        for _ in 0..5000 {
            let ap = normal.matvec(&p);
            let alpha = rs / dot(&p, &ap);
            for i in 0..45 {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rs_new = dot(&r, &r);
            if rs_new.sqrt() < 1e-15 {
                break;
            }
            let beta = rs_new / rs;
            for i in 0..45 {
                p[i] = r[i] + beta * p[i];
            }
            rs = rs_new;
        }
        let gap: f64 = f
            .iter()
            .zip(&x)
            .map(|(u, v)| (u - v) * (u - v))
            .sum::<f64>()
            .sqrt();
        let rel = gap / hardi_recon::linalg::norm2(&f);
        worst = worst.max(rel);
    }
    assert!(
        worst < 1e-8,
        "criterion 5: FAIL ridge vs CG relative gap {worst:.3e}"
    );
    pass("5 ridge closed form", &format!("max relative gap {worst:.2e} over 20 instances"));
}

// ---------------------------------------------------------------------------
// 6. Trend reproduction (the full synthetic experiment)
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_trend_reproduction() {
    let _serial = serial();
    let start = Instant::now();
    let dir = tempfile::tempdir().expect("tempdir");
    let mut config = ExperimentConfig::new(dir.path(), 7);
    // 8000 train / 2000 test at sigma 0.02 with the reference model; epoch
    // budget sized for the CPU wall-time bound, with early stopping
    config.epochs = 80;
    config.patience = 15;
    let report = run_full(&config).expect("experiment runs");

    println!("criterion 6 metrics (synthetic, method x K_L):");
    print!("{}", report.to_csv().unwrap());

    let avg = |method: &str, k: usize| -> f64 {
        report
            .rows
            .iter()
            .find(|r| r.method == method && r.k_low == k)
            .unwrap_or_else(|| panic!("row {method}/k{k} missing"))
            .avg_nmse
    };

    // (a) dictionary methods degrade strictly as K_L drops
    for method in ["l2", "cs"] {
        let (a30, a23, a18) = (avg(method, 30), avg(method, 23), avg(method, 18));
        assert!(
            a30 < a23 && a23 < a18,
            "criterion 6a: FAIL {method} not strictly increasing: {a30} / {a23} / {a18}"
        );
    }
    // (b) the trained network stays accurate at the smallest K_L
    let cnn18 = avg("cnn", 18);
    let l2_18 = avg("l2", 18);
    assert!(
        cnn18 <= 0.05,
        "criterion 6b: FAIL cnn avg NMSE at K_L=18 is {cnn18}, target <= 0.05"
    );
    assert!(
        cnn18 <= 0.5 * l2_18,
        "criterion 6b: FAIL cnn {cnn18} not <= half of l2 {l2_18} at K_L=18"
    );
    // (c) the network matches or beats sparse coding at K_L=18
    let cs18 = avg("cs", 18);
    assert!(
        cnn18 <= cs18,
        "criterion 6c: FAIL cnn {cnn18} worse than cs {cs18} at K_L=18"
    );
    // the trained K_L=30 model also meets the accuracy bar
    let cnn30 = avg("cnn", 30);
    assert!(
        cnn30 <= 0.05,
        "criterion 6: FAIL cnn avg NMSE at K_L=30 is {cnn30}, target <= 0.05"
    );

    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        elapsed < 7200.0,
        "criterion 6: FAIL runtime {elapsed:.0}s exceeds 2h"
    );
    pass(
        "6 trend reproduction",
        &format!(
            "cnn18 {cnn18:.4} <= 0.05, <= 0.5*l2 ({l2_18:.4}), <= cs ({cs18:.4}); \
             l2/cs strictly degrade with K_L; {:.0}s",
            elapsed
        ),
    );
}

// ---------------------------------------------------------------------------
// 7. Overfit sanity
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_overfit_sanity() {
    let _serial = serial();
    let start = Instant::now();
    let scheme = GradientScheme::fibonacci_hemisphere(90, 2000.0).unwrap();
    let params = hardi_recon::synth::DatasetParams::new(
        50,
        hardi_recon::synth::NoiseConfig::rician(0.02, 50).unwrap(),
        50,
    );
    let ds = hardi_recon::synth::generate_dataset(&params, &scheme).unwrap();
    let subset = select_subset(&scheme, 30, SubsetStrategy::UniformAngular, 0).unwrap();
    let noisy = ds.noisy.as_ref().expect("noise requested");
    let measurements = noisy.restrict_columns(&subset).unwrap();

    let mut cfg = ModelConfig::new(30);
    cfg.epochs = 2000;
    cfg.patience = 2000; // never stop early; the criterion is about train NMSE
    let data = TrainData {
        inputs: &measurements,
        targets: &ds.clean,
    };
    // a small validation slice keeps the per-epoch overhead low without
    // touching the training trajectory
    let val_inputs = measurements.take_rows(5).unwrap();
    let val_targets = ds.clean.take_rows(5).unwrap();
    let val = TrainData {
        inputs: &val_inputs,
        targets: &val_targets,
    };
    let outcome = hardi_recon::model::train(
        &cfg,
        &scheme,
        &subset,
        &data,
        &val,
        &TrainOptions::<f32>::new(50),
    )
    .expect("training runs");

    let reached = outcome
        .log
        .iter()
        .find(|e| e.epoch > 0 && e.train_nmse < 0.01);
    assert!(
        reached.is_some(),
        "criterion 7: FAIL train NMSE never dropped below 0.01 in 2000 epochs (last {})",
        outcome.log.last().map(|e| e.train_nmse).unwrap_or(f64::NAN)
    );

    // smoothed training loss is non-increasing over the first 100 epochs
    let first_hundred: Vec<f64> = outcome
        .log
        .iter()
        .filter(|e| e.epoch >= 1 && e.epoch <= 100)
        .map(|e| e.train_nmse)
        .collect();
    let window_means: Vec<f64> = first_hundred
        .chunks(10)
        .map(|w| w.iter().sum::<f64>() / w.len() as f64)
        .collect();
    for pair in window_means.windows(2) {
        assert!(
            pair[1] <= pair[0] + 1e-3,
            "criterion 7: FAIL smoothed loss rose from {} to {}",
            pair[0],
            pair[1]
        );
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        elapsed < 600.0,
        "criterion 7: FAIL runtime {elapsed:.0}s exceeds 10 min"
    );
    pass(
        "7 overfit sanity",
        &format!(
            "train NMSE {:.5} below 0.01 at epoch {}; {elapsed:.0}s",
            reached.unwrap().train_nmse,
            reached.unwrap().epoch
        ),
    );
}

// ---------------------------------------------------------------------------
// 8. Loss identities
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_loss_identities() {
    let _serial = serial();
    let mut rng = Rng::seed_from_u64(8);
    let data: Vec<f64> = (0..3 * 90).map(|_| rng.next_f64_in(0.2, 1.0)).collect();
    let s = Tensor::<f64>::from_vec(&[3, 1, 90], data).unwrap();
    let zero = Tensor::<f64>::zeros(&[3, 1, 90]);
    let double = Tensor::<f64>::from_vec(
        &[3, 1, 90],
        s.data().iter().map(|v| 2.0 * v).collect::<Vec<_>>(),
    )
    .unwrap();
    let (self_loss, _) = nmse_forward(&s, &s).unwrap();
    let (zero_loss, _) = nmse_forward(&zero, &s).unwrap();
    let (double_loss, _) = nmse_forward(&double, &s).unwrap();
    assert!(self_loss.abs() < 1e-12, "criterion 8: FAIL nmse(s,s) = {self_loss}");
    assert!(
        (zero_loss - 1.0).abs() < 1e-12,
        "criterion 8: FAIL nmse(0,s) = {zero_loss}"
    );
    assert!(
        (double_loss - 1.0).abs() < 1e-12,
        "criterion 8: FAIL nmse(2s,s) = {double_loss}"
    );
    pass("8 loss identities", "nmse(s,s)=0, nmse(0,s)=1, nmse(2s,s)=1 within 1e-12");
}

// ---------------------------------------------------------------------------
// 9. ODF correctness
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_odf_correctness() {
    let _serial = serial();
    let basis = BasisDescriptor::new(8).unwrap();
    // isotropic voxel: only the l=0 coefficient -> constant ODF
    let mut iso = vec![0.0; 45];
    iso[0] = 0.83;
    let odf = odf_from_coeffs(&CoefficientVector::new(iso), &basis).unwrap();
    let scheme = GradientScheme::fibonacci_hemisphere(90, 2000.0).unwrap();
    let dict = build_dictionary(&scheme, &basis).unwrap();
    let sampled = reconstruct_signal(&dict, &odf).unwrap();
    let first = sampled[0];
    for &v in &sampled {
        assert!(
            (v - first).abs() < 1e-10,
            "criterion 9: FAIL isotropic ODF varies: {v} vs {first}"
        );
    }

    // order eigenvalues 2 pi P_l(0)
    let coeffs = CoefficientVector::new(vec![1.0; 45]);
    let odf = odf_from_coeffs(&coeffs, &basis).unwrap();
    let two_pi = 2.0 * std::f64::consts::PI;
    for (col, (l, _)) in basis.atoms().enumerate() {
        let want = match l {
            0 => two_pi,
            2 => -std::f64::consts::PI,
            4 => 3.0 * std::f64::consts::PI / 4.0,
            6 => two_pi * (-5.0 / 16.0),
            8 => two_pi * (35.0 / 128.0),
            _ => unreachable!(),
        };
        assert!(
            (odf.values[col] - want).abs() < 1e-12,
            "criterion 9: FAIL order {l} eigenvalue {} vs {want}",
            odf.values[col]
        );
    }
    pass("9 odf correctness", "isotropic constant within 1e-10; FRT eigenvalues exact to 1e-12");
}

// ---------------------------------------------------------------------------
// 10. Determinism
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_determinism() {
    let _serial = serial();
    let run_once = |dir: &std::path::Path| -> Vec<u8> {
        let mut config = ExperimentConfig::new(dir, 123);
        config.synth.n_train = 400;
        config.synth.n_test = 100;
        config.epochs = 3;
        config.patience = 3;
        config.methods = vec![Method::L2, Method::Cs, Method::Cnn];
        run_full(&config).expect("experiment runs");
        std::fs::read(dir.join("metrics.csv")).expect("metrics written")
    };
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let a = run_once(dir_a.path());
    let b = run_once(dir_b.path());
    assert!(
        a == b,
        "criterion 10: FAIL metrics.csv differs between identical-seed reruns"
    );
    assert!(!a.is_empty(), "criterion 10: FAIL empty metrics file");
    pass(
        "10 determinism",
        &format!("full pipeline rerun reproduced metrics.csv byte-identically ({} bytes)", a.len()),
    );
}
