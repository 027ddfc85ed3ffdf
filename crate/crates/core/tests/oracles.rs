//! Library results checked against the brute-force references in `common`
//! and against hand-computed values.

mod common;

use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schedlaw::bound::{cosine_coefficient, ClosedForm};
use schedlaw::qualifier::exam_terms;
use schedlaw::*;

fn random_rates(rng: &mut ChaCha8Rng, horizon: usize) -> Vec<f64> {
    (0..horizon).map(|_| 1.0 - rng.random::<f64>()).collect()
}

fn random_coeffs(rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    (
        rng.random_range(0.0..3.0),
        rng.random_range(0.1..3.0),
        rng.random_range(0.1..3.0),
    )
}

#[test]
fn last_iterate_matches_double_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let horizon = rng.random_range(1..=60);
        let eta = random_rates(&mut rng, horizon);
        let (l, d, g) = random_coeffs(&mut rng);
        let coeffs = BoundCoefficients::new(l, d, g).unwrap();
        let lrs = LearningRateSequence::new(eta.clone()).unwrap();
        let tau = rng.random_range(1..=horizon);
        let oracle = common::last_iterate(l, d, g, &eta, tau);
        assert_relative_eq!(bound_last(&coeffs, &lrs, tau).unwrap(), oracle, max_relative = 1e-12);
        assert_relative_eq!(
            bound_last_fast(&coeffs, &lrs, tau).unwrap(),
            oracle,
            max_relative = 1e-9
        );
    }
}

#[test]
fn last_iterate_matches_double_sum_on_decaying_families() {
    let coeffs = BoundCoefficients::new(0.5, 1.3, 0.7).unwrap();
    for kind in common::KINDS {
        let eta: Vec<f64> = common::multipliers(kind, 400, 0.8).iter().map(|m| 0.05 * m).collect();
        let lrs = LearningRateSequence::new(eta.clone()).unwrap();
        for tau in [1, 2, 37, 199, 320, 399, 400] {
            let oracle = common::last_iterate(0.5, 1.3, 0.7, &eta, tau);
            assert_relative_eq!(bound_last(&coeffs, &lrs, tau).unwrap(), oracle, max_relative = 1e-12);
            assert_relative_eq!(
                bound_last_fast(&coeffs, &lrs, tau).unwrap(),
                oracle,
                max_relative = 1e-9
            );
        }
    }
}

#[test]
fn library_schedules_match_their_definitions() {
    for kind in common::KINDS {
        let mut spec = ScheduleSpec::new(kind.parse().unwrap(), 0.3, 257);
        if kind == "wsd" {
            spec.wsd_c = Some(0.8);
        }
        let lrs = spec.eval_discrete().unwrap();
        for (got, m) in lrs.as_slice().iter().zip(common::multipliers(kind, 257, 0.8)) {
            assert_relative_eq!(*got, 0.3 * m, max_relative = 1e-12, epsilon = 1e-15);
        }
    }
}

#[test]
fn averaged_iterate_matches_direct_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..100 {
        let horizon = rng.random_range(1..=200);
        let eta = random_rates(&mut rng, horizon);
        let (l, d, g) = random_coeffs(&mut rng);
        let coeffs = BoundCoefficients::new(l, d, g).unwrap();
        let lrs = LearningRateSequence::new(eta.clone()).unwrap();
        let tau = rng.random_range(1..=horizon);
        assert_relative_eq!(
            bound_averaged(&coeffs, &lrs, tau).unwrap(),
            common::averaged_iterate(l, d, g, &eta, tau),
            max_relative = 1e-12
        );
    }
}

#[test]
fn averaged_iterate_examples() {
    let unit = BoundCoefficients::new(0.0, 1.0, 1.0).unwrap();
    let one = LearningRateSequence::new(vec![1.0]).unwrap();
    assert_relative_eq!(bound_averaged(&unit, &one, 1).unwrap(), 1.0, max_relative = 1e-15);
    let flat = ScheduleSpec::constant(0.1, 100).eval_discrete().unwrap();
    assert_relative_eq!(bound_averaged(&unit, &flat, 100).unwrap(), 0.1, max_relative = 1e-12);
    let no_noise = BoundCoefficients::new(2.0, 3.0, 0.0).unwrap();
    let cos = ScheduleSpec::cosine_decay(0.2, 50).eval_discrete().unwrap();
    let s: f64 = cos.as_slice()[..30].iter().sum();
    assert_relative_eq!(
        bound_averaged(&no_noise, &cos, 30).unwrap(),
        2.0 + 9.0 / (2.0 * s),
        max_relative = 1e-12
    );
}

#[test]
fn two_step_example() {
    let unit = BoundCoefficients::new(0.0, 1.0, 1.0).unwrap();
    let lrs = LearningRateSequence::new(vec![1.0, 1.0]).unwrap();
    // 1/4 from the distance term, (1/2)(2/2 + 1 * 2/2) from the gradient term.
    let expected = 1.25;
    assert_relative_eq!(bound_last(&unit, &lrs, 2).unwrap(), expected, max_relative = 1e-15);
    assert_relative_eq!(bound_last_fast(&unit, &lrs, 2).unwrap(), expected, max_relative = 1e-12);
    assert_relative_eq!(
        common::last_iterate(0.0, 1.0, 1.0, lrs.as_slice(), 2),
        expected,
        max_relative = 1e-15
    );
}

#[test]
fn constant_schedule_tracks_its_asymptotic_bound() {
    let horizon = 10_000usize;
    let t = horizon as f64;
    let eta = 1.0 / (t * t.ln()).sqrt();
    let lrs = ScheduleSpec::constant(eta, horizon as u64).eval_discrete().unwrap();
    let unit = BoundCoefficients::new(0.0, 1.0, 1.0).unwrap();
    let value = bound_last_fast(&unit, &lrs, horizon).unwrap();
    assert!((value / (t.ln() / t).sqrt() - 1.0).abs() <= 0.10);

    let short = ScheduleSpec::constant(eta, 1500).eval_discrete().unwrap();
    assert_relative_eq!(
        bound_last_fast(&unit, &short, 1500).unwrap(),
        common::last_iterate(0.0, 1.0, 1.0, short.as_slice(), 1500),
        max_relative = 1e-9
    );
}

#[test]
fn design_rows_reassemble_the_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..50 {
        let horizon = rng.random_range(2..=300);
        let mut eta = random_rates(&mut rng, horizon);
        if rng.random_bool(0.5) {
            eta[horizon - 1] = 0.0;
        }
        let lrs = LearningRateSequence::new(eta).unwrap();
        let (l, d, g) = random_coeffs(&mut rng);
        let coeffs = BoundCoefficients::new(l, d, g).unwrap();
        let grid: Vec<usize> = (1..=horizon).step_by(7).collect();
        let rows = build_design(&lrs, &grid).unwrap();
        for (row, &tau) in rows.iter().zip(&grid) {
            assert!(row.x1 > 0.0 && row.x2 >= 0.0);
            assert_relative_eq!(
                l + d * d * row.x1 + g * g * row.x2,
                bound_last(&coeffs, &lrs, tau).unwrap(),
                max_relative = 1e-12
            );
        }
    }
}

#[test]
fn last_iterate_never_below_averaged() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..100 {
        let horizon = rng.random_range(1..=150);
        let lrs = LearningRateSequence::new(random_rates(&mut rng, horizon)).unwrap();
        let (l, d, g) = random_coeffs(&mut rng);
        let coeffs = BoundCoefficients::new(l, d, g).unwrap();
        for tau in 1..=horizon {
            let last = bound_last(&coeffs, &lrs, tau).unwrap();
            assert!(last >= bound_averaged(&coeffs, &lrs, tau).unwrap() - 1e-12 * last);
        }
    }
}

#[test]
fn bound_trace_examples() {
    let unit = BoundCoefficients::new(0.0, 1.0, 1.0).unwrap();
    let flat = LearningRateSequence::new(vec![1.0; 5]).unwrap();
    let one = bound_trace(&unit, &flat, &[1], BoundKind::LastIterate).unwrap();
    assert_eq!(one.values, vec![1.0]);

    let horizon = 2000;
    let small = ScheduleSpec::constant(0.001, horizon as u64).eval_discrete().unwrap();
    let trace = bound_trace(&unit, &small, &[horizon / 2, horizon], BoundKind::LastIterate).unwrap();
    assert!(trace.values[1] <= trace.values[0]);
}

/// Minimize `f` over a fine geometric grid, written without any of the
/// library's search code.
fn grid_argmin(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    let n = 200_000;
    (0..=n)
        .map(|i| {
            let x = lo * (hi / lo).powf(i as f64 / n as f64);
            (x, f(x))
        })
        .fold((f64::NAN, f64::INFINITY), |best, p| if p.1 < best.1 { p } else { best })
}

#[test]
fn closed_form_optima_match_brute_force_minimization() {
    for kind in common::KINDS {
        for (d, g, t) in [(1.0, 1.0, 1e4), (2.0, 4.0, 1e4), (0.3, 1.7, 5e5)] {
            let form = ClosedForm::from_kind(kind.parse().unwrap(), Some(0.8)).unwrap();
            let coeffs = BoundCoefficients::new(0.0, d, g).unwrap();
            let opt = form.optimal(&coeffs, t).unwrap();
            let (eta, min) = grid_argmin(|e| common::closed_bound(kind, d, g, e, t, 0.8), 1e-8, 1e2);
            assert_relative_eq!(opt.eta_star, eta, max_relative = 1e-3);
            assert_relative_eq!(opt.bound_star, min, max_relative = 1e-8);
            let (eta_ref, min_ref) = common::closed_optimum(kind, d, g, t, 0.8);
            assert_relative_eq!(opt.eta_star, eta_ref, max_relative = 1e-3);
            assert_relative_eq!(opt.bound_star, min_ref, max_relative = 1e-3);
        }
    }
}

#[test]
fn optimal_peak_examples() {
    let lin = optimal_peak_lr(
        &ScheduleSpec::linear_decay(1.0, 10_000),
        &BoundCoefficients::new(0.0, 2.0, 4.0).unwrap(),
    )
    .unwrap();
    assert_relative_eq!(lin.eta_star, 0.005, max_relative = 1e-12);
    assert_relative_eq!(lin.bound_star, 0.16, max_relative = 1e-12);

    let e2 = std::f64::consts::E.powi(2);
    let unit = BoundCoefficients::new(0.0, 1.0, 1.0).unwrap();
    let constant = ClosedForm::Constant.optimal(&unit, e2).unwrap();
    assert_relative_eq!(constant.eta_star, 1.0 / (2.0 * e2).sqrt(), max_relative = 1e-12);
    assert_relative_eq!(
        constant.bound_star,
        2f64.sqrt() / std::f64::consts::E,
        max_relative = 1e-12
    );

    let cos = ClosedForm::CosineDecay.optimal(&unit, 1e4).unwrap();
    let linear = ClosedForm::LinearDecay.optimal(&unit, 1e4).unwrap();
    assert_relative_eq!(
        cos.bound_star / linear.bound_star,
        1.061f64.sqrt(),
        max_relative = 1e-12
    );
}

#[test]
fn closed_form_examples() {
    let unit = BoundCoefficients::new(0.0, 1.0, 1.0).unwrap();
    let t: f64 = 40_000.0;
    let linear = closed_form_bound(&ClosedForm::LinearDecay, &unit, 1.0 / t.sqrt(), t).unwrap();
    assert_relative_eq!(linear, 2.0 / t.sqrt(), max_relative = 1e-14);
    let near_zero = closed_form_bound(&ClosedForm::Wsd { c: 1e-12 }, &unit, 0.01, t).unwrap();
    assert_relative_eq!(near_zero, 1.0 / (t * 0.01) + 0.01, max_relative = 1e-10);
    assert!(closed_form_bound(&ClosedForm::CosineDecay, &unit, 1.0, t).unwrap() > 1.061);
}

/// Composite Simpson on a plain uniform grid, stopping short of the
/// removable singularity at 1, plus the analytic limit over the remainder.
#[test]
fn cosine_constant_matches_uniform_simpson() {
    use std::f64::consts::PI;
    let f = |x: f64| {
        let num = (1.0 + (PI * x).cos())
            * (3.0 * (1.0 - x) / 8.0 - (PI * x).sin() / (2.0 * PI) - (2.0 * PI * x).sin() / (16.0 * PI));
        let den = (1.0 - x) / 2.0 - (PI * x).sin() / (2.0 * PI);
        num / (den * den)
    };
    assert_relative_eq!(f(0.0), 3.0, max_relative = 1e-15);
    let cut = 1.0 - 1e-3;
    let n = 200_000;
    let h = cut / n as f64;
    let mut acc = f(0.0) + f(cut);
    for i in 1..n {
        acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    // Near 1 the integrand behaves like 0.9 pi^2 (1 - x).
    let tail = 0.45 * PI * PI * 1e-6;
    let reference = acc * h / 3.0 + tail;
    assert_relative_eq!(cosine_integral_constant().unwrap(), reference, max_relative = 1e-5);
    assert_relative_eq!(
        cosine_coefficient().unwrap(),
        0.375 + reference / 4.0,
        max_relative = 1e-5
    );
}

#[test]
fn exam_is_homogeneous_in_d_and_g() {
    let spec = ScheduleSpec::cosine_decay(1.0, 10);
    for t in [1_000, 100_000] {
        let terms = exam_terms(&spec, t, 1e-9).unwrap();
        let base_d = exam_functional(&spec, t, 1.0, 0.0).unwrap();
        let base_g = exam_functional(&spec, t, 0.0, 1.0).unwrap();
        assert_relative_eq!(
            exam_functional(&spec, t, 2.0, 0.0).unwrap(),
            4.0 * base_d,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            exam_functional(&spec, t, 0.0, 2.0).unwrap(),
            4.0 * base_g,
            max_relative = 1e-12
        );
        assert_relative_eq!(terms.value(1.0, 1.0), base_d + base_g, max_relative = 1e-12);
    }
}

#[test]
fn linear_exam_matches_its_integral() {
    // For linear decay with unit peak the suffix integral is
    // (T - x)^2 / (2T), so only the outer integral needs quadrature.
    let t = 10_000u64;
    let terms = exam_terms(&ScheduleSpec::linear_decay(1.0, 10), t, 1e-12).unwrap();
    let tf = t as f64;
    let n = 400_000;
    let upper = tf - 1.0;
    let s = |x: f64| 1.0 - x / tf;
    let tail = |x: f64| (tf - x) * (tf - x) / (2.0 * tf);
    let h = upper / n as f64;
    let g = |x: f64| s(x) * s(x) / tail(x);
    let mut acc = g(0.0) + g(upper);
    for i in 1..n {
        acc += g(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let gradient = 0.5 * acc * h / 3.0 / tf.sqrt();
    let distance = tf / (2.0 * tail(0.0)) / tf.sqrt();
    assert_relative_eq!(terms.value(1.0, 0.0), distance, max_relative = 1e-9);
    assert_relative_eq!(terms.value(0.0, 1.0), gradient, max_relative = 1e-4);
}

#[test]
fn verdict_does_not_depend_on_d_and_g() {
    let other = ExamConfig {
        d: 3.0,
        g: 0.2,
        ..ExamConfig::default()
    };
    for kind in common::KINDS {
        let mut spec = ScheduleSpec::new(kind.parse().unwrap(), 1.0, 10);
        if kind == "wsd" {
            spec.wsd_c = Some(0.8);
        }
        let a = qualify(&spec, &ExamConfig::default()).unwrap();
        let b = qualify(&spec, &other).unwrap();
        assert_eq!(a.verdict, b.verdict, "{kind}");
        let expected = if matches!(kind, "constant" | "sqrt_inverse") {
            Verdict::NotQualified
        } else {
            Verdict::Qualified
        };
        assert_eq!(a.verdict, expected, "{kind}");
    }
}

#[test]
fn exact_trace_is_recovered_and_predicted_perfectly() {
    let lrs = ScheduleSpec::wsd(0.02, 3000, 0.8).eval_discrete().unwrap();
    let truth = BoundCoefficients::new(1.7, 2.2, 0.6).unwrap();
    let grid: Vec<usize> = (1..=3000).collect();
    let rows = build_design(&lrs, &grid).unwrap();
    let losses: Vec<f64> = rows.iter().map(|r| truth.combine(r.x1, r.x2)).collect();

    let direct = nnls_fit(&rows, &losses).unwrap();
    assert_relative_eq!(direct.l_inf, 1.7, max_relative = 1e-6);
    assert_relative_eq!(direct.d, 2.2, max_relative = 1e-6);
    assert_relative_eq!(direct.g, 0.6, max_relative = 1e-6);
    assert!(direct.kkt_residual <= 1e-8);

    let trace = LossTrace::new((1..=3000).collect(), losses, None).unwrap();
    let split = fit_predict(&trace, Some(&lrs), 0.5).unwrap();
    assert_relative_eq!(split.r2_predict.unwrap(), 1.0, epsilon = 1e-9);
    assert_relative_eq!(split.r2_predict_raw.unwrap(), 1.0, epsilon = 1e-9);
    assert_relative_eq!(split.d, 2.2, max_relative = 1e-6);
}

#[test]
fn simulated_problem_has_its_advertised_constants() {
    let p = make_problem(ProblemKind::L1Distance, 6, 1.5, 2.0, 0.0, 4).unwrap();
    assert_relative_eq!(p.d_true(), 1.5, max_relative = 1e-14);
    let lrs = ScheduleSpec::linear_decay(0.01, 2000).eval_discrete().unwrap();
    let run = sgd_run(&p, lrs.as_slice(), 0, &[2000]).unwrap();
    assert_eq!(run.clipped_steps, 0);
    let coeffs = BoundCoefficients::new(0.0, 1.5, 2.0).unwrap();
    assert!(run.trace.losses[0] <= bound_last(&coeffs, &lrs, 2000).unwrap());
}
