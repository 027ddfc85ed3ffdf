//! Invariants checked over generated inputs.

use approx::relative_eq;
use proptest::prelude::*;
use schedlaw::fitter::smooth;
use schedlaw::scaling::select_eta_ref;
use schedlaw::sim::Iterate;
use schedlaw::*;

fn kind() -> impl Strategy<Value = ScheduleKind> {
    prop_oneof![
        Just(ScheduleKind::Constant),
        Just(ScheduleKind::SqrtInverse),
        Just(ScheduleKind::LinearDecay),
        Just(ScheduleKind::CosineDecay),
        Just(ScheduleKind::Wsd),
        Just(ScheduleKind::Cyclic),
    ]
}

prop_compose! {
    fn schedule()(
        kind in kind(),
        eta in 1e-4f64..10.0,
        horizon in 1u64..3000,
        c in 0.05f64..0.95,
        cycles in 1u32..6,
        warmup in prop_oneof![Just(0.0), 0.0f64..0.5],
    ) -> ScheduleSpec {
        let mut spec = ScheduleSpec::new(kind, eta, horizon).with_warmup(warmup);
        match kind {
            ScheduleKind::Wsd => spec.wsd_c = Some(c),
            ScheduleKind::Cyclic => spec.cycles = Some(cycles),
            _ => {}
        }
        spec
    }
}

fn rates(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-3f64..1.0, 1..max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedules_stay_within_their_peak(spec in schedule()) {
        let lrs = spec.eval_discrete().unwrap();
        prop_assert_eq!(lrs.len() as u64, spec.horizon);
        prop_assert!(lrs.as_slice().iter().all(|&e| (0.0..=spec.eta_peak * (1.0 + 1e-12)).contains(&e)));
        prop_assert!(lrs.peak() > 0.0);
        for i in 0..=20 {
            let t = spec.horizon as f64 * i as f64 / 20.0;
            let v = spec.eval_continuous(t).unwrap();
            prop_assert!((0.0..=spec.eta_peak * (1.0 + 1e-12)).contains(&v));
        }
        if spec.warmup_frac == 0.0 && !matches!(spec.kind, ScheduleKind::SqrtInverse | ScheduleKind::Cyclic) {
            prop_assert!(relative_eq!(spec.eval_continuous(0.0).unwrap(), spec.eta_peak, max_relative = 1e-12));
        }
    }

    #[test]
    fn schedules_and_records_survive_json(spec in schedule(), loss in 0.0f64..10.0, t in 1.0f64..1e9) {
        let text = serde_json::to_string(&spec).unwrap();
        prop_assert_eq!(serde_json::from_str::<ScheduleSpec>(&text).unwrap(), spec);
        let record = RunRecord::steps(0.5, t, loss);
        let text = serde_json::to_string(&record).unwrap();
        prop_assert_eq!(serde_json::from_str::<RunRecord>(&text).unwrap(), record);
    }

    #[test]
    fn fast_form_equals_double_sum(eta in rates(500), l in 0.0f64..2.0, d in 0.0f64..3.0, g in 0.0f64..3.0, frac in 0.0f64..1.0) {
        let coeffs = BoundCoefficients::new(l, d, g).unwrap();
        let lrs = LearningRateSequence::new(eta).unwrap();
        let tau = 1 + ((lrs.len() - 1) as f64 * frac) as usize;
        let naive = bound_last(&coeffs, &lrs, tau).unwrap();
        prop_assert!(relative_eq!(bound_last_fast(&coeffs, &lrs, tau).unwrap(), naive, max_relative = 1e-9));
        prop_assert!(naive >= bound_averaged(&coeffs, &lrs, tau).unwrap() - 1e-12 * naive);
    }

    #[test]
    fn scaling_d_and_g_scales_the_excess(eta in rates(200), l in 0.0f64..2.0, d in 0.1f64..3.0, g in 0.1f64..3.0) {
        let lrs = LearningRateSequence::new(eta).unwrap();
        let tau = lrs.len();
        for a in [1.0, 2.0] {
            let base = bound_last(&BoundCoefficients::new(l, d, g).unwrap(), &lrs, tau).unwrap() - l;
            let scaled = bound_last(&BoundCoefficients::new(l, a * d, a * g).unwrap(), &lrs, tau).unwrap() - l;
            prop_assert!(relative_eq!(scaled, a * a * base, max_relative = 1e-12));
        }
    }

    #[test]
    fn optimal_rate_ignores_the_loss_floor(kind in kind(), horizon in 50u64..2000, shift in 0.1f64..10.0) {
        let mut spec = ScheduleSpec::new(kind, 1.0, horizon);
        match kind {
            ScheduleKind::Wsd => spec.wsd_c = Some(0.8),
            ScheduleKind::Cyclic => spec.cycles = Some(2),
            _ => {}
        }
        let a = numeric_optimal_peak_lr(&spec, &BoundCoefficients::new(0.0, 1.0, 1.0).unwrap()).unwrap();
        let b = numeric_optimal_peak_lr(&spec, &BoundCoefficients::new(shift, 1.0, 1.0).unwrap()).unwrap();
        prop_assert!(relative_eq!(a.eta_star, b.eta_star, max_relative = 1e-4));
        prop_assert!(relative_eq!(a.bound_star + shift, b.bound_star, max_relative = 1e-9));
    }

    #[test]
    fn q_curve_is_minimized_at_its_ratio(q1 in 1e-3f64..1e3, q2 in 1e-3f64..1e3) {
        let at = q1 / q2;
        let min = q_curve(q1, q2, at).unwrap();
        prop_assert!(relative_eq!(min, 2.0 * q1 * q2, max_relative = 4.0 * f64::EPSILON));
        prop_assert!(q_curve(q1, q2, 0.9 * at).unwrap() > min);
        prop_assert!(q_curve(q1, q2, 1.1 * at).unwrap() > min);
    }

    #[test]
    fn noiseless_lines_are_fitted_exactly(l in 0.0f64..5.0, q in 0.0f64..100.0, n in 3usize..12) {
        let records: Vec<RunRecord> = (0..n)
            .map(|i| {
                let t = 1000.0 * 2f64.powi(i as i32);
                RunRecord::steps(1.0, t, l + q / t.sqrt())
            })
            .collect();
        let line = fit_sqrt_t_line(&records, 0.0).unwrap();
        prop_assert!(relative_eq!(line.l_inf, l, epsilon = 1e-9, max_relative = 1e-9));
        prop_assert!(relative_eq!(line.q, q, epsilon = 1e-7, max_relative = 1e-9));
    }

    #[test]
    fn transfer_composes(eta in 1e-5f64..1.0, t0 in 1.0f64..1e5, r1 in 0.01f64..100.0, r2 in 0.01f64..100.0) {
        let (t1, t2) = (t0 * r1, t0 * r1 * r2);
        let hop = transfer_lr(transfer_lr(eta, t0, t1).unwrap().eta_peak, t1, t2).unwrap();
        let direct = transfer_lr(eta, t0, t2).unwrap();
        prop_assert!(relative_eq!(hop.eta_peak, direct.eta_peak, max_relative = 1e-12));
        prop_assert_eq!(direct.extrapolation_warning, t2 < t0);
    }

    #[test]
    fn grid_selection_ignores_input_order(
        pairs in prop::collection::vec((1e-3f64..10.0, 0.0f64..100.0), 2..10),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = select_eta_ref(&pairs, false).unwrap();
        let b = select_eta_ref(&shuffled, false).unwrap();
        prop_assert_eq!(a.eta_ref_star, b.eta_ref_star);
        prop_assert_eq!(a.q_star, b.q_star);
    }

    #[test]
    fn unit_window_is_the_identity(values in prop::collection::vec(-1e3f64..1e3, 0..200)) {
        prop_assert_eq!(smooth(&values, 1), values);
    }

    #[test]
    fn smoothing_preserves_constants(v in -1e3f64..1e3, n in 1usize..200, window in 1usize..40) {
        let out = smooth(&vec![v; n], window);
        prop_assert!(out.iter().all(|&x| relative_eq!(x, v, max_relative = 1e-12, epsilon = 1e-9)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fit_ignores_step_relabeling(offset in 0u64..1000, stride in 1u64..10, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let lrs = ScheduleSpec::cosine_decay(0.05, 400).eval_discrete().unwrap();
        let grid: Vec<usize> = (1..=400).collect();
        let truth = BoundCoefficients::new(1.0, 2.0, 0.5).unwrap();
        let losses: Vec<f64> = build_design(&lrs, &grid)
            .unwrap()
            .iter()
            .map(|r| truth.combine(r.x1, r.x2) + 0.01 * (rng.random::<f64>() - 0.5))
            .collect();
        let plain = LossTrace::new((1..=400).collect(), losses.clone(), Some(lrs.as_slice().to_vec())).unwrap();
        let relabeled = LossTrace::new(
            (0..400).map(|i| offset + stride * i).collect(),
            losses,
            Some(lrs.as_slice().to_vec()),
        )
        .unwrap();
        let a = fit_predict(&plain, None, 0.5).unwrap();
        let b = fit_predict(&relabeled, None, 0.5).unwrap();
        prop_assert_eq!((a.l_inf, a.d, a.g), (b.l_inf, b.d, b.g));
        prop_assert_eq!(a.r2_predict, b.r2_predict);
        prop_assert_eq!(a.residuals, b.residuals);
    }

    #[test]
    fn simulation_is_deterministic_and_convex(kind in prop_oneof![
        Just(ProblemKind::L1Distance),
        Just(ProblemKind::HuberQuadratic),
        Just(ProblemKind::PiecewiseLinearMax),
    ], seed in any::<u64>(), dim in 1usize..12) {
        let problem = make_problem(kind, dim, 1.0, 1.0, 0.5, seed).unwrap();
        let lrs = ScheduleSpec::wsd(0.02, 600, 0.8).eval_discrete().unwrap();
        let grid: Vec<usize> = (1..=600).step_by(13).collect();
        let a = sgd_run(&problem, lrs.as_slice(), seed, &grid).unwrap();
        let b = sgd_run(&problem, lrs.as_slice(), seed, &grid).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.clipped_steps, 0);
        for (avg, weighted) in a.averaged_trace.losses.iter().zip(&a.weighted_losses) {
            prop_assert!(*avg <= *weighted + 1e-12);
        }
    }
}

/// Fitted `Q` at `eta_ref = D/G` against the linear-decay optimum `2 D G`,
/// using bound-generated final losses for a convex problem.
#[test]
fn fitted_q_matches_the_convex_optimum() {
    let problem = make_problem(ProblemKind::L1Distance, 10, 1.0, 1.0, 0.3, 0).unwrap();
    let (d, g) = (problem.d_true(), problem.g_true);
    let coeffs = BoundCoefficients::new(problem.l_star, d, g).unwrap();
    let records: Vec<RunRecord> = [2_000u64, 8_000, 32_000, 128_000]
        .iter()
        .map(|&t| {
            let lrs = ScheduleSpec::linear_decay(d / (g * (t as f64).sqrt()), t)
                .eval_discrete()
                .unwrap();
            RunRecord::steps(d / g, t as f64, bound_last_fast(&coeffs, &lrs, t as usize).unwrap())
        })
        .collect();
    let line = fit_sqrt_t_line(&records, 0.0).unwrap();
    assert!((line.q / (2.0 * d * g) - 1.0).abs() <= 0.2, "Q = {}", line.q);
}

#[test]
fn simulated_sweep_is_reproducible() {
    let config = sim::SweepConfig {
        problem: sim::ProblemConfig {
            kind: ProblemKind::HuberQuadratic,
            d: 4,
            d_target: 1.0,
            g_target: 1.0,
            noise_scale: 0.3,
            seed: 3,
        },
        schedule: ScheduleSpec::cosine_decay(1.0, 10),
        seeds: 3,
        t_list: vec![200, 800],
        eta_list: vec![0.5, 2.0],
        iterate: Iterate::Last,
    };
    assert_eq!(sim::run_sweep(&config).unwrap(), sim::run_sweep(&config).unwrap());
}

/// The fitted bound should dominate a noiseless simulated trace on the fit
/// segment. It does not: a least-squares fit leaves residuals of both signs,
/// and a noiseless L1 descent falls linearly in the summed rates rather
/// than along the bound's shape. The dominance that does hold uses the true
/// constants and is covered by the acceptance suite.
#[test]
#[ignore = "least-squares residuals take both signs, so fitted dominance cannot hold"]
fn fitted_bound_dominates_noiseless_trace() {
    let problem = make_problem(ProblemKind::L1Distance, 10, 1.0, 1.0, 0.0, 0).unwrap();
    let horizon = 4000u64;
    let lrs = ScheduleSpec::linear_decay(1.0 / (horizon as f64).sqrt(), horizon)
        .eval_discrete()
        .unwrap();
    let grid: Vec<usize> = (1..=horizon as usize).collect();
    let run = sgd_run(&problem, lrs.as_slice(), 0, &grid).unwrap();
    let fit = fit_predict(&run.trace, Some(&lrs), 0.5).unwrap();
    assert!(fit.residuals[..fit.n_fit].iter().all(|&r| r <= 0.0));
}
