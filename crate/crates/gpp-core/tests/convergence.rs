//! End-to-end training run on the scalar linear-quadratic problem: the
//! learned feedback must land within 10% relative L2 distance of the
//! Riccati optimum, and both the cost trajectory and the final independent
//! cost estimate must be consistent with the analytic optimal value.

use gpp_core::benchmarks::lq::{riccati_p, LqProblem};
use gpp_core::solver::{control_l2_error, solve, EpochRecord, LearningSchedule, RunConfig};

/// Analytic optimal cost: `V(0, x0) = p(0) x0^2 / 2 + (c^2 / 2) int_0^T p`,
/// with the integral taken by trapezoid on the closed-form `p`.
fn optimal_value(problem: &LqProblem, x0: f64) -> f64 {
    let params = problem.params();
    let n = 4_000;
    let dt = params.horizon / n as f64;
    let mut integral = 0.0;
    for i in 0..n {
        let a = riccati_p(params, i as f64 * dt);
        let b = riccati_p(params, (i + 1) as f64 * dt);
        integral += 0.5 * (a + b) * dt;
    }
    0.5 * riccati_p(params, 0.0) * x0 * x0 + 0.5 * params.c * params.c * integral
}

#[test]
fn scalar_lq_training_reaches_the_riccati_feedback() {
    let problem = LqProblem::probe_1d(1.0);
    let mut config = RunConfig::new(10_000, 20, 100, 64);
    config.schedule = LearningSchedule::new(0.4, 0.5);
    config.clip_bound = 20.0;
    config.master_seed = 31;
    let report = solve::<f64>(&problem, &config).unwrap();
    assert!(report.abort.is_none());
    assert_eq!(report.records.len(), 100);

    // The zero starting policy has relative error exactly 1.
    let first = report.records[0].l2_error.unwrap();
    assert!((first - 1.0).abs() < 1e-12, "first-epoch error {first}");

    // Final policy, measured on an independent evaluation ensemble.
    let err = control_l2_error::<f64>(&problem, &report.policy, 10_000, 20, 31, 1).unwrap();
    assert!(
        err.relative < 0.10,
        "final relative L2 control error {}",
        err.relative
    );

    // Costs trend downward: the last ten epochs beat the first ten.
    let median = |records: &[EpochRecord]| {
        let mut costs: Vec<f64> = records.iter().map(|r| r.cost).collect();
        costs.sort_by(f64::total_cmp);
        costs[costs.len() / 2]
    };
    let early = median(&report.records[..10]);
    let late = median(&report.records[90..]);
    assert!(late < early, "median cost {late} should beat {early}");

    // The learned cost sits just above the analytic optimum.
    let exact = optimal_value(&problem, 1.0);
    assert!(
        (report.final_cost - exact).abs() < 0.08 * exact,
        "final cost {} vs optimal {exact}",
        report.final_cost
    );
    assert!(
        report.final_cost > exact - 3.0 * report.final_cost_se,
        "learned cost {} improbably beats the optimum {exact}",
        report.final_cost
    );
}
