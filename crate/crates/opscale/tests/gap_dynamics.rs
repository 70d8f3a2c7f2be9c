//! Dynamics-level checks that need certified instances: the cross-term
//! bound, persistence of the spectral gap along a run, and the iteration
//! budget of the discretized flow.

use nalgebra::DMatrix;
use opscale::reduce::matrix_to_operator;
use opscale::solver::{run_matrix_fast_path, SolverConfig};
use opscale::spectral::{certify_matrix, certify_operator, GapOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gapped_matrix(rng: &mut impl Rng, n: usize, spread: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| 1.0 + rng.gen_range(-spread..spread))
}

#[test]
fn cross_term_bounded_by_spectral_gap() {
    // |2<Q, E x F>| <= (1 + 3 delta - lambda) s Delta on certified instances
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for _ in 0..20 {
        let n = rng.gen_range(3..7);
        let b = gapped_matrix(&mut rng, n, 0.3);
        let op = matrix_to_operator(&b).unwrap();
        let report = certify_operator(&op, &GapOptions::default()).unwrap();
        assert!(report.lambda > 0.0, "perturbed all-ones instances carry a gap");
        let balance = op.balance_report();
        let rd = op.rate_decomposition();
        let bound = (1.0 + 3.0 * report.delta - report.lambda) * balance.s * balance.delta_total;
        assert!(
            rd.cross.abs() <= bound * (1.0 + 1e-9) + 1e-12,
            "cross term {} exceeds (1+3d-l)sDelta = {}",
            rd.cross.abs(),
            bound
        );
    }
}

#[test]
fn rate_lower_bound_from_certificate() {
    // the decay rate -dDelta/dt = 4(quad + cross) is at least
    // 4((1 + lambda - 3 delta) s - (1 + eps) s(0)) Delta at the initial
    // iterate of a certified instance
    let mut rng = ChaCha8Rng::seed_from_u64(75);
    for _ in 0..20 {
        let n = rng.gen_range(3..7);
        let b = gapped_matrix(&mut rng, n, 0.3);
        let op = matrix_to_operator(&b).unwrap();
        let report = certify_operator(&op, &GapOptions::default()).unwrap();
        let balance = op.balance_report();
        let rd = op.rate_decomposition();
        let s = balance.s;
        let floor =
            ((1.0 + report.lambda - 3.0 * report.delta) * s - (1.0 + report.epsilon) * s)
                * balance.delta_total;
        assert!(
            rd.total() >= floor - 1e-9 * s * s * balance.delta_total.max(1.0),
            "rate {} below certified floor {}",
            rd.total(),
            floor
        );
    }
}

#[test]
fn log_decay_fit_recovers_synthetic_rate() {
    let rate = 2.5;
    let pts: Vec<(f64, f64)> =
        (0..100).map(|k| (k as f64 * 0.1, 0.7 * (-rate * k as f64 * 0.1).exp())).collect();
    let fitted = opscale::experiments::fit_log_decay_rate(&pts);
    assert!((fitted - rate).abs() <= 1e-9, "fitted {fitted}");
}

#[test]
fn gap_persists_at_final_iterate() {
    // recertifying the scaled matrix loses at most ~C eps ln m / lambda of gap
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    for _ in 0..5 {
        let n = rng.gen_range(8..16);
        let b = gapped_matrix(&mut rng, n, 0.4);
        let before = certify_matrix(&b, &GapOptions::default()).unwrap();
        assert!(before.lambda > 0.0);
        let cfg = SolverConfig { eta: 1e-8, max_iters: 2_000_000, record_every: 100_000, ..Default::default() };
        let run = run_matrix_fast_path(&b, &cfg).unwrap();
        assert!(run.converged);
        let after = certify_matrix(&run.final_matrix, &GapOptions::default()).unwrap();
        let slack = 50.0 * before.epsilon * (n as f64).ln() / before.lambda;
        assert!(
            after.lambda >= before.lambda - slack,
            "gap dropped from {} to {} (allowed slack {})",
            before.lambda,
            after.lambda,
            slack
        );
    }
}

#[test]
fn gradient_descent_iteration_budget_at_n50() {
    // a gapped random 50x50 instance converges to eta = 1e-6 well within
    // (m+n)^2 * (20/lambda) * ln((m+n)/eta) iterations
    let mut rng = ChaCha8Rng::seed_from_u64(73);
    let n = 50;
    let b = gapped_matrix(&mut rng, n, 0.5);
    let report = certify_matrix(&b, &GapOptions::default()).unwrap();
    assert!(report.lambda > 0.0);
    let eta = 1e-6;
    let budget =
        ((2 * n) as f64).powi(2) * (20.0 / report.lambda) * ((2 * n) as f64 / eta).ln();
    let cfg = SolverConfig { eta, max_iters: budget as usize, record_every: 10_000, ..Default::default() };
    let run = run_matrix_fast_path(&b, &cfg).unwrap();
    assert!(run.converged, "no convergence within {} iterations", budget as usize);
    assert!(
        (run.iterations as f64) <= budget,
        "took {} iterations, budget {}",
        run.iterations,
        budget
    );
}

#[test]
fn mean_squared_inner_product_of_random_unit_pairs() {
    // E <v_i, v_j>^2 = 1/d for independent unit vectors, d = 5
    use opscale::moments::random_unit_vector;
    let mut rng = ChaCha8Rng::seed_from_u64(74);
    let d = 5;
    let pairs = 100_000;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..pairs {
        let u = random_unit_vector(&mut rng, d);
        let v = random_unit_vector(&mut rng, d);
        let x = u.dot(&v).powi(2);
        sum += x;
        sum_sq += x * x;
    }
    let mean = sum / pairs as f64;
    let se = ((sum_sq / pairs as f64 - mean * mean) / pairs as f64).sqrt();
    assert!(
        (mean - 1.0 / d as f64).abs() <= 3.0 * se,
        "mean {mean} vs 1/d = {} (se {se})",
        1.0 / d as f64
    );
}
