//! Embedding a matrix or frame, solving at the operator level, and reading
//! the structured scaling back off the solution.

use nalgebra::{DMatrix, DVector};
use opscale::reduce::{
    extract_frame_scaling, extract_matrix_scaling, frame_to_operator, matrix_to_operator, Frame,
};
use opscale::solver::{run_gradient_descent, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn matrix_round_trip_reaches_balanced_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let eta = 1e-7;
    for _ in 0..3 {
        let n = rng.gen_range(4..7);
        let b = DMatrix::from_fn(n, n, |_, _| 1.0 + rng.gen_range(-0.4..0.4));
        let op = matrix_to_operator(&b).unwrap();
        let cfg = SolverConfig { eta, max_iters: 3_000_000, record_every: 100_000, ..Default::default() };
        let result = run_gradient_descent(&op, &cfg).unwrap();
        assert!(result.converged);

        let diag = extract_matrix_scaling(&result).unwrap();
        assert!(diag.off_diagonal_mass <= 1e-7);
        // scaled matrix D_L^2 B D_R^2 is doubly balanced at the solver's eta
        let mut scaled = b.clone();
        for i in 0..n {
            for j in 0..n {
                scaled[(i, j)] *= diag.left[i] * diag.left[i] * diag.right[j] * diag.right[j];
            }
        }
        let s: f64 = scaled.iter().sum();
        for i in 0..n {
            let r: f64 = scaled.row(i).iter().sum();
            assert!(
                (r - s / n as f64).abs() <= 2.0 * eta * s,
                "row sum {r} vs target {}",
                s / n as f64
            );
        }
        for j in 0..n {
            let c: f64 = scaled.column(j).iter().sum();
            assert!((c - s / n as f64).abs() <= 2.0 * eta * s);
        }
    }
}

#[test]
fn frame_round_trip_reaches_tight_frame() {
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    let d = 3;
    let n = 12;
    let eta = 1e-7;
    let frame = Frame::new(
        (0..n)
            .map(|_| DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0)))
            .collect(),
    )
    .unwrap();
    let op = frame_to_operator(&frame).unwrap();
    let cfg = SolverConfig { eta, max_iters: 3_000_000, record_every: 100_000, ..Default::default() };
    let result = run_gradient_descent(&op, &cfg).unwrap();
    assert!(result.converged);

    let sol = extract_frame_scaling(&result).unwrap();
    assert!(sol.off_diagonal_mass <= 1e-7);
    // v_i = M·u_i·R_ii reproduces a nearly tight frame: Σ v vᵀ ≈ (s/d)·I
    let vs: Vec<DVector<f64>> = frame
        .vectors()
        .iter()
        .enumerate()
        .map(|(i, u)| &sol.transform * u * sol.normalizers[i])
        .collect();
    let s: f64 = vs.iter().map(|v| v.norm_squared()).sum();
    let mut outer = DMatrix::zeros(d, d);
    for v in &vs {
        outer.ger(1.0, v, v, 1.0);
    }
    let target = DMatrix::identity(d, d) * (s / d as f64);
    assert!((outer - target).norm() <= 2.0 * eta * s);
    // and the norms are nearly equal
    for v in &vs {
        assert!((v.norm_squared() - s / n as f64).abs() <= 2.0 * eta * s);
    }
}

#[test]
fn extraction_flags_non_embedded_instances() {
    // a generic dense operator has a dense right scaling; extraction refuses
    let mut rng = ChaCha8Rng::seed_from_u64(63);
    let kraus: Vec<DMatrix<f64>> = (0..3)
        .map(|_| DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0) / 3.0))
        .collect();
    let op = opscale::Operator::new(kraus).unwrap();
    let cfg = SolverConfig { eta: 1e-5, max_iters: 2_000_000, record_every: 100_000, ..Default::default() };
    let result = run_gradient_descent(&op, &cfg).unwrap();
    if result.converged {
        // dense instances occasionally solve with near-diagonal scalings;
        // only assert refusal when the right factor is visibly dense
        let off: f64 = {
            let r = &result.right * result.right.transpose();
            let mut off = 0.0;
            let mut total = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    let x = r[(i, j)] * r[(i, j)];
                    total += x;
                    if i != j {
                        off += x;
                    }
                }
            }
            (off / total).sqrt()
        };
        if off > 1e-6 {
            assert!(extract_frame_scaling(&result).is_err());
        }
    }
}
