//! Capacity bounds and exact matrix capacity, permanent lower bounds, and
//! Brascamp-Lieb constant bounds.
//!
//! The capacity of an operator is inf over X ≻ 0 of
//! m·det(Phi(X))^{1/m} / det(X)^{1/n}. Under a certified spectral gap it is
//! sandwiched in [(1 − 4ε²/λ)·s, s]; without one only the generic bound
//! (1 − mn·ε)·s is available. For square matrices the exact value is
//! recovered from the scaling solution through determinant bookkeeping, with
//! a direct log-space optimizer as an independent oracle.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{BalanceReport, Operator};
use crate::reduce::BlDatum;
use crate::solver::{run_matrix_fast_path, SolverConfig};
use crate::spectral::SpectralReport;

/// Certified capacity window, kept in logs so permanent/BL-style powers do
/// not overflow. A non-positive lower bound maps to `log_lower = -inf`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CapacityReport {
    pub log_lower: f64,
    pub log_upper: f64,
    pub log_exact: Option<f64>,
    pub method: String,
}

impl CapacityReport {
    pub fn lower(&self) -> f64 {
        self.log_lower.exp()
    }
    pub fn upper(&self) -> f64 {
        self.log_upper.exp()
    }
}

fn log_or_neg_inf(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Capacity window from balance and spectral data alone.
///
/// With a positive certified gap the lower bound is the better of
/// (1 − 4ε²/λ)·s and s − 2Δ/(λs); otherwise the generic (1 − mn·ε)·s bound is
/// reported and flagged by `method = "generic"`.
pub fn capacity_bounds_from(
    balance: &BalanceReport,
    report: &SpectralReport,
    m: usize,
    n: usize,
) -> CapacityReport {
    let s = balance.s;
    if report.lambda > 0.0 && report.gap_condition_holds {
        let by_eps = (1.0 - 4.0 * report.epsilon * report.epsilon / report.lambda) * s;
        let by_delta = s - 2.0 * balance.delta_total / (report.lambda * s);
        CapacityReport {
            log_lower: log_or_neg_inf(by_eps.max(by_delta)),
            log_upper: s.ln(),
            log_exact: None,
            method: "spectral_gap".into(),
        }
    } else {
        let generic = (1.0 - (m * n) as f64 * balance.epsilon) * s;
        CapacityReport {
            log_lower: log_or_neg_inf(generic),
            log_upper: s.ln(),
            log_exact: None,
            method: "generic".into(),
        }
    }
}

/// Capacity window for an operator, see [`capacity_bounds_from`].
pub fn capacity_bounds(op: &Operator, report: &SpectralReport) -> CapacityReport {
    capacity_bounds_from(&op.balance_report(), report, op.out_dim(), op.in_dim())
}

/// Exact capacity of a scalable square non-negative matrix via the scaling
/// determinants: with L̂·B·R̂ doubly stochastic,
/// cap(B) = n·(det L̂ · det R̂)^{-1/n}, evaluated as sums of logs.
pub fn matrix_capacity_exact(b: &DMatrix<f64>, cfg: &SolverConfig) -> Result<f64> {
    let n = b.nrows();
    if n != b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: "square matrix".into(),
            got: format!("{}x{}", b.nrows(), b.ncols()),
        });
    }
    let s0: f64 = b.iter().sum();
    if s0 <= 0.0 {
        return Err(Error::ZeroOperator);
    }
    // normalize to s = n, undone at the end through homogeneity
    let scale = n as f64 / s0;
    let normalized = b * scale;
    let run = run_matrix_fast_path(&normalized, cfg)?;
    if !run.converged {
        return Err(Error::NoConvergence { iters: run.iterations, residual: f64::NAN });
    }
    let s_inf: f64 = run.final_matrix.iter().sum();
    // matrix-level scalings are the squares of the operator-level factors
    let log_det_sum = 2.0 * (run.log_left.sum() + run.log_right.sum());
    let log_cap_normalized = s_inf.ln() - log_det_sum / n as f64;
    Ok((log_cap_normalized - scale.ln()).exp())
}

const COORD_RANGE: f64 = 27.631; // ln(1e12)

/// Direct minimization of the matrix capacity objective over positive x,
/// in log coordinates by coordinate-wise bisection on the monotone partial
/// derivative. Serves as the independent oracle for
/// [`matrix_capacity_exact`].
pub fn matrix_capacity_direct(b: &DMatrix<f64>) -> Result<f64> {
    let (m, n) = (b.nrows(), b.ncols());
    if b.iter().any(|&x| x < 0.0) {
        return Err(Error::NegativeEntry);
    }
    for i in 0..m {
        if b.row(i).iter().all(|&x| x == 0.0) {
            return Err(Error::PreconditionViolated(format!(
                "row {i} is identically zero; the objective is degenerate"
            )));
        }
    }
    let log_b: Vec<Vec<(usize, f64)>> = (0..m)
        .map(|i| {
            (0..n)
                .filter(|&j| b[(i, j)] > 0.0)
                .map(|j| (j, b[(i, j)].ln()))
                .collect()
        })
        .collect();

    // log-sum-exp of ln(B_ij) + y_j over the support of row i
    let row_log = |y: &[f64], i: usize| -> f64 {
        let mut max = f64::NEG_INFINITY;
        for &(j, lb) in &log_b[i] {
            max = max.max(lb + y[j]);
        }
        let sum: f64 = log_b[i].iter().map(|&(j, lb)| (lb + y[j] - max).exp()).sum();
        max + sum.ln()
    };
    let grad_coord = |y: &[f64], rows: &[f64], j: usize| -> f64 {
        let mut acc = 0.0;
        for i in 0..m {
            if b[(i, j)] > 0.0 {
                acc += (b[(i, j)].ln() + y[j] - rows[i]).exp();
            }
        }
        acc / m as f64 - 1.0 / n as f64
    };

    let mut y = vec![0.0f64; n];
    let max_sweeps = 500;
    let grad_tol = 1e-10;
    for _ in 0..max_sweeps {
        let mut moved = 0.0f64;
        for j in 0..n {
            let rows: Vec<f64> = (0..m).map(|i| row_log(&y, i)).collect();
            let g = grad_coord(&y, &rows, j);
            if g.abs() <= grad_tol {
                continue;
            }
            let old = y[j];
            let (mut lo, mut hi) = (old - COORD_RANGE * 2.0, old + COORD_RANGE * 2.0);
            // derivative is increasing in y_j; bisect towards zero
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                y[j] = mid;
                let rows_mid: Vec<f64> = (0..m).map(|i| row_log(&y, i)).collect();
                if grad_coord(&y, &rows_mid, j) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            y[j] = 0.5 * (lo + hi);
            moved = moved.max((y[j] - old).abs());
        }
        // the objective is invariant under shifting y by a constant
        let mean = y.iter().sum::<f64>() / n as f64;
        for v in &mut y {
            *v -= mean;
        }
        if moved <= 1e-13 {
            break;
        }
    }

    // unbounded-ray detection: a coordinate pinned at the range edge with the
    // gradient still pushing outward means the infimum is zero (no scaling)
    let rows: Vec<f64> = (0..m).map(|i| row_log(&y, i)).collect();
    for j in 0..n {
        let g = grad_coord(&y, &rows, j);
        if (y[j] >= COORD_RANGE && g < -1e-6) || (y[j] <= -COORD_RANGE && g > 1e-6) {
            return Err(Error::NoScaling(format!(
                "objective decreases along the y_{j} ray beyond 1e±12; capacity is 0"
            )));
        }
    }
    let value = (m as f64).ln() + rows.iter().sum::<f64>() / m as f64
        - y.iter().sum::<f64>() / n as f64;
    Ok(value.exp())
}

/// Maximum dimension accepted by the exact permanent.
pub const PERMANENT_LIMIT: usize = 12;

/// Exact permanent by Ryser's inclusion-exclusion, O(2^n · n) work, n ≤ 12.
pub fn permanent(b: &DMatrix<f64>) -> Result<f64> {
    let n = b.nrows();
    if n != b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: "square matrix".into(),
            got: format!("{}x{}", b.nrows(), b.ncols()),
        });
    }
    if n > PERMANENT_LIMIT {
        return Err(Error::PreconditionViolated(format!(
            "permanent brute force limited to n <= {PERMANENT_LIMIT}, got {n}"
        )));
    }
    // iterate subsets in Gray-code order, maintaining row sums over the subset
    let mut row_sums = vec![0.0f64; n];
    let mut total = 0.0f64;
    let mut prev: u32 = 0;
    for g in 1u32..(1 << n) {
        let gray = g ^ (g >> 1);
        let changed = gray ^ prev;
        let j = changed.trailing_zeros() as usize;
        let sign_in = gray & changed != 0;
        for i in 0..n {
            if sign_in {
                row_sums[i] += b[(i, j)];
            } else {
                row_sums[i] -= b[(i, j)];
            }
        }
        prev = gray;
        let prod: f64 = row_sums.iter().product();
        let bits = gray.count_ones() as usize;
        if bits % 2 == 0 {
            total += prod;
        } else {
            total -= prod;
        }
    }
    if n % 2 == 0 {
        Ok(total)
    } else {
        Ok(-total)
    }
}

/// Van der Waerden-type permanent lower bound through the capacity chain
/// per(B) ≥ (cap(B)/n)ⁿ·e^{-n}, returned as a log. Requires s(B) = n and a
/// positive certified gap; refuses otherwise.
pub fn permanent_lower_bound(b: &DMatrix<f64>, report: &SpectralReport) -> Result<f64> {
    let n = b.nrows();
    if n != b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: "square matrix".into(),
            got: format!("{}x{}", b.nrows(), b.ncols()),
        });
    }
    let s: f64 = b.iter().sum();
    if (s - n as f64).abs() > 1e-6 * n as f64 {
        return Err(Error::PreconditionViolated(format!(
            "bound is stated for s(B) = n; got s = {s} (caller normalizes)"
        )));
    }
    if report.lambda <= 0.0 {
        return Err(Error::CertificateRefused(format!(
            "no positive spectral gap (lambda = {}); the capacity chain does not apply",
            report.lambda
        )));
    }
    let balance = BalanceReport {
        s,
        epsilon: report.epsilon,
        delta_left: 0.0,
        delta_right: 0.0,
        delta_total: matrix_delta(b),
    };
    let cap = capacity_bounds_from(&balance, report, n, n);
    // per(B) >= (cap_lower / n)^n e^{-n}
    Ok(n as f64 * (cap.log_lower - (n as f64).ln()) - n as f64)
}

fn matrix_delta(b: &DMatrix<f64>) -> f64 {
    let (m, n) = (b.nrows(), b.ncols());
    let s: f64 = b.iter().sum();
    let mut delta = 0.0;
    for i in 0..m {
        let r: f64 = b.row(i).iter().sum();
        delta += (s - m as f64 * r).powi(2) / m as f64;
    }
    for j in 0..n {
        let c: f64 = b.column(j).iter().sum();
        delta += (s - n as f64 * c).powi(2) / n as f64;
    }
    delta
}

/// Brascamp-Lieb constant window for a nearly geometric datum with a
/// certified gap, as (log_lower, log_upper):
/// (s/n)^{-n/2} ≤ BL ≤ ((s/n)(1 − 4ε²/λ))^{-n/2}.
pub fn bl_constant_bounds(datum: &BlDatum, report: &SpectralReport) -> Result<(f64, f64)> {
    if report.lambda <= 0.0 || !report.gap_condition_holds {
        return Err(Error::CertificateRefused(format!(
            "datum gap certificate failed (lambda = {}, condition holds = {})",
            report.lambda, report.gap_condition_holds
        )));
    }
    let n = datum.ambient() as f64;
    let s = datum.size();
    let log_lower = -(n / 2.0) * (s / n).ln();
    let factor = 1.0 - 4.0 * report.epsilon * report.epsilon / report.lambda;
    let log_upper = if factor > 0.0 {
        -(n / 2.0) * ((s / n).ln() + factor.ln())
    } else {
        f64::INFINITY
    };
    Ok((log_lower, log_upper))
}
