//! Scaling solvers: the discretized gradient flow and the alternating
//! (Sinkhorn-type) method, plus entrywise fast paths for matrix and frame
//! instances.
//!
//! The gradient flow updates every Kraus matrix as
//! `A_i ← (I + αE)·A_i·(I + αF)`, which keeps the iterate an exact scaling of
//! the input. Internally the instance is treated as if pre-normalized to unit
//! size: the step applied is `alpha / s(0)`, which is numerically identical to
//! dividing the matrices by sqrt(s(0)) up front and undoing it at exit. The
//! recorded trace is reported in that normalized frame (s starts at 1,
//! t = iter·alpha), while the scaling solution and the final operator are in
//! the caller's original scale, so `final = L·A(0)·R` holds verbatim.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{frob_sq, symmetric_op_norm, Operator};
use crate::reduce::{matrix_to_operator, Frame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    GradientDescent,
    Alternating,
}

/// Solver parameters. `alpha = None` uses the default step 1/(m+n)² for a
/// unit-size instance (the solver rescales the step by 1/s internally).
#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub alpha: Option<f64>,
    pub max_iters: usize,
    /// Stop once Δ ≤ eta²·s².
    pub eta: f64,
    pub algorithm: Algorithm,
    /// Trace decimation: record every k-th iterate (the first and last are
    /// always recorded).
    pub record_every: usize,
    /// Seed for randomized sub-kernels (none are used by the solvers
    /// themselves; kept for reproducible orchestration).
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            alpha: None,
            max_iters: 100_000,
            eta: 1e-6,
            algorithm: Algorithm::GradientDescent,
            record_every: 1,
            seed: 0,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if let Some(a) = self.alpha {
            if !(a > 0.0) {
                return Err(Error::InvalidInput("alpha must be positive".into()));
            }
        }
        if !(self.eta > 0.0) {
            return Err(Error::InvalidInput("eta must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidInput("record_every must be at least 1".into()));
        }
        Ok(())
    }

    fn step_size(&self, m: usize, n: usize) -> f64 {
        self.alpha.unwrap_or_else(|| {
            let d = (m + n) as f64;
            1.0 / (d * d)
        })
    }
}

/// One recorded iterate, in the normalized frame (size 1 at t = 0).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    /// Continuous-time coordinate iter·alpha (iteration index for the
    /// alternating method).
    pub t: f64,
    pub s: f64,
    pub delta: f64,
    pub e_op: f64,
    pub f_op: f64,
    pub kappa_l: f64,
    pub kappa_r: f64,
}

/// Per-iteration time series of the dynamical-system quantities.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub rows: Vec<TraceRow>,
}

impl ConvergenceTrace {
    pub const CSV_HEADER: &'static str = "iter,t,s,delta,E_op,F_op,kappa_L,kappa_R";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                r.iter, r.t, r.s, r.delta, r.e_op, r.f_op, r.kappa_l, r.kappa_r
            ));
        }
        out
    }
}

/// Output of a scaling run: the scaled operator, the accumulated scalings
/// with `final_operator = left · A(0) · right`, their condition numbers, and
/// the movement bound.
#[derive(Debug, Clone)]
pub struct ScalingResult {
    pub final_operator: Operator,
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
    pub kappa_left: f64,
    pub kappa_right: f64,
    pub trace: ConvergenceTrace,
    pub converged: bool,
    /// Discrete path-length bound (Σ_steps sqrt(Σ_i ‖ΔA_i‖_F²))², an upper
    /// bound on dist(A(0), A(final)) by the triangle inequality. Caller units.
    pub movement_sq: f64,
    pub iterations: usize,
}

impl ScalingResult {
    /// The accumulated squared-path-length bound on the total movement.
    pub fn total_movement(&self) -> f64 {
        self.movement_sq
    }
}

/// κ(M) = σ_max/σ_min via dense SVD; infinite when singular.
pub fn condition_number(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: "square matrix".into(),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    let sv = crate::spectral::dense_singular_values(m);
    let max = sv.first().copied().unwrap_or(0.0);
    let min = sv.last().copied().unwrap_or(0.0);
    if min <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(max / min)
}

/// One gradient step with the raw step size `alpha`:
/// returns ((I+αE)·A·(I+αF), I+αE, I+αF).
pub fn gradient_step(op: &Operator, alpha: f64) -> Result<(Operator, DMatrix<f64>, DMatrix<f64>)> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidInput("alpha must be positive".into()));
    }
    let e = op.error_matrices();
    let m = op.out_dim();
    let n = op.in_dim();
    let mut step_l = &e.left * alpha;
    for i in 0..m {
        step_l[(i, i)] += 1.0;
    }
    let mut step_r = &e.right * alpha;
    for j in 0..n {
        step_r[(j, j)] += 1.0;
    }
    let next = op.scaled(&step_l, &step_r)?;
    Ok((next, step_l, step_r))
}

struct DivergenceGuard {
    halved: bool,
}

impl DivergenceGuard {
    fn new() -> Self {
        DivergenceGuard { halved: false }
    }

    /// Returns true when the step must be retried with a halved step size.
    fn check(&mut self, iter: usize, before: f64, after: f64) -> Result<bool> {
        if after <= before * 1.1 {
            return Ok(false);
        }
        if self.halved {
            return Err(Error::Diverged { iter, before, after });
        }
        self.halved = true;
        Ok(true)
    }
}

/// Runs the discretized gradient flow until Δ ≤ η²·s² or the budget runs out.
pub fn run_gradient_descent(op: &Operator, cfg: &SolverConfig) -> Result<ScalingResult> {
    cfg.validate()?;
    let m = op.out_dim();
    let n = op.in_dim();
    let s0 = op.size();
    let alpha = cfg.step_size(m, n);
    let mut a_eff = alpha / s0;

    let mut kraus: Vec<DMatrix<f64>> = op.kraus().to_vec();
    let mut left = DMatrix::<f64>::identity(m, m);
    let mut right = DMatrix::<f64>::identity(n, n);
    let mut trace = ConvergenceTrace::default();
    let mut movement = 0.0f64;
    let mut guard = DivergenceGuard::new();

    let mut converged = false;
    let mut iter = 0usize;
    loop {
        let state = OperatorState::measure(&kraus, m, n);
        if iter % cfg.record_every == 0 || state.delta <= cfg.eta * cfg.eta * state.s * state.s {
            trace.rows.push(state.trace_row(iter, iter as f64 * alpha, s0, &left, &right));
        }
        if state.delta <= cfg.eta * cfg.eta * state.s * state.s {
            converged = true;
            break;
        }
        if iter >= cfg.max_iters {
            if trace.rows.last().map(|r| r.iter) != Some(iter) {
                trace.rows.push(state.trace_row(iter, iter as f64 * alpha, s0, &left, &right));
            }
            break;
        }

        loop {
            let mut step_l = &state.err_left * a_eff;
            for i in 0..m {
                step_l[(i, i)] += 1.0;
            }
            let mut step_r = &state.err_right * a_eff;
            for j in 0..n {
                step_r[(j, j)] += 1.0;
            }
            let next: Vec<DMatrix<f64>> = kraus.iter().map(|a| &step_l * a * &step_r).collect();
            let next_state = OperatorState::measure(&next, m, n);
            if guard.check(iter, state.delta, next_state.delta)? {
                a_eff *= 0.5;
                continue;
            }
            let step_sq: f64 =
                kraus.iter().zip(&next).map(|(a, b)| frob_sq(&(b - a))).sum();
            movement += step_sq.sqrt();
            kraus = next;
            left = &step_l * left;
            right *= &step_r;
            break;
        }
        iter += 1;
    }

    let final_operator = Operator::new(kraus)?;
    let kappa_left = condition_number(&left)?;
    let kappa_right = condition_number(&right)?;
    Ok(ScalingResult {
        final_operator,
        left,
        right,
        kappa_left,
        kappa_right,
        trace,
        converged,
        movement_sq: movement * movement,
        iterations: iter,
    })
}

/// Instantaneous quantities of a Kraus tuple, shared by the solver loops.
struct OperatorState {
    s: f64,
    delta: f64,
    err_left: DMatrix<f64>,
    err_right: DMatrix<f64>,
}

impl OperatorState {
    fn measure(kraus: &[DMatrix<f64>], m: usize, n: usize) -> Self {
        let mut phi_i = DMatrix::zeros(m, m);
        let mut phi_adj = DMatrix::zeros(n, n);
        let mut s = 0.0;
        for a in kraus {
            phi_i.gemm(1.0, a, &a.transpose(), 1.0);
            phi_adj.gemm(1.0, &a.transpose(), a, 1.0);
            s += frob_sq(a);
        }
        let mut err_left = phi_i * (-(m as f64));
        for i in 0..m {
            err_left[(i, i)] += s;
        }
        let mut err_right = phi_adj * (-(n as f64));
        for j in 0..n {
            err_right[(j, j)] += s;
        }
        let delta = frob_sq(&err_left) / m as f64 + frob_sq(&err_right) / n as f64;
        OperatorState { s, delta, err_left, err_right }
    }

    fn trace_row(
        &self,
        iter: usize,
        t: f64,
        s0: f64,
        left: &DMatrix<f64>,
        right: &DMatrix<f64>,
    ) -> TraceRow {
        TraceRow {
            iter,
            t,
            s: self.s / s0,
            delta: self.delta / (s0 * s0),
            e_op: symmetric_op_norm(&self.err_left) / s0,
            f_op: symmetric_op_norm(&self.err_right) / s0,
            kappa_l: condition_number(left).unwrap_or(f64::INFINITY),
            kappa_r: condition_number(right).unwrap_or(f64::INFINITY),
        }
    }
}

/// Inverse square root of a symmetric positive definite matrix, with
/// eigenvalues clamped at `floor` before inversion.
fn inv_sqrt_psd(a: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    let eig = a.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&v| v < floor) {
        return Err(Error::SingularMap {
            min_eig: eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min),
        });
    }
    let vals = eig.eigenvalues.map(|v| 1.0 / v.max(floor).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

/// Runs the alternating method: each iteration makes Phi(I_n) = (s/m)·I exact
/// by a left scaling, then Phi*(I_m) = (s/n)·I exact by a right scaling. Both
/// half-steps preserve the size. The trace records t as the iteration index.
pub fn run_alternating(op: &Operator, cfg: &SolverConfig) -> Result<ScalingResult> {
    cfg.validate()?;
    let m = op.out_dim();
    let n = op.in_dim();
    let s0 = op.size();
    let mut kraus: Vec<DMatrix<f64>> = op.kraus().to_vec();
    let mut left = DMatrix::<f64>::identity(m, m);
    let mut right = DMatrix::<f64>::identity(n, n);
    let mut trace = ConvergenceTrace::default();
    let mut movement = 0.0f64;
    let mut converged = false;
    let mut iter = 0usize;

    loop {
        let state = OperatorState::measure(&kraus, m, n);
        if iter % cfg.record_every == 0 || state.delta <= cfg.eta * cfg.eta * state.s * state.s {
            trace.rows.push(state.trace_row(iter, iter as f64, s0, &left, &right));
        }
        if state.delta <= cfg.eta * cfg.eta * state.s * state.s {
            converged = true;
            break;
        }
        if iter >= cfg.max_iters {
            if trace.rows.last().map(|r| r.iter) != Some(iter) {
                trace.rows.push(state.trace_row(iter, iter as f64, s0, &left, &right));
            }
            break;
        }

        let s = state.s;
        let floor = 1e-12 * s / m as f64;
        let mut phi_i = DMatrix::zeros(m, m);
        for a in &kraus {
            phi_i.gemm(1.0, a, &a.transpose(), 1.0);
        }
        let step_l = inv_sqrt_psd(&phi_i, floor)? * (s / m as f64).sqrt();
        let next: Vec<DMatrix<f64>> = kraus.iter().map(|a| &step_l * a).collect();
        movement += kraus
            .iter()
            .zip(&next)
            .map(|(a, b)| frob_sq(&(b - a)))
            .sum::<f64>()
            .sqrt();
        kraus = next;
        left = &step_l * left;

        let floor = 1e-12 * s / n as f64;
        let mut phi_adj = DMatrix::zeros(n, n);
        for a in &kraus {
            phi_adj.gemm(1.0, &a.transpose(), a, 1.0);
        }
        let step_r = inv_sqrt_psd(&phi_adj, floor)? * (s / n as f64).sqrt();
        let next: Vec<DMatrix<f64>> = kraus.iter().map(|a| a * &step_r).collect();
        movement += kraus
            .iter()
            .zip(&next)
            .map(|(a, b)| frob_sq(&(b - a)))
            .sum::<f64>()
            .sqrt();
        kraus = next;
        right *= &step_r;

        iter += 1;
    }

    let final_operator = Operator::new(kraus)?;
    let kappa_left = condition_number(&left)?;
    let kappa_right = condition_number(&right)?;
    Ok(ScalingResult {
        final_operator,
        left,
        right,
        kappa_left,
        kappa_right,
        trace,
        converged,
        movement_sq: movement * movement,
        iterations: iter,
    })
}

/// Dispatches on `cfg.algorithm`.
pub fn run_solver(op: &Operator, cfg: &SolverConfig) -> Result<ScalingResult> {
    match cfg.algorithm {
        Algorithm::GradientDescent => run_gradient_descent(op, cfg),
        Algorithm::Alternating => run_alternating(op, cfg),
    }
}

/// Result of the entrywise matrix fast path. The diagonal scalings are kept
/// as logarithms of the operator-level factors: the balanced matrix is
/// `diag(exp(log_left))² · B · diag(exp(log_right))²`.
#[derive(Debug, Clone)]
pub struct MatrixScaling {
    pub final_matrix: DMatrix<f64>,
    pub log_left: DVector<f64>,
    pub log_right: DVector<f64>,
    pub trace: ConvergenceTrace,
    pub converged: bool,
    pub movement_sq: f64,
    pub iterations: usize,
}

impl MatrixScaling {
    /// Materializes the operator-level view of this solution.
    pub fn to_scaling_result(&self) -> Result<ScalingResult> {
        let left = DMatrix::from_diagonal(&self.log_left.map(f64::exp));
        let right = DMatrix::from_diagonal(&self.log_right.map(f64::exp));
        let final_operator = matrix_to_operator(&self.final_matrix)?;
        let kappa_left = diag_condition(&self.log_left);
        let kappa_right = diag_condition(&self.log_right);
        Ok(ScalingResult {
            final_operator,
            left,
            right,
            kappa_left,
            kappa_right,
            trace: self.trace.clone(),
            converged: self.converged,
            movement_sq: self.movement_sq,
            iterations: self.iterations,
        })
    }
}

fn diag_condition(log_diag: &DVector<f64>) -> f64 {
    let max = log_diag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = log_diag.iter().copied().fold(f64::INFINITY, f64::min);
    (max - min).exp()
}

/// Entrywise gradient flow on a non-negative matrix: O(mn) per step instead
/// of going through the embedded operator. Trace values agree with the
/// operator path step by step.
///
/// The iteration state is the Kraus-level matrix a_ij = sqrt(B_ij); each step
/// multiplies a_ij by (1 + α(s − m·r_i))(1 + α(s − n·c_j)), which squares to
/// the induced entry update of B itself.
pub fn run_matrix_fast_path(b: &DMatrix<f64>, cfg: &SolverConfig) -> Result<MatrixScaling> {
    cfg.validate()?;
    if b.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    if b.iter().any(|&x| x < 0.0) {
        return Err(Error::NegativeEntry);
    }
    let (m, n) = (b.nrows(), b.ncols());
    let s0: f64 = b.iter().sum();
    if s0 <= 0.0 {
        return Err(Error::ZeroOperator);
    }
    let alpha = cfg.step_size(m, n);
    let mut a_eff = alpha / s0;

    // column-major flat storage of sqrt-entries, double buffered
    let mut a: Vec<f64> = Vec::with_capacity(m * n);
    for j in 0..n {
        for i in 0..m {
            a.push(b[(i, j)].sqrt());
        }
    }
    let mut a_next = vec![0.0f64; m * n];

    let marginals = |a: &[f64]| -> (f64, Vec<f64>, Vec<f64>) {
        let mut rows = vec![0.0f64; m];
        let mut cols = vec![0.0f64; n];
        for j in 0..n {
            let col = &a[j * m..(j + 1) * m];
            let mut cj = 0.0;
            for (i, &x) in col.iter().enumerate() {
                let w = x * x;
                rows[i] += w;
                cj += w;
            }
            cols[j] = cj;
        }
        (rows.iter().sum(), rows, cols)
    };
    let delta_of = |s: f64, rows: &[f64], cols: &[f64]| -> f64 {
        let mut delta = 0.0;
        for &r in rows {
            let d = s - m as f64 * r;
            delta += d * d / m as f64;
        }
        for &c in cols {
            let d = s - n as f64 * c;
            delta += d * d / n as f64;
        }
        delta
    };

    let (mut s, mut rows, mut cols) = marginals(&a);
    let mut delta = delta_of(s, &rows, &cols);

    let mut log_l = DVector::zeros(m);
    let mut log_r = DVector::zeros(n);
    let mut trace = ConvergenceTrace::default();
    let mut movement = 0.0f64;
    let mut guard = DivergenceGuard::new();
    let mut converged = false;
    let mut iter = 0usize;
    let mut lfac = vec![0.0f64; m];
    let mut rfac = vec![0.0f64; n];
    let mut rows_next = vec![0.0f64; m];
    let mut cols_next = vec![0.0f64; n];

    loop {
        let done = delta <= cfg.eta * cfg.eta * s * s;
        if iter % cfg.record_every == 0 || done || iter >= cfg.max_iters {
            let e_op = rows.iter().map(|&r| (s - m as f64 * r).abs()).fold(0.0f64, f64::max);
            let f_op = cols.iter().map(|&c| (s - n as f64 * c).abs()).fold(0.0f64, f64::max);
            trace.rows.push(TraceRow {
                iter,
                t: iter as f64 * alpha,
                s: s / s0,
                delta: delta / (s0 * s0),
                e_op: e_op / s0,
                f_op: f_op / s0,
                kappa_l: diag_condition(&log_l),
                kappa_r: diag_condition(&log_r),
            });
        }
        if done {
            converged = true;
            break;
        }
        if iter >= cfg.max_iters {
            break;
        }

        loop {
            for i in 0..m {
                lfac[i] = 1.0 + a_eff * (s - m as f64 * rows[i]);
            }
            for j in 0..n {
                rfac[j] = 1.0 + a_eff * (s - n as f64 * cols[j]);
            }
            if lfac.iter().chain(rfac.iter()).any(|&f| f <= 0.0) {
                // a non-positive factor can only come from an oversized step
                if guard.check(iter, delta, f64::INFINITY)? {
                    a_eff *= 0.5;
                    continue;
                }
                unreachable!("guard either retries or errors");
            }
            // fused update pass: write the candidate, its marginals and the
            // squared Kraus displacement in one sweep
            let mut step_sq = 0.0;
            rows_next.iter_mut().for_each(|x| *x = 0.0);
            for (j, cj_out) in cols_next.iter_mut().enumerate() {
                let f_r = rfac[j];
                let src = &a[j * m..(j + 1) * m];
                let dst = &mut a_next[j * m..(j + 1) * m];
                let mut cj = 0.0;
                for (((&old, dst), &lf), rn) in
                    src.iter().zip(dst.iter_mut()).zip(lfac.iter()).zip(rows_next.iter_mut())
                {
                    let new = old * (lf * f_r);
                    *dst = new;
                    let da = new - old;
                    step_sq += da * da;
                    let w = new * new;
                    *rn += w;
                    cj += w;
                }
                *cj_out = cj;
            }
            let s_next: f64 = rows_next.iter().sum();
            let delta_next = delta_of(s_next, &rows_next, &cols_next);
            if guard.check(iter, delta, delta_next)? {
                a_eff *= 0.5;
                continue;
            }
            movement += step_sq.sqrt();
            std::mem::swap(&mut a, &mut a_next);
            std::mem::swap(&mut rows, &mut rows_next);
            std::mem::swap(&mut cols, &mut cols_next);
            s = s_next;
            delta = delta_next;
            for i in 0..m {
                log_l[i] += lfac[i].ln();
            }
            for j in 0..n {
                log_r[j] += rfac[j].ln();
            }
            break;
        }
        iter += 1;
    }

    let final_matrix = DMatrix::from_fn(m, n, |i, j| a[j * m + i] * a[j * m + i]);
    Ok(MatrixScaling {
        final_matrix,
        log_left: log_l,
        log_right: log_r,
        trace,
        converged,
        movement_sq: movement * movement,
        iterations: iter,
    })
}

/// Alternating (row/column normalization) specialized to matrix instances:
/// rows are rescaled to sum s/m, then columns to sum s/n. Size is preserved
/// exactly; the trace records t as the iteration index.
pub fn run_matrix_alternating(b: &DMatrix<f64>, cfg: &SolverConfig) -> Result<MatrixScaling> {
    cfg.validate()?;
    if b.iter().any(|&x| x < 0.0) {
        return Err(Error::NegativeEntry);
    }
    let (m, n) = (b.nrows(), b.ncols());
    let s0: f64 = b.iter().sum();
    if s0 <= 0.0 {
        return Err(Error::ZeroOperator);
    }
    let mut cur = b.clone();
    let mut log_l = DVector::zeros(m);
    let mut log_r = DVector::zeros(n);
    let mut trace = ConvergenceTrace::default();
    let mut movement = 0.0f64;
    let mut converged = false;
    let mut iter = 0usize;

    loop {
        let s: f64 = cur.iter().sum();
        let rows = DVector::from_fn(m, |i, _| cur.row(i).iter().sum::<f64>());
        let cols = DVector::from_fn(n, |j, _| cur.column(j).iter().sum::<f64>());
        let mut delta = 0.0;
        for i in 0..m {
            delta += (s - m as f64 * rows[i]).powi(2) / m as f64;
        }
        for j in 0..n {
            delta += (s - n as f64 * cols[j]).powi(2) / n as f64;
        }
        let done = delta <= cfg.eta * cfg.eta * s * s;
        if iter % cfg.record_every == 0 || done || iter >= cfg.max_iters {
            let e_op = (0..m).map(|i| (s - m as f64 * rows[i]).abs()).fold(0.0f64, f64::max);
            let f_op = (0..n).map(|j| (s - n as f64 * cols[j]).abs()).fold(0.0f64, f64::max);
            trace.rows.push(TraceRow {
                iter,
                t: iter as f64,
                s: s / s0,
                delta: delta / (s0 * s0),
                e_op: e_op / s0,
                f_op: f_op / s0,
                kappa_l: diag_condition(&log_l),
                kappa_r: diag_condition(&log_r),
            });
        }
        if done {
            converged = true;
            break;
        }
        if iter >= cfg.max_iters {
            break;
        }

        let floor = 1e-12 * s / m as f64;
        if rows.iter().any(|&r| r < floor) {
            return Err(Error::SingularMap { min_eig: rows.min() });
        }
        // row normalization; movement measured at the Kraus level
        let mut step_sq = 0.0;
        for i in 0..m {
            let f = s / (m as f64 * rows[i]);
            let df = f.sqrt() - 1.0;
            step_sq += rows[i] * df * df;
            for j in 0..n {
                cur[(i, j)] *= f;
            }
            log_l[i] += 0.5 * f.ln();
        }
        movement += step_sq.sqrt();

        let cols = DVector::from_fn(n, |j, _| cur.column(j).iter().sum::<f64>());
        let floor = 1e-12 * s / n as f64;
        if cols.iter().any(|&c| c < floor) {
            return Err(Error::SingularMap { min_eig: cols.min() });
        }
        let mut step_sq = 0.0;
        for j in 0..n {
            let f = s / (n as f64 * cols[j]);
            let df = f.sqrt() - 1.0;
            step_sq += cols[j] * df * df;
            for i in 0..m {
                cur[(i, j)] *= f;
            }
            log_r[j] += 0.5 * f.ln();
        }
        movement += step_sq.sqrt();
        iter += 1;
    }

    Ok(MatrixScaling {
        final_matrix: cur,
        log_left: log_l,
        log_right: log_r,
        trace,
        converged,
        movement_sq: movement * movement,
        iterations: iter,
    })
}

/// Result of the frame fast path: a dense left transform and diagonal
/// per-vector normalizers (kept in logs).
#[derive(Debug, Clone)]
pub struct FrameScaling {
    pub final_frame: Frame,
    pub left: DMatrix<f64>,
    pub log_right: DVector<f64>,
    pub trace: ConvergenceTrace,
    pub converged: bool,
    pub movement_sq: f64,
    pub iterations: usize,
}

impl FrameScaling {
    pub fn to_scaling_result(&self) -> Result<ScalingResult> {
        let right = DMatrix::from_diagonal(&self.log_right.map(f64::exp));
        let final_operator = crate::reduce::frame_to_operator(&self.final_frame)?;
        let kappa_left = condition_number(&self.left)?;
        let kappa_right = diag_condition(&self.log_right);
        Ok(ScalingResult {
            final_operator,
            left: self.left.clone(),
            right,
            kappa_left,
            kappa_right,
            trace: self.trace.clone(),
            converged: self.converged,
            movement_sq: self.movement_sq,
            iterations: self.iterations,
        })
    }
}

/// Gradient flow specialized to frame instances: vectors update as
/// `u_i ← (1 + αF_ii)·(I + αE)·u_i`, O(n·d²) per step. The right scaling
/// stays diagonal along the whole flow.
pub fn run_frame_fast_path(frame: &Frame, cfg: &SolverConfig) -> Result<FrameScaling> {
    cfg.validate()?;
    let d = frame.dim();
    let n = frame.len();
    let s0 = frame.size();
    let alpha = cfg.step_size(d, n);
    let mut a_eff = alpha / s0;

    let mut vecs: Vec<DVector<f64>> = frame.vectors().to_vec();
    let mut left = DMatrix::<f64>::identity(d, d);
    let mut log_r = DVector::zeros(n);
    let mut trace = ConvergenceTrace::default();
    let mut movement = 0.0f64;
    let mut guard = DivergenceGuard::new();
    let mut converged = false;
    let mut iter = 0usize;

    struct FrameState {
        s: f64,
        delta: f64,
        err_left: DMatrix<f64>,
        f_diag: DVector<f64>,
    }
    let measure = |vs: &[DVector<f64>]| -> FrameState {
        let mut outer = DMatrix::zeros(d, d);
        let mut s = 0.0;
        for v in vs {
            outer.ger(1.0, v, v, 1.0);
            s += v.norm_squared();
        }
        let mut err_left = outer * (-(d as f64));
        for i in 0..d {
            err_left[(i, i)] += s;
        }
        let f_diag = DVector::from_fn(n, |i, _| s - n as f64 * vs[i].norm_squared());
        let delta = frob_sq(&err_left) / d as f64 + f_diag.iter().map(|x| x * x).sum::<f64>() / n as f64;
        FrameState { s, delta, err_left, f_diag }
    };

    loop {
        let state = measure(&vecs);
        let done = state.delta <= cfg.eta * cfg.eta * state.s * state.s;
        if iter % cfg.record_every == 0 || done || iter >= cfg.max_iters {
            trace.rows.push(TraceRow {
                iter,
                t: iter as f64 * alpha,
                s: state.s / s0,
                delta: state.delta / (s0 * s0),
                e_op: symmetric_op_norm(&state.err_left) / s0,
                f_op: state.f_diag.iter().fold(0.0f64, |acc, x| acc.max(x.abs())) / s0,
                kappa_l: condition_number(&left).unwrap_or(f64::INFINITY),
                kappa_r: diag_condition(&log_r),
            });
        }
        if done {
            converged = true;
            break;
        }
        if iter >= cfg.max_iters {
            break;
        }

        loop {
            let mut step_l = &state.err_left * a_eff;
            for i in 0..d {
                step_l[(i, i)] += 1.0;
            }
            let rfac = DVector::from_fn(n, |i, _| 1.0 + a_eff * state.f_diag[i]);
            let next: Vec<DVector<f64>> = vecs
                .iter()
                .enumerate()
                .map(|(i, v)| &step_l * v * rfac[i])
                .collect();
            let next_state = measure(&next);
            if guard.check(iter, state.delta, next_state.delta)? {
                a_eff *= 0.5;
                continue;
            }
            let step_sq: f64 = vecs
                .iter()
                .zip(&next)
                .map(|(a, b)| (b - a).norm_squared())
                .sum();
            movement += step_sq.sqrt();
            vecs = next;
            left = &step_l * left;
            for i in 0..n {
                log_r[i] += rfac[i].ln();
            }
            break;
        }
        iter += 1;
    }

    Ok(FrameScaling {
        final_frame: Frame::new(vecs)?,
        left,
        log_right: log_r,
        trace,
        converged,
        movement_sq: movement * movement,
        iterations: iter,
    })
}

/// Alternating method specialized to frames: the left half-step applies
/// sqrt(s/d)·(Σ u uᵀ)^{-1/2}, the right half-step renormalizes each vector to
/// squared norm s/n.
pub fn run_frame_alternating(frame: &Frame, cfg: &SolverConfig) -> Result<FrameScaling> {
    cfg.validate()?;
    let d = frame.dim();
    let n = frame.len();
    let s0 = frame.size();
    let mut vecs: Vec<DVector<f64>> = frame.vectors().to_vec();
    let mut left = DMatrix::<f64>::identity(d, d);
    let mut log_r = DVector::zeros(n);
    let mut trace = ConvergenceTrace::default();
    let mut movement = 0.0f64;
    let mut converged = false;
    let mut iter = 0usize;

    loop {
        let mut outer = DMatrix::zeros(d, d);
        let mut s = 0.0;
        for v in &vecs {
            outer.ger(1.0, v, v, 1.0);
            s += v.norm_squared();
        }
        let mut err_left = &outer * (-(d as f64));
        for i in 0..d {
            err_left[(i, i)] += s;
        }
        let f_diag = DVector::from_fn(n, |i, _| s - n as f64 * vecs[i].norm_squared());
        let delta =
            frob_sq(&err_left) / d as f64 + f_diag.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let done = delta <= cfg.eta * cfg.eta * s * s;
        if iter % cfg.record_every == 0 || done || iter >= cfg.max_iters {
            trace.rows.push(TraceRow {
                iter,
                t: iter as f64,
                s: s / s0,
                delta: delta / (s0 * s0),
                e_op: symmetric_op_norm(&err_left) / s0,
                f_op: f_diag.iter().fold(0.0f64, |acc, x| acc.max(x.abs())) / s0,
                kappa_l: condition_number(&left).unwrap_or(f64::INFINITY),
                kappa_r: diag_condition(&log_r),
            });
        }
        if done {
            converged = true;
            break;
        }
        if iter >= cfg.max_iters {
            break;
        }

        let step_l = inv_sqrt_psd(&outer, 1e-12 * s / d as f64)? * (s / d as f64).sqrt();
        let next: Vec<DVector<f64>> = vecs.iter().map(|v| &step_l * v).collect();
        movement += vecs
            .iter()
            .zip(&next)
            .map(|(a, b)| (b - a).norm_squared())
            .sum::<f64>()
            .sqrt();
        vecs = next;
        left = &step_l * left;

        let target = (s / n as f64).sqrt();
        let mut step_sq = 0.0;
        for (i, v) in vecs.iter_mut().enumerate() {
            let norm = v.norm();
            if norm <= 1e-12 * target {
                return Err(Error::SingularMap { min_eig: norm * norm });
            }
            let f = target / norm;
            step_sq += (f - 1.0).powi(2) * norm * norm;
            *v *= f;
            log_r[i] += f.ln();
        }
        movement += step_sq.sqrt();
        iter += 1;
    }

    Ok(FrameScaling {
        final_frame: Frame::new(vecs)?,
        left,
        log_right: log_r,
        trace,
        converged,
        movement_sq: movement * movement,
        iterations: iter,
    })
}
