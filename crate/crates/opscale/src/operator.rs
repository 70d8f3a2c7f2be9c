//! The central object: a tuple of real Kraus matrices and the instantaneous
//! quantities of the scaling dynamical system.
//!
//! An [`Operator`] is a list of k real m×n matrices `A_1..A_k`. It induces the
//! completely positive map `Phi(Y) = Σ A_i Y A_iᵀ` and its adjoint
//! `Phi*(X) = Σ A_iᵀ X A_i`. Everything downstream (certification, solvers,
//! capacity) is phrased in terms of the size `s = Σ ‖A_i‖_F²`, the error
//! matrices `E = s·I − m·Phi(I)` / `F = s·I − n·Phi*(I)` and the l2-error
//! `Δ = ‖E‖_F²/m + ‖F‖_F²/n`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on dense m²·n² (or (mn)²) constructions.
pub const DENSE_ENTRY_BUDGET: usize = 100_000_000;

/// A tuple of k real m×n Kraus matrices.
///
/// Construction rejects empty tuples, shape mismatches, non-finite entries
/// and the identically-zero operator (its size is zero, which makes every
/// balance quantity undefined).
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    out_dim: usize,
    in_dim: usize,
    kraus: Vec<DMatrix<f64>>,
}

/// Traceless error matrices of the dynamical system.
///
/// `left` is the symmetric m×m matrix `s·I_m − m·Phi(I_n)`, `right` the
/// symmetric n×n matrix `s·I_n − n·Phi*(I_m)`. Both have zero trace by
/// construction.
#[derive(Debug, Clone)]
pub struct ErrorPair {
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
}

/// Size, balance parameter and l2-error of an operator.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BalanceReport {
    /// Operator size s = Σ ‖A_i‖_F².
    pub s: f64,
    /// Smallest eps such that the operator is eps-nearly doubly balanced,
    /// read off the extreme eigenvalues of Phi(I_n) and Phi*(I_m).
    pub epsilon: f64,
    /// ‖E‖_F² / m.
    pub delta_left: f64,
    /// ‖F‖_F² / n.
    pub delta_right: f64,
    /// delta_left + delta_right.
    pub delta_total: f64,
}

/// The three terms of the l2-error decay rate: two non-negative quadratic
/// terms and a signed cross term. Their sum equals Σ ‖E·A_i + A_i·F‖_F².
#[derive(Debug, Clone, Copy)]
pub struct RateDecomposition {
    /// ⟨E², Phi(I_n)⟩ ≥ 0.
    pub quad_left: f64,
    /// ⟨F², Phi*(I_m)⟩ ≥ 0.
    pub quad_right: f64,
    /// 2⟨E, Phi(F)⟩ (equivalently 2⟨Q, E ⊗ F⟩ through the Choi matrix).
    pub cross: f64,
}

impl RateDecomposition {
    pub fn total(&self) -> f64 {
        self.quad_left + self.quad_right + self.cross
    }
}

impl Operator {
    pub fn new(kraus: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = kraus.first().ok_or(Error::EmptyOperator)?;
        let (m, n) = (first.nrows(), first.ncols());
        if m == 0 || n == 0 {
            return Err(Error::InvalidInput("matrix dimensions must be positive".into()));
        }
        let mut sum_sq = 0.0;
        for a in &kraus {
            if a.nrows() != m || a.ncols() != n {
                return Err(Error::ShapeMismatch {
                    expected_rows: m,
                    expected_cols: n,
                    rows: a.nrows(),
                    cols: a.ncols(),
                });
            }
            for &x in a.iter() {
                if !x.is_finite() {
                    return Err(Error::NonFinite);
                }
                sum_sq += x * x;
            }
        }
        if sum_sq == 0.0 {
            return Err(Error::ZeroOperator);
        }
        Ok(Self { out_dim: m, in_dim: n, kraus })
    }

    /// Number of Kraus matrices k.
    pub fn num_kraus(&self) -> usize {
        self.kraus.len()
    }

    /// Output dimension m.
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Input dimension n.
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn kraus(&self) -> &[DMatrix<f64>] {
        &self.kraus
    }

    /// Size s = Σ ‖A_i‖_F², always strictly positive.
    pub fn size(&self) -> f64 {
        self.kraus.iter().map(|a| a.iter().map(|x| x * x).sum::<f64>()).sum()
    }

    /// Phi(Y) = Σ A_i Y A_iᵀ, mapping n×n to m×m.
    pub fn apply(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if y.nrows() != self.in_dim || y.ncols() != self.in_dim {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.in_dim, self.in_dim),
                got: format!("{}x{}", y.nrows(), y.ncols()),
            });
        }
        let mut out = DMatrix::zeros(self.out_dim, self.out_dim);
        for a in &self.kraus {
            out += a * y * a.transpose();
        }
        Ok(out)
    }

    /// Adjoint map Phi*(X) = Σ A_iᵀ X A_i, mapping m×m to n×n.
    pub fn apply_adjoint(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.out_dim || x.ncols() != self.out_dim {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.out_dim, self.out_dim),
                got: format!("{}x{}", x.nrows(), x.ncols()),
            });
        }
        let mut out = DMatrix::zeros(self.in_dim, self.in_dim);
        for a in &self.kraus {
            out += a.transpose() * x * a;
        }
        Ok(out)
    }

    /// Phi(I_n) = Σ A_i A_iᵀ without materializing the identity.
    pub fn phi_identity(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.out_dim, self.out_dim);
        for a in &self.kraus {
            out.gemm(1.0, a, &a.transpose(), 1.0);
        }
        out
    }

    /// Phi*(I_m) = Σ A_iᵀ A_i.
    pub fn phi_adjoint_identity(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.in_dim, self.in_dim);
        for a in &self.kraus {
            out.gemm(1.0, &a.transpose(), a, 1.0);
        }
        out
    }

    /// E = s·I_m − m·Phi(I_n) and F = s·I_n − n·Phi*(I_m).
    pub fn error_matrices(&self) -> ErrorPair {
        let s = self.size();
        let m = self.out_dim as f64;
        let n = self.in_dim as f64;
        let mut left = self.phi_identity() * (-m);
        for i in 0..self.out_dim {
            left[(i, i)] += s;
        }
        let mut right = self.phi_adjoint_identity() * (-n);
        for j in 0..self.in_dim {
            right[(j, j)] += s;
        }
        ErrorPair { left, right }
    }

    /// l2-error Δ = ‖E‖_F²/m + ‖F‖_F²/n. Zero exactly when doubly balanced.
    pub fn delta(&self) -> f64 {
        let e = self.error_matrices();
        frob_sq(&e.left) / self.out_dim as f64 + frob_sq(&e.right) / self.in_dim as f64
    }

    /// Size, smallest certifying eps and the l2-error split.
    ///
    /// eps is the largest relative deviation of the extreme eigenvalues of
    /// Phi(I_n) from s/m and of Phi*(I_m) from s/n, i.e. the smallest eps for
    /// which the two-sided eigenvalue sandwich of the nearly-doubly-balanced
    /// condition holds.
    pub fn balance_report(&self) -> BalanceReport {
        let s = self.size();
        let m = self.out_dim as f64;
        let n = self.in_dim as f64;
        let phi_i = self.phi_identity();
        let phi_adj_i = self.phi_adjoint_identity();

        let (lo_l, hi_l) = symmetric_eig_range(&phi_i);
        let (lo_r, hi_r) = symmetric_eig_range(&phi_adj_i);
        let epsilon = (1.0 - lo_l * m / s)
            .max(hi_l * m / s - 1.0)
            .max(1.0 - lo_r * n / s)
            .max(hi_r * n / s - 1.0)
            .max(0.0);

        let mut e = phi_i * (-m);
        for i in 0..self.out_dim {
            e[(i, i)] += s;
        }
        let mut f = phi_adj_i * (-n);
        for j in 0..self.in_dim {
            f[(j, j)] += s;
        }
        let delta_left = frob_sq(&e) / m;
        let delta_right = frob_sq(&f) / n;
        BalanceReport {
            s,
            epsilon,
            delta_left,
            delta_right,
            delta_total: delta_left + delta_right,
        }
    }

    /// The natural matrix representation M = Σ A_i ⊗ A_i (m²×n²), acting on
    /// row-major vectorized inputs: M·vec(Y) = vec(Phi(Y)).
    pub fn matrix_representation(&self, budget: usize) -> Result<DMatrix<f64>> {
        let needed = self
            .out_dim
            .checked_mul(self.out_dim)
            .and_then(|r| r.checked_mul(self.in_dim * self.in_dim))
            .ok_or(Error::SizeBudgetExceeded { needed: usize::MAX, budget })?;
        if needed > budget {
            return Err(Error::SizeBudgetExceeded { needed, budget });
        }
        let mut rep = DMatrix::zeros(self.out_dim * self.out_dim, self.in_dim * self.in_dim);
        for a in &self.kraus {
            rep += a.kronecker(a);
        }
        Ok(rep)
    }

    /// The Choi matrix Q = Σ_{i,j} Phi(E_ij) ⊗ E_ij (mn×mn), assembled as
    /// Σ_k vec(A_k)·vec(A_k)ᵀ, hence positive semidefinite by construction.
    pub fn choi_matrix(&self, budget: usize) -> Result<DMatrix<f64>> {
        let mn = self.out_dim * self.in_dim;
        let needed = mn.checked_mul(mn).ok_or(Error::SizeBudgetExceeded {
            needed: usize::MAX,
            budget,
        })?;
        if needed > budget {
            return Err(Error::SizeBudgetExceeded { needed, budget });
        }
        let mut q = DMatrix::zeros(mn, mn);
        for a in &self.kraus {
            let v = vectorize(a);
            q.ger(1.0, &v, &v, 1.0);
        }
        Ok(q)
    }

    /// Flow direction H_i = E·A_i + A_i·F of the scaling dynamical system.
    /// The l2-error decreases along it at rate 4·Σ ‖H_i‖_F².
    pub fn gradient_direction(&self) -> Vec<DMatrix<f64>> {
        let ErrorPair { left, right } = self.error_matrices();
        self.kraus
            .iter()
            .map(|a| &left * a + a * &right)
            .collect()
    }

    /// Splits −(1/4)·dΔ/dt into quadratic and cross terms.
    pub fn rate_decomposition(&self) -> RateDecomposition {
        let ErrorPair { left, right } = self.error_matrices();
        let phi_i = self.phi_identity();
        let phi_adj_i = self.phi_adjoint_identity();
        let quad_left = inner(&(&left * &left), &phi_i);
        let quad_right = inner(&(&right * &right), &phi_adj_i);
        // Phi(F) without going through apply(): reuse the Kraus loop.
        let mut phi_f = DMatrix::zeros(self.out_dim, self.out_dim);
        for a in &self.kraus {
            phi_f += a * &right * a.transpose();
        }
        let cross = 2.0 * inner(&left, &phi_f);
        RateDecomposition { quad_left, quad_right, cross }
    }

    /// Returns an operator with m ≤ n, transposing every Kraus matrix if
    /// necessary, together with a flag saying whether the flip happened.
    /// Scaling solutions for the flipped operator apply to the original with
    /// left and right roles exchanged.
    pub fn normalized_orientation(&self) -> (Operator, bool) {
        if self.out_dim <= self.in_dim {
            (self.clone(), false)
        } else {
            let kraus = self.kraus.iter().map(|a| a.transpose()).collect();
            (
                Operator { out_dim: self.in_dim, in_dim: self.out_dim, kraus },
                true,
            )
        }
    }

    /// The scaled operator (L·A_1·R, ..., L·A_k·R).
    pub fn scaled(&self, left: &DMatrix<f64>, right: &DMatrix<f64>) -> Result<Operator> {
        if left.nrows() != self.out_dim || left.ncols() != self.out_dim {
            return Err(Error::DimensionMismatch {
                expected: format!("{m}x{m}", m = self.out_dim),
                got: format!("{}x{}", left.nrows(), left.ncols()),
            });
        }
        if right.nrows() != self.in_dim || right.ncols() != self.in_dim {
            return Err(Error::DimensionMismatch {
                expected: format!("{n}x{n}", n = self.in_dim),
                got: format!("{}x{}", right.nrows(), right.ncols()),
            });
        }
        Operator::new(self.kraus.iter().map(|a| left * a * right).collect())
    }
}

/// Row-major vectorization: vec(E_ij) = e_i ⊗ e_j, so vec(A)[i·n + j] = A[(i, j)].
pub fn vectorize(a: &DMatrix<f64>) -> DVector<f64> {
    let (m, n) = (a.nrows(), a.ncols());
    DVector::from_fn(m * n, |idx, _| a[(idx / n, idx % n)])
}

/// Inverse of [`vectorize`] for a given shape.
pub fn matricize(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), rows * cols, "vector length must equal rows*cols");
    DMatrix::from_fn(rows, cols, |i, j| v[i * cols + j])
}

/// Hilbert-Schmidt inner product tr(AᵀB).
pub fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub(crate) fn frob_sq(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// Extreme eigenvalues of a symmetric matrix.
pub(crate) fn symmetric_eig_range(a: &DMatrix<f64>) -> (f64, f64) {
    let eig = a.clone().symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Operator norm (largest absolute eigenvalue) of a symmetric matrix.
pub(crate) fn symmetric_op_norm(a: &DMatrix<f64>) -> f64 {
    let (lo, hi) = symmetric_eig_range(a);
    lo.abs().max(hi.abs())
}

/// Serialized form of [`Operator`]: row-major matrices plus dimensions.
#[derive(Debug, Serialize, Deserialize)]
pub struct OperatorSchema {
    #[serde(rename = "type")]
    pub kind: String,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub matrices: Vec<Vec<Vec<f64>>>,
}

impl From<&Operator> for OperatorSchema {
    fn from(op: &Operator) -> Self {
        OperatorSchema {
            kind: "operator".into(),
            m: op.out_dim,
            n: op.in_dim,
            k: op.num_kraus(),
            matrices: op
                .kraus
                .iter()
                .map(|a| (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect())
                .collect(),
        }
    }
}

impl TryFrom<OperatorSchema> for Operator {
    type Error = Error;

    fn try_from(schema: OperatorSchema) -> Result<Operator> {
        if schema.kind != "operator" {
            return Err(Error::InvalidInput(format!(
                "expected type \"operator\", got {:?}",
                schema.kind
            )));
        }
        if schema.matrices.len() != schema.k {
            return Err(Error::InvalidInput(format!(
                "k = {} but {} matrices given",
                schema.k,
                schema.matrices.len()
            )));
        }
        let mut kraus = Vec::with_capacity(schema.k);
        for rows in &schema.matrices {
            if rows.len() != schema.m || rows.iter().any(|r| r.len() != schema.n) {
                return Err(Error::InvalidInput(format!(
                    "each matrix must be {}x{} row-major",
                    schema.m, schema.n
                )));
            }
            kraus.push(DMatrix::from_fn(schema.m, schema.n, |i, j| rows[i][j]));
        }
        Operator::new(kraus)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_operator(rng: &mut impl Rng, k: usize, m: usize, n: usize) -> Operator {
        let scale = 1.0 / ((k * m * n) as f64).sqrt();
        let kraus = (0..k)
            .map(|_| DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0) * scale))
            .collect();
        Operator::new(kraus).unwrap()
    }

    #[test]
    fn size_of_scaled_identity() {
        // k=1, A1 = I2/sqrt(2) has size 1
        let a = DMatrix::identity(2, 2) / 2f64.sqrt();
        let op = Operator::new(vec![a]).unwrap();
        assert_relative_eq!(op.size(), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn size_matches_entrywise_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let op = random_operator(&mut rng, 3, 4, 5);
        // naive double loop
        let mut total = 0.0;
        for a in op.kraus() {
            for i in 0..a.nrows() {
                for j in 0..a.ncols() {
                    total += a[(i, j)] * a[(i, j)];
                }
            }
        }
        assert_relative_eq!(op.size(), total, max_relative = 1e-14);
    }

    #[test]
    fn zero_operator_rejected() {
        let z = DMatrix::zeros(2, 3);
        assert!(matches!(Operator::new(vec![z]), Err(Error::ZeroOperator)));
        assert!(matches!(Operator::new(vec![]), Err(Error::EmptyOperator)));
    }

    #[test]
    fn apply_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let op = random_operator(&mut rng, 3, 3, 4);
        let y = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
        let got = op.apply(&y).unwrap();
        let mut want = DMatrix::zeros(3, 3);
        for a in op.kraus() {
            for p in 0..3 {
                for q in 0..3 {
                    let mut acc = 0.0;
                    for u in 0..4 {
                        for v in 0..4 {
                            acc += a[(p, u)] * y[(u, v)] * a[(q, v)];
                        }
                    }
                    want[(p, q)] += acc;
                }
            }
        }
        assert_relative_eq!(got, want, max_relative = 1e-12);
    }

    #[test]
    fn apply_zero_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let op = random_operator(&mut rng, 2, 3, 3);
        let out = op.apply(&DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(out, DMatrix::zeros(3, 3));
        let out = op.apply_adjoint(&DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(out, DMatrix::zeros(3, 3));
    }

    #[test]
    fn apply_rejects_dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let op = random_operator(&mut rng, 2, 3, 4);
        assert!(op.apply(&DMatrix::zeros(3, 3)).is_err());
        assert!(op.apply_adjoint(&DMatrix::zeros(4, 4)).is_err());
    }

    #[test]
    fn adjointness_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let op = random_operator(&mut rng, 3, 4, 5);
            let x = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
            let y = DMatrix::from_fn(5, 5, |_, _| rng.gen_range(-1.0..1.0));
            let lhs = inner(&x, &op.apply(&y).unwrap());
            let rhs = inner(&op.apply_adjoint(&x).unwrap(), &y);
            let scale = frob_sq(&x).sqrt() * frob_sq(&y).sqrt();
            assert!((lhs - rhs).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn traceless_error_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let k = rng.gen_range(1..4);
            let m = rng.gen_range(1..6);
            let n = rng.gen_range(1..6);
            let op = random_operator(&mut rng, k, m, n);
            let e = op.error_matrices();
            let s = op.size();
            assert!(e.left.trace().abs() <= 1e-9 * s);
            assert!(e.right.trace().abs() <= 1e-9 * s);
            // symmetry
            assert_relative_eq!(e.left, e.left.transpose(), epsilon = 1e-9 * s);
            assert_relative_eq!(e.right, e.right.transpose(), epsilon = 1e-9 * s);
        }
    }

    #[test]
    fn error_matrices_hand_example() {
        // matrix-reduced B = [[2,0],[0,0]]: row sums (2,0), s=2,
        // E = diag(2-2*2, 2-2*0) = diag(-2, 2)
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let op = crate::reduce::matrix_to_operator(&b).unwrap();
        let e = op.error_matrices();
        let want = DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, 2.0]);
        assert_relative_eq!(e.left, want, epsilon = 1e-12);
        assert_relative_eq!(e.right, want, epsilon = 1e-12);
    }

    #[test]
    fn balance_report_hand_example() {
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let op = crate::reduce::matrix_to_operator(&b).unwrap();
        let r = op.balance_report();
        assert_relative_eq!(r.delta_left, 4.0, max_relative = 1e-12);
        assert_relative_eq!(r.delta_right, 4.0, max_relative = 1e-12);
        assert_relative_eq!(r.delta_total, 8.0, max_relative = 1e-12);
        // Phi(I) = diag(2,0), s/m = 1: eigenvalue deviations are 1 on both sides
        assert_relative_eq!(r.epsilon, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn balanced_operator_has_zero_error() {
        // A single unitary Kraus matrix is doubly balanced.
        let op = Operator::new(vec![DMatrix::identity(3, 3)]).unwrap();
        let r = op.balance_report();
        assert!(r.epsilon.abs() <= 1e-12);
        assert!(r.delta_total.abs() <= 1e-12);
        assert!(op.gradient_direction().iter().all(|h| frob_sq(h) <= 1e-24));
        let rd = op.rate_decomposition();
        assert!(rd.quad_left.abs() <= 1e-12 && rd.quad_right.abs() <= 1e-12 && rd.cross.abs() <= 1e-12);
    }

    #[test]
    fn delta_epsilon_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..100 {
            let k = rng.gen_range(1..4);
            let m = rng.gen_range(1..6);
            let n = rng.gen_range(1..6);
            let op = random_operator(&mut rng, k, m, n);
            let r = op.balance_report();
            assert!(
                r.delta_total <= 2.0 * r.epsilon * r.epsilon * r.s * r.s + 1e-9 * r.s * r.s,
                "delta {} vs 2 eps^2 s^2 {}",
                r.delta_total,
                2.0 * r.epsilon * r.epsilon * r.s * r.s
            );
        }
    }

    #[test]
    fn positivity_of_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let op = random_operator(&mut rng, 2, 3, 4);
            let g = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
            let y = &g * g.transpose(); // PSD
            let out = op.apply(&y).unwrap();
            let (lo, _) = symmetric_eig_range(&out);
            let y_norm = symmetric_op_norm(&y);
            assert!(lo >= -1e-9 * y_norm);
        }
    }

    #[test]
    fn representation_acts_as_vectorized_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let op = random_operator(&mut rng, 3, 3, 4);
        let rep = op.matrix_representation(DENSE_ENTRY_BUDGET).unwrap();
        for _ in 0..5 {
            let y = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
            let lhs = &rep * vectorize(&y);
            let rhs = vectorize(&op.apply(&y).unwrap());
            let err = (&lhs - &rhs).norm();
            assert!(err <= 1e-10 * frob_sq(&y).sqrt());
        }
    }

    #[test]
    fn representation_of_kron_identity() {
        // k=1, A = I_n/sqrt(n) -> M = (1/n) I_{n^2}
        let n = 3;
        let a = DMatrix::identity(n, n) / (n as f64).sqrt();
        let op = Operator::new(vec![a]).unwrap();
        let rep = op.matrix_representation(DENSE_ENTRY_BUDGET).unwrap();
        assert_relative_eq!(rep, DMatrix::identity(n * n, n * n) / n as f64, epsilon = 1e-14);
    }

    #[test]
    fn representation_of_matrix_reduction_is_single_block() {
        let b = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.5, 0.0, 3.0, 1.5]);
        let op = crate::reduce::matrix_to_operator(&b).unwrap();
        let rep = op.matrix_representation(DENSE_ENTRY_BUDGET).unwrap();
        let (m, n) = (2, 3);
        for r in 0..m * m {
            for c in 0..n * n {
                let expected = if r % m == r / m && c % n == c / n {
                    b[(r / m, c / n)]
                } else {
                    0.0
                };
                assert!((rep[(r, c)] - expected).abs() <= 1e-14, "at ({r},{c})");
            }
        }
    }

    #[test]
    fn representation_budget_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let op = random_operator(&mut rng, 1, 4, 4);
        assert!(matches!(
            op.matrix_representation(100),
            Err(Error::SizeBudgetExceeded { .. })
        ));
        assert!(matches!(op.choi_matrix(100), Err(Error::SizeBudgetExceeded { .. })));
    }

    #[test]
    fn choi_inner_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let op = random_operator(&mut rng, 3, 3, 4);
        let q = op.choi_matrix(DENSE_ENTRY_BUDGET).unwrap();
        // PSD check
        let (lo, _) = symmetric_eig_range(&q);
        assert!(lo >= -1e-12);
        for _ in 0..5 {
            let gx = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
            let gy = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
            let x = (&gx + gx.transpose()) * 0.5;
            let y = (&gy + gy.transpose()) * 0.5;
            let lhs = inner(&q, &x.kronecker(&y));
            let rhs = inner(&x, &op.apply(&y).unwrap());
            assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn choi_partial_traces_of_balanced_operator() {
        let op = Operator::new(vec![DMatrix::identity(3, 3)]).unwrap();
        let q = op.choi_matrix(DENSE_ENTRY_BUDGET).unwrap();
        let (m, n) = (3, 3);
        let s = op.size();
        // tr over the second factor: X[a,b] = sum_i Q[(a,i),(b,i)]
        let mut tr_n = DMatrix::zeros(m, m);
        for a in 0..m {
            for b in 0..m {
                for i in 0..n {
                    tr_n[(a, b)] += q[(a * n + i, b * n + i)];
                }
            }
        }
        assert_relative_eq!(tr_n, DMatrix::identity(m, m) * (s / m as f64), epsilon = 1e-12);
        let mut tr_m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                for a in 0..m {
                    tr_m[(i, j)] += q[(a * n + i, a * n + j)];
                }
            }
        }
        assert_relative_eq!(tr_m, DMatrix::identity(n, n) * (s / n as f64), epsilon = 1e-12);
    }

    #[test]
    fn choi_of_rank_one_indicator() {
        // A = e1 e1^T: Q has a single unit entry
        let mut a = DMatrix::zeros(2, 2);
        a[(0, 0)] = 1.0;
        let op = Operator::new(vec![a]).unwrap();
        let q = op.choi_matrix(DENSE_ENTRY_BUDGET).unwrap();
        let mut want = DMatrix::zeros(4, 4);
        want[(0, 0)] = 1.0;
        assert_relative_eq!(q, want, epsilon = 1e-14);
    }

    #[test]
    fn rate_decomposition_matches_gradient_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..100 {
            let k = rng.gen_range(1..5);
            let m = rng.gen_range(2..6);
            let n = rng.gen_range(2..6);
            let op = random_operator(&mut rng, k, m, n);
            let rd = op.rate_decomposition();
            assert!(rd.quad_left >= -1e-12);
            assert!(rd.quad_right >= -1e-12);
            let grad_sq: f64 = op.gradient_direction().iter().map(frob_sq).sum();
            assert_relative_eq!(rd.total(), grad_sq, max_relative = 1e-8);
        }
    }

    #[test]
    fn gradient_finite_difference_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let k = rng.gen_range(1..4);
            let m = rng.gen_range(2..6);
            let n = rng.gen_range(2..6);
            let op = random_operator(&mut rng, k, m, n);
            // random unit-norm perturbation
            let mut h: Vec<DMatrix<f64>> = (0..k)
                .map(|_| DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0)))
                .collect();
            let norm: f64 = h.iter().map(frob_sq).sum::<f64>().sqrt();
            for hi in &mut h {
                *hi /= norm;
            }
            let step = 1e-6;
            let perturb = |sign: f64| {
                let kraus: Vec<_> = op
                    .kraus()
                    .iter()
                    .zip(&h)
                    .map(|(a, hi)| a + hi * (sign * step))
                    .collect();
                Operator::new(kraus).unwrap().delta()
            };
            let fd = (perturb(1.0) - perturb(-1.0)) / (2.0 * step);
            let e = op.error_matrices();
            let analytic: f64 = -4.0
                * op.kraus()
                    .iter()
                    .zip(&h)
                    .map(|(a, hi)| inner(&(&e.left * a + a * &e.right), hi))
                    .sum::<f64>();
            assert!(
                (fd - analytic).abs() <= 1e-5 * analytic.abs().max(1e-6),
                "fd {fd} vs analytic {analytic}"
            );
        }
    }

    #[test]
    fn matrix_reduction_entry_update_rule() {
        // induced entry update of the embedded matrix: squaring the Kraus entry
        // update gives dB_ij/dt = 2((s-m r_i) + (s-n c_j)) B_ij
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let b = DMatrix::from_fn(3, 4, |_, _| rng.gen_range(0.1..1.0));
        let op = crate::reduce::matrix_to_operator(&b).unwrap();
        let grad = op.gradient_direction();
        let s: f64 = b.iter().sum();
        let r: Vec<f64> = (0..3).map(|i| b.row(i).iter().sum()).collect();
        let c: Vec<f64> = (0..4).map(|j| b.column(j).iter().sum()).collect();
        // Kraus matrices are ordered row-major over nonzero entries of b
        let mut idx = 0;
        for i in 0..3 {
            for j in 0..4 {
                if b[(i, j)] == 0.0 {
                    continue;
                }
                let a_ij = b[(i, j)].sqrt();
                // d a_ij = ((s - m r_i) + (s - n c_j)) a_ij; dB = 2 a da
                let da = grad[idx][(i, j)];
                let db = 2.0 * a_ij * da;
                let want = 2.0 * ((s - 3.0 * r[i]) + (s - 4.0 * c[j])) * b[(i, j)];
                assert_relative_eq!(db, want, max_relative = 1e-10);
                idx += 1;
            }
        }
    }

    #[test]
    fn orientation_normalization_flips_tall_operators() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let op = random_operator(&mut rng, 2, 5, 3);
        let (wide, flipped) = op.normalized_orientation();
        assert!(flipped);
        assert_eq!(wide.out_dim(), 3);
        assert_eq!(wide.in_dim(), 5);
        assert_relative_eq!(wide.size(), op.size(), max_relative = 1e-14);
        let (same, flipped2) = wide.normalized_orientation();
        assert!(!flipped2);
        assert_eq!(same.out_dim(), 3);
    }

    #[test]
    fn schema_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let op = random_operator(&mut rng, 2, 3, 4);
        let schema = OperatorSchema::from(&op);
        let json = serde_json::to_string(&schema).unwrap();
        let back: OperatorSchema = serde_json::from_str(&json).unwrap();
        let op2 = Operator::try_from(back).unwrap();
        assert_eq!(op, op2);
    }
}
