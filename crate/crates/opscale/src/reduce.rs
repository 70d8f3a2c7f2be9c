//! Instance embeddings: matrices, frames and Brascamp-Lieb data all scale
//! through the same operator machinery.
//!
//! Each reduction preserves size, balance parameter and l2-error, and the
//! structured scaling solutions (diagonal for matrices, matrix-plus-normalizer
//! for frames) can be read back off the operator-level solution.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::Operator;
use crate::solver::ScalingResult;

/// n vectors in R^d.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    dim: usize,
    vectors: Vec<DVector<f64>>,
}

impl Frame {
    pub fn new(vectors: Vec<DVector<f64>>) -> Result<Self> {
        let first = vectors.first().ok_or_else(|| {
            Error::InvalidInput("frame needs at least one vector".into())
        })?;
        let dim = first.len();
        if dim == 0 {
            return Err(Error::InvalidInput("frame vectors must be non-empty".into()));
        }
        let mut size = 0.0;
        for v in &vectors {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: format!("{dim}"),
                    got: format!("{}", v.len()),
                });
            }
            for &x in v.iter() {
                if !x.is_finite() {
                    return Err(Error::NonFinite);
                }
                size += x * x;
            }
        }
        if size == 0.0 {
            return Err(Error::ZeroOperator);
        }
        Ok(Frame { dim, vectors })
    }

    /// Ambient dimension d.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of vectors n.
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[DVector<f64>] {
        &self.vectors
    }

    /// Frame size s = Σ ‖u_i‖².
    pub fn size(&self) -> f64 {
        self.vectors.iter().map(|v| v.norm_squared()).sum()
    }

    /// Σ u_i u_iᵀ, the d×d frame operator.
    pub fn outer_sum(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for v in &self.vectors {
            out.ger(1.0, v, v, 1.0);
        }
        out
    }

    /// Balance quantities computed directly on the frame, identical to the
    /// embedded operator's report without materializing it.
    pub fn balance_report(&self) -> crate::operator::BalanceReport {
        let s = self.size();
        let d = self.dim as f64;
        let n = self.vectors.len() as f64;
        let outer = self.outer_sum();
        let (lo, hi) = crate::operator::symmetric_eig_range(&outer);
        let mut epsilon = (1.0 - lo * d / s).max(hi * d / s - 1.0);
        let mut err_left = outer * (-d);
        for i in 0..self.dim {
            err_left[(i, i)] += s;
        }
        let delta_left = err_left.iter().map(|x| x * x).sum::<f64>() / d;
        let mut delta_right = 0.0;
        for v in &self.vectors {
            let w = v.norm_squared();
            epsilon = epsilon.max((w * n / s - 1.0).abs());
            delta_right += (s - n * w) * (s - n * w) / n;
        }
        crate::operator::BalanceReport {
            s,
            epsilon: epsilon.max(0.0),
            delta_left,
            delta_right,
            delta_total: delta_left + delta_right,
        }
    }
}

/// Balance quantities of a non-negative matrix instance, identical to the
/// embedded operator's report.
pub fn matrix_balance_report(b: &DMatrix<f64>) -> Result<crate::operator::BalanceReport> {
    if b.iter().any(|&x| x < 0.0) {
        return Err(Error::NegativeEntry);
    }
    let s: f64 = b.iter().sum();
    if s <= 0.0 {
        return Err(Error::ZeroOperator);
    }
    let (m, n) = (b.nrows(), b.ncols());
    let mut epsilon: f64 = 0.0;
    let mut delta_left = 0.0;
    for i in 0..m {
        let r: f64 = b.row(i).iter().sum();
        epsilon = epsilon.max((r * m as f64 / s - 1.0).abs());
        delta_left += (s - m as f64 * r).powi(2) / m as f64;
    }
    let mut delta_right = 0.0;
    for j in 0..n {
        let c: f64 = b.column(j).iter().sum();
        epsilon = epsilon.max((c * n as f64 / s - 1.0).abs());
        delta_right += (s - n as f64 * c).powi(2) / n as f64;
    }
    Ok(crate::operator::BalanceReport {
        s,
        epsilon,
        delta_left,
        delta_right,
        delta_total: delta_left + delta_right,
    })
}

/// A Brascamp-Lieb datum: linear maps `B_j: R^n -> R^{n_j}` with rational
/// exponents `p_j = c_j / denominator`, subject to Σ p_j·n_j = n.
#[derive(Debug, Clone)]
pub struct BlDatum {
    maps: Vec<DMatrix<f64>>,
    counts: Vec<u32>,
    denominator: u32,
    ambient: usize,
}

impl BlDatum {
    pub fn new(maps: Vec<DMatrix<f64>>, counts: Vec<u32>, denominator: u32) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::InvalidInput("datum needs at least one map".into()));
        }
        if maps.len() != counts.len() {
            return Err(Error::InvalidInput("one exponent per map required".into()));
        }
        if denominator == 0 || counts.iter().any(|&c| c == 0) {
            return Err(Error::InvalidInput(
                "exponents must be positive rationals c_j/denominator".into(),
            ));
        }
        let ambient = maps[0].ncols();
        if maps.iter().any(|b| b.ncols() != ambient) {
            return Err(Error::InvalidInput("all maps must share the ambient dimension".into()));
        }
        if maps.iter().any(|b| b.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite);
        }
        // scale-invariance constraint: sum_j p_j n_j = n
        let weighted: u64 = maps
            .iter()
            .zip(&counts)
            .map(|(b, &c)| b.nrows() as u64 * c as u64)
            .sum();
        if weighted != ambient as u64 * denominator as u64 {
            return Err(Error::InvalidInput(format!(
                "exponent constraint violated: sum c_j n_j = {} but n * denominator = {}",
                weighted,
                ambient as u64 * denominator as u64
            )));
        }
        Ok(BlDatum { maps, counts, denominator, ambient })
    }

    pub fn maps(&self) -> &[DMatrix<f64>] {
        &self.maps
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn denominator(&self) -> u32 {
        self.denominator
    }

    /// Ambient dimension n.
    pub fn ambient(&self) -> usize {
        self.ambient
    }

    pub fn exponent(&self, j: usize) -> f64 {
        self.counts[j] as f64 / self.denominator as f64
    }

    /// Datum size Σ p_j ‖B_j‖_F².
    pub fn size(&self) -> f64 {
        self.maps
            .iter()
            .zip(&self.counts)
            .map(|(b, &c)| (c as f64 / self.denominator as f64) * b.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }
}

/// Embeds a non-negative matrix as an operator with one rank-one Kraus matrix
/// per nonzero entry: the (i,j) Kraus matrix holds sqrt(B_ij) at (i,j).
/// Zero entries contribute zero matrices and are dropped.
pub fn matrix_to_operator(b: &DMatrix<f64>) -> Result<Operator> {
    let (m, n) = (b.nrows(), b.ncols());
    if b.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    if b.iter().any(|&x| x < 0.0) {
        return Err(Error::NegativeEntry);
    }
    let mut kraus = Vec::new();
    for i in 0..m {
        for j in 0..n {
            if b[(i, j)] > 0.0 {
                let mut a = DMatrix::zeros(m, n);
                a[(i, j)] = b[(i, j)].sqrt();
                kraus.push(a);
            }
        }
    }
    if kraus.is_empty() {
        return Err(Error::ZeroOperator);
    }
    Operator::new(kraus)
}

/// Embeds a frame as an operator with n Kraus matrices in R^{d×n}, the i-th
/// having u_i as its i-th column.
pub fn frame_to_operator(frame: &Frame) -> Result<Operator> {
    let d = frame.dim();
    let n = frame.len();
    let kraus = frame
        .vectors()
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let mut a = DMatrix::zeros(d, n);
            a.set_column(i, u);
            a
        })
        .collect();
    Operator::new(kraus)
}

/// Embeds a Brascamp-Lieb datum as an operator on block-diagonal inputs.
///
/// The operator has output dimension n (the ambient space) and input
/// dimension `denominator * n`. For each map j there are c_j Kraus matrices,
/// each placing `B_jᵀ / sqrt(denominator)` against one principal block, so
/// that `Phi(X) = (1/denominator) Σ_j Σ_i B_jᵀ X_{ji} B_j` where `X_{ji}`
/// runs over the diagonal blocks. A geometric datum maps to a doubly
/// balanced operator.
pub fn bl_datum_to_operator(datum: &BlDatum) -> Result<Operator> {
    let n = datum.ambient();
    let d = datum.denominator() as usize;
    let big_n = d * n;
    let scale = 1.0 / (d as f64).sqrt();
    let mut kraus = Vec::new();
    let mut offset = 0usize;
    for (b, &c) in datum.maps().iter().zip(datum.counts()) {
        let nj = b.nrows();
        let bt = b.transpose() * scale; // n x nj
        for _ in 0..c {
            let mut a = DMatrix::zeros(n, big_n);
            a.view_mut((0, offset), (n, nj)).copy_from(&bt);
            kraus.push(a);
            offset += nj;
        }
    }
    debug_assert_eq!(offset, big_n);
    Operator::new(kraus)
}

/// Diagonal scalings extracted from an operator-level solution of an embedded
/// matrix instance: `D_L = (LᵀL)^{1/2}`, `D_R = (R·Rᵀ)^{1/2}`, both diagonal
/// up to the reported off-diagonal mass. `D_L²·B·D_R²` is doubly balanced at
/// the solver's accuracy.
#[derive(Debug, Clone)]
pub struct DiagonalScaling {
    pub left: DVector<f64>,
    pub right: DVector<f64>,
    /// Relative Frobenius mass of the discarded off-diagonal parts.
    pub off_diagonal_mass: f64,
}

/// Frame-level scaling: `v_i = transform · u_i · normalizer_i`.
#[derive(Debug, Clone)]
pub struct FrameScalingSolution {
    pub transform: DMatrix<f64>,
    pub normalizers: DVector<f64>,
    pub off_diagonal_mass: f64,
}

const OFF_DIAGONAL_TOL: f64 = 1e-7;

fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = a.clone().symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

fn split_diagonal(a: &DMatrix<f64>) -> (DVector<f64>, f64) {
    let diag = a.diagonal();
    let total: f64 = a.iter().map(|x| x * x).sum();
    let on: f64 = diag.iter().map(|x| x * x).sum();
    let off = (total - on).max(0.0);
    (diag, (off / total.max(f64::MIN_POSITIVE)).sqrt())
}

/// Extracts the diagonal scaling pair from a solver result on a
/// matrix-embedded instance.
pub fn extract_matrix_scaling(result: &ScalingResult) -> Result<DiagonalScaling> {
    let dl = psd_sqrt(&(result.left.transpose() * &result.left));
    let dr = psd_sqrt(&(&result.right * result.right.transpose()));
    let (left, mass_l) = split_diagonal(&dl);
    let (right, mass_r) = split_diagonal(&dr);
    let off_diagonal_mass = mass_l.max(mass_r);
    if off_diagonal_mass > OFF_DIAGONAL_TOL {
        return Err(Error::PreconditionViolated(format!(
            "scaling solution is not diagonal (off-diagonal mass {off_diagonal_mass:.3e}); \
             was the solver run on a matrix-embedded instance?"
        )));
    }
    Ok(DiagonalScaling { left, right, off_diagonal_mass })
}

/// Extracts the frame scaling (transform + per-vector normalizers) from a
/// solver result on a frame-embedded instance.
pub fn extract_frame_scaling(result: &ScalingResult) -> Result<FrameScalingSolution> {
    let dr = psd_sqrt(&(&result.right * result.right.transpose()));
    let (normalizers, off_diagonal_mass) = split_diagonal(&dr);
    if off_diagonal_mass > OFF_DIAGONAL_TOL {
        return Err(Error::PreconditionViolated(format!(
            "right scaling is not diagonal (off-diagonal mass {off_diagonal_mass:.3e}); \
             was the solver run on a frame-embedded instance?"
        )));
    }
    Ok(FrameScalingSolution {
        transform: result.left.clone(),
        normalizers,
        off_diagonal_mass,
    })
}

/// Serialized form of [`Frame`].
#[derive(Debug, Serialize, Deserialize)]
pub struct FrameSchema {
    #[serde(rename = "type")]
    pub kind: String,
    pub d: usize,
    pub n: usize,
    pub vectors: Vec<Vec<f64>>,
}

impl From<&Frame> for FrameSchema {
    fn from(f: &Frame) -> Self {
        FrameSchema {
            kind: "frame".into(),
            d: f.dim(),
            n: f.len(),
            vectors: f.vectors().iter().map(|v| v.iter().copied().collect()).collect(),
        }
    }
}

impl TryFrom<FrameSchema> for Frame {
    type Error = Error;

    fn try_from(schema: FrameSchema) -> Result<Frame> {
        if schema.kind != "frame" {
            return Err(Error::InvalidInput(format!(
                "expected type \"frame\", got {:?}",
                schema.kind
            )));
        }
        if schema.vectors.len() != schema.n || schema.vectors.iter().any(|v| v.len() != schema.d) {
            return Err(Error::InvalidInput("vector list inconsistent with (d, n)".into()));
        }
        Frame::new(schema.vectors.into_iter().map(DVector::from_vec).collect())
    }
}

/// Serialized form of [`BlDatum`].
#[derive(Debug, Serialize, Deserialize)]
pub struct BlDatumSchema {
    #[serde(rename = "type")]
    pub kind: String,
    pub n: usize,
    pub maps: Vec<BlMapSchema>,
    pub exponents: Vec<BlExponentSchema>,
    pub denominator: u32,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BlMapSchema {
    pub nj: usize,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BlExponentSchema {
    pub c: u32,
}

impl From<&BlDatum> for BlDatumSchema {
    fn from(d: &BlDatum) -> Self {
        BlDatumSchema {
            kind: "bl_datum".into(),
            n: d.ambient(),
            maps: d
                .maps()
                .iter()
                .map(|b| BlMapSchema {
                    nj: b.nrows(),
                    b: (0..b.nrows()).map(|i| b.row(i).iter().copied().collect()).collect(),
                })
                .collect(),
            exponents: d.counts().iter().map(|&c| BlExponentSchema { c }).collect(),
            denominator: d.denominator(),
        }
    }
}

impl TryFrom<BlDatumSchema> for BlDatum {
    type Error = Error;

    fn try_from(schema: BlDatumSchema) -> Result<BlDatum> {
        if schema.kind != "bl_datum" {
            return Err(Error::InvalidInput(format!(
                "expected type \"bl_datum\", got {:?}",
                schema.kind
            )));
        }
        let mut maps = Vec::with_capacity(schema.maps.len());
        for m in &schema.maps {
            if m.b.len() != m.nj || m.b.iter().any(|r| r.len() != schema.n) {
                return Err(Error::InvalidInput("map rows inconsistent with (nj, n)".into()));
            }
            maps.push(DMatrix::from_fn(m.nj, schema.n, |i, j| m.b[i][j]));
        }
        BlDatum::new(
            maps,
            schema.exponents.iter().map(|e| e.c).collect(),
            schema.denominator,
        )
    }
}
