//! Spectral-gap certification.
//!
//! The certificate compares the top two singular values of the natural matrix
//! representation against s/√(mn): writing σ1 = (1+δ)·s/√(mn) and
//! σ2 = (1−λ)·s/√(mn), the operator has a λ-spectral gap, and the linear
//! convergence theory applies when λ² ≥ C·ε·ln m. Matrices and frames have
//! cheaper equivalent forms (σ2 of the matrix itself, resp. the second
//! eigenvalue of the entrywise squared Gram matrix), plus a combinatorial
//! conductance cross-check for small matrices.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{matricize, vectorize, Operator};
use crate::reduce::Frame;

/// Spectral-gap certificate for an instance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpectralReport {
    pub sigma1: f64,
    pub sigma2: f64,
    pub s: f64,
    /// Relative excess of sigma1 over s/sqrt(mn): sigma1 = (1+delta)·s/√(mn).
    pub delta: f64,
    /// Gap: sigma2 = (1−lambda)·s/√(mn). Not clamped; may be negative.
    pub lambda: f64,
    /// Balance parameter of the instance.
    pub epsilon: f64,
    /// Whether lambda > 0 and lambda² ≥ C·epsilon·ln(max(min(m,n),2)).
    pub gap_condition_holds: bool,
    #[serde(rename = "C")]
    pub c: f64,
}

/// Knobs for certification; defaults follow the library-wide conventions.
#[derive(Debug, Clone, Copy)]
pub struct GapOptions {
    /// Constant C in the gap condition lambda² ≥ C·eps·ln m.
    pub c: f64,
    /// Seed for the power-iteration start vector.
    pub seed: u64,
    /// Iteration budget for the power method.
    pub max_iter: usize,
    /// Relative tolerance on successive Rayleigh quotients.
    pub rel_tol: f64,
    /// Materialize the dense representation (and use exact SVD) when it has
    /// at most this many entries.
    pub dense_limit: usize,
}

impl Default for GapOptions {
    fn default() -> Self {
        GapOptions {
            c: 1.0,
            seed: 7,
            max_iter: 10_000,
            rel_tol: 1e-12,
            dense_limit: 1_000_000,
        }
    }
}

/// An implicitly represented linear map with forward and transpose products.
pub trait LinearMap {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn apply(&self, v: &DVector<f64>) -> DVector<f64>;
    fn apply_transpose(&self, u: &DVector<f64>) -> DVector<f64>;
}

/// Dense matrix as a [`LinearMap`].
pub struct DenseMap<'a>(pub &'a DMatrix<f64>);

impl LinearMap for DenseMap<'_> {
    fn rows(&self) -> usize {
        self.0.nrows()
    }
    fn cols(&self) -> usize {
        self.0.ncols()
    }
    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.0 * v
    }
    fn apply_transpose(&self, u: &DVector<f64>) -> DVector<f64> {
        self.0.transpose() * u
    }
}

/// The natural representation of an operator applied implicitly through the
/// completely positive map, never materializing the m²×n² matrix.
pub struct OperatorMap<'a>(pub &'a Operator);

impl LinearMap for OperatorMap<'_> {
    fn rows(&self) -> usize {
        self.0.out_dim() * self.0.out_dim()
    }
    fn cols(&self) -> usize {
        self.0.in_dim() * self.0.in_dim()
    }
    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let n = self.0.in_dim();
        let y = matricize(v, n, n);
        vectorize(&self.0.apply(&y).expect("shape fixed by construction"))
    }
    fn apply_transpose(&self, u: &DVector<f64>) -> DVector<f64> {
        let m = self.0.out_dim();
        let x = matricize(u, m, m);
        vectorize(&self.0.apply_adjoint(&x).expect("shape fixed by construction"))
    }
}

fn random_unit_vector(rng: &mut impl Rng, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0_f64..1.0));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Top two singular values via power iteration on the Gram map, deflating the
/// leading right singular vector for the second value.
///
/// Accuracy is driven by `rel_tol` on successive Rayleigh quotients; dense SVD
/// is the authoritative alternative when the map is small enough to
/// materialize.
pub fn top_two_singular_values<M: LinearMap>(
    map: &M,
    opts: &GapOptions,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    let (sigma1_sq, v1) = leading_gram_pair(map, opts, rng, None)?;
    let sigma1 = sigma1_sq.max(0.0).sqrt();
    if map.cols() < 2 || map.rows() < 2 {
        return Ok((sigma1, 0.0));
    }
    let (sigma2_sq, _) = leading_gram_pair(map, opts, rng, Some(&v1))?;
    let sigma2 = sigma2_sq.max(0.0).sqrt().min(sigma1);
    Ok((sigma1, sigma2))
}

/// Power iteration for the largest eigenpair of MᵀM, optionally restricted to
/// the complement of a deflated direction.
fn leading_gram_pair<M: LinearMap>(
    map: &M,
    opts: &GapOptions,
    rng: &mut impl Rng,
    deflate: Option<&DVector<f64>>,
) -> Result<(f64, DVector<f64>)> {
    let n = map.cols();
    let mut v = random_unit_vector(rng, n);
    if let Some(d) = deflate {
        v -= d * v.dot(d);
        let norm = v.norm();
        if norm <= 1e-12 {
            v = random_unit_vector(rng, n);
            v -= d * v.dot(d);
        }
        v /= v.norm();
    }
    let mut rayleigh = f64::INFINITY;
    for iter in 0..opts.max_iter {
        let mut w = map.apply_transpose(&map.apply(&v));
        if let Some(d) = deflate {
            w -= d * w.dot(d);
        }
        let new_rayleigh = w.dot(&v);
        let norm = w.norm();
        if norm <= f64::MIN_POSITIVE.sqrt() {
            // v is (numerically) in the kernel of the deflated Gram map
            return Ok((0.0, v));
        }
        v = w / norm;
        let change = (new_rayleigh - rayleigh).abs();
        if change <= opts.rel_tol * new_rayleigh.abs().max(f64::MIN_POSITIVE) {
            return Ok((new_rayleigh.max(0.0), v));
        }
        rayleigh = new_rayleigh;
        if iter + 1 == opts.max_iter {
            return Err(Error::NoConvergence {
                iters: opts.max_iter,
                residual: change / new_rayleigh.abs().max(f64::MIN_POSITIVE),
            });
        }
    }
    unreachable!("loop either converges or errors out")
}

/// Singular values of a dense matrix, sorted descending.
pub fn dense_singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|x, y| y.partial_cmp(x).expect("singular values are finite"));
    sv
}

fn report_from_sigmas(
    sigma1: f64,
    sigma2: f64,
    s: f64,
    epsilon: f64,
    m: usize,
    n: usize,
    c: f64,
) -> SpectralReport {
    let base = s / ((m * n) as f64).sqrt();
    let delta = sigma1 / base - 1.0;
    let lambda = 1.0 - sigma2 / base;
    // for m = 1 the log factor would void the condition
    let log_m = ((m.min(n)).max(2) as f64).ln();
    let gap_condition_holds = lambda > 0.0 && lambda * lambda >= c * epsilon * log_m;
    SpectralReport {
        sigma1,
        sigma2,
        s,
        delta,
        lambda,
        epsilon,
        gap_condition_holds,
        c,
    }
}

/// Certifies the spectral gap of a general operator.
pub fn certify_operator(op: &Operator, opts: &GapOptions) -> Result<SpectralReport> {
    let balance = op.balance_report();
    let m = op.out_dim();
    let n = op.in_dim();
    let entries = m * m * n * n;
    let (sigma1, sigma2) = if entries <= opts.dense_limit {
        let rep = op.matrix_representation(opts.dense_limit)?;
        let sv = dense_singular_values(&rep);
        (sv[0], sv.get(1).copied().unwrap_or(0.0))
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        top_two_singular_values(&OperatorMap(op), opts, &mut rng)?
    };
    Ok(report_from_sigmas(sigma1, sigma2, balance.s, balance.epsilon, m, n, opts.c))
}

/// Certifies a non-negative matrix directly through its own singular values
/// (the embedding keeps the spectrum of the representation's nonzero block).
pub fn certify_matrix(b: &DMatrix<f64>, opts: &GapOptions) -> Result<SpectralReport> {
    if b.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    if b.iter().any(|&x| x < 0.0) {
        return Err(Error::NegativeEntry);
    }
    let s: f64 = b.iter().sum();
    if s <= 0.0 {
        return Err(Error::ZeroOperator);
    }
    let (m, n) = (b.nrows(), b.ncols());
    let epsilon = matrix_epsilon(b, s);
    let sv = dense_singular_values(b);
    let sigma1 = sv[0];
    let sigma2 = sv.get(1).copied().unwrap_or(0.0);
    Ok(report_from_sigmas(sigma1, sigma2, s, epsilon, m, n, opts.c))
}

pub(crate) fn matrix_epsilon(b: &DMatrix<f64>, s: f64) -> f64 {
    let (m, n) = (b.nrows(), b.ncols());
    let mut eps: f64 = 0.0;
    for i in 0..m {
        let r: f64 = b.row(i).iter().sum();
        eps = eps.max((r * m as f64 / s - 1.0).abs());
    }
    for j in 0..n {
        let c: f64 = b.column(j).iter().sum();
        eps = eps.max((c * n as f64 / s - 1.0).abs());
    }
    eps
}

/// The entrywise squared Gram matrix G_ij = ⟨u_i, u_j⟩², positive
/// semidefinite by the Schur product theorem.
pub fn squared_gram(frame: &Frame) -> DMatrix<f64> {
    let n = frame.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let ip = frame.vectors()[i].dot(&frame.vectors()[j]);
            g[(i, j)] = ip * ip;
            g[(j, i)] = ip * ip;
        }
    }
    g
}

pub(crate) fn frame_epsilon(frame: &Frame) -> f64 {
    let s = frame.size();
    let d = frame.dim() as f64;
    let n = frame.len() as f64;
    let outer = frame.outer_sum();
    let (lo, hi) = crate::operator::symmetric_eig_range(&outer);
    let mut eps = (1.0 - lo * d / s).max(hi * d / s - 1.0);
    for v in frame.vectors() {
        let w = v.norm_squared();
        eps = eps.max((w * n / s - 1.0).abs());
    }
    eps.max(0.0)
}

/// Certifies a frame through the second eigenvalue of its squared Gram
/// matrix: sigma2 of the embedded operator equals sqrt(λ2(G)).
///
/// G = WᵀW for the d²×n matrix W with columns u_i ⊗ u_i (the nonzero columns
/// of the embedded representation), so the nonzero spectrum of G coincides
/// with that of the small d²×d² companion W·Wᵀ. The certificate works on the
/// companion, which costs O(n·d⁴) to form instead of O(n²·d) plus an n×n
/// eigensolve.
pub fn certify_frame(frame: &Frame, opts: &GapOptions) -> Result<SpectralReport> {
    let epsilon = frame_epsilon(frame);
    let s = frame.size();
    let d = frame.dim();
    let n = frame.len();
    let d2 = d * d;
    let (lam1, lam2) = if d2 <= n {
        let mut companion = DMatrix::zeros(d2, d2);
        for u in frame.vectors() {
            let w = DVector::from_fn(d2, |idx, _| u[idx / d] * u[idx % d]);
            companion.ger(1.0, &w, &w, 1.0);
        }
        top_two_symmetric_psd_eigenvalues(&companion, opts)?
    } else {
        let g = squared_gram(frame);
        top_two_symmetric_psd_eigenvalues(&g, opts)?
    };
    let sigma1 = lam1.max(0.0).sqrt();
    let sigma2 = lam2.max(0.0).sqrt();
    Ok(report_from_sigmas(sigma1, sigma2, s, epsilon, d, n, opts.c))
}

/// Top two eigenvalues of a symmetric PSD matrix: dense when small, deflated
/// power iteration otherwise (eigenvalues equal singular values here).
fn top_two_symmetric_psd_eigenvalues(a: &DMatrix<f64>, opts: &GapOptions) -> Result<(f64, f64)> {
    let n = a.nrows();
    if n <= 400 {
        let eig = a.clone().symmetric_eigen();
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(|x, y| y.partial_cmp(x).expect("finite eigenvalues"));
        Ok((vals[0], vals.get(1).copied().unwrap_or(0.0)))
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        top_two_singular_values(&DenseMap(a), opts, &mut rng)
    }
}

/// Maximum number of graph vertices (m+n) accepted by the conductance brute
/// force.
pub const CONDUCTANCE_VERTEX_LIMIT: usize = 24;

/// Exact conductance of the edge-weighted bipartite graph of `b`, by
/// exhaustive search over vertex subsets with vol(S) ≤ vol(V)/2. Subsets at
/// exactly half volume are included.
pub fn conductance(b: &DMatrix<f64>) -> Result<f64> {
    let (m, n) = (b.nrows(), b.ncols());
    let verts = m + n;
    if verts > CONDUCTANCE_VERTEX_LIMIT {
        return Err(Error::ConductanceTooLarge { limit: CONDUCTANCE_VERTEX_LIMIT, got: verts });
    }
    if b.iter().any(|&x| x < 0.0) {
        return Err(Error::NegativeEntry);
    }
    let s: f64 = b.iter().sum();
    if s <= 0.0 {
        return Err(Error::ZeroOperator);
    }
    // vertex order: rows then columns
    let mut deg = vec![0.0; verts];
    for i in 0..m {
        deg[i] = b.row(i).iter().sum();
    }
    for j in 0..n {
        deg[m + j] = b.column(j).iter().sum();
    }
    let half_vol = s; // vol(V) = 2s

    struct Search<'a> {
        b: &'a DMatrix<f64>,
        m: usize,
        deg: Vec<f64>,
        // weight from each vertex into the current subset
        into_s: Vec<f64>,
        in_s: Vec<bool>,
        half_vol: f64,
        best: f64,
    }

    impl Search<'_> {
        fn neighbors(&self, v: usize) -> Vec<(usize, f64)> {
            let mut out = Vec::new();
            if v < self.m {
                for j in 0..self.b.ncols() {
                    let w = self.b[(v, j)];
                    if w != 0.0 {
                        out.push((self.m + j, w));
                    }
                }
            } else {
                let j = v - self.m;
                for i in 0..self.m {
                    let w = self.b[(i, j)];
                    if w != 0.0 {
                        out.push((i, w));
                    }
                }
            }
            out
        }

        fn recurse(&mut self, v: usize, vol: f64, cut: f64) {
            if v == self.deg.len() {
                return;
            }
            // exclude v
            self.recurse(v + 1, vol, cut);
            // include v
            let new_vol = vol + self.deg[v];
            // every superset only grows in volume; prune past half volume
            // (tolerate roundoff at exactly half)
            if new_vol > self.half_vol * (1.0 + 1e-12) {
                return;
            }
            let new_cut = cut + self.deg[v] - 2.0 * self.into_s[v];
            for (u, w) in self.neighbors(v) {
                self.into_s[u] += w;
            }
            self.in_s[v] = true;
            if new_vol > 0.0 {
                let phi = (new_cut / new_vol).max(0.0);
                if phi < self.best {
                    self.best = phi;
                }
            }
            self.recurse(v + 1, new_vol, new_cut);
            self.in_s[v] = false;
            for (u, w) in self.neighbors(v) {
                self.into_s[u] -= w;
            }
        }
    }

    let mut search = Search {
        b,
        m,
        deg: deg.clone(),
        into_s: vec![0.0; verts],
        in_s: vec![false; verts],
        half_vol,
        best: f64::INFINITY,
    };
    search.recurse(0, 0.0, 0.0);
    if search.best.is_infinite() {
        // every nonempty subset exceeded half volume; cannot happen with > 1
        // positive-degree vertex, but guard anyway
        return Err(Error::InvalidInput("no admissible subset for conductance".into()));
    }
    Ok(search.best)
}

/// Checks the Cheeger-type consistency bound
/// σ2(B) ≤ (1 − φ²/2 + 3ε)·s/√(mn) for an ε-nearly balanced matrix, ε ≤ 1/2.
/// The bound is a theorem, so `bound_ok` is true on every valid input.
pub fn cheeger_consistency(b: &DMatrix<f64>) -> Result<(f64, bool)> {
    let s: f64 = b.iter().sum();
    if s <= 0.0 {
        return Err(Error::ZeroOperator);
    }
    let eps = matrix_epsilon(b, s);
    if eps > 0.5 {
        return Err(Error::PreconditionViolated(format!(
            "matrix must be eps-nearly doubly balanced with eps <= 1/2, got eps = {eps:.4}"
        )));
    }
    let phi = conductance(b)?;
    let sv = dense_singular_values(b);
    let sigma2 = sv.get(1).copied().unwrap_or(0.0);
    let (m, n) = (b.nrows(), b.ncols());
    let rhs = (1.0 - 0.5 * phi * phi + 3.0 * eps) * s / ((m * n) as f64).sqrt();
    let bound_ok = sigma2 <= rhs * (1.0 + 1e-12);
    Ok((phi, bound_ok))
}
