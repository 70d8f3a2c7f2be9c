//! Random instance generators and the closed-form moment machinery for
//! random frames: sphere moments ξ(q), tree- and cycle-walk expectations, the
//! exact fourth-moment trace of the squared Gram matrix, and the trace-method
//! tail bound on its second eigenvalue. Each closed form has a Monte Carlo
//! validator in the tests and experiments.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::reduce::Frame;

/// Deterministic sub-seed for trial `index` of a seeded run.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 on the pair
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A uniform unit vector on S^{d-1}, by normalizing a Gaussian vector.
pub fn random_unit_vector(rng: &mut impl Rng, d: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 0.0 {
            return v / norm;
        }
    }
}

/// n i.i.d. uniform unit vectors on S^{d-1}, deterministic given the seed.
pub fn random_unit_frame(n: usize, d: usize, seed: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (d as f64).sqrt();
    let vectors = (0..n)
        .map(|_| {
            // coordinates N(0, 1/d), then scaled to norm one
            loop {
                let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal) * scale);
                let norm = v.norm();
                if norm > 0.0 {
                    return v / norm;
                }
            }
        })
        .collect();
    Frame::new(vectors).expect("unit vectors form a valid frame")
}

/// n×n matrix with independent entries g², g ~ N(0, 1/n); E[s(B)] = n.
pub fn random_gaussian_squared_matrix(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (n as f64).sqrt();
    DMatrix::from_fn(n, n, |_, _| {
        let g: f64 = rng.sample::<f64, _>(StandardNormal);
        let g = g * scale;
        g * g
    })
}

/// Exact sphere moment ξ(q) = E Π ⟨u, e_i⟩^{2 q_i} over a uniform unit
/// vector in R^d: Π_i (2q_i − 1)!! / Π_{j=0}^{q-1} (d + 2j) with q = Σ q_i.
pub fn xi_moment(q: &[u64], d: usize) -> Result<f64> {
    if q.len() > d {
        return Err(Error::InvalidInput(format!(
            "exponent vector has {} entries but the sphere lives in dimension {d}",
            q.len()
        )));
    }
    let total: u64 = q.iter().sum();
    let mut num = 1.0f64;
    for &qi in q {
        let mut t = 1;
        while t <= qi {
            num *= (2 * t - 1) as f64;
            t += 1;
        }
    }
    let mut den = 1.0f64;
    for j in 0..total {
        den *= (d as u64 + 2 * j) as f64;
    }
    Ok(num / den)
}

/// Expected closed-walk product over a tree with edge multiplicities:
/// Π_f ξ(q_f · χ₁). Input edges are (u, v, multiplicity); the edge set must
/// form a tree on its vertex set.
pub fn expected_tree_walk(edges: &[(usize, usize, u64)], d: usize) -> Result<f64> {
    if edges.is_empty() {
        return Err(Error::InvalidInput("tree walk needs at least one edge".into()));
    }
    let mut verts: Vec<usize> = Vec::new();
    for &(u, v, q) in edges {
        if u == v {
            return Err(Error::InvalidInput("self-loops are not tree edges".into()));
        }
        if q == 0 {
            return Err(Error::InvalidInput("edge multiplicities must be at least 1".into()));
        }
        for w in [u, v] {
            if !verts.contains(&w) {
                verts.push(w);
            }
        }
    }
    // a tree has |V| - 1 distinct edges and is connected
    let mut seen_edges: Vec<(usize, usize)> = Vec::new();
    for &(u, v, _) in edges {
        let key = (u.min(v), u.max(v));
        if seen_edges.contains(&key) {
            return Err(Error::InvalidInput(
                "parallel edges must be given once with a multiplicity".into(),
            ));
        }
        seen_edges.push(key);
    }
    if edges.len() != verts.len() - 1 || !is_connected(&verts, &seen_edges) {
        return Err(Error::InvalidInput("edge set does not form a tree".into()));
    }
    let mut prod = 1.0;
    for &(_, _, q) in edges {
        prod *= xi_moment(&[q], d)?;
    }
    Ok(prod)
}

fn is_connected(verts: &[usize], edges: &[(usize, usize)]) -> bool {
    let mut reached = vec![verts[0]];
    let mut frontier = vec![verts[0]];
    while let Some(v) = frontier.pop() {
        for &(a, b) in edges {
            let other = if a == v {
                b
            } else if b == v {
                a
            } else {
                continue;
            };
            if !reached.contains(&other) {
                reached.push(other);
                frontier.push(other);
            }
        }
    }
    reached.len() == verts.len()
}

/// Number of proper d-edge-colorings of an l-cycle: (d−1)^l + (−1)^l (d−1).
pub fn proper_cycle_edge_colorings(l: u32, d: u64) -> f64 {
    let base = (d as f64) - 1.0;
    let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
    base.powi(l as i32) + sign * base
}

/// Expected closed-walk product over a simple k-cycle of independent unit
/// vectors, k ≥ 3:
///
/// (C(d,2)·2^k + (d+2)^k + (d−1)·2^k) / (d^k (d+2)^k)
///   = 1/d^k + ((d−1)(d+2)/2) · (2/(d(d+2)))^k.
///
/// The first form is the raw case count: C(d,2)·2^k two-color terms, plus the
/// single-color cases resummed by the binomial theorem over proper cycle
/// colorings.
pub fn expected_cycle_walk(k: u32, d: usize) -> Result<f64> {
    if k < 3 {
        return Err(Error::InvalidInput(
            "cycle walks need k >= 3 distinct vertices".into(),
        ));
    }
    let df = d as f64;
    let two_k = 2.0f64.powi(k as i32);
    let pairs = df * (df - 1.0) / 2.0;
    let num = pairs * two_k + (df + 2.0).powi(k as i32) + (df - 1.0) * two_k;
    let den = df.powi(k as i32) * (df + 2.0).powi(k as i32);
    Ok(num / den)
}

/// Exact E tr(G⁴) for the squared Gram matrix of n uniform unit vectors in
/// R^d, from the closed-4-walk case decomposition (4 loops; 2 loops + double
/// edge; quadruple edge; loop + triangle; double path; 4-cycle).
pub fn expected_trace_g4(n: usize, d: usize) -> Result<f64> {
    if n < 4 {
        return Err(Error::InvalidInput("the fourth-moment trace needs n >= 4".into()));
    }
    let nf = n as f64;
    let xi2 = xi_moment(&[2], d)?;
    let xi4 = xi_moment(&[4], d)?;
    let cyc3 = expected_cycle_walk(3, d)?;
    let cyc4 = expected_cycle_walk(4, d)?;
    let n1 = nf * (nf - 1.0);
    let n2 = n1 * (nf - 2.0);
    let n3 = n2 * (nf - 3.0);
    Ok(nf + 6.0 * n1 * xi2 + n1 * xi4 + 4.0 * n2 * cyc3 + 2.0 * n2 * xi2 * xi2 + n3 * cyc4)
}

/// The analytic upper bound on E tr(G⁴):
/// (n/d)⁴ (1 + d⁴/n³ + 18d²/n² + 105/n² + 4d/n + 34/n + 8/d²).
pub fn trace_g4_upper_bound(n: usize, d: usize) -> f64 {
    let nf = n as f64;
    let df = d as f64;
    (nf / df).powi(4)
        * (1.0
            + df.powi(4) / nf.powi(3)
            + 18.0 * df * df / (nf * nf)
            + 105.0 / (nf * nf)
            + 4.0 * df / nf
            + 34.0 / nf
            + 8.0 / (df * df))
}

/// Markov tail bound on P[λ₂(G) > (1−λ)²·n/d] from the fourth-moment trace:
/// (E tr(G⁴) − (n/d)⁴(1+(d−1)/n)⁴) / ((1−λ)⁸ (n/d)⁴), clamped to [0, 1].
pub fn second_eigenvalue_tail_bound(n: usize, d: usize, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidInput("lambda must lie strictly between 0 and 1".into()));
    }
    let nf = n as f64;
    let df = d as f64;
    let excess = expected_trace_g4(n, d)? - (nf / df).powi(4) * (1.0 + (df - 1.0) / nf).powi(4);
    let denom = (1.0 - lambda).powi(8) * (nf / df).powi(4);
    Ok((excess / denom).clamp(0.0, 1.0))
}

/// Bernstein prediction for P[eps-Parseval failure] of n random unit vectors
/// in R^d at threshold eps: 2d·exp(−(ℓ²/2)/(ν + Lℓ/3)) with ℓ = εn/d,
/// ν = (n/d)(1 − 1/d) and L = 1 − 1/d.
pub fn bernstein_failure_bound(n: usize, d: usize, eps: f64) -> f64 {
    let nf = n as f64;
    let df = d as f64;
    let ell = eps * nf / df;
    let nu = nf / df * (1.0 - 1.0 / df);
    let l = 1.0 - 1.0 / df;
    (2.0 * df * (-(ell * ell / 2.0) / (nu + l * ell / 3.0)).exp()).min(1.0)
}

/// Empirical eps distribution of the Parseval condition over sampled frames,
/// alongside the Bernstein predictions.
#[derive(Debug, Clone)]
pub struct ParsevalCheck {
    pub n: usize,
    pub d: usize,
    /// Measured eps (extreme eigenvalue deviation of Σ v vᵀ from (n/d)·I,
    /// relative) per trial.
    pub epsilons: Vec<f64>,
}

impl ParsevalCheck {
    /// Fraction of trials with eps exceeding the threshold.
    pub fn empirical_exceed_rate(&self, threshold: f64) -> f64 {
        let exceed = self.epsilons.iter().filter(|&&e| e > threshold).count();
        exceed as f64 / self.epsilons.len().max(1) as f64
    }

    /// Bernstein upper bound on the exceed probability at the threshold.
    pub fn bernstein_bound(&self, threshold: f64) -> f64 {
        bernstein_failure_bound(self.n, self.d, threshold)
    }
}

/// Samples `trials` random unit frames and measures the Parseval eps of each.
/// Trial t uses the sub-seed derived from (seed, t).
pub fn parseval_concentration_check(n: usize, d: usize, trials: usize, seed: u64) -> ParsevalCheck {
    let epsilons = (0..trials)
        .map(|t| {
            let frame = random_unit_frame(n, d, derive_seed(seed, t as u64));
            parseval_epsilon(&frame)
        })
        .collect();
    ParsevalCheck { n, d, epsilons }
}

/// The Parseval-side eps of a frame: extreme relative eigenvalue deviation of
/// Σ u uᵀ from (s/d)·I.
pub fn parseval_epsilon(frame: &Frame) -> f64 {
    let s = frame.size();
    let d = frame.dim() as f64;
    let (lo, hi) = crate::operator::symmetric_eig_range(&frame.outer_sum());
    (1.0 - lo * d / s).max(hi * d / s - 1.0).max(0.0)
}
