//! Matrix, frame and operator scaling through a discretized gradient flow,
//! with spectral-gap certificates for linear convergence.
//!
//! The library is organized around a small set of objects:
//!
//! * [`Operator`] — a tuple of real Kraus matrices and the instantaneous
//!   quantities of the scaling dynamical system (size, error matrices,
//!   l2-error, matrix and Choi representations, flow direction).
//! * [`spectral`] — spectral-gap certificates for operators, matrices and
//!   frames, plus a conductance cross-check for small bipartite instances.
//! * [`solver`] — the discretized gradient flow and the alternating method,
//!   with entrywise fast paths for matrix and frame instances.
//! * [`reduce`] — embeddings of matrices, frames and Brascamp-Lieb data into
//!   operators, and extraction of structured scaling solutions.
//! * [`capacity`] — capacity bounds and exact matrix capacity, permanent
//!   lower bounds, Brascamp-Lieb constant bounds.
//! * [`moments`] — random instance generators and the closed-form moment
//!   toolbox for random frames.
//! * [`experiments`] — seeded batch experiments reproducing the quantitative
//!   claims at desk scale.

pub mod capacity;
pub mod error;
pub mod experiments;
pub mod moments;
pub mod operator;
pub mod reduce;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
pub use operator::{BalanceReport, ErrorPair, Operator, OperatorSchema, RateDecomposition};
pub use reduce::{BlDatum, BlDatumSchema, Frame, FrameSchema};
pub use solver::{
    Algorithm, ConvergenceTrace, FrameScaling, MatrixScaling, ScalingResult, SolverConfig,
};
pub use spectral::{GapOptions, SpectralReport};
