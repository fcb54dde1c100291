//! Optimal experimental design by second-order cone programming.
//!
//! The toolkit computes approximate and exact optimal designs for the
//! D, A, G, I, c, D_K and A_K criteria by compiling each problem to a
//! second-order cone program, solving it with the in-repo interior-point
//! solver (and branch-and-bound for exact designs), and verifying results
//! against independent closed-form oracles.

pub mod conic;
pub mod criteria;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod solver;
pub mod workbench;

pub use conic::{ConeSpec, ConicProgram, VarHandle};
pub use linalg::{Matrix, SymPsd};
pub use model::{Criterion, CriterionKind, ObservationModel, Sense, WeightDomain};
pub use solver::{ConicSolution, SolverConfig, SolverStatus};
