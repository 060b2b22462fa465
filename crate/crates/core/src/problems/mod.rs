//! Benchmark problems, their oracles and feasible-set projections.

pub mod bimatrix;
pub mod network;
pub mod projection;
pub mod saa;
pub mod utility;

pub use bimatrix::{BimatrixIntegrand, BimatrixProblem};
pub use network::{capacity_profile, network_gradient, network_objective, NetworkProblem};
pub use projection::{project_capacity, project_simplex, CapacityPolytope, Simplex, SimplexPair};
pub use saa::{saa_reference, ReferenceProblem, SaaReference, SampleAverage, SolverOptions};
pub use utility::{ExpectedUtility, UtilityProblem};
