//! Plane-wave band structure of the periodic Hamiltonian.

pub mod derivatives;
pub mod lattice;
pub mod sampler;
pub mod solver;

pub use derivatives::{band_derivatives, reduced_resolvent_apply, BandDerivatives};
pub use lattice::{build_basis, LatticeSpec, Miller, PlaneWaveBasis};
pub use sampler::{BandGeometry, BandJet, BandSampler, ParabolicBand, PlaneWaveBand};
pub use solver::{assemble_h0, BandState, BlochSolver, Eigensystem, SolverOptions};
