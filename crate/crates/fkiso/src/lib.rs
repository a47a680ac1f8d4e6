//! Random-cluster (FK) model on isoradial rectangular lattices.
//!
//! Building blocks: lattice geometry, isoradial weights, an exhaustive
//! exact oracle for tiny graphs, a single-bond heat-bath sampler,
//! measure-preserving track-exchange dynamics built from star-triangle
//! kernels, cluster observables with directional decay-rate estimators
//! and Wulff-shape construction, critical (q = 4) diagnostics, and the
//! block-coupling experiment pipeline.

pub mod cli;
pub mod coupling;
pub mod critical;
pub mod dynamics;
pub mod exact;
pub mod lattice;
pub mod observables;
pub mod rng;
pub mod sampler;
pub mod weights;
