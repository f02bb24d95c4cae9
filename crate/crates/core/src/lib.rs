//! Branching Brownian motion with competitive mass decay.
//!
//! Particles diffuse, split at unit rate and lose mass at a rate given by the
//! total mass of their neighbours within distance one. This crate provides the
//! grid-time simulation engine, the density field and front statistics built on
//! top of it, online ancestral-path accumulators, the barrier curves and the
//! envelope solution of the associated singular integral equation, and Monte
//! Carlo checks of the probability tail bounds used along the way.

pub mod bounds;
pub mod curves;
pub mod density;
pub mod engine;
pub mod envelope;
pub mod lineage;
pub mod rng;
pub mod stats;

pub use bounds::TailBoundReport;
pub use curves::{cstar, CurveSpec};
pub use density::{DensityProfile, FrontStats};
pub use engine::{
    init_population, run, step, DynamicsMode, EngineError, Observer, Particle, PopulationState,
    Record, RunFailure, RunOutput, SimConfig,
};
pub use envelope::{EnvelopeSolution, LSolution};
pub use lineage::{CurveHandle, LineageAccumulators, LineageError};
