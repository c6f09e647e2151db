//! Robust, energy-efficient joint access/backhaul resource allocation for
//! cache-enabled, energy-harvesting SCMA heterogeneous networks with
//! eavesdroppers under bounded channel uncertainty.

pub mod access;
pub mod backhaul;
pub mod caching;
pub mod constraints;
pub mod experiments;
pub mod error;
pub mod kernel;
pub mod model;
pub mod orchestrator;
pub mod rates;
pub mod worstcase;

pub use error::{KernelError, ModelError, RateError, SolveError, WorstCaseError};
pub use model::{generate_instance, NetworkInstance, ScenarioParams};
pub use rates::{AllocationState, LinkKey, Scenario};
