//! Neural variational Monte Carlo for low-dimensional quantum systems.
//!
//! Trial wavefunctions are multilayer perceptrons with analytic envelope and
//! boundary factors. Ground states are optimised by minimising the variance
//! of the local energy; excited states by a Schrödinger-residual loss with
//! orthogonality penalties. In both cases the windowed median of the energy
//! variance decides convergence.

pub mod ansatz;
pub mod autodiff;
pub mod config;
pub mod error;
pub mod estimators;
pub mod hamiltonians;
pub mod nodal;
pub mod observables;
pub mod optim;
pub mod report;
pub mod sampler;
pub mod scan;
pub mod trainer;

pub use ansatz::{BoundaryFactor, Envelope, InputFeatures, WavefunctionModel};
pub use autodiff::{ActivationKind, EvalBatch, MlpParams};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use estimators::{summarize, ConvergenceMonitor, LocalEnergyBatch, MonitorState};
pub use hamiltonians::{charmonium_mass, local_energy_batch, HamiltonianSpec};
pub use sampler::WalkerEnsemble;
pub use trainer::{train, RunRecord};
