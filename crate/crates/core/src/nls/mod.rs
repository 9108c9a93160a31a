//! The NLS model on the torus, trajectory integration and the long-time
//! stability experiment.

pub mod integrate;
pub mod model;
pub mod stability;

pub use integrate::{integrate, CompiledField, Integrator, IntegratorOptions, Scheme, Trajectory};
pub use model::{build_nls_hamiltonian, field_energy, NlsModel};
pub use stability::{
    cartesian_hamiltonian, field_torus_distance, initial_field, log_spaced_steps, momentum, stability_experiment, stability_grid, toy_config,
    torus_distance, Perturbation, StabilityConfig, StabilityReport,
};
