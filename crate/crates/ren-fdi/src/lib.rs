//! Bank of contraction-guaranteed recurrent equilibrium filters for sensor
//! fault detection and isolation.
//!
//! The crate covers the full pipeline:
//!
//! * [`plant`] — a four-degree-of-freedom nonlinear roll-plane vehicle model
//!   with an RK4 integrator, used as the data-generating system;
//! * [`signals`] — seeded multisine road inputs and synthetic sensor faults;
//! * [`dataset`] — scenario assembly (healthy / single / simultaneous faults),
//!   downsampling, training-pair construction and persistence;
//! * [`ren`] — the acyclic recurrent equilibrium filter, its direct
//!   parameterization and forward rollout;
//! * [`training`] — tracking cost, exact reverse-mode gradients through both
//!   the parameterization and the rollout, Adam optimization, RMSE evaluation;
//! * [`verify`] — empirical certification of the architectural guarantees:
//!   well-posedness, contraction, the incremental quadratic constraint and the
//!   fault sensitivity / insensitivity bounds;
//! * [`cli`] — the `ren-fdi` binary exposing the pipeline as subcommands.
//!
//! Every randomized operation takes an explicit seed and is reproducible
//! bit-exactly on a given platform.

pub mod cli;
pub mod dataset;
pub mod plant;
pub mod plotting;
pub mod ren;
pub mod signals;
pub mod training;
pub mod verify;

/// Dense dynamically-sized matrix used throughout the crate.
pub type Mat = nalgebra::DMatrix<f64>;
/// Dense column vector used throughout the crate.
pub type Col = nalgebra::DVector<f64>;
