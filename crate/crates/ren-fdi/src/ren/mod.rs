//! Acyclic recurrent equilibrium filter: weight-spec construction, direct
//! parameterization, materialized explicit weights and the forward rollout.
//!
//! The filter is a discrete-time recurrent network
//!
//! ```text
//! [ z⁺ ]   [ A   B1  B2  ] [ z ]   [ bias_z ]
//! [ v  ] = [ C1  D11 D12 ] [ w ] + [ bias_v ],   w = tanh(v),
//! [ r  ]   [ C2  D21 D22 ] [ ū ]   [ bias_r ]
//! ```
//!
//! with a strictly lower triangular `D11`, so the equilibrium layer is solved
//! by forward substitution. The weights are never trained directly: they are
//! materialized from an unconstrained parameter vector ([`DirectParams`])
//! through a construction that makes the network contracting and endows it
//! with an incremental quadratic constraint weighted by the channel gains in
//! [`PerformanceSpec`], for every finite value of the free parameters.

mod checkpoint;
mod materialize;
mod net;
mod params;
mod spec;

pub use checkpoint::{Checkpoint, CheckpointError, CheckpointParams, FilterBank, FORMAT_VERSION};
pub use materialize::{materialize, ExplicitRen, E_CONDITION_LIMIT};
pub(crate) use materialize::{trace, MaterializeTrace};
pub use net::{activation, rollout, step};
pub(crate) use params::push_row_major;
pub use params::{init_params, DirectParams, InitConfig, DEFAULT_ALPHA_BAR, DEFAULT_EPSILON};
pub use spec::{
    build_weight_spec, PerformanceSpec, RenDims, RenError, DEFAULT_BETA, DEFAULT_GAMMA, DEFAULT_Q,
};
