//! Robust neural Lyapunov-barrier certificates for discrete-time control:
//! networks, benchmark systems, training losses, sound verification by
//! interval branch-and-bound, counterexample-guided training and empirical
//! evaluation.

pub mod adversary;
pub mod cegis;
pub mod certificate;
pub mod config;
pub mod envs;
pub mod error;
pub mod eval;
pub mod ibp;
pub mod interval;
pub mod lipschitz;
pub mod losses;
pub mod model;
pub mod nn;
pub mod verifier;

pub use adversary::PgdConfig;
pub use certificate::{ClbfParams, FilteredCertificate};
pub use config::RunConfig;
pub use envs::{EnvKind, EnvSpec};
pub use error::{ClbfError, Result};
pub use eval::{Campaign, Mode, Outcome, RolloutResult};
pub use interval::{Interval, IntervalBox};
pub use lipschitz::NormKind;
pub use losses::{LossWeights, Method};
pub use model::Model;
pub use nn::Mlp;
pub use verifier::{BnbConfig, Status, Verdict};
