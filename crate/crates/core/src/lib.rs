//! Ensemble-mixed multi-agent actor-critic.
//!
//! Per-agent critic ensembles are combined by a state-conditioned monotonic
//! mixer whose coefficients are down-weighted by ensemble kurtosis. Actors are
//! softmax policies trained on a mix of on-policy and off-policy gradients,
//! and explore by adding kurtosis bonuses to their logits in states where the
//! ensemble's mean excess kurtosis is positive.

pub mod actors;
pub mod critics;
pub mod diffcore;
pub mod envs;
pub mod error;
pub mod exploration;
pub mod oracle;
pub mod replay;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/statistics.md")]
    mod statistics {}
    #[doc = include_str!("../../../book/src/mixing.md")]
    mod mixing {}
    #[doc = include_str!("../../../book/src/targets.md")]
    mod targets {}
    #[doc = include_str!("../../../book/src/actors.md")]
    mod actors {}
    #[doc = include_str!("../../../book/src/exploration.md")]
    mod exploration {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
