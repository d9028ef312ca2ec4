//! Simulation, analysis and learning for queues of offenders who choose how
//! much of a fine to pay while the authority can only prosecute a few of
//! them each round.

pub mod analytic;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod game;
pub mod learner;
pub mod oracle;
pub mod rng;
pub mod strategy;

pub use config::QueueConfig;
pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/queue.md")]
    mod queue {}
    #[doc = include_str!("../../../book/src/strategies.md")]
    mod strategies {}
    #[doc = include_str!("../../../book/src/analytic.md")]
    mod analytic {}
    #[doc = include_str!("../../../book/src/learning.md")]
    mod learning {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
