//! Discrete-event simulator of broadcast vehicular traffic on a highway
//! with one learning node that defers its own packets into predicted gaps
//! of neighbour activity.
//!
//! Modules follow the simulation stack bottom-up: [`kernel`] and [`rng`],
//! [`mobility`], [`phy`], [`mac`], [`apps`], then the learning node's
//! [`piggyback`], [`predictor`] and [`scheduler`], and finally [`world`],
//! [`metrics`] and [`experiment`].

// `!(x > 0.0)` guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod apps;
pub mod config;
pub mod experiment;
pub mod kernel;
pub mod mac;
pub mod metrics;
pub mod mobility;
pub mod packet_log;
pub mod phy;
pub mod piggyback;
pub mod plot;
pub mod predictor;
pub mod rng;
pub mod scheduler;
pub mod training;
pub mod world;

pub use config::{ScenarioConfig, TrafficPattern};
pub use scheduler::LearningMode;
pub use world::{run, RunMetrics, RunOptions, Simulation};
