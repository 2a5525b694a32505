//! Affective workload allocation for multi-operator surveillance teams.
//!
//! * [`hpm`]: workload to performance model
//! * [`env`]: allocation environment and episode runner
//! * [`allocator`]: fixed, random, greedy and learned allocation strategies
//! * [`ppo`]: policy training
//! * [`bench`]: simulated strategy and task comparisons
//! * [`stats`]: normalization, repeated-measures ANOVA, pairwise tests
//! * [`session`]: live human-in-the-loop session engine and log replay
//! * [`config`]: the repo-wide TOML configuration

pub mod allocator;
pub mod bench;
pub mod config;
pub mod env;
pub mod hpm;
pub mod ppo;
pub mod session;
pub mod stats;
