//! Reinforcement-learning driven test generation over a hybrid vector-graph
//! knowledge store, with a seeded quality-engineer feedback simulator.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod domain;
pub mod dqn;
pub mod knowledge_store;
pub mod ppo;
pub mod qe_env;
pub mod rewards;
pub mod rl_core;
pub mod trainer;
