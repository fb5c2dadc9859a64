//! Nearest-neighbor upper-confidence value approximation for deterministic
//! finite-horizon reinforcement learning.
//!
//! The crate is organized bottom-up: [`metric_space`] supplies weighted
//! metrics, covering/packing numbers and bi-Lipschitz lifts; [`nn_index`]
//! holds the exact nearest-neighbor buffer and the Lipschitz min-plus
//! approximator; [`envs`] the deterministic environments; [`neural`] small
//! MLPs with Adam. The agents build on these: [`agent_ucrl`] (optimistic
//! NN-approximated Q-learning over finite actions), [`agent_nnac`] (actor
//! critic with a nearest-neighbor rollout critic, whose recursion lives in
//! [`rollout`]) and [`agent_soft`] (DDPG/TD3 with a decaying NN critic
//! penalty).

pub mod metric_space;
pub mod nn_index;
pub mod envs;
pub mod neural;
pub mod rollout;
pub mod error;
pub mod eval;
pub mod agent_ucrl;
pub mod agent_nnac;
pub mod agent_soft;
pub mod baseline;
