//! Learned channel-masking adversaries and adversarial retraining of
//! multi-agent communication policies.
//!
//! The crate is `no_std` (with `alloc`) and carries every algorithmic piece:
//! the dense-network substrate, the gridworld tasks, the channelized message
//! layer, neighbor-aggregation features, the masking adversary with its
//! monotonic mixing critic, team/communication training, attacks and
//! evaluation statistics. File formats, configuration and the command-line
//! runner live in the `dmac-lab` companion crate.
#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod adversary;
pub mod attack;
pub mod comm;
pub mod env;
pub mod error;
pub mod eval;
pub mod graph;
pub mod nn;
pub mod replay;
pub mod retrain;
pub mod rng;
pub mod rollout;
pub mod team;

pub use error::{Error, Result};
