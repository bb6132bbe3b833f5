//! Simulator and schedulers for energy-harvesting hierarchical federated learning.
//!
//! The library models a cloud / edge / client hierarchy in which battery-powered
//! clients train a shared model over discrete communication rounds. Each round a
//! scheduler picks which clients participate, their CPU frequencies and transmit
//! powers; a second stage assigns clients to edge servers and splits each
//! server's bandwidth to minimize the round's straggler delay. Schedulers range
//! from random selection to a deterministic policy-gradient agent trained inside
//! the simulator.
//!
//! Everything is seeded: a run with the same configuration and seed produces
//! byte-identical outputs.

pub mod bandwidth;
pub mod baselines;
pub mod config;
pub mod cost;
pub mod ddpg;
pub mod env;
pub mod experiment;
pub mod fl;
pub mod nn;
pub mod rng;
pub mod scaba;
