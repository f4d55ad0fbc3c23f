//! Deterministic multi-agent highway traffic simulation and policy learning.
//!
//! The crate simulates scenes of kinematic-bicycle agents on a lane-graph
//! map, generates nominal logs from a scripted expert plus procedural
//! long-tail scenarios with scripted hero agents, and trains a shared
//! multi-agent policy with a combined closed-loop imitation and
//! reinforcement objective. Everything is seeded and bit-reproducible.

pub mod dynamics;
pub mod policy;
pub mod scenario;
pub mod seeds;
pub mod simulator;
pub mod geometry;
pub mod learning;
pub mod lane_graph;
pub mod tape;
