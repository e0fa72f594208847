//! A sequentially consistent distributed queue and stack over a linearized
//! De Bruijn overlay, together with a deterministic network simulator, a
//! sequential-consistency checker and an experiment harness.

pub mod batch;
pub mod checker;
pub mod dht;
pub mod harness;
pub mod kernel;
pub mod label;
pub mod membership;
pub mod node;
pub mod protocol;
pub mod queue;
pub mod stack;
pub mod topology;
pub mod tree;
pub mod world;
