//! Job offloading for resource-weak clients.
//!
//! A client hands a heavy analysis job to a server farm through a pair of
//! agents: a mobile execution agent that migrates to the farm, picks an
//! under-utilized node, runs the job and delivers the result, and a
//! stationary receiver agent that tracks it from the client.
//!
//! The same container logic runs over TCP ([`runtime::live`]) and inside a
//! deterministic discrete-event simulator ([`sim`]).

pub mod balancer;
pub mod config;
pub mod model;
pub mod runtime;
pub mod sim;
pub mod wire;
pub mod workloads;
