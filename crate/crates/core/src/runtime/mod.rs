//! Containers and agents.
//!
//! Every container (Main-Container, resource node, client) is an [`Actor`]
//! written against the [`Context`] trait. The simulator and the TCP runtime
//! each provide a `Context`, so the same logic runs in both.

pub mod agent;
pub mod client;
pub mod live;
pub mod node;
pub mod server;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::model::{EntityId, JobId, JobSpec, JobStatus, LoadReport, NodeId, ResultData};
use crate::wire::{Body, Envelope};
use crate::workloads::WorkMeter;

pub use agent::{spawn_pair, MobileAgent, ReceiverAgent, RelocationDecision};
pub use client::{ClientConfig, ClientContainer, ClientOutcome};
pub use node::{NodeConfig, NodeContainer};
pub use server::{MainContainer, Registry, ServerConfig};

/// Virtual or wall-clock time in microseconds.
pub type Micros = u64;

pub const MICROS_PER_MS: u64 = 1000;

/// Default interval between heartbeats.
pub const DEFAULT_HEARTBEAT_INTERVAL_MS: u64 = 1000;
/// Consecutive missed heartbeats before a peer is declared dead.
pub const DEFAULT_HEARTBEAT_MISS_LIMIT: u32 = 3;
pub const DEFAULT_MAX_HOPS: u32 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SendError {
    /// The destination or the link to it is down.
    #[error("{0} is unreachable")]
    Unreachable(String),
    #[error("encoding failed: {0}")]
    Encode(String),
}

/// Result of running a job's workload on a node.
#[derive(Debug, Clone, PartialEq)]
pub enum WorkOutcome {
    Done { data: ResultData, meter: WorkMeter },
    InputMissing,
    Failed(String),
}

/// Structured trace events emitted by containers. The simulator renders
/// these into its trace; the live runtime logs them.
#[derive(Debug, Clone, PartialEq)]
pub enum Note {
    Status {
        job: JobId,
        at: String,
        from: JobStatus,
        to: JobStatus,
    },
    Migrate {
        job: JobId,
        from: String,
        to: String,
    },
    Relocate {
        job: JobId,
        from: NodeId,
        to: NodeId,
    },
    WorkStart {
        job: JobId,
        node: NodeId,
    },
    WorkEnd {
        job: JobId,
        node: NodeId,
        killed: bool,
    },
    ResultSent {
        job: JobId,
        from: String,
        mode: &'static str,
    },
    ResultReceived {
        job: JobId,
        duplicate: bool,
    },
    Held {
        job: JobId,
        server: NodeId,
    },
    Displayed {
        job: JobId,
    },
    NodeLost {
        node: NodeId,
    },
    Info(String),
}

/// What a container can ask of the runtime hosting it.
pub trait Context {
    fn now(&self) -> Micros;

    fn now_ms(&self) -> u64 {
        self.now() / MICROS_PER_MS
    }

    /// Queues `env` for delivery to `endpoint`. Fails immediately when the
    /// destination is known to be down.
    fn send(&mut self, endpoint: &str, env: Envelope) -> Result<(), SendError>;

    fn set_timer(&mut self, after: Micros, token: u64);

    /// Runs `job` asynchronously; completion arrives via
    /// [`Actor::on_work_done`] with the same `ticket`.
    fn start_work(&mut self, ticket: u64, job: &JobSpec, speed_factor: f64);

    /// Externally imposed load for `node`, if the runtime scripts one.
    fn scripted_load(&self, _node: &NodeId) -> Option<LoadReport> {
        None
    }

    /// True under the simulator's virtual clock.
    fn simulated(&self) -> bool {
        false
    }

    fn note(&mut self, note: Note);
}

pub trait Actor {
    fn id(&self) -> EntityId;
    fn endpoint(&self) -> &str;
    fn on_start(&mut self, _ctx: &mut dyn Context) {}
    fn on_message(&mut self, ctx: &mut dyn Context, env: Envelope);
    fn on_timer(&mut self, _ctx: &mut dyn Context, _token: u64) {}
    fn on_work_done(&mut self, _ctx: &mut dyn Context, _ticket: u64, _outcome: WorkOutcome) {}
}

/// Per-sender monotonic message ids.
#[derive(Debug, Default, Clone)]
pub struct MsgIds {
    next: BTreeMap<EntityId, u64>,
}

impl MsgIds {
    pub fn envelope(
        &mut self,
        sender: impl Into<EntityId>,
        recipient: impl Into<EntityId>,
        body: impl Into<Body>,
    ) -> Envelope {
        let sender = sender.into();
        let slot = self.next.entry(sender.clone()).or_insert(0);
        *slot += 1;
        Envelope {
            msg_id: *slot,
            sender,
            recipient: recipient.into(),
            body: body.into(),
        }
    }
}

/// Allocates timer tokens and remembers what each one is for.
#[derive(Debug, Clone)]
pub struct Timers<T> {
    next: u64,
    live: BTreeMap<u64, T>,
}

impl<T> Default for Timers<T> {
    fn default() -> Self {
        Timers {
            next: 0,
            live: BTreeMap::new(),
        }
    }
}

impl<T> Timers<T> {
    pub fn arm(&mut self, ctx: &mut dyn Context, after: Micros, purpose: T) -> u64 {
        self.next += 1;
        self.live.insert(self.next, purpose);
        ctx.set_timer(after, self.next);
        self.next
    }

    /// Removes and returns the purpose of a fired timer; `None` if it was
    /// cancelled.
    pub fn fire(&mut self, token: u64) -> Option<T> {
        self.live.remove(&token)
    }

    pub fn cancel(&mut self, token: u64) {
        self.live.remove(&token);
    }

    pub fn cancel_where(&mut self, mut pred: impl FnMut(&T) -> bool) {
        self.live.retain(|_, t| !pred(t));
    }
}

impl fmt::Display for Note {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Note::Status { job, at, from, to } => write!(f, "status {job} {from} => {to} @{at}"),
            Note::Migrate { job, from, to } => write!(f, "migrate {job} {from} -> {to}"),
            Note::Relocate { job, from, to } => write!(f, "relocate {job} {from} -> {to}"),
            Note::WorkStart { job, node } => write!(f, "work_start {job} on {node}"),
            Note::WorkEnd { job, node, killed } => {
                write!(
                    f,
                    "work_end {job} on {node}{}",
                    if *killed { " killed" } else { "" }
                )
            }
            Note::ResultSent { job, from, mode } => {
                write!(f, "result_sent {job} from {from} mode={mode}")
            }
            Note::ResultReceived { job, duplicate } => {
                write!(
                    f,
                    "result_received {job}{}",
                    if *duplicate { " duplicate" } else { "" }
                )
            }
            Note::Held { job, server } => write!(f, "held {job} at {server}"),
            Note::Displayed { job } => write!(f, "displayed {job}"),
            Note::NodeLost { node } => write!(f, "node_lost {node}"),
            Note::Info(s) => write!(f, "info {s}"),
        }
    }
}
