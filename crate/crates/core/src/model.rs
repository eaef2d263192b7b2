//! Domain types shared by every part of the runtime, plus the job
//! lifecycle state machine.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workloads::{DrawableSummary, Histogram1D, Histogram2D};

/// Maximum byte length of any identifier.
pub const MAX_ID_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdError {
    #[error("identifier must not be empty")]
    Empty,
    #[error("identifier longer than {MAX_ID_LEN} bytes")]
    TooLong,
    #[error("identifier contains a control character")]
    ControlChar,
}

fn check_id(raw: &str) -> Result<(), IdError> {
    if raw.is_empty() {
        return Err(IdError::Empty);
    }
    if raw.len() > MAX_ID_LEN {
        return Err(IdError::TooLong);
    }
    if raw.chars().any(char::is_control) {
        return Err(IdError::ControlChar);
    }
    Ok(())
}

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn new(raw: impl Into<String>) -> Result<Self, IdError> {
                let raw = raw.into();
                check_id(&raw)?;
                Ok(Self(raw))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = IdError;
            fn try_from(raw: String) -> Result<Self, IdError> {
                Self::new(raw)
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> String {
                id.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl std::str::FromStr for $name {
            type Err = IdError;
            fn from_str(s: &str) -> Result<Self, IdError> {
                Self::new(s)
            }
        }
    };
}

id_type!(
    /// A server or resource-node container.
    NodeId
);
id_type!(
    /// A handheld client container.
    ClientId
);
id_type!(
    /// A mobile or receiver agent.
    AgentId
);
id_type!(JobId);
id_type!(
    /// Any addressable entity: the sender/recipient domain of an envelope.
    EntityId
);

macro_rules! into_entity {
    ($($name:ident),*) => {$(
        impl From<$name> for EntityId {
            fn from(id: $name) -> EntityId {
                EntityId(id.0)
            }
        }
        impl From<&$name> for EntityId {
            fn from(id: &$name) -> EntityId {
                EntityId(id.0.clone())
            }
        }
        impl PartialEq<$name> for EntityId {
            fn eq(&self, other: &$name) -> bool {
                self.0 == other.0
            }
        }
    )*};
}
into_entity!(NodeId, ClientId, AgentId, JobId);

/// Network address of a container. In live mode this is `host:port`; in the
/// simulator it is the container's name.
pub type Endpoint = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Hist1D,
    Hist2D,
    ParseEventXml,
}

impl JobKind {
    pub const ALL: [JobKind; 3] = [JobKind::Hist1D, JobKind::Hist2D, JobKind::ParseEventXml];
}

/// Binning of one histogram axis over a named branch of the input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub branch: String,
    pub nbins: u32,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JobParams {
    #[serde(rename = "hist1d")]
    Hist1D {
        axis: AxisSpec,
    },
    #[serde(rename = "hist2d")]
    Hist2D {
        x: AxisSpec,
        y: AxisSpec,
    },
    ParseEventXml,
}

impl JobParams {
    pub fn kind(&self) -> JobKind {
        match self {
            JobParams::Hist1D { .. } => JobKind::Hist1D,
            JobParams::Hist2D { .. } => JobKind::Hist2D,
            JobParams::ParseEventXml => JobKind::ParseEventXml,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryMode {
    Direct,
    BringBack,
    Auto,
}

impl DeliveryMode {
    /// Mode actually used at completion time. `Auto` picks `Direct` while the
    /// client link is live.
    pub fn resolve(self, client_live: bool) -> DeliveryMode {
        match self {
            DeliveryMode::Auto if client_live => DeliveryMode::Direct,
            DeliveryMode::Auto => DeliveryMode::BringBack,
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSpec {
    pub job_id: JobId,
    pub input_ref: String,
    pub params: JobParams,
    pub delivery_mode: DeliveryMode,
}

impl JobSpec {
    pub fn kind(&self) -> JobKind {
        self.params.kind()
    }
}

/// One violated `JobSpec` invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpecViolation {
    EmptyInputRef,
    ZeroBins { axis: &'static str },
    LoNotBelowHi { axis: &'static str },
    NonFiniteRange { axis: &'static str },
    EmptyBranch { axis: &'static str },
}

impl fmt::Display for SpecViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpecViolation::EmptyInputRef => f.write_str("input_ref non-empty"),
            SpecViolation::ZeroBins { axis } => write!(f, "{axis}: nbins >= 1"),
            SpecViolation::LoNotBelowHi { axis } => write!(f, "{axis}: lo < hi"),
            SpecViolation::NonFiniteRange { axis } => write!(f, "{axis}: lo and hi finite"),
            SpecViolation::EmptyBranch { axis } => write!(f, "{axis}: branch non-empty"),
        }
    }
}

/// Returns every violated invariant; an empty list means the spec is valid.
pub fn validate_job_spec(spec: &JobSpec) -> Vec<SpecViolation> {
    let mut out = Vec::new();
    if spec.input_ref.is_empty() {
        out.push(SpecViolation::EmptyInputRef);
    }
    let mut check_axis = |axis: &'static str, a: &AxisSpec| {
        if a.branch.is_empty() {
            out.push(SpecViolation::EmptyBranch { axis });
        }
        if a.nbins == 0 {
            out.push(SpecViolation::ZeroBins { axis });
        }
        if !a.lo.is_finite() || !a.hi.is_finite() {
            out.push(SpecViolation::NonFiniteRange { axis });
        } else if a.lo >= a.hi {
            out.push(SpecViolation::LoNotBelowHi { axis });
        }
    };
    match &spec.params {
        JobParams::Hist1D { axis } => check_axis("x", axis),
        JobParams::Hist2D { x, y } => {
            check_axis("x", x);
            check_axis("y", y);
        }
        JobParams::ParseEventXml => {}
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case", deny_unknown_fields)]
pub enum JobStatus {
    Pending,
    Submitted,
    Migrating,
    Running { node: NodeId },
    Relocating { from: NodeId, to: NodeId },
    Completed,
    Failed { reason: String },
    Killed,
}

impl JobStatus {
    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            JobStatus::Completed | JobStatus::Failed { .. } | JobStatus::Killed
        )
    }

    pub fn failed(reason: impl Into<String>) -> Self {
        JobStatus::Failed {
            reason: reason.into(),
        }
    }

    /// Short tag, used in traces and adjacency tables.
    pub fn tag(&self) -> &'static str {
        match self {
            JobStatus::Pending => "pending",
            JobStatus::Submitted => "submitted",
            JobStatus::Migrating => "migrating",
            JobStatus::Running { .. } => "running",
            JobStatus::Relocating { .. } => "relocating",
            JobStatus::Completed => "completed",
            JobStatus::Failed { .. } => "failed",
            JobStatus::Killed => "killed",
        }
    }
}

impl fmt::Display for JobStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JobStatus::Running { node } => write!(f, "running({node})"),
            JobStatus::Relocating { from, to } => write!(f, "relocating({from}->{to})"),
            JobStatus::Failed { reason } => write!(f, "failed({reason})"),
            other => f.write_str(other.tag()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LifecycleEvent {
    Submit,
    MigrateStart,
    MigrateDone(NodeId),
    Relocate { from: NodeId, to: NodeId },
    Complete,
    Fail(String),
    Kill,
}

impl LifecycleEvent {
    pub fn tag(&self) -> &'static str {
        match self {
            LifecycleEvent::Submit => "submit",
            LifecycleEvent::MigrateStart => "migrate_start",
            LifecycleEvent::MigrateDone(_) => "migrate_done",
            LifecycleEvent::Relocate { .. } => "relocate",
            LifecycleEvent::Complete => "complete",
            LifecycleEvent::Fail(_) => "fail",
            LifecycleEvent::Kill => "kill",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("illegal transition: {event} from {from}")]
pub struct IllegalTransition {
    pub from: JobStatus,
    pub event: &'static str,
}

/// Successor of `current` under `event`.
///
/// A relocation must start from the node the job is running on, and a
/// relocation finishes only on its announced destination.
pub fn advance_status(
    current: &JobStatus,
    event: &LifecycleEvent,
) -> Result<JobStatus, IllegalTransition> {
    use JobStatus as S;
    use LifecycleEvent as E;
    let next = match (current, event) {
        (S::Pending, E::Submit) => Some(S::Submitted),
        (S::Submitted, E::MigrateStart) => Some(S::Migrating),
        (S::Migrating, E::MigrateDone(node)) => Some(S::Running { node: node.clone() }),
        (S::Running { node }, E::Relocate { from, to }) if node == from => Some(S::Relocating {
            from: from.clone(),
            to: to.clone(),
        }),
        (S::Relocating { to, .. }, E::MigrateDone(node)) if node == to => {
            Some(S::Running { node: node.clone() })
        }
        (S::Running { .. }, E::Complete) => Some(S::Completed),
        (S::Submitted | S::Migrating | S::Running { .. }, E::Fail(reason)) => Some(S::Failed {
            reason: reason.clone(),
        }),
        (s, E::Kill) if !s.is_terminal() => Some(S::Killed),
        _ => None,
    };
    next.ok_or_else(|| IllegalTransition {
        from: current.clone(),
        event: event.tag(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadReport {
    pub node: NodeId,
    pub cpu_util: f64,
    pub queue_depth: u32,
    pub capacity: u32,
    pub mem_util: f64,
    pub sampled_at: u64,
}

impl LoadReport {
    pub fn idle(node: NodeId, capacity: u32, sampled_at: u64) -> Self {
        LoadReport {
            node,
            cpu_util: 0.0,
            queue_depth: 0,
            capacity,
            mem_util: 0.0,
            sampled_at,
        }
    }

    pub fn is_valid(&self) -> bool {
        let frac = |v: f64| (0.0..=1.0).contains(&v);
        frac(self.cpu_util) && frac(self.mem_util) && self.capacity >= 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadStatus {
    Under,
    Normal,
    Over,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadThresholds {
    pub theta_lo: f64,
    pub theta_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("thresholds must satisfy 0 <= theta_lo < theta_hi <= 1")]
pub struct BadThresholds;

impl LoadThresholds {
    pub const DEFAULT_LO: f64 = 0.5;
    pub const DEFAULT_HI: f64 = 0.8;

    pub fn new(theta_lo: f64, theta_hi: f64) -> Result<Self, BadThresholds> {
        if (0.0..=1.0).contains(&theta_lo) && (0.0..=1.0).contains(&theta_hi) && theta_lo < theta_hi
        {
            Ok(LoadThresholds { theta_lo, theta_hi })
        } else {
            Err(BadThresholds)
        }
    }
}

impl Default for LoadThresholds {
    fn default() -> Self {
        LoadThresholds {
            theta_lo: Self::DEFAULT_LO,
            theta_hi: Self::DEFAULT_HI,
        }
    }
}

/// Serializable state of a mobile agent; this is what crosses the wire when
/// the agent migrates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSnapshot {
    pub agent_id: AgentId,
    pub twin_id: AgentId,
    pub client: ClientId,
    pub job: JobSpec,
    pub status: JobStatus,
    pub hop_count: u32,
    pub home_endpoint: Endpoint,
    /// Containers the agent has landed on, in order. Placement and relocation
    /// targets are recorded here, as is the client container on a bring-back.
    pub visited: Vec<String>,
}

impl AgentSnapshot {
    pub fn is_consistent(&self) -> bool {
        self.hop_count as usize == self.visited.len() && self.agent_id != self.twin_id
    }

    /// Records arrival at `container`, keeping `hop_count == visited.len()`.
    pub fn record_hop(&mut self, container: &str) {
        self.visited.push(container.to_owned());
        self.hop_count = self.visited.len() as u32;
    }

    /// Applies a lifecycle event to the carried status.
    pub fn advance(&mut self, event: &LifecycleEvent) -> Result<(), IllegalTransition> {
        self.status = advance_status(&self.status, event)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "snake_case")]
pub enum ResultData {
    #[serde(rename = "hist1d")]
    Hist1D(Histogram1D),
    #[serde(rename = "hist2d")]
    Hist2D(Histogram2D),
    Drawables(DrawableSummary),
}

impl ResultData {
    pub fn kind(&self) -> JobKind {
        match self {
            ResultData::Hist1D(_) => JobKind::Hist1D,
            ResultData::Hist2D(_) => JobKind::Hist2D,
            ResultData::Drawables(_) => JobKind::ParseEventXml,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultPayload {
    pub job_id: JobId,
    pub node: NodeId,
    pub data: ResultData,
}
