//! The two halves of a job's agent pair.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::balancer::{classify_load, select_target, FarmView};
use crate::model::{
    validate_job_spec, AgentId, AgentSnapshot, ClientId, Endpoint, JobId, JobSpec, JobStatus,
    LoadReport, LoadStatus, LoadThresholds, NodeId, ResultPayload, SpecViolation,
};

use super::DEFAULT_MAX_HOPS;

/// The migrating half: carries the job to the farm, runs it and delivers
/// the result.
#[derive(Debug, Clone, PartialEq)]
pub struct MobileAgent {
    pub snapshot: AgentSnapshot,
    /// Finished result awaiting delivery. Results are all-or-nothing; a
    /// relocated job restarts from scratch.
    pub partial: Option<ResultPayload>,
    pub max_hops: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StayReason {
    NotOverloaded,
    HopBudget,
    NoTarget,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RelocationDecision {
    Stay(StayReason),
    Move(NodeId),
}

impl MobileAgent {
    pub fn new(snapshot: AgentSnapshot, max_hops: u32) -> Self {
        MobileAgent {
            snapshot,
            partial: None,
            max_hops,
        }
    }

    pub fn job_id(&self) -> &JobId {
        &self.snapshot.job.job_id
    }

    pub fn current_node(&self) -> Option<&NodeId> {
        match &self.snapshot.status {
            JobStatus::Running { node } => Some(node),
            _ => None,
        }
    }

    /// One more relocation fits in the hop budget, keeping one hop in
    /// reserve for a possible trip home.
    pub fn can_relocate(&self) -> bool {
        self.snapshot.hop_count + 2 <= self.max_hops
    }

    /// Whether arrival at a node with load `own` should trigger a search for
    /// a better node. Cheap check done before polling the farm.
    pub fn wants_to_leave(&self, own: &LoadReport, t: &LoadThresholds) -> Option<StayReason> {
        if classify_load(own, t) != LoadStatus::Over {
            Some(StayReason::NotOverloaded)
        } else if !self.can_relocate() {
            Some(StayReason::HopBudget)
        } else {
            None
        }
    }

    /// Full withdraw-and-rehome decision on arrival, given this node's own
    /// report and a view of its farm.
    pub fn relocation_decision(
        &self,
        own: &LoadReport,
        farm: &FarmView,
        t: &LoadThresholds,
    ) -> RelocationDecision {
        if let Some(reason) = self.wants_to_leave(own, t) {
            return RelocationDecision::Stay(reason);
        }
        let exclude: BTreeSet<NodeId> = self.current_node().cloned().into_iter().collect();
        match select_target(farm, &exclude, t) {
            Ok(target) => RelocationDecision::Move(target),
            Err(_) => RelocationDecision::Stay(StayReason::NoTarget),
        }
    }
}

/// A server the client registered with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerRef {
    pub id: NodeId,
    pub endpoint: Endpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LastKnown {
    pub node: Option<NodeId>,
    pub status: JobStatus,
    pub at_ms: u64,
}

/// The stationary half, resident on the client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiverAgent {
    pub agent_id: AgentId,
    pub twin_id: AgentId,
    pub job_id: JobId,
    pub spec: JobSpec,
    /// Updated only from location updates and status reports.
    pub last_known: LastKnown,
    /// Registered servers, in registration order.
    pub servers: Vec<ServerRef>,
    /// Server that accepted the mobile agent.
    pub job_server: Option<ServerRef>,
    /// Endpoint of `last_known.node`, when the twin reported it.
    pub node_endpoint: Option<Endpoint>,
    /// Highest hop number seen in a location update.
    pub hop_seen: u32,
    pub inbox: Vec<ResultPayload>,
}

impl ReceiverAgent {
    pub fn has_result(&self) -> bool {
        self.inbox.iter().any(|p| p.job_id == self.job_id)
    }

    /// Applies a status observation. Stale hops are ignored and a terminal
    /// status is never replaced.
    pub fn observe(
        &mut self,
        node: Option<NodeId>,
        status: JobStatus,
        hop: Option<u32>,
        at_ms: u64,
    ) -> bool {
        if self.last_known.status.is_terminal() {
            return false;
        }
        if let Some(h) = hop {
            if h < self.hop_seen {
                return false;
            }
            self.hop_seen = h;
        }
        let node = node.or_else(|| self.last_known.node.clone());
        self.last_known = LastKnown {
            node,
            status,
            at_ms,
        };
        true
    }
}

/// Generates agent ids unique within one client.
#[derive(Debug, Clone)]
pub struct AgentIdGen {
    client: ClientId,
    next: u64,
}

impl AgentIdGen {
    pub fn new(client: ClientId) -> Self {
        Self::starting_at(client, 0)
    }

    pub fn starting_at(client: ClientId, next: u64) -> Self {
        AgentIdGen { client, next }
    }

    /// Number of ids handed out so far; feed back into `starting_at` to
    /// resume without reuse.
    pub fn issued(&self) -> u64 {
        self.next
    }

    pub fn next_id(&mut self, role: char) -> AgentId {
        self.next += 1;
        let mut raw = format!("{}.{role}{}", self.client, self.next);
        if raw.len() > crate::model::MAX_ID_LEN {
            // keep the unique suffix, trim the client part
            let suffix = format!(".{role}{}", self.next);
            let mut cut = crate::model::MAX_ID_LEN - suffix.len();
            let name = self.client.as_str();
            while !name.is_char_boundary(cut) {
                cut -= 1;
            }
            raw = format!("{}{suffix}", &name[..cut]);
        }
        AgentId::new(raw).expect("generated ids are valid")
    }
}

/// Creates a linked mobile/receiver pair for `spec`, both `Pending`.
pub fn spawn_pair(
    client: &ClientId,
    spec: JobSpec,
    home_endpoint: &str,
    ids: &mut AgentIdGen,
    max_hops: Option<u32>,
) -> Result<(MobileAgent, ReceiverAgent), Vec<SpecViolation>> {
    let violations = validate_job_spec(&spec);
    if !violations.is_empty() {
        return Err(violations);
    }
    let mobile_id = ids.next_id('m');
    let receiver_id = ids.next_id('r');
    let snapshot = AgentSnapshot {
        agent_id: mobile_id.clone(),
        twin_id: receiver_id.clone(),
        client: client.clone(),
        job: spec.clone(),
        status: JobStatus::Pending,
        hop_count: 0,
        home_endpoint: home_endpoint.to_owned(),
        visited: Vec::new(),
    };
    let receiver = ReceiverAgent {
        agent_id: receiver_id,
        twin_id: mobile_id,
        job_id: spec.job_id.clone(),
        spec,
        last_known: LastKnown {
            node: None,
            status: JobStatus::Pending,
            at_ms: 0,
        },
        servers: Vec::new(),
        job_server: None,
        node_endpoint: None,
        hop_seen: 0,
        inbox: Vec::new(),
    };
    Ok((
        MobileAgent::new(snapshot, max_hops.unwrap_or(DEFAULT_MAX_HOPS)),
        receiver,
    ))
}
