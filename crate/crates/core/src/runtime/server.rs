//! The Main-Container: client registration, job bookkeeping, placement,
//! message routing and custody of results whose client is offline.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balancer::{select_target, FarmView};
use crate::model::{
    validate_job_spec, AgentId, AgentSnapshot, ClientId, Endpoint, EntityId, JobId, JobStatus,
    LifecycleEvent, LoadReport, LoadThresholds, NodeId, ResultPayload,
};
use crate::wire::{
    codes, Body, Envelope, Heartbeat, HeartbeatAck, Kill, KillAck, LoadQuery, MigrateAck,
    MigrateAgent, ProtocolError, RegisterAck, StatusReport, SubmitAck,
};

use super::{
    Actor, Context, Micros, MsgIds, Note, Timers, DEFAULT_HEARTBEAT_INTERVAL_MS,
    DEFAULT_HEARTBEAT_MISS_LIMIT, DEFAULT_MAX_HOPS, MICROS_PER_MS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarmMemberConfig {
    pub id: NodeId,
    pub endpoint: Endpoint,
    pub capacity: u32,
    pub speed_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerConfig {
    pub id: NodeId,
    pub listen: Endpoint,
    pub farm: Vec<FarmMemberConfig>,
    pub thresholds: LoadThresholds,
    pub heartbeat_interval_ms: u64,
    pub heartbeat_miss_limit: u32,
    pub max_hops: u32,
}

impl ServerConfig {
    pub fn new(id: NodeId, listen: impl Into<Endpoint>, farm: Vec<FarmMemberConfig>) -> Self {
        ServerConfig {
            id,
            listen: listen.into(),
            farm,
            thresholds: LoadThresholds::default(),
            heartbeat_interval_ms: DEFAULT_HEARTBEAT_INTERVAL_MS,
            heartbeat_miss_limit: DEFAULT_HEARTBEAT_MISS_LIMIT,
            max_hops: DEFAULT_MAX_HOPS,
        }
    }

    /// How long to wait for any single reply before treating the peer as
    /// gone.
    pub fn request_timeout(&self) -> Micros {
        self.heartbeat_interval_ms * self.heartbeat_miss_limit as u64 * MICROS_PER_MS
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientEntry {
    pub endpoint: Endpoint,
    pub registered_at: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeEntry {
    pub endpoint: Endpoint,
    pub last_report: Option<LoadReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobEntry {
    pub status: JobStatus,
    pub client: ClientId,
    pub agent: Option<AgentId>,
    pub twin: Option<AgentId>,
    pub node: Option<NodeId>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    pub clients: BTreeMap<ClientId, ClientEntry>,
    pub nodes: BTreeMap<NodeId, NodeEntry>,
    pub jobs: BTreeMap<JobId, JobEntry>,
}

impl Registry {
    /// Every job recorded on a node names a farm member, and running jobs
    /// agree with their recorded node.
    pub fn is_consistent(&self) -> bool {
        self.jobs.values().all(|j| {
            let node_ok = j.node.as_ref().is_none_or(|n| self.nodes.contains_key(n));
            let running_ok = match &j.status {
                JobStatus::Running { node } => {
                    self.nodes.contains_key(node) && j.node.as_ref() == Some(node)
                }
                _ => true,
            };
            node_ok && running_ok
        })
    }

    fn job_by_agent(&self, agent: &EntityId) -> Option<(&JobId, &JobEntry)> {
        self.jobs
            .iter()
            .find(|(_, j)| j.agent.as_ref().is_some_and(|a| agent == a))
    }

    fn job_by_twin(&self, twin: &EntityId) -> Option<(&JobId, &JobEntry)> {
        self.jobs
            .iter()
            .find(|(_, j)| j.twin.as_ref().is_some_and(|a| twin == a))
    }

    /// Endpoint for any entity this registry knows about.
    pub fn endpoint_of(&self, id: &EntityId) -> Option<Endpoint> {
        if let Some(c) = self.clients.iter().find(|(k, _)| id == *k) {
            return Some(c.1.endpoint.clone());
        }
        if let Some(n) = self.nodes.iter().find(|(k, _)| id == *k) {
            return Some(n.1.endpoint.clone());
        }
        if let Some((_, j)) = self.job_by_agent(id) {
            return j
                .node
                .as_ref()
                .and_then(|n| self.nodes.get(n))
                .map(|n| n.endpoint.clone());
        }
        if let Some((_, j)) = self.job_by_twin(id) {
            return self.clients.get(&j.client).map(|c| c.endpoint.clone());
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("unknown recipient {0}")]
    UnknownRecipient(EntityId),
    #[error("recipient {0} unreachable")]
    Unreachable(EntityId),
}

#[derive(Debug)]
struct Placement {
    snapshot: AgentSnapshot,
    awaiting: BTreeSet<NodeId>,
    reports: Vec<LoadReport>,
    timer: u64,
}

#[derive(Debug)]
struct Held {
    snapshot: AgentSnapshot,
    result: ResultPayload,
    in_flight: bool,
}

#[derive(Debug, Default)]
struct HeartbeatState {
    awaiting: bool,
    misses: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ServerTimer {
    Gather(u64),
    Heartbeat,
    BringBack(u64),
}

pub struct MainContainer {
    cfg: ServerConfig,
    pub registry: Registry,
    seen_agents: BTreeSet<AgentId>,
    placements: BTreeMap<u64, Placement>,
    next_placement: u64,
    held: BTreeMap<JobId, Held>,
    held_seq: BTreeMap<u64, JobId>,
    next_bring_back: u64,
    heartbeats: BTreeMap<NodeId, HeartbeatState>,
    heartbeat_armed: bool,
    ids: MsgIds,
    timers: Timers<ServerTimer>,
}

impl MainContainer {
    pub fn new(cfg: ServerConfig) -> Self {
        let nodes = cfg
            .farm
            .iter()
            .map(|m| {
                (
                    m.id.clone(),
                    NodeEntry {
                        endpoint: m.endpoint.clone(),
                        last_report: None,
                    },
                )
            })
            .collect();
        MainContainer {
            cfg,
            registry: Registry {
                nodes,
                ..Registry::default()
            },
            seen_agents: BTreeSet::new(),
            placements: BTreeMap::new(),
            next_placement: 0,
            held: BTreeMap::new(),
            held_seq: BTreeMap::new(),
            next_bring_back: 0,
            heartbeats: BTreeMap::new(),
            heartbeat_armed: false,
            ids: MsgIds::default(),
            timers: Timers::default(),
        }
    }

    pub fn config(&self) -> &ServerConfig {
        &self.cfg
    }

    pub fn server_id(&self) -> &NodeId {
        &self.cfg.id
    }

    /// Jobs whose results are waiting for their client to come back.
    pub fn held_jobs(&self) -> impl Iterator<Item = &JobId> {
        self.held.keys()
    }

    fn send_to(&mut self, ctx: &mut dyn Context, to: &EntityId, body: impl Into<Body>) -> bool {
        let Some(endpoint) = self.registry.endpoint_of(to) else {
            ctx.note(Note::Info(format!("{}: no endpoint for {to}", self.cfg.id)));
            return false;
        };
        let env = self.ids.envelope(&self.cfg.id, to.clone(), body);
        ctx.send(&endpoint, env).is_ok()
    }

    fn send_error(
        &mut self,
        ctx: &mut dyn Context,
        to: &EntityId,
        code: &str,
        detail: String,
        job: Option<JobId>,
    ) {
        self.send_to(
            ctx,
            to,
            ProtocolError {
                code: code.into(),
                detail,
                job_id: job,
            },
        );
    }

    /// Forwards an envelope addressed to someone else, unchanged.
    pub fn route(&mut self, ctx: &mut dyn Context, env: Envelope) -> Result<(), RouteError> {
        let recipient = env.recipient.clone();
        let Some(endpoint) = self.registry.endpoint_of(&recipient) else {
            return Err(RouteError::UnknownRecipient(recipient));
        };
        ctx.send(&endpoint, env)
            .map_err(|_| RouteError::Unreachable(recipient))
    }

    fn note_status(&self, ctx: &mut dyn Context, job: &JobId, from: &JobStatus, to: &JobStatus) {
        ctx.note(Note::Status {
            job: job.clone(),
            at: self.cfg.id.to_string(),
            from: from.clone(),
            to: to.clone(),
        });
    }

    fn on_register(&mut self, ctx: &mut dyn Context, client: ClientId, endpoint: Endpoint) {
        self.registry.clients.insert(
            client.clone(),
            ClientEntry {
                endpoint,
                registered_at: ctx.now_ms(),
            },
        );
        self.send_to(
            ctx,
            &client.clone().into(),
            RegisterAck {
                server: self.cfg.id.clone(),
                accepted: true,
            },
        );
        let waiting: Vec<JobId> = self
            .held
            .iter()
            .filter(|(_, h)| h.snapshot.client == client && !h.in_flight)
            .map(|(j, _)| j.clone())
            .collect();
        for job in waiting {
            self.try_bring_back(ctx, &job);
        }
    }

    fn on_submit(&mut self, ctx: &mut dyn Context, sender: &EntityId, spec: crate::model::JobSpec) {
        let job_id = spec.job_id.clone();
        let refuse = |reason: String| SubmitAck {
            job_id: job_id.clone(),
            accepted: false,
            reason: Some(reason),
        };
        let client = self.registry.clients.keys().find(|c| sender == *c).cloned();
        let ack = match client {
            None => refuse("unregistered_client".into()),
            Some(client) => {
                let violations = validate_job_spec(&spec);
                if !violations.is_empty() {
                    let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
                    refuse(format!("invalid_spec: {}", list.join("; ")))
                } else if self
                    .registry
                    .jobs
                    .get(&job_id)
                    .is_some_and(|j| j.agent.is_some() || j.client != client)
                {
                    refuse("duplicate_job".into())
                } else {
                    self.registry.jobs.insert(
                        job_id.clone(),
                        JobEntry {
                            status: JobStatus::Submitted,
                            client,
                            agent: None,
                            twin: None,
                            node: None,
                        },
                    );
                    SubmitAck {
                        job_id: job_id.clone(),
                        accepted: true,
                        reason: None,
                    }
                }
            }
        };
        self.send_to(ctx, sender, ack);
    }

    /// Checks done before any placement work; the refusal reason goes back
    /// in the `MigrateAck`.
    pub fn precheck_migration(&self, snapshot: &AgentSnapshot) -> Result<(), &'static str> {
        if !self.registry.clients.contains_key(&snapshot.client) {
            return Err("unregistered_client");
        }
        if self.seen_agents.contains(&snapshot.agent_id) {
            return Err("duplicate_agent");
        }
        if !snapshot.is_consistent() || snapshot.status != JobStatus::Submitted {
            return Err("bad_snapshot");
        }
        if !validate_job_spec(&snapshot.job).is_empty() {
            return Err("invalid_spec");
        }
        if self
            .registry
            .jobs
            .get(&snapshot.job.job_id)
            .is_some_and(|j| j.agent.is_some() || j.client != snapshot.client)
        {
            return Err("duplicate_job");
        }
        if self.cfg.farm.is_empty() {
            return Err("no_target");
        }
        Ok(())
    }

    fn on_migrate_from_client(&mut self, ctx: &mut dyn Context, snapshot: AgentSnapshot) {
        let reply_to: EntityId = snapshot.client.clone().into();
        if let Err(reason) = self.precheck_migration(&snapshot) {
            let ack = MigrateAck {
                agent_id: snapshot.agent_id.clone(),
                accepted: false,
                reason: Some(reason.into()),
                node: None,
            };
            self.send_to(ctx, &reply_to, ack);
            return;
        }
        self.seen_agents.insert(snapshot.agent_id.clone());
        self.registry.jobs.insert(
            snapshot.job.job_id.clone(),
            JobEntry {
                status: JobStatus::Submitted,
                client: snapshot.client.clone(),
                agent: Some(snapshot.agent_id.clone()),
                twin: Some(snapshot.twin_id.clone()),
                node: None,
            },
        );
        self.next_placement += 1;
        let id = self.next_placement;
        let mut awaiting = BTreeSet::new();
        let members: Vec<_> = self
            .cfg
            .farm
            .iter()
            .map(|m| (m.id.clone(), m.endpoint.clone()))
            .collect();
        for (node, endpoint) in members {
            let env = self
                .ids
                .envelope(&self.cfg.id, &node, LoadQuery { node: node.clone() });
            if ctx.send(&endpoint, env).is_ok() {
                awaiting.insert(node);
            }
        }
        let timer = self.timers.arm(
            ctx,
            self.cfg.heartbeat_interval_ms * MICROS_PER_MS,
            ServerTimer::Gather(id),
        );
        self.placements.insert(
            id,
            Placement {
                snapshot,
                awaiting,
                reports: Vec::new(),
                timer,
            },
        );
        self.maybe_finish_placement(ctx, id);
    }

    fn on_load_reply(&mut self, ctx: &mut dyn Context, report: LoadReport) {
        if let Some(entry) = self.registry.nodes.get_mut(&report.node) {
            entry.last_report = Some(report.clone());
        }
        let ids: Vec<u64> = self
            .placements
            .iter()
            .filter(|(_, p)| p.awaiting.contains(&report.node))
            .map(|(id, _)| *id)
            .collect();
        for id in ids {
            if let Some(p) = self.placements.get_mut(&id) {
                p.awaiting.remove(&report.node);
                p.reports.push(report.clone());
            }
            self.maybe_finish_placement(ctx, id);
        }
    }

    fn maybe_finish_placement(&mut self, ctx: &mut dyn Context, id: u64) {
        if self
            .placements
            .get(&id)
            .is_some_and(|p| p.awaiting.is_empty())
        {
            self.finish_placement(ctx, id);
        }
    }

    fn finish_placement(&mut self, ctx: &mut dyn Context, id: u64) {
        let Some(p) = self.placements.remove(&id) else {
            return;
        };
        self.timers.cancel(p.timer);
        let mut snapshot = p.snapshot;
        let job = snapshot.job.job_id.clone();
        let client: EntityId = snapshot.client.clone().into();
        let mut reports = p.reports;
        reports.sort_by(|a, b| a.node.cmp(&b.node));
        let view = FarmView::new(
            self.cfg.id.clone(),
            reports,
            &self.cfg.thresholds,
            ctx.now_ms(),
        );
        let mut exclude = BTreeSet::new();
        loop {
            let Ok(target) = select_target(&view, &exclude, &self.cfg.thresholds) else {
                self.registry.jobs.remove(&job);
                self.seen_agents.remove(&snapshot.agent_id);
                let ack = MigrateAck {
                    agent_id: snapshot.agent_id.clone(),
                    accepted: false,
                    reason: Some("no_target".into()),
                    node: None,
                };
                self.send_to(ctx, &client, ack);
                return;
            };
            let before = snapshot.status.clone();
            let mut forwarded = snapshot.clone();
            forwarded
                .advance(&LifecycleEvent::MigrateStart)
                .expect("prechecked Submitted status");
            let endpoint = self.registry.nodes[&target].endpoint.clone();
            let env = self.ids.envelope(
                &self.cfg.id,
                &target,
                MigrateAgent {
                    snapshot: forwarded.clone(),
                    result: None,
                },
            );
            if ctx.send(&endpoint, env).is_err() {
                exclude.insert(target);
                continue;
            }
            self.note_status(ctx, &job, &before, &forwarded.status);
            ctx.note(Note::Migrate {
                job: job.clone(),
                from: self.cfg.id.to_string(),
                to: target.to_string(),
            });
            snapshot = forwarded;
            if let Some(entry) = self.registry.jobs.get_mut(&job) {
                entry.status = snapshot.status.clone();
                entry.node = Some(target.clone());
            }
            let ack = MigrateAck {
                agent_id: snapshot.agent_id.clone(),
                accepted: true,
                reason: None,
                node: Some(target),
            };
            self.send_to(ctx, &client, ack);
            self.arm_heartbeat(ctx);
            return;
        }
    }

    /// Takes custody of a finished agent whose client could not be reached.
    fn on_park(
        &mut self,
        ctx: &mut dyn Context,
        sender: &EntityId,
        snapshot: AgentSnapshot,
        result: ResultPayload,
    ) {
        let job = snapshot.job.job_id.clone();
        let agent_id = snapshot.agent_id.clone();
        ctx.note(Note::Held {
            job: job.clone(),
            server: self.cfg.id.clone(),
        });
        let entry = self
            .registry
            .jobs
            .entry(job.clone())
            .or_insert_with(|| JobEntry {
                status: snapshot.status.clone(),
                client: snapshot.client.clone(),
                agent: Some(snapshot.agent_id.clone()),
                twin: Some(snapshot.twin_id.clone()),
                node: None,
            });
        entry.status = snapshot.status.clone();
        if let JobStatus::Running { node } = &snapshot.status {
            if self.registry.nodes.contains_key(node) {
                entry.node = Some(node.clone());
            }
        }
        self.held.insert(
            job.clone(),
            Held {
                snapshot,
                result,
                in_flight: false,
            },
        );
        self.send_to(
            ctx,
            sender,
            MigrateAck {
                agent_id,
                accepted: true,
                reason: None,
                node: None,
            },
        );
        self.try_bring_back(ctx, &job);
    }

    fn try_bring_back(&mut self, ctx: &mut dyn Context, job: &JobId) {
        let Some(h) = self.held.get(job) else { return };
        let Some(endpoint) = self
            .registry
            .clients
            .get(&h.snapshot.client)
            .map(|c| c.endpoint.clone())
        else {
            return;
        };
        let twin = h.snapshot.twin_id.clone();
        let msg = MigrateAgent {
            snapshot: h.snapshot.clone(),
            result: Some(h.result.clone()),
        };
        let env = self.ids.envelope(&self.cfg.id, twin, msg);
        if ctx.send(&endpoint, env).is_ok() {
            ctx.note(Note::ResultSent {
                job: job.clone(),
                from: self.cfg.id.to_string(),
                mode: "bring_back",
            });
            if let Some(h) = self.held.get_mut(job) {
                h.in_flight = true;
            }
            self.next_bring_back += 1;
            let seq = self.next_bring_back;
            self.timers
                .arm(ctx, self.cfg.request_timeout(), ServerTimer::BringBack(seq));
            self.held_seq.insert(seq, job.clone());
        }
    }

    fn on_migrate_ack(&mut self, ctx: &mut dyn Context, ack: MigrateAck) {
        let held_job = self
            .held
            .iter()
            .find(|(_, h)| h.snapshot.agent_id == ack.agent_id && h.in_flight)
            .map(|(j, _)| j.clone());
        if let Some(job) = held_job {
            // the client has the agent now, whether it kept it or already
            // had the result
            self.held.remove(&job);
            self.held_seq.retain(|_, j| j != &job);
            if let Some(entry) = self.registry.jobs.get_mut(&job) {
                entry.status = JobStatus::Completed;
            }
            self.disarm_idle_heartbeat();
            return;
        }
        if !ack.accepted {
            let agent: EntityId = ack.agent_id.clone().into();
            let found = self
                .registry
                .job_by_agent(&agent)
                .map(|(j, e)| (j.clone(), e.clone()));
            if let Some((job, entry)) = found {
                if !entry.status.is_terminal() {
                    let failed =
                        JobStatus::failed(ack.reason.unwrap_or_else(|| "migration_refused".into()));
                    self.set_failed(ctx, &job, failed);
                }
            }
        }
    }

    fn set_failed(&mut self, ctx: &mut dyn Context, job: &JobId, failed: JobStatus) {
        let Some(entry) = self.registry.jobs.get_mut(job) else {
            return;
        };
        let before = std::mem::replace(&mut entry.status, failed.clone());
        let twin = entry.twin.clone();
        let node = entry.node.clone();
        self.note_status(ctx, job, &before, &failed);
        if let Some(twin) = twin {
            let report = StatusReport {
                job_id: job.clone(),
                status: failed,
                node,
            };
            self.send_to(ctx, &twin.into(), report);
        }
    }

    fn on_status_query(&mut self, ctx: &mut dyn Context, sender: &EntityId, job: JobId) {
        match self.registry.jobs.get(&job) {
            Some(entry) => {
                let report = StatusReport {
                    job_id: job,
                    status: entry.status.clone(),
                    node: entry.node.clone(),
                };
                self.send_to(ctx, sender, report);
            }
            None => self.send_error(
                ctx,
                sender,
                codes::UNKNOWN_JOB,
                format!("no job {job}"),
                Some(job),
            ),
        }
    }

    fn on_kill(&mut self, ctx: &mut dyn Context, env: Envelope, job: JobId) {
        let sender = env.sender.clone();
        let Some(entry) = self.registry.jobs.get(&job).cloned() else {
            self.send_error(
                ctx,
                &sender,
                codes::UNKNOWN_JOB,
                format!("no job {job}"),
                Some(job),
            );
            return;
        };
        if entry.status.is_terminal() || self.held.contains_key(&job) {
            self.send_error(
                ctx,
                &sender,
                codes::ALREADY_TERMINAL,
                format!("job {job} already finished"),
                Some(job),
            );
            return;
        }
        let placing = self
            .placements
            .iter()
            .find(|(_, p)| p.snapshot.job.job_id == job)
            .map(|(id, _)| *id);
        if entry.node.is_none() || placing.is_some() {
            if let Some(id) = placing {
                if let Some(p) = self.placements.remove(&id) {
                    self.timers.cancel(p.timer);
                }
            }
            let before = entry.status.clone();
            if let Some(e) = self.registry.jobs.get_mut(&job) {
                e.status = JobStatus::Killed;
            }
            self.note_status(ctx, &job, &before, &JobStatus::Killed);
            self.send_to(
                ctx,
                &sender,
                KillAck {
                    job_id: job,
                    was_running: false,
                },
            );
            return;
        }
        // on a node: hand the kill to the agent there
        let agent = entry.agent.clone().expect("placed jobs have an agent");
        let node = entry.node.clone().expect("checked above");
        let endpoint = self.registry.nodes[&node].endpoint.clone();
        let fwd = Envelope {
            recipient: agent.into(),
            ..env
        };
        if ctx.send(&endpoint, fwd).is_err() {
            self.send_error(
                ctx,
                &sender,
                codes::UNREACHABLE,
                format!("node {node} unreachable"),
                Some(job),
            );
        }
    }

    fn on_location_update(
        &mut self,
        ctx: &mut dyn Context,
        agent: AgentId,
        node: NodeId,
        status: JobStatus,
    ) {
        let agent_e: EntityId = agent.into();
        let Some(job) = self.registry.job_by_agent(&agent_e).map(|(j, _)| j.clone()) else {
            return;
        };
        let known = self.registry.nodes.contains_key(&node);
        if let Some(entry) = self.registry.jobs.get_mut(&job) {
            if entry.status.is_terminal() {
                return;
            }
            if known {
                entry.node = Some(node);
            }
            if !self.held.contains_key(&job) {
                entry.status = status;
            }
        }
        self.disarm_idle_heartbeat();
        let _ = ctx;
    }

    fn active_nodes(&self) -> BTreeSet<NodeId> {
        self.registry
            .jobs
            .iter()
            .filter(|(j, e)| !e.status.is_terminal() && !self.held.contains_key(*j))
            .filter_map(|(_, e)| e.node.clone())
            .collect()
    }

    fn arm_heartbeat(&mut self, ctx: &mut dyn Context) {
        if !self.heartbeat_armed && !self.active_nodes().is_empty() {
            self.heartbeat_armed = true;
            self.timers.arm(
                ctx,
                self.cfg.heartbeat_interval_ms * MICROS_PER_MS,
                ServerTimer::Heartbeat,
            );
        }
    }

    fn disarm_idle_heartbeat(&mut self) {
        if self.heartbeat_armed && self.active_nodes().is_empty() {
            self.timers.cancel_where(|t| *t == ServerTimer::Heartbeat);
            self.heartbeat_armed = false;
            self.heartbeats.clear();
        }
    }

    fn heartbeat_tick(&mut self, ctx: &mut dyn Context) {
        self.heartbeat_armed = false;
        let active = self.active_nodes();
        self.heartbeats.retain(|n, _| active.contains(n));
        for node in &active {
            let st = self.heartbeats.entry(node.clone()).or_default();
            if st.awaiting {
                st.misses += 1;
            }
            let endpoint = self.registry.nodes[node].endpoint.clone();
            let env = self.ids.envelope(
                &self.cfg.id,
                node,
                Heartbeat {
                    from: self.cfg.id.clone().into(),
                },
            );
            let st = self.heartbeats.get_mut(node).expect("inserted above");
            if ctx.send(&endpoint, env).is_err() {
                st.misses += 1;
            }
            st.awaiting = true;
            if st.misses >= self.cfg.heartbeat_miss_limit {
                self.node_lost(ctx, node);
            }
        }
        self.arm_heartbeat(ctx);
    }

    fn node_lost(&mut self, ctx: &mut dyn Context, node: &NodeId) {
        ctx.note(Note::NodeLost { node: node.clone() });
        self.heartbeats.remove(node);
        let jobs: Vec<JobId> = self
            .registry
            .jobs
            .iter()
            .filter(|(j, e)| {
                e.node.as_ref() == Some(node)
                    && !e.status.is_terminal()
                    && !self.held.contains_key(*j)
            })
            .map(|(j, _)| j.clone())
            .collect();
        for job in jobs {
            self.set_failed(ctx, &job, JobStatus::failed("node_lost"));
        }
    }
}

impl Actor for MainContainer {
    fn id(&self) -> EntityId {
        self.cfg.id.clone().into()
    }

    fn endpoint(&self) -> &str {
        &self.cfg.listen
    }

    fn on_message(&mut self, ctx: &mut dyn Context, env: Envelope) {
        if env.recipient != self.cfg.id {
            let sender = env.sender.clone();
            let job = match &env.body {
                Body::Kill(k) => Some(k.job_id.clone()),
                Body::StatusQuery(q) => Some(q.job_id.clone()),
                Body::ResultAck(a) => Some(a.job_id.clone()),
                _ => None,
            };
            match self.route(ctx, env) {
                Ok(()) => {}
                Err(RouteError::UnknownRecipient(r)) => self.send_error(
                    ctx,
                    &sender,
                    codes::UNKNOWN_RECIPIENT,
                    format!("unknown recipient {r}"),
                    job,
                ),
                Err(RouteError::Unreachable(r)) => self.send_error(
                    ctx,
                    &sender,
                    codes::UNREACHABLE,
                    format!("{r} unreachable"),
                    job,
                ),
            }
            return;
        }
        let sender = env.sender.clone();
        match env.body {
            Body::RegisterClient(r) => self.on_register(ctx, r.client, r.endpoint),
            Body::SubmitJob(s) => self.on_submit(ctx, &sender, s.spec),
            Body::MigrateAgent(m) => match m.result {
                Some(result) => self.on_park(ctx, &sender, m.snapshot, result),
                None => self.on_migrate_from_client(ctx, m.snapshot),
            },
            Body::MigrateAck(ack) => self.on_migrate_ack(ctx, ack),
            Body::LoadReply(r) => self.on_load_reply(ctx, r.report),
            Body::StatusQuery(q) => self.on_status_query(ctx, &sender, q.job_id),
            Body::Kill(Kill { ref job_id }) => {
                let job = job_id.clone();
                self.on_kill(ctx, env, job)
            }
            Body::LocationUpdate(u) => self.on_location_update(ctx, u.agent_id, u.node, u.status),
            Body::Heartbeat(_) => {
                self.send_to(
                    ctx,
                    &sender,
                    HeartbeatAck {
                        from: self.cfg.id.clone().into(),
                    },
                );
            }
            Body::HeartbeatAck(_) => {
                if let Some(st) = self.heartbeats.iter_mut().find(|(n, _)| sender == **n) {
                    st.1.awaiting = false;
                    st.1.misses = 0;
                }
            }
            Body::ProtocolError(e) => {
                ctx.note(Note::Info(format!(
                    "{}: protocol error from {sender}: {} {}",
                    self.cfg.id, e.code, e.detail
                )));
            }
            other => {
                let kind = other.kind().as_str();
                self.send_error(
                    ctx,
                    &sender,
                    codes::UNEXPECTED,
                    format!("server does not accept {kind}"),
                    None,
                );
            }
        }
    }

    fn on_timer(&mut self, ctx: &mut dyn Context, token: u64) {
        match self.timers.fire(token) {
            Some(ServerTimer::Gather(id)) => {
                if let Some(p) = self.placements.get_mut(&id) {
                    p.awaiting.clear();
                }
                self.finish_placement(ctx, id);
            }
            Some(ServerTimer::Heartbeat) => self.heartbeat_tick(ctx),
            Some(ServerTimer::BringBack(seq)) => {
                if let Some(job) = self.held_seq.remove(&seq) {
                    if let Some(h) = self.held.get_mut(&job) {
                        h.in_flight = false;
                    }
                }
            }
            None => {}
        }
    }
}
