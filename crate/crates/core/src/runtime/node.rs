//! Resource node container: hosts mobile agents, runs their jobs, and
//! moves them on when overloaded.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::balancer::FarmView;
use crate::model::{
    AgentId, Endpoint, EntityId, JobId, JobStatus, LifecycleEvent, LoadReport, LoadThresholds,
    NodeId, ResultPayload,
};
use crate::wire::{
    codes, Body, Envelope, HeartbeatAck, KillAck, LoadQuery, LoadReply, LocationUpdate, MigrateAck,
    MigrateAgent, ProtocolError, ResultTransfer, StatusReport,
};

use super::agent::{MobileAgent, RelocationDecision};
use super::server::ServerConfig;
use super::{
    Actor, Context, Micros, MsgIds, Note, Timers, WorkOutcome, DEFAULT_MAX_HOPS, MICROS_PER_MS,
};

/// Memory budget against which held results are measured.
pub const MEM_BUDGET_BYTES: u64 = 64 * 1024 * 1024;

/// Window over which simulated CPU utilization is averaged.
const CPU_WINDOW: Micros = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerRef {
    pub id: NodeId,
    pub endpoint: Endpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub id: NodeId,
    pub endpoint: Endpoint,
    pub capacity: u32,
    pub speed_factor: f64,
    pub server: PeerRef,
    /// Other members of the same farm; relocation targets.
    pub peers: Vec<PeerRef>,
    pub thresholds: LoadThresholds,
    pub max_hops: u32,
    pub request_timeout_ms: u64,
}

impl NodeConfig {
    /// Derives the configuration of farm member `id` from its server's
    /// configuration.
    pub fn from_server(server: &ServerConfig, id: &NodeId) -> Option<NodeConfig> {
        let me = server.farm.iter().find(|m| &m.id == id)?;
        Some(NodeConfig {
            id: me.id.clone(),
            endpoint: me.endpoint.clone(),
            capacity: me.capacity,
            speed_factor: me.speed_factor,
            server: PeerRef {
                id: server.id.clone(),
                endpoint: server.listen.clone(),
            },
            peers: server
                .farm
                .iter()
                .filter(|m| &m.id != id)
                .map(|m| PeerRef {
                    id: m.id.clone(),
                    endpoint: m.endpoint.clone(),
                })
                .collect(),
            thresholds: server.thresholds,
            max_hops: server.max_hops,
            request_timeout_ms: server.request_timeout() / MICROS_PER_MS,
        })
    }

    pub fn standalone(id: NodeId, endpoint: impl Into<Endpoint>, server: PeerRef) -> NodeConfig {
        NodeConfig {
            id,
            endpoint: endpoint.into(),
            capacity: 1,
            speed_factor: 1.0,
            server,
            peers: Vec::new(),
            thresholds: LoadThresholds::default(),
            max_hops: DEFAULT_MAX_HOPS,
            request_timeout_ms: 3000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Delivery {
    Direct,
    BringBack,
    Park,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Phase {
    Gathering(u64),
    Queued,
    Executing(u64),
    Delivering(Delivery, u64),
}

#[derive(Debug)]
struct Resident {
    agent: MobileAgent,
    phase: Phase,
    result_bytes: u64,
}

#[derive(Debug)]
struct Gather {
    agent: AgentId,
    own: LoadReport,
    awaiting: BTreeSet<NodeId>,
    reports: Vec<LoadReport>,
    timer: u64,
}

/// What a node remembers about an agent that is no longer resident.
#[derive(Debug, Clone, PartialEq)]
enum Gone {
    Moved { to: NodeId, endpoint: Endpoint },
    Finished { agent: AgentId, status: JobStatus },
    Parked { agent: AgentId, status: JobStatus },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NodeTimer {
    Gather(u64),
    DeliveryTimeout,
}

pub struct NodeContainer {
    cfg: NodeConfig,
    residents: BTreeMap<AgentId, Resident>,
    queue: VecDeque<AgentId>,
    executing: BTreeMap<u64, AgentId>,
    next_ticket: u64,
    gathers: BTreeMap<u64, Gather>,
    next_gather: u64,
    gone: BTreeMap<JobId, Gone>,
    departed: BTreeMap<AgentId, JobId>,
    /// (ticket, start, end) of execution intervals, for simulated CPU
    /// utilization.
    busy: Vec<(u64, Micros, Option<Micros>)>,
    ids: MsgIds,
    timers: Timers<(NodeTimer, AgentId)>,
}

impl NodeContainer {
    pub fn new(cfg: NodeConfig) -> Self {
        NodeContainer {
            cfg,
            residents: BTreeMap::new(),
            queue: VecDeque::new(),
            executing: BTreeMap::new(),
            next_ticket: 0,
            gathers: BTreeMap::new(),
            next_gather: 0,
            gone: BTreeMap::new(),
            departed: BTreeMap::new(),
            busy: Vec::new(),
            ids: MsgIds::default(),
            timers: Timers::default(),
        }
    }

    pub fn config(&self) -> &NodeConfig {
        &self.cfg
    }

    pub fn node_id(&self) -> &NodeId {
        &self.cfg.id
    }

    /// Agents currently hosted here.
    pub fn resident_agents(&self) -> impl Iterator<Item = &AgentId> {
        self.residents.keys()
    }

    fn held_bytes(&self) -> u64 {
        self.residents.values().map(|r| r.result_bytes).sum()
    }

    fn cpu_util(&self, now: Micros) -> f64 {
        let start = now.saturating_sub(CPU_WINDOW);
        let window = (now - start).max(1) as f64;
        let busy: u64 = self
            .busy
            .iter()
            .map(|(_, s, e)| e.unwrap_or(now).min(now).saturating_sub((*s).max(start)))
            .sum();
        (busy as f64 / (window * self.cfg.capacity.max(1) as f64)).min(1.0)
    }

    /// Current load of this node.
    pub fn sample_load(&self, ctx: &dyn Context) -> LoadReport {
        let now_ms = ctx.now_ms();
        if let Some(mut r) = ctx.scripted_load(&self.cfg.id) {
            r.node = self.cfg.id.clone();
            r.sampled_at = now_ms;
            return r;
        }
        let running = self.executing.len() as u32;
        let cpu_util = if ctx.simulated() {
            self.cpu_util(ctx.now())
        } else {
            running as f64 / self.cfg.capacity.max(1) as f64
        };
        LoadReport {
            node: self.cfg.id.clone(),
            cpu_util: cpu_util.min(1.0),
            queue_depth: running + self.queue.len() as u32,
            capacity: self.cfg.capacity,
            mem_util: (self.held_bytes() as f64 / MEM_BUDGET_BYTES as f64).min(1.0),
            sampled_at: now_ms,
        }
    }

    fn endpoint_for(&self, id: &EntityId) -> Endpoint {
        if *id == self.cfg.server.id {
            return self.cfg.server.endpoint.clone();
        }
        if let Some(p) = self.cfg.peers.iter().find(|p| *id == p.id) {
            return p.endpoint.clone();
        }
        if let Some(r) = self
            .residents
            .values()
            .find(|r| *id == r.agent.snapshot.twin_id)
        {
            return r.agent.snapshot.home_endpoint.clone();
        }
        // the server routes everything else
        self.cfg.server.endpoint.clone()
    }

    fn reply(
        &mut self,
        ctx: &mut dyn Context,
        from: EntityId,
        to: &EntityId,
        body: impl Into<Body>,
    ) -> bool {
        let endpoint = self.endpoint_for(to);
        let env = self.ids.envelope(from, to.clone(), body);
        if ctx.send(&endpoint, env.clone()).is_ok() {
            return true;
        }
        // a client may have come back on a new endpoint; the server knows it
        endpoint != self.cfg.server.endpoint
            && ctx.send(&self.cfg.server.endpoint.clone(), env).is_ok()
    }

    fn me(&self) -> EntityId {
        self.cfg.id.clone().into()
    }

    fn error(
        &mut self,
        ctx: &mut dyn Context,
        to: &EntityId,
        code: &str,
        detail: String,
        job: Option<JobId>,
    ) {
        let me = self.me();
        self.reply(
            ctx,
            me,
            to,
            ProtocolError {
                code: code.into(),
                detail,
                job_id: job,
            },
        );
    }

    fn transition(
        &mut self,
        ctx: &mut dyn Context,
        agent: &AgentId,
        event: LifecycleEvent,
    ) -> bool {
        let Some(r) = self.residents.get_mut(agent) else {
            return false;
        };
        let before = r.agent.snapshot.status.clone();
        if r.agent.snapshot.advance(&event).is_err() {
            return false;
        }
        let after = r.agent.snapshot.status.clone();
        let job = r.agent.job_id().clone();
        ctx.note(Note::Status {
            job,
            at: self.cfg.id.to_string(),
            from: before,
            to: after,
        });
        true
    }

    /// Tells the twin and the server where the agent is and what it is doing.
    fn announce(&mut self, ctx: &mut dyn Context, agent: &AgentId, to_twin: bool) {
        let Some(r) = self.residents.get(agent) else {
            return;
        };
        let snap = &r.agent.snapshot;
        let update = LocationUpdate {
            agent_id: snap.agent_id.clone(),
            node: self.cfg.id.clone(),
            status: snap.status.clone(),
            endpoint: self.cfg.endpoint.clone(),
            hop: snap.hop_count,
        };
        let twin = snap.twin_id.clone();
        let home = snap.home_endpoint.clone();
        if to_twin {
            let env = self.ids.envelope(agent.clone(), twin, update.clone());
            let _ = ctx.send(&home, env);
        }
        let env = self
            .ids
            .envelope(agent.clone(), &self.cfg.server.id, update);
        let endpoint = self.cfg.server.endpoint.clone();
        let _ = ctx.send(&endpoint, env);
    }

    fn on_arrival(&mut self, ctx: &mut dyn Context, sender: &EntityId, mut msg: MigrateAgent) {
        let agent_id = msg.snapshot.agent_id.clone();
        let refuse = |reason: &str| MigrateAck {
            agent_id: agent_id.clone(),
            accepted: false,
            reason: Some(reason.into()),
            node: Some(self.cfg.id.clone()),
        };
        let reason = if self.residents.contains_key(&agent_id) {
            Some("duplicate_agent")
        } else if !msg.snapshot.is_consistent() {
            Some("bad_snapshot")
        } else if msg.result.is_some() {
            Some("unexpected_result")
        } else {
            None
        };
        let before = msg.snapshot.status.clone();
        if reason.is_none()
            && msg
                .snapshot
                .advance(&LifecycleEvent::MigrateDone(self.cfg.id.clone()))
                .is_err()
        {
            let ack = refuse("bad_status");
            let me = self.me();
            self.reply(ctx, me, sender, ack);
            return;
        }
        if let Some(reason) = reason {
            let ack = refuse(reason);
            let me = self.me();
            self.reply(ctx, me, sender, ack);
            return;
        }
        let job = msg.snapshot.job.job_id.clone();
        ctx.note(Note::Status {
            job: job.clone(),
            at: self.cfg.id.to_string(),
            from: before,
            to: msg.snapshot.status.clone(),
        });
        msg.snapshot.record_hop(self.cfg.id.as_str());
        self.gone.remove(&job);
        self.departed.remove(&agent_id);
        let own = self.sample_load(ctx);
        self.residents.insert(
            agent_id.clone(),
            Resident {
                agent: MobileAgent::new(msg.snapshot, self.cfg.max_hops),
                phase: Phase::Queued,
                result_bytes: 0,
            },
        );
        let ack = MigrateAck {
            agent_id: agent_id.clone(),
            accepted: true,
            reason: None,
            node: Some(self.cfg.id.clone()),
        };
        let me = self.me();
        self.reply(ctx, me, sender, ack);
        self.announce(ctx, &agent_id, true);

        let agent = &self.residents[&agent_id].agent;
        if agent.wants_to_leave(&own, &self.cfg.thresholds).is_some() || self.cfg.peers.is_empty() {
            self.admit(ctx, &agent_id);
            return;
        }
        // overloaded: poll the rest of the farm before deciding
        self.next_gather += 1;
        let gid = self.next_gather;
        let mut awaiting = BTreeSet::new();
        let peers = self.cfg.peers.clone();
        for p in peers {
            let env = self
                .ids
                .envelope(&self.cfg.id, &p.id, LoadQuery { node: p.id.clone() });
            if ctx.send(&p.endpoint, env).is_ok() {
                awaiting.insert(p.id);
            }
        }
        let timer = self.timers.arm(
            ctx,
            self.cfg.request_timeout_ms * MICROS_PER_MS / 3,
            (NodeTimer::Gather(gid), agent_id.clone()),
        );
        self.residents.get_mut(&agent_id).expect("inserted").phase = Phase::Gathering(gid);
        self.gathers.insert(
            gid,
            Gather {
                agent: agent_id,
                own,
                awaiting,
                reports: Vec::new(),
                timer,
            },
        );
        if self.gathers[&gid].awaiting.is_empty() {
            self.finish_gather(ctx, gid);
        }
    }

    fn on_load_reply(&mut self, ctx: &mut dyn Context, report: LoadReport) {
        let ids: Vec<u64> = self
            .gathers
            .iter()
            .filter(|(_, g)| g.awaiting.contains(&report.node))
            .map(|(id, _)| *id)
            .collect();
        for gid in ids {
            let g = self.gathers.get_mut(&gid).expect("listed");
            g.awaiting.remove(&report.node);
            g.reports.push(report.clone());
            if g.awaiting.is_empty() {
                self.finish_gather(ctx, gid);
            }
        }
    }

    fn finish_gather(&mut self, ctx: &mut dyn Context, gid: u64) {
        let Some(g) = self.gathers.remove(&gid) else {
            return;
        };
        self.timers.cancel(g.timer);
        let Some(r) = self.residents.get(&g.agent) else {
            return;
        };
        if r.phase != Phase::Gathering(gid) {
            return;
        }
        let mut reports = g.reports;
        reports.push(g.own.clone());
        reports.sort_by(|a, b| a.node.cmp(&b.node));
        let view = FarmView::new(
            self.cfg.server.id.clone(),
            reports,
            &self.cfg.thresholds,
            ctx.now_ms(),
        );
        let decision = r
            .agent
            .relocation_decision(&g.own, &view, &self.cfg.thresholds);
        if let RelocationDecision::Move(target) = decision {
            if self.relocate(ctx, &g.agent, &target) {
                return;
            }
        }
        self.admit(ctx, &g.agent);
    }

    /// Sends the agent on to `target`. The move is committed only once the
    /// send has gone out.
    fn relocate(&mut self, ctx: &mut dyn Context, agent: &AgentId, target: &NodeId) -> bool {
        let Some(endpoint) = self
            .cfg
            .peers
            .iter()
            .find(|p| &p.id == target)
            .map(|p| p.endpoint.clone())
        else {
            return false;
        };
        let r = &self.residents[agent];
        let mut moved = r.agent.snapshot.clone();
        let event = LifecycleEvent::Relocate {
            from: self.cfg.id.clone(),
            to: target.clone(),
        };
        if moved.advance(&event).is_err() {
            return false;
        }
        let env = self.ids.envelope(
            &self.cfg.id,
            target,
            MigrateAgent {
                snapshot: moved,
                result: None,
            },
        );
        if ctx.send(&endpoint, env).is_err() {
            return false;
        }
        self.transition(ctx, agent, event);
        let job = self.residents[agent].agent.job_id().clone();
        ctx.note(Note::Relocate {
            job: job.clone(),
            from: self.cfg.id.clone(),
            to: target.clone(),
        });
        self.announce(ctx, agent, false);
        self.residents.remove(agent);
        self.departed.insert(agent.clone(), job.clone());
        self.gone.insert(
            job,
            Gone::Moved {
                to: target.clone(),
                endpoint,
            },
        );
        true
    }

    fn admit(&mut self, ctx: &mut dyn Context, agent: &AgentId) {
        if let Some(r) = self.residents.get_mut(agent) {
            r.phase = Phase::Queued;
            self.queue.push_back(agent.clone());
        }
        self.pump(ctx);
    }

    /// Starts queued agents while slots are free.
    fn pump(&mut self, ctx: &mut dyn Context) {
        while (self.executing.len() as u32) < self.cfg.capacity.max(1) {
            let Some(agent) = self.queue.pop_front() else {
                break;
            };
            let Some(r) = self.residents.get_mut(&agent) else {
                continue;
            };
            if r.phase != Phase::Queued {
                continue;
            }
            self.next_ticket += 1;
            let ticket = self.next_ticket;
            r.phase = Phase::Executing(ticket);
            let spec = r.agent.snapshot.job.clone();
            self.executing.insert(ticket, agent.clone());
            self.busy.push((ticket, ctx.now(), None));
            ctx.note(Note::WorkStart {
                job: spec.job_id.clone(),
                node: self.cfg.id.clone(),
            });
            ctx.start_work(ticket, &spec, self.cfg.speed_factor);
        }
    }

    fn close_busy(&mut self, ticket: u64, now: Micros) {
        for (t, _, end) in &mut self.busy {
            if *t == ticket && end.is_none() {
                *end = Some(now);
            }
        }
        let horizon = now.saturating_sub(CPU_WINDOW);
        self.busy
            .retain(|(_, _, e)| e.is_none_or(|end| end >= horizon));
    }

    fn release_slot(&mut self, ctx: &mut dyn Context, ticket: u64) {
        self.executing.remove(&ticket);
        self.close_busy(ticket, ctx.now());
        self.pump(ctx);
    }

    fn finish(&mut self, ctx: &mut dyn Context, agent: &AgentId, parked: bool) {
        let Some(r) = self.residents.remove(agent) else {
            return;
        };
        let job = r.agent.job_id().clone();
        let status = r.agent.snapshot.status.clone();
        let gone = if parked {
            Gone::Parked {
                agent: agent.clone(),
                status,
            }
        } else {
            Gone::Finished {
                agent: agent.clone(),
                status,
            }
        };
        self.gone.insert(job, gone);
        self.timers.cancel_where(|(_, a)| a == agent);
        let _ = ctx;
    }

    fn fail(&mut self, ctx: &mut dyn Context, agent: &AgentId, reason: &str) {
        if self.transition(ctx, agent, LifecycleEvent::Fail(reason.into())) {
            self.announce(ctx, agent, true);
        }
        self.finish(ctx, agent, false);
    }

    fn on_work_done_inner(&mut self, ctx: &mut dyn Context, ticket: u64, outcome: WorkOutcome) {
        let agent = self.executing.get(&ticket).cloned();
        self.release_slot(ctx, ticket);
        let Some(agent) = agent else {
            // killed while running
            return;
        };
        let Some(r) = self.residents.get(&agent) else {
            return;
        };
        if r.phase != Phase::Executing(ticket) {
            return;
        }
        let job = r.agent.job_id().clone();
        ctx.note(Note::WorkEnd {
            job: job.clone(),
            node: self.cfg.id.clone(),
            killed: false,
        });
        match outcome {
            WorkOutcome::Done { data, .. } => {
                let payload = ResultPayload {
                    job_id: job,
                    node: self.cfg.id.clone(),
                    data,
                };
                let bytes = serde_json::to_vec(&payload).map_or(0, |b| b.len() as u64);
                let r = self.residents.get_mut(&agent).expect("checked");
                r.result_bytes = bytes;
                r.agent.partial = Some(payload);
                self.deliver(ctx, &agent);
            }
            WorkOutcome::InputMissing => self.fail(ctx, &agent, "input_missing"),
            WorkOutcome::Failed(e) => self.fail(ctx, &agent, &e),
        }
    }

    fn deliver(&mut self, ctx: &mut dyn Context, agent: &AgentId) {
        let r = &self.residents[agent];
        let snap = r.agent.snapshot.clone();
        let payload = r.agent.partial.clone().expect("delivering a finished job");
        let job = payload.job_id.clone();
        let timeout = self.cfg.request_timeout_ms * MICROS_PER_MS;
        let mode = snap.job.delivery_mode;
        use crate::model::DeliveryMode as M;
        let direct_ok = match mode {
            M::Direct | M::Auto => {
                let env = self.ids.envelope(
                    agent.clone(),
                    snap.twin_id.clone(),
                    ResultTransfer {
                        payload: payload.clone(),
                    },
                );
                if ctx.send(&snap.home_endpoint, env).is_ok() {
                    Some(Delivery::Direct)
                } else if mode == M::Direct {
                    self.fail(ctx, agent, "client_unreachable");
                    return;
                } else {
                    None
                }
            }
            M::BringBack => {
                let env = self.ids.envelope(
                    agent.clone(),
                    snap.twin_id.clone(),
                    MigrateAgent {
                        snapshot: snap.clone(),
                        result: Some(payload.clone()),
                    },
                );
                ctx.send(&snap.home_endpoint, env)
                    .is_ok()
                    .then_some(Delivery::BringBack)
            }
        };
        let delivery = match direct_ok {
            Some(d) => d,
            None => {
                if !self.park(ctx, agent) {
                    return;
                }
                Delivery::Park
            }
        };
        let mode_name = match delivery {
            Delivery::Direct => "direct",
            Delivery::BringBack => "bring_back",
            Delivery::Park => "park",
        };
        ctx.note(Note::ResultSent {
            job,
            from: self.cfg.id.to_string(),
            mode: mode_name,
        });
        let token = self
            .timers
            .arm(ctx, timeout, (NodeTimer::DeliveryTimeout, agent.clone()));
        self.residents.get_mut(agent).expect("resident").phase = Phase::Delivering(delivery, token);
    }

    /// Hands the finished agent to the server for safekeeping.
    fn park(&mut self, ctx: &mut dyn Context, agent: &AgentId) -> bool {
        let r = &self.residents[agent];
        let msg = MigrateAgent {
            snapshot: r.agent.snapshot.clone(),
            result: r.agent.partial.clone(),
        };
        let env = self.ids.envelope(agent.clone(), &self.cfg.server.id, msg);
        let endpoint = self.cfg.server.endpoint.clone();
        if ctx.send(&endpoint, env).is_ok() {
            true
        } else {
            self.fail(ctx, agent, "undeliverable");
            false
        }
    }

    fn delivered(&mut self, ctx: &mut dyn Context, agent: &AgentId) {
        let Some(r) = self.residents.get(agent) else {
            return;
        };
        let Phase::Delivering(d, token) = r.phase else {
            return;
        };
        self.timers.cancel(token);
        if d == Delivery::Park {
            self.finish(ctx, agent, true);
            return;
        }
        if d == Delivery::BringBack {
            // the client already recorded completion on homecoming; this
            // copy only catches up
            let r = self.residents.get_mut(agent).expect("resident");
            let _ = r.agent.snapshot.advance(&LifecycleEvent::Complete);
        } else {
            self.transition(ctx, agent, LifecycleEvent::Complete);
        }
        self.announce(ctx, agent, false);
        self.finish(ctx, agent, false);
    }

    fn delivery_timeout(&mut self, ctx: &mut dyn Context, agent: &AgentId) {
        let Some(r) = self.residents.get(agent) else {
            return;
        };
        let Phase::Delivering(d, _) = r.phase else {
            return;
        };
        use crate::model::DeliveryMode as M;
        match (d, r.agent.snapshot.job.delivery_mode) {
            (Delivery::Direct, M::Direct) => self.fail(ctx, agent, "client_unreachable"),
            (Delivery::Direct | Delivery::BringBack, _) => {
                if self.park(ctx, agent) {
                    let token = self.timers.arm(
                        ctx,
                        self.cfg.request_timeout_ms * MICROS_PER_MS,
                        (NodeTimer::DeliveryTimeout, agent.clone()),
                    );
                    let job = r_job(&self.residents[agent].agent);
                    ctx.note(Note::ResultSent {
                        job,
                        from: self.cfg.id.to_string(),
                        mode: "park",
                    });
                    self.residents.get_mut(agent).expect("resident").phase =
                        Phase::Delivering(Delivery::Park, token);
                }
            }
            (Delivery::Park, _) => self.fail(ctx, agent, "undeliverable"),
        }
    }

    fn find_job(&self, job: &JobId) -> Option<AgentId> {
        self.residents
            .iter()
            .find(|(_, r)| r.agent.job_id() == job)
            .map(|(a, _)| a.clone())
    }

    fn forward(&mut self, ctx: &mut dyn Context, env: Envelope, endpoint: &str) {
        let sender = env.sender.clone();
        let job = match &env.body {
            Body::Kill(k) => Some(k.job_id.clone()),
            Body::StatusQuery(q) => Some(q.job_id.clone()),
            _ => None,
        };
        if ctx.send(endpoint, env).is_err() {
            self.error(
                ctx,
                &sender,
                codes::UNREACHABLE,
                "forwarding target unreachable".into(),
                job,
            );
        }
    }

    fn on_kill(&mut self, ctx: &mut dyn Context, env: Envelope, job: JobId) {
        let sender = env.sender.clone();
        let me: EntityId = env.recipient.clone();
        if let Some(agent) = self.find_job(&job) {
            let phase = self.residents[&agent].phase.clone();
            if let Phase::Delivering(..) = phase {
                self.error(
                    ctx,
                    &sender,
                    codes::ALREADY_TERMINAL,
                    format!("job {job} already finished"),
                    Some(job),
                );
                return;
            }
            let was_running = matches!(phase, Phase::Executing(_));
            self.transition(ctx, &agent, LifecycleEvent::Kill);
            match phase {
                Phase::Executing(ticket) => {
                    ctx.note(Note::WorkEnd {
                        job: job.clone(),
                        node: self.cfg.id.clone(),
                        killed: true,
                    });
                    self.release_slot(ctx, ticket);
                }
                Phase::Gathering(gid) => {
                    if let Some(g) = self.gathers.remove(&gid) {
                        self.timers.cancel(g.timer);
                    }
                }
                _ => self.queue.retain(|a| a != &agent),
            }
            self.announce(ctx, &agent, false);
            self.finish(ctx, &agent, false);
            self.reply(
                ctx,
                me,
                &sender,
                KillAck {
                    job_id: job,
                    was_running,
                },
            );
            return;
        }
        match self.gone.get(&job).cloned() {
            Some(Gone::Moved { endpoint, to }) => {
                let agent = self
                    .departed
                    .iter()
                    .find(|(_, j)| **j == job)
                    .map(|(a, _)| a.clone());
                let recipient = agent.map_or_else(|| to.into(), EntityId::from);
                self.forward(ctx, Envelope { recipient, ..env }, &endpoint);
            }
            Some(_) => self.error(
                ctx,
                &sender,
                codes::ALREADY_TERMINAL,
                format!("job {job} already finished"),
                Some(job),
            ),
            None => self.error(
                ctx,
                &sender,
                codes::UNKNOWN_JOB,
                format!("no job {job} here"),
                Some(job),
            ),
        }
    }

    fn on_status_query(&mut self, ctx: &mut dyn Context, env: Envelope, job: JobId) {
        let sender = env.sender.clone();
        let me = env.recipient.clone();
        if let Some(agent) = self.find_job(&job) {
            let status = self.residents[&agent].agent.snapshot.status.clone();
            let report = StatusReport {
                job_id: job,
                status,
                node: Some(self.cfg.id.clone()),
            };
            self.reply(ctx, me, &sender, report);
            return;
        }
        match self.gone.get(&job).cloned() {
            Some(Gone::Moved { endpoint, to }) => {
                let agent = self
                    .departed
                    .iter()
                    .find(|(_, j)| **j == job)
                    .map(|(a, _)| a.clone());
                let recipient = agent.map_or_else(|| to.into(), EntityId::from);
                self.forward(ctx, Envelope { recipient, ..env }, &endpoint);
            }
            Some(Gone::Finished { status, .. } | Gone::Parked { status, .. }) => {
                let report = StatusReport {
                    job_id: job,
                    status,
                    node: Some(self.cfg.id.clone()),
                };
                self.reply(ctx, me, &sender, report);
            }
            None => self.error(
                ctx,
                &sender,
                codes::UNKNOWN_JOB,
                format!("no job {job} here"),
                Some(job),
            ),
        }
    }

    fn on_migrate_ack(&mut self, ctx: &mut dyn Context, ack: MigrateAck) {
        if self.residents.contains_key(&ack.agent_id) {
            if ack.accepted {
                self.delivered(ctx, &ack.agent_id);
            } else {
                ctx.note(Note::Info(format!(
                    "{}: {} refused: {}",
                    self.cfg.id,
                    ack.agent_id,
                    ack.reason.unwrap_or_default()
                )));
                let agent = ack.agent_id.clone();
                self.delivery_timeout(ctx, &agent);
            }
        } else if !ack.accepted {
            ctx.note(Note::Info(format!(
                "{}: relocation of {} refused: {}",
                self.cfg.id,
                ack.agent_id,
                ack.reason.unwrap_or_default()
            )));
        }
    }
}

fn r_job(agent: &MobileAgent) -> JobId {
    agent.job_id().clone()
}

impl Actor for NodeContainer {
    fn id(&self) -> EntityId {
        self.cfg.id.clone().into()
    }

    fn endpoint(&self) -> &str {
        &self.cfg.endpoint
    }

    fn on_message(&mut self, ctx: &mut dyn Context, env: Envelope) {
        let sender = env.sender.clone();
        let me = env.recipient.clone();
        match env.body {
            Body::LoadQuery(_) => {
                let report = self.sample_load(ctx);
                self.reply(ctx, me, &sender, LoadReply { report });
            }
            Body::LoadReply(r) => self.on_load_reply(ctx, r.report),
            Body::Heartbeat(_) => {
                let from = self.me();
                self.reply(ctx, me, &sender, HeartbeatAck { from });
            }
            Body::HeartbeatAck(_) => {}
            Body::MigrateAgent(m) => self.on_arrival(ctx, &sender, m),
            Body::MigrateAck(ack) => self.on_migrate_ack(ctx, ack),
            Body::ResultAck(ack) => {
                if let Some(agent) = self.find_job(&ack.job_id) {
                    self.delivered(ctx, &agent);
                }
            }
            Body::Kill(ref k) => {
                let job = k.job_id.clone();
                self.on_kill(ctx, env, job)
            }
            Body::StatusQuery(ref q) => {
                let job = q.job_id.clone();
                self.on_status_query(ctx, env, job)
            }
            Body::ProtocolError(e) => {
                ctx.note(Note::Info(format!(
                    "{}: protocol error from {sender}: {} {}",
                    self.cfg.id, e.code, e.detail
                )));
            }
            other => {
                let kind = other.kind().as_str();
                self.error(
                    ctx,
                    &sender,
                    codes::UNEXPECTED,
                    format!("node does not accept {kind}"),
                    None,
                );
            }
        }
    }

    fn on_timer(&mut self, ctx: &mut dyn Context, token: u64) {
        match self.timers.fire(token) {
            Some((NodeTimer::Gather(gid), _)) => self.finish_gather(ctx, gid),
            Some((NodeTimer::DeliveryTimeout, agent)) => self.delivery_timeout(ctx, &agent),
            None => {}
        }
    }

    fn on_work_done(&mut self, ctx: &mut dyn Context, ticket: u64, outcome: WorkOutcome) {
        self.on_work_done_inner(ctx, ticket, outcome);
    }
}
