//! Discrete-event engine: a virtual clock, a single ordered event queue,
//! and a link model between named containers.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;

use crate::model::{ClientId, EntityId, JobId, JobSpec, JobStatus, LoadReport, NodeId};
use crate::runtime::agent::ServerRef;
use crate::runtime::client::{ClientConfig, ClientContainer, ClientOutcome};
use crate::runtime::node::{NodeConfig, NodeContainer};
use crate::runtime::server::{FarmMemberConfig, MainContainer, ServerConfig};
use crate::runtime::{Actor, Context, Micros, Note, SendError, WorkOutcome, MICROS_PER_MS};
use crate::wire::{decode_frame, encode_frame, Envelope, MessageKind};
use crate::workloads::gen::{gen_hier_bytes, gen_xml, XmlGenParams};
use crate::workloads::run_job;

use super::script::{FileGen, Scenario, ScriptError, ScriptEvent, ScriptedLoad, TimedEvent};
use super::timing::{
    measure_base, timing_with_agents, timing_without_agents, CostModel, LinkSpec, TimingReport,
};

/// Runs stop here unless the script sets `end`.
pub const DEFAULT_HORIZON_MS: u64 = 3_600_000;

#[derive(Debug, Clone, PartialEq)]
pub enum TraceEvent {
    Send {
        to: String,
        kind: MessageKind,
        msg_id: u64,
        sender: EntityId,
        recipient: EntityId,
        bytes: usize,
    },
    Deliver {
        from: String,
        kind: MessageKind,
        msg_id: u64,
    },
    /// A message that did not make it; `at_send` when the sender was told.
    Drop {
        from: String,
        to: String,
        kind: MessageKind,
        msg_id: u64,
        reason: &'static str,
        at_send: bool,
    },
    Note(Note),
    Outcome(ClientOutcome),
    Crash,
    LinkDown {
        until_ms: u64,
    },
    LinkUp,
    Script {
        line: usize,
        what: String,
    },
}

/// One trace line: what happened, where, and when.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub at: Micros,
    pub actor: String,
    pub event: TraceEvent,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:>9}.{:03} {} ",
            self.at / 1000,
            self.at % 1000,
            self.actor
        )?;
        match &self.event {
            TraceEvent::Send {
                to,
                kind,
                msg_id,
                sender,
                recipient,
                bytes,
            } => write!(
                f,
                "send {} #{msg_id} -> {to} [{sender}->{recipient}] {bytes}B",
                kind.as_str()
            ),
            TraceEvent::Deliver { from, kind, msg_id } => {
                write!(f, "deliver {} #{msg_id} <- {from}", kind.as_str())
            }
            TraceEvent::Drop {
                from,
                to,
                kind,
                msg_id,
                reason,
                at_send,
            } => {
                let when = if *at_send { "send" } else { "deliver" };
                write!(
                    f,
                    "drop {} #{msg_id} {from} -> {to} at {when}: {reason}",
                    kind.as_str()
                )
            }
            TraceEvent::Note(n) => write!(f, "{n}"),
            TraceEvent::Outcome(o) => write!(f, "outcome {o}"),
            TraceEvent::Crash => f.write_str("crash"),
            TraceEvent::LinkDown { until_ms } => write!(f, "link_down until {until_ms}ms"),
            TraceEvent::LinkUp => f.write_str("link_up"),
            TraceEvent::Script { line, what } => write!(f, "script line {line}: {what}"),
        }
    }
}

pub enum SimActor {
    Server(MainContainer),
    Node(NodeContainer),
    Client(ClientContainer),
}

impl SimActor {
    fn actor(&mut self) -> &mut dyn Actor {
        match self {
            SimActor::Server(a) => a,
            SimActor::Node(a) => a,
            SimActor::Client(a) => a,
        }
    }
}

enum Pending {
    Start(usize),
    Deliver {
        from: usize,
        to: usize,
        env: Envelope,
    },
    Timer {
        actor: usize,
        token: u64,
    },
    Work {
        actor: usize,
        ticket: u64,
        outcome: WorkOutcome,
    },
    Script(TimedEvent),
    LinkUp(usize),
}

struct Core {
    now: Micros,
    seq: u64,
    queue: BinaryHeap<Reverse<(Micros, u64)>>,
    pending: BTreeMap<u64, Pending>,
    names: Vec<String>,
    by_name: BTreeMap<String, usize>,
    is_client: Vec<bool>,
    crashed: Vec<Option<Micros>>,
    link_down: Vec<Vec<(Micros, Micros)>>,
    last_deliver: BTreeMap<(usize, usize), Micros>,
    cost: CostModel,
    links: BTreeMap<(String, String), LinkSpec>,
    files: BTreeMap<String, Vec<u8>>,
    loads: BTreeMap<NodeId, Option<ScriptedLoad>>,
    capacity: BTreeMap<NodeId, u32>,
    trace: Vec<TraceRecord>,
}

impl Core {
    fn push(&mut self, at: Micros, p: Pending) {
        self.seq += 1;
        self.queue.push(Reverse((at, self.seq)));
        self.pending.insert(self.seq, p);
    }

    fn record(&mut self, actor: usize, event: TraceEvent) {
        self.trace.push(TraceRecord {
            at: self.now,
            actor: self.names[actor].clone(),
            event,
        });
    }

    fn crashed(&self, idx: usize) -> bool {
        self.crashed[idx].is_some_and(|t| self.now >= t)
    }

    fn link_is_down(&self, idx: usize) -> bool {
        self.link_down[idx]
            .iter()
            .any(|&(a, b)| self.now >= a && self.now < b)
    }

    fn link(&self, a: usize, b: usize) -> LinkSpec {
        let (x, y) = (&self.names[a], &self.names[b]);
        let key = if x <= y {
            (x.clone(), y.clone())
        } else {
            (y.clone(), x.clone())
        };
        if let Some(l) = self.links.get(&key) {
            return *l;
        }
        if self.is_client[a] || self.is_client[b] {
            self.cost.client_link
        } else {
            self.cost.server_link
        }
    }

    /// Why a message between `a` and `b` cannot travel right now.
    fn blocked(&self, a: usize, b: usize) -> Option<&'static str> {
        if self.crashed(b) {
            Some("destination down")
        } else if self.crashed(a) {
            Some("source down")
        } else if self.link_is_down(a) || self.link_is_down(b) {
            Some("link down")
        } else {
            None
        }
    }
}

struct SimCtx<'a> {
    core: &'a mut Core,
    me: usize,
}

impl Context for SimCtx<'_> {
    fn now(&self) -> Micros {
        self.core.now
    }

    fn send(&mut self, endpoint: &str, env: Envelope) -> Result<(), SendError> {
        let me = self.me;
        let kind = env.kind();
        let Some(&to) = self.core.by_name.get(endpoint) else {
            return Err(SendError::Unreachable(endpoint.to_owned()));
        };
        if let Some(reason) = self.core.blocked(me, to) {
            let ev = TraceEvent::Drop {
                from: self.core.names[me].clone(),
                to: endpoint.to_owned(),
                kind,
                msg_id: env.msg_id,
                reason,
                at_send: true,
            };
            self.core.record(me, ev);
            return Err(SendError::Unreachable(endpoint.to_owned()));
        }
        // every message really crosses the codec
        let frame = encode_frame(&env).map_err(|e| SendError::Encode(e.to_string()))?;
        let (decoded, _) = decode_frame(&frame).map_err(|e| SendError::Encode(e.to_string()))?;
        let link = self.core.link(me, to);
        let earliest = self.core.now + link.transfer_us(frame.len() as u64);
        let slot = self.core.last_deliver.entry((me, to)).or_insert(0);
        let at = earliest.max(*slot);
        *slot = at;
        let ev = TraceEvent::Send {
            to: endpoint.to_owned(),
            kind,
            msg_id: env.msg_id,
            sender: env.sender.clone(),
            recipient: env.recipient.clone(),
            bytes: frame.len(),
        };
        self.core.record(me, ev);
        self.core.push(
            at,
            Pending::Deliver {
                from: me,
                to,
                env: decoded,
            },
        );
        Ok(())
    }

    fn set_timer(&mut self, after: Micros, token: u64) {
        let at = self.core.now + after;
        self.core.push(
            at,
            Pending::Timer {
                actor: self.me,
                token,
            },
        );
    }

    fn start_work(&mut self, ticket: u64, job: &JobSpec, speed_factor: f64) {
        let (outcome, duration) = match self.core.files.get(&job.input_ref) {
            None => (WorkOutcome::InputMissing, 0),
            Some(bytes) => match run_job(&job.params, bytes) {
                Ok((data, meter)) => {
                    let d = self.core.cost.compute_us(meter, speed_factor);
                    (WorkOutcome::Done { data, meter }, d)
                }
                Err(e) => (WorkOutcome::Failed(e.to_string()), 0),
            },
        };
        let at = self.core.now + duration;
        self.core.push(
            at,
            Pending::Work {
                actor: self.me,
                ticket,
                outcome,
            },
        );
    }

    fn scripted_load(&self, node: &NodeId) -> Option<LoadReport> {
        let l = (*self.core.loads.get(node)?)?;
        Some(LoadReport {
            node: node.clone(),
            cpu_util: l.cpu,
            queue_depth: l.queue,
            capacity: self.core.capacity.get(node).copied().unwrap_or(1),
            mem_util: l.mem,
            sampled_at: self.core.now / MICROS_PER_MS,
        })
    }

    fn simulated(&self) -> bool {
        true
    }

    fn note(&mut self, note: Note) {
        self.core.record(self.me, TraceEvent::Note(note));
    }
}

/// Generator seed for file `name` in a run seeded with `seed`.
pub fn file_seed(name: &str, seed: u64) -> u64 {
    // FNV-1a of the name keeps files independent of declaration order
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
    }
    seed ^ h
}

/// Deterministic bytes for generated file `name`.
pub fn generate_file(name: &str, gen: FileGen, seed: u64) -> Vec<u8> {
    let s = file_seed(name, seed);
    match gen {
        FileGen::Hier { branches, values } => gen_hier_bytes(branches, values, s),
        FileGen::Xml {
            events,
            drawables,
            points,
        } => {
            gen_xml(XmlGenParams {
                events,
                drawables,
                points,
                seed: s,
            })
            .0
        }
    }
}

pub struct Simulation {
    core: Core,
    actors: Vec<SimActor>,
    reports: Vec<TimingReport>,
    horizon: Micros,
}

impl Simulation {
    pub fn new(sc: &Scenario, seed: u64) -> Result<Simulation, ScriptError> {
        let err = |detail: String| ScriptError { line: 0, detail };
        sc.cost.validate().map_err(|e| err(e.to_string()))?;
        let mut actors = Vec::new();
        let mut names = Vec::new();
        let mut is_client = Vec::new();
        for s in &sc.servers {
            let farm = s
                .nodes
                .iter()
                .map(|n| {
                    let decl = sc.node(n).expect("checked by parser");
                    FarmMemberConfig {
                        id: n.clone(),
                        endpoint: n.to_string(),
                        capacity: decl.capacity,
                        speed_factor: decl.speed,
                    }
                })
                .collect();
            let mut cfg = ServerConfig::new(s.id.clone(), s.id.to_string(), farm);
            cfg.thresholds = sc.thresholds;
            cfg.heartbeat_interval_ms = sc.heartbeat_interval_ms;
            cfg.heartbeat_miss_limit = sc.heartbeat_miss_limit;
            cfg.max_hops = sc.max_hops;
            for n in &s.nodes {
                let ncfg = NodeConfig::from_server(&cfg, n).expect("member of this farm");
                actors.push(SimActor::Node(NodeContainer::new(ncfg)));
                names.push(n.to_string());
                is_client.push(false);
            }
            actors.push(SimActor::Server(MainContainer::new(cfg)));
            names.push(s.id.to_string());
            is_client.push(false);
        }
        for n in &sc.nodes {
            if sc.server_of(&n.id).is_none() {
                return Err(err(format!("node {} belongs to no server", n.id)));
            }
        }
        for c in &sc.clients {
            let servers = c
                .servers
                .iter()
                .map(|s| ServerRef {
                    id: s.clone(),
                    endpoint: s.to_string(),
                })
                .collect();
            let mut cfg = ClientConfig::new(c.id.clone(), c.id.to_string(), servers);
            cfg.max_hops = sc.max_hops;
            cfg.display_ms = sc.cost.display_us / MICROS_PER_MS;
            cfg.request_timeout_ms = sc.heartbeat_interval_ms * sc.heartbeat_miss_limit as u64;
            actors.push(SimActor::Client(ClientContainer::new(cfg)));
            names.push(c.id.to_string());
            is_client.push(true);
        }
        let files: BTreeMap<String, Vec<u8>> = sc
            .files
            .iter()
            .map(|f| (f.name.clone(), generate_file(&f.name, f.gen, seed)))
            .collect();

        let mut reports = Vec::new();
        for e in &sc.events {
            if let ScriptEvent::Submit { client, spec } = &e.event {
                let Some(input) = files.get(&spec.input_ref) else {
                    continue;
                };
                let mut cost = sc.cost.clone();
                if let Some(c) = sc.clients.iter().find(|c| &c.id == client) {
                    cost.client_speed = c.speed;
                }
                let base = measure_base(spec, input, &cost).map_err(|x| ScriptError {
                    line: e.line,
                    detail: format!("job {}: {x}", spec.job_id),
                })?;
                reports.push(timing_without_agents(&cost, base));
                reports.push(timing_with_agents(&cost, base));
            }
        }

        let n = actors.len();
        let mut core = Core {
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            pending: BTreeMap::new(),
            by_name: names
                .iter()
                .enumerate()
                .map(|(i, s)| (s.clone(), i))
                .collect(),
            names,
            is_client,
            crashed: vec![None; n],
            link_down: vec![Vec::new(); n],
            last_deliver: BTreeMap::new(),
            cost: sc.cost.clone(),
            links: sc.links.clone(),
            files,
            loads: BTreeMap::new(),
            capacity: sc
                .nodes
                .iter()
                .map(|d| (d.id.clone(), d.capacity))
                .collect(),
            trace: Vec::new(),
        };
        for i in 0..n {
            core.push(0, Pending::Start(i));
        }
        for e in &sc.events {
            core.push(e.at_ms * MICROS_PER_MS, Pending::Script(e.clone()));
        }
        Ok(Simulation {
            core,
            actors,
            reports,
            horizon: sc.end_ms.unwrap_or(DEFAULT_HORIZON_MS) * MICROS_PER_MS,
        })
    }

    pub fn now(&self) -> Micros {
        self.core.now
    }

    /// Runs until the queue drains or the horizon is reached.
    pub fn run(&mut self) {
        self.run_until(self.horizon);
    }

    pub fn run_until(&mut self, until: Micros) {
        while self
            .core
            .queue
            .peek()
            .is_some_and(|Reverse((at, _))| *at <= until)
        {
            self.step();
        }
    }

    /// Handles the next queued event. False once the queue is empty or the
    /// horizon is passed.
    pub fn step(&mut self) -> bool {
        let Some(&Reverse((at, seq))) = self.core.queue.peek() else {
            return false;
        };
        if at > self.horizon {
            return false;
        }
        self.core.queue.pop();
        self.core.now = at;
        let p = self
            .core
            .pending
            .remove(&seq)
            .expect("queued events are pending");
        self.dispatch(p);
        true
    }

    /// Schedules a script event at the current virtual time, behind
    /// everything already queued for that instant.
    pub fn inject(&mut self, event: ScriptEvent) -> Result<(), ScriptError> {
        let target = match &event {
            ScriptEvent::Submit { client, .. }
            | ScriptEvent::Reconnect { client }
            | ScriptEvent::Kill { client, .. }
            | ScriptEvent::Query { client, .. } => client.to_string(),
            ScriptEvent::Load { node, .. } => node.to_string(),
            ScriptEvent::Crash { target } => target.clone(),
            ScriptEvent::LinkDown { entity, .. } => entity.clone(),
        };
        if !self.core.by_name.contains_key(&target) {
            return Err(ScriptError {
                line: 0,
                detail: format!("unknown entity {target}"),
            });
        }
        let now = self.core.now;
        let e = TimedEvent {
            at_ms: now / MICROS_PER_MS,
            line: 0,
            event,
        };
        self.core.push(now, Pending::Script(e));
        Ok(())
    }

    fn with_actor(&mut self, idx: usize, f: impl FnOnce(&mut SimActor, &mut dyn Context)) {
        let seen = match &self.actors[idx] {
            SimActor::Client(c) => c.outcomes().len(),
            _ => 0,
        };
        let mut ctx = SimCtx {
            core: &mut self.core,
            me: idx,
        };
        f(&mut self.actors[idx], &mut ctx);
        if let SimActor::Client(c) = &self.actors[idx] {
            let fresh: Vec<ClientOutcome> = c.outcomes()[seen..]
                .iter()
                .map(|(_, o)| o.clone())
                .collect();
            for o in fresh {
                self.core.record(idx, TraceEvent::Outcome(o));
            }
        }
    }

    fn dispatch(&mut self, p: Pending) {
        match p {
            Pending::Start(i) => self.with_actor(i, |a, ctx| a.actor().on_start(ctx)),
            Pending::Deliver { from, to, env } => {
                let blocked = self.core.blocked(from, to);
                if let Some(reason) = blocked {
                    let ev = TraceEvent::Drop {
                        from: self.core.names[from].clone(),
                        to: self.core.names[to].clone(),
                        kind: env.kind(),
                        msg_id: env.msg_id,
                        reason,
                        at_send: false,
                    };
                    self.core.record(to, ev);
                    return;
                }
                let ev = TraceEvent::Deliver {
                    from: self.core.names[from].clone(),
                    kind: env.kind(),
                    msg_id: env.msg_id,
                };
                self.core.record(to, ev);
                self.with_actor(to, |a, ctx| a.actor().on_message(ctx, env));
            }
            Pending::Timer { actor, token } => {
                if !self.core.crashed(actor) {
                    self.with_actor(actor, |a, ctx| a.actor().on_timer(ctx, token));
                }
            }
            Pending::Work {
                actor,
                ticket,
                outcome,
            } => {
                if !self.core.crashed(actor) {
                    self.with_actor(actor, |a, ctx| a.actor().on_work_done(ctx, ticket, outcome));
                }
            }
            Pending::LinkUp(i) => self.core.record(i, TraceEvent::LinkUp),
            Pending::Script(e) => self.script(e),
        }
    }

    fn index(&self, name: &str) -> usize {
        self.core.by_name[name]
    }

    fn script(&mut self, e: TimedEvent) {
        let line = e.line;
        match e.event {
            ScriptEvent::Submit { client, spec } => {
                let i = self.index(client.as_str());
                let what = format!("submit {}", spec.job_id);
                self.core.record(i, TraceEvent::Script { line, what });
                self.with_actor(i, |a, ctx| {
                    if let SimActor::Client(c) = a {
                        // specs were validated when the script was parsed
                        let _ = c.submit(ctx, spec);
                    }
                });
            }
            ScriptEvent::Load { node, load } => {
                let i = self.index(node.as_str());
                let what = match load {
                    Some(l) => format!("load cpu={} queue={} mem={}", l.cpu, l.queue, l.mem),
                    None => "load off".to_owned(),
                };
                self.core.record(i, TraceEvent::Script { line, what });
                self.core.loads.insert(node, load);
            }
            ScriptEvent::Crash { target } => {
                let i = self.index(&target);
                self.core.crashed[i] = Some(self.core.now);
                self.core.record(i, TraceEvent::Crash);
            }
            ScriptEvent::LinkDown { entity, until_ms } => {
                let i = self.index(&entity);
                let until = until_ms * MICROS_PER_MS;
                self.core.link_down[i].push((self.core.now, until));
                self.core.record(i, TraceEvent::LinkDown { until_ms });
                self.core.push(until, Pending::LinkUp(i));
            }
            ScriptEvent::Reconnect { client } => {
                let i = self.index(client.as_str());
                self.core.record(
                    i,
                    TraceEvent::Script {
                        line,
                        what: "reconnect".into(),
                    },
                );
                self.with_actor(i, |a, ctx| {
                    if let SimActor::Client(c) = a {
                        c.reconnect(ctx);
                    }
                });
            }
            ScriptEvent::Kill { client, job } => {
                let i = self.index(client.as_str());
                self.core.record(
                    i,
                    TraceEvent::Script {
                        line,
                        what: format!("kill {job}"),
                    },
                );
                self.with_actor(i, |a, ctx| {
                    if let SimActor::Client(c) = a {
                        c.kill(ctx, &job);
                    }
                });
            }
            ScriptEvent::Query { client, job } => {
                let i = self.index(client.as_str());
                self.core.record(
                    i,
                    TraceEvent::Script {
                        line,
                        what: format!("query {job}"),
                    },
                );
                self.with_actor(i, |a, ctx| {
                    if let SimActor::Client(c) = a {
                        c.query_status(ctx, &job);
                    }
                });
            }
        }
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.core.trace
    }

    /// The trace rendered one record per line.
    pub fn trace_text(&self) -> String {
        let mut out = String::new();
        for r in &self.core.trace {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }

    /// One without/with-agents pair per submitted job, in submission order.
    pub fn reports(&self) -> &[TimingReport] {
        &self.reports
    }

    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.core.files.get(name).map(Vec::as_slice)
    }

    pub fn client(&self, id: &ClientId) -> Option<&ClientContainer> {
        self.actors.iter().find_map(|a| match a {
            SimActor::Client(c) if c.client_id() == id => Some(c),
            _ => None,
        })
    }

    pub fn server(&self, id: &NodeId) -> Option<&MainContainer> {
        self.actors.iter().find_map(|a| match a {
            SimActor::Server(s) if s.server_id() == id => Some(s),
            _ => None,
        })
    }

    pub fn node(&self, id: &NodeId) -> Option<&NodeContainer> {
        self.actors.iter().find_map(|a| match a {
            SimActor::Node(n) if n.node_id() == id => Some(n),
            _ => None,
        })
    }

    /// Status transitions of `job` recorded anywhere, in trace order.
    pub fn transitions(&self, job: &JobId) -> Vec<(JobStatus, JobStatus)> {
        self.core
            .trace
            .iter()
            .filter_map(|r| match &r.event {
                TraceEvent::Note(Note::Status {
                    job: j, from, to, ..
                }) if j == job => Some((from.clone(), to.clone())),
                _ => None,
            })
            .collect()
    }

    /// Last status `job` reached, according to the trace.
    pub fn final_status(&self, job: &JobId) -> Option<JobStatus> {
        self.transitions(job).last().map(|(_, to)| to.clone())
    }

    /// Messages of `kind` that were sent (not necessarily delivered).
    pub fn sent(&self, kind: MessageKind) -> usize {
        self.core
            .trace
            .iter()
            .filter(|r| matches!(&r.event, TraceEvent::Send { kind: k, .. } if *k == kind))
            .count()
    }
}

/// Parses and runs a script to completion.
pub fn run_scenario(script: &str, seed: u64) -> Result<Simulation, ScriptError> {
    let sc = super::script::parse_scenario(script)?;
    let mut sim = Simulation::new(&sc, seed)?;
    sim.run();
    Ok(sim)
}
