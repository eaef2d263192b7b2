//! Client container: spawns agent pairs, dispatches mobile agents to a
//! server, and keeps the receiver half that collects results and answers
//! status questions.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{
    ClientId, Endpoint, EntityId, JobId, JobSpec, JobStatus, LifecycleEvent, NodeId, ResultPayload,
    SpecViolation,
};
use crate::wire::{
    codes, Body, Envelope, Kill, MigrateAck, MigrateAgent, RegisterClient, ResultAck, StatusQuery,
    SubmitJob,
};

use super::agent::{spawn_pair, AgentIdGen, MobileAgent, ReceiverAgent, ServerRef};
use super::{Actor, Context, MsgIds, Note, Timers, DEFAULT_MAX_HOPS, MICROS_PER_MS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub id: ClientId,
    pub endpoint: Endpoint,
    /// Servers in preference order.
    pub servers: Vec<ServerRef>,
    pub request_timeout_ms: u64,
    /// Time to render a received result.
    pub display_ms: u64,
    pub max_hops: u32,
}

impl ClientConfig {
    pub fn new(id: ClientId, endpoint: impl Into<Endpoint>, servers: Vec<ServerRef>) -> Self {
        ClientConfig {
            id,
            endpoint: endpoint.into(),
            servers,
            request_timeout_ms: 3000,
            display_ms: 50,
            max_hops: DEFAULT_MAX_HOPS,
        }
    }
}

/// Something the client learned, in the order it learned it.
#[derive(Debug, Clone, PartialEq)]
pub enum ClientOutcome {
    Registered {
        servers: Vec<NodeId>,
    },
    AllServersDown,
    Dispatched {
        job: JobId,
        server: NodeId,
        node: Option<NodeId>,
    },
    DispatchFailed {
        job: JobId,
        reason: String,
    },
    ResultReceived {
        job: JobId,
        via: &'static str,
        duplicate: bool,
    },
    Displayed {
        job: JobId,
    },
    Status {
        job: JobId,
        status: JobStatus,
        node: Option<NodeId>,
        source: String,
    },
    StatusUnknown {
        job: JobId,
    },
    Killed {
        job: JobId,
        was_running: bool,
    },
    AlreadyTerminal {
        job: JobId,
    },
    KillFailed {
        job: JobId,
        reason: String,
    },
    JobFailed {
        job: JobId,
        reason: String,
    },
}

impl ClientOutcome {
    pub fn job(&self) -> Option<&JobId> {
        use ClientOutcome as O;
        match self {
            O::Registered { .. } | O::AllServersDown => None,
            O::Dispatched { job, .. }
            | O::DispatchFailed { job, .. }
            | O::ResultReceived { job, .. }
            | O::Displayed { job }
            | O::Status { job, .. }
            | O::StatusUnknown { job }
            | O::Killed { job, .. }
            | O::AlreadyTerminal { job }
            | O::KillFailed { job, .. }
            | O::JobFailed { job, .. } => Some(job),
        }
    }
}

impl fmt::Display for ClientOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ClientOutcome as O;
        let opt = |n: &Option<NodeId>| n.as_ref().map_or("-".to_owned(), ToString::to_string);
        match self {
            O::Registered { servers } => {
                let list: Vec<&str> = servers.iter().map(NodeId::as_str).collect();
                write!(f, "registered {}", list.join(","))
            }
            O::AllServersDown => f.write_str("all_servers_down"),
            O::Dispatched { job, server, node } => {
                write!(f, "dispatched {job} server={server} node={}", opt(node))
            }
            O::DispatchFailed { job, reason } => write!(f, "dispatch_failed {job} {reason}"),
            O::ResultReceived {
                job,
                via,
                duplicate,
            } => {
                write!(f, "result {job} via={via} duplicate={duplicate}")
            }
            O::Displayed { job } => write!(f, "displayed {job}"),
            O::Status {
                job,
                status,
                node,
                source,
            } => {
                write!(
                    f,
                    "status {job} {status} node={} source={source}",
                    opt(node)
                )
            }
            O::StatusUnknown { job } => write!(f, "status_unknown {job}"),
            O::Killed { job, was_running } => write!(f, "killed {job} was_running={was_running}"),
            O::AlreadyTerminal { job } => write!(f, "already_terminal {job}"),
            O::KillFailed { job, reason } => write!(f, "kill_failed {job} {reason}"),
            O::JobFailed { job, reason } => write!(f, "job_failed {job} {reason}"),
        }
    }
}

/// Persistent part of a client, for runtimes that restart it between
/// commands.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClientState {
    pub ids_issued: u64,
    pub receivers: Vec<ReceiverAgent>,
}

#[derive(Debug, Clone)]
struct Target {
    endpoint: Endpoint,
    sender: EntityId,
    recipient: EntityId,
    label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DispatchStage {
    Submit,
    Migrate,
}

#[derive(Debug)]
struct Dispatch {
    servers: VecDeque<ServerRef>,
    current: ServerRef,
    stage: DispatchStage,
    timer: u64,
    kill_requested: bool,
}

#[derive(Debug)]
struct Chain {
    targets: VecDeque<Target>,
    current: Target,
    timer: u64,
}

#[derive(Debug)]
struct ClientJob {
    receiver: ReceiverAgent,
    /// Present while the mobile agent has not left the client.
    mobile: Option<MobileAgent>,
    dispatch: Option<Dispatch>,
    query: Option<Chain>,
    kill: Option<Chain>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum ClientTimer {
    Register,
    Dispatch(JobId),
    Query(JobId),
    Kill(JobId),
    Display(JobId),
}

pub struct ClientContainer {
    cfg: ClientConfig,
    registered: Vec<ServerRef>,
    registering: Option<(Vec<NodeId>, u64, bool)>,
    jobs: BTreeMap<JobId, ClientJob>,
    id_gen: AgentIdGen,
    outcomes: Vec<(u64, ClientOutcome)>,
    ids: MsgIds,
    timers: Timers<ClientTimer>,
    register_on_start: bool,
}

impl ClientContainer {
    pub fn new(cfg: ClientConfig) -> Self {
        Self::with_state(cfg, ClientState::default())
    }

    pub fn with_state(cfg: ClientConfig, state: ClientState) -> Self {
        let jobs = state
            .receivers
            .into_iter()
            .map(|receiver| {
                (
                    receiver.job_id.clone(),
                    ClientJob {
                        receiver,
                        mobile: None,
                        dispatch: None,
                        query: None,
                        kill: None,
                    },
                )
            })
            .collect();
        ClientContainer {
            id_gen: AgentIdGen::starting_at(cfg.id.clone(), state.ids_issued),
            cfg,
            registered: Vec::new(),
            registering: None,
            jobs,
            outcomes: Vec::new(),
            ids: MsgIds::default(),
            timers: Timers::default(),
            register_on_start: true,
        }
    }

    /// Skips the automatic registration in `on_start`.
    pub fn without_auto_register(mut self) -> Self {
        self.register_on_start = false;
        self
    }

    pub fn state(&self) -> ClientState {
        ClientState {
            ids_issued: self.id_gen.issued(),
            receivers: self.jobs.values().map(|j| j.receiver.clone()).collect(),
        }
    }

    pub fn config(&self) -> &ClientConfig {
        &self.cfg
    }

    pub fn client_id(&self) -> &ClientId {
        &self.cfg.id
    }

    pub fn outcomes(&self) -> &[(u64, ClientOutcome)] {
        &self.outcomes
    }

    pub fn receiver(&self, job: &JobId) -> Option<&ReceiverAgent> {
        self.jobs.get(job).map(|j| &j.receiver)
    }

    pub fn receivers(&self) -> impl Iterator<Item = &ReceiverAgent> {
        self.jobs.values().map(|j| &j.receiver)
    }

    pub fn registered_servers(&self) -> &[ServerRef] {
        &self.registered
    }

    /// True while any request is still waiting for an answer.
    pub fn busy(&self) -> bool {
        self.registering.is_some()
            || self
                .jobs
                .values()
                .any(|j| j.dispatch.is_some() || j.query.is_some() || j.kill.is_some())
    }

    fn timeout(&self) -> u64 {
        self.cfg.request_timeout_ms * MICROS_PER_MS
    }

    fn outcome(&mut self, ctx: &mut dyn Context, o: ClientOutcome) {
        self.outcomes.push((ctx.now_ms(), o));
    }

    fn set_local_status(
        &mut self,
        ctx: &mut dyn Context,
        job: &JobId,
        event: LifecycleEvent,
    ) -> bool {
        let Some(j) = self.jobs.get_mut(job) else {
            return false;
        };
        let Some(m) = j.mobile.as_mut() else {
            return false;
        };
        let before = m.snapshot.status.clone();
        if m.snapshot.advance(&event).is_err() {
            return false;
        }
        let after = m.snapshot.status.clone();
        j.receiver.observe(None, after.clone(), None, ctx.now_ms());
        ctx.note(Note::Status {
            job: job.clone(),
            at: self.cfg.id.to_string(),
            from: before,
            to: after,
        });
        true
    }

    /// Registers with every configured server.
    pub fn register_with_all(&mut self, ctx: &mut dyn Context) {
        self.register(ctx, false);
    }

    /// Re-registers after a disconnection, then asks after every job that
    /// has not finished.
    pub fn reconnect(&mut self, ctx: &mut dyn Context) {
        self.register(ctx, true);
    }

    fn register(&mut self, ctx: &mut dyn Context, then_query: bool) {
        if let Some((_, token, _)) = self.registering.take() {
            self.timers.cancel(token);
        }
        self.registered.clear();
        let mut waiting = Vec::new();
        for s in self.cfg.servers.clone() {
            let env = self.ids.envelope(
                &self.cfg.id,
                &s.id,
                RegisterClient {
                    client: self.cfg.id.clone(),
                    endpoint: self.cfg.endpoint.clone(),
                },
            );
            if ctx.send(&s.endpoint, env).is_ok() {
                waiting.push(s.id);
            }
        }
        if waiting.is_empty() {
            self.outcome(ctx, ClientOutcome::AllServersDown);
            return;
        }
        let token = self.timers.arm(ctx, self.timeout(), ClientTimer::Register);
        self.registering = Some((waiting, token, then_query));
    }

    fn on_register_ack(&mut self, ctx: &mut dyn Context, server: NodeId, accepted: bool) {
        let Some((waiting, _, _)) = self.registering.as_mut() else {
            return;
        };
        waiting.retain(|s| s != &server);
        let done = waiting.is_empty();
        if accepted {
            if let Some(s) = self.cfg.servers.iter().find(|s| s.id == server) {
                self.registered.push(s.clone());
            }
        }
        if done {
            self.finish_register(ctx);
        }
    }

    fn finish_register(&mut self, ctx: &mut dyn Context) {
        let Some((_, token, then_query)) = self.registering.take() else {
            return;
        };
        self.timers.cancel(token);
        // keep configured preference order
        let order: Vec<NodeId> = self.cfg.servers.iter().map(|s| s.id.clone()).collect();
        self.registered
            .sort_by_key(|s| order.iter().position(|o| o == &s.id));
        if self.registered.is_empty() {
            self.outcome(ctx, ClientOutcome::AllServersDown);
            return;
        }
        let servers = self.registered.iter().map(|s| s.id.clone()).collect();
        self.outcome(ctx, ClientOutcome::Registered { servers });
        let registered = self.registered.clone();
        for j in self.jobs.values_mut() {
            j.receiver.servers = registered.clone();
        }
        if then_query {
            // The agent of a job still in the submit stage never left, so
            // offering it again cannot run the job twice.
            let pending: Vec<JobId> = self
                .jobs
                .iter()
                .filter(|(_, j)| {
                    j.dispatch
                        .as_ref()
                        .is_some_and(|d| d.stage == DispatchStage::Submit)
                })
                .map(|(id, _)| id.clone())
                .collect();
            for job in pending {
                let d = self.take_dispatch(&job).expect("checked");
                let mut servers: VecDeque<ServerRef> = registered.iter().cloned().collect();
                let first = servers.pop_front().expect("non-empty");
                self.dispatch_to(ctx, &job, first, servers, d.kill_requested);
            }
            let open: Vec<JobId> = self
                .jobs
                .iter()
                .filter(|(_, j)| {
                    !j.receiver.last_known.status.is_terminal() && j.dispatch.is_none()
                })
                .map(|(id, _)| id.clone())
                .collect();
            for job in open {
                self.query_status(ctx, &job);
            }
        }
    }

    /// Creates the agent pair for `spec` and starts dispatching the mobile
    /// half.
    pub fn submit(
        &mut self,
        ctx: &mut dyn Context,
        spec: JobSpec,
    ) -> Result<JobId, Vec<SpecViolation>> {
        let job = spec.job_id.clone();
        let (mobile, mut receiver) = spawn_pair(
            &self.cfg.id,
            spec,
            &self.cfg.endpoint,
            &mut self.id_gen,
            Some(self.cfg.max_hops),
        )?;
        receiver.servers = self.registered.clone();
        receiver.last_known.at_ms = ctx.now_ms();
        self.jobs.insert(
            job.clone(),
            ClientJob {
                receiver,
                mobile: Some(mobile),
                dispatch: None,
                query: None,
                kill: None,
            },
        );
        self.set_local_status(ctx, &job, LifecycleEvent::Submit);
        let mut servers: VecDeque<ServerRef> = if self.registered.is_empty() {
            self.cfg.servers.iter().cloned().collect()
        } else {
            self.registered.iter().cloned().collect()
        };
        match servers.pop_front() {
            Some(first) => self.dispatch_to(ctx, &job, first, servers, false),
            None => self.dispatch_failed(ctx, &job, false),
        }
        Ok(job)
    }

    fn dispatch_to(
        &mut self,
        ctx: &mut dyn Context,
        job: &JobId,
        server: ServerRef,
        rest: VecDeque<ServerRef>,
        kill_requested: bool,
    ) {
        let spec = self.jobs[job].receiver.spec.clone();
        let env = self
            .ids
            .envelope(&self.cfg.id, &server.id, SubmitJob { spec });
        if ctx.send(&server.endpoint, env).is_err() {
            return self.next_server(ctx, job, rest, kill_requested);
        }
        let timer = self
            .timers
            .arm(ctx, self.timeout(), ClientTimer::Dispatch(job.clone()));
        if let Some(j) = self.jobs.get_mut(job) {
            j.dispatch = Some(Dispatch {
                servers: rest,
                current: server,
                stage: DispatchStage::Submit,
                timer,
                kill_requested,
            });
        }
    }

    fn next_server(
        &mut self,
        ctx: &mut dyn Context,
        job: &JobId,
        mut rest: VecDeque<ServerRef>,
        kill: bool,
    ) {
        match rest.pop_front() {
            Some(s) => self.dispatch_to(ctx, job, s, rest, kill),
            None => self.dispatch_failed(ctx, job, kill),
        }
    }

    fn dispatch_failed(&mut self, ctx: &mut dyn Context, job: &JobId, kill_requested: bool) {
        if let Some(j) = self.jobs.get_mut(job) {
            j.dispatch = None;
        }
        let killed = self
            .jobs
            .get(job)
            .is_some_and(|j| j.receiver.last_known.status == JobStatus::Killed);
        if !killed {
            self.set_local_status(ctx, job, LifecycleEvent::Fail("all_servers_failed".into()));
            self.outcome(
                ctx,
                ClientOutcome::DispatchFailed {
                    job: job.clone(),
                    reason: "all_servers_failed".into(),
                },
            );
        }
        if let Some(j) = self.jobs.get_mut(job) {
            j.mobile = None;
        }
        if kill_requested {
            self.outcome(ctx, ClientOutcome::AlreadyTerminal { job: job.clone() });
        }
    }

    fn take_dispatch(&mut self, job: &JobId) -> Option<Dispatch> {
        let d = self.jobs.get_mut(job)?.dispatch.take()?;
        self.timers.cancel(d.timer);
        Some(d)
    }

    fn on_submit_ack(
        &mut self,
        ctx: &mut dyn Context,
        sender: &EntityId,
        job: JobId,
        accepted: bool,
    ) {
        let matches = self
            .jobs
            .get(&job)
            .and_then(|j| j.dispatch.as_ref())
            .is_some_and(|d| d.stage == DispatchStage::Submit && *sender == d.current.id);
        if !matches {
            return;
        }
        let d = self.take_dispatch(&job).expect("checked");
        if !accepted {
            return self.next_server(ctx, &job, d.servers, d.kill_requested);
        }
        let snapshot = self.jobs[&job]
            .mobile
            .as_ref()
            .expect("still local")
            .snapshot
            .clone();
        let env = self.ids.envelope(
            &self.cfg.id,
            &d.current.id,
            MigrateAgent {
                snapshot,
                result: None,
            },
        );
        if ctx.send(&d.current.endpoint, env).is_err() {
            return self.next_server(ctx, &job, d.servers, d.kill_requested);
        }
        ctx.note(Note::Migrate {
            job: job.clone(),
            from: self.cfg.id.to_string(),
            to: d.current.id.to_string(),
        });
        let timer = self
            .timers
            .arm(ctx, self.timeout(), ClientTimer::Dispatch(job.clone()));
        self.jobs.get_mut(&job).expect("exists").dispatch = Some(Dispatch {
            stage: DispatchStage::Migrate,
            timer,
            ..d
        });
    }

    fn on_dispatch_ack(
        &mut self,
        ctx: &mut dyn Context,
        sender: &EntityId,
        ack: MigrateAck,
    ) -> bool {
        let job = self
            .jobs
            .iter()
            .find(|(_, j)| {
                j.receiver.twin_id == ack.agent_id
                    && j.dispatch.as_ref().is_some_and(|d| {
                        d.stage == DispatchStage::Migrate && *sender == d.current.id
                    })
            })
            .map(|(id, _)| id.clone());
        let Some(job) = job else { return false };
        let d = self.take_dispatch(&job).expect("checked");
        if !ack.accepted {
            self.next_server(ctx, &job, d.servers, d.kill_requested);
            return true;
        }
        let now = ctx.now_ms();
        let j = self.jobs.get_mut(&job).expect("exists");
        j.mobile = None;
        j.receiver.job_server = Some(d.current.clone());
        j.receiver
            .observe(ack.node.clone(), JobStatus::Migrating, None, now);
        self.outcome(
            ctx,
            ClientOutcome::Dispatched {
                job: job.clone(),
                server: d.current.id,
                node: ack.node,
            },
        );
        if d.kill_requested {
            self.kill(ctx, &job);
        }
        true
    }

    fn on_dispatch_timeout(&mut self, ctx: &mut dyn Context, job: &JobId) {
        let Some(d) = self.take_dispatch(job) else {
            return;
        };
        if d.stage == DispatchStage::Submit {
            return self.next_server(ctx, job, d.servers, d.kill_requested);
        }
        // The agent left but the ack never came. Offering it to another
        // server could run the job twice, so assume the handoff happened
        // and let location updates or a query settle where it is.
        let j = self.jobs.get_mut(job).expect("exists");
        j.mobile = None;
        j.receiver.job_server = Some(d.current.clone());
        self.outcome(
            ctx,
            ClientOutcome::Dispatched {
                job: job.clone(),
                server: d.current.id,
                node: None,
            },
        );
        if d.kill_requested {
            self.kill(ctx, job);
        }
    }

    /// Targets for a status query or kill: the node the agent was last
    /// seen on, then the job's server, then every other server.
    fn chain_targets(&self, job: &JobId) -> VecDeque<Target> {
        let j = &self.jobs[job];
        let r = &j.receiver;
        let mut out = VecDeque::new();
        if let (Some(node), Some(endpoint)) = (&r.last_known.node, &r.node_endpoint) {
            out.push_back(Target {
                endpoint: endpoint.clone(),
                sender: r.agent_id.clone().into(),
                recipient: r.twin_id.clone().into(),
                label: format!("node:{node}"),
            });
        }
        let mut servers: Vec<ServerRef> = r.job_server.iter().cloned().collect();
        let pool = if self.registered.is_empty() {
            &self.cfg.servers
        } else {
            &self.registered
        };
        for s in pool {
            if !servers.contains(s) {
                servers.push(s.clone());
            }
        }
        for s in servers {
            out.push_back(Target {
                endpoint: s.endpoint.clone(),
                sender: self.cfg.id.clone().into(),
                recipient: s.id.clone().into(),
                label: format!("server:{}", s.id),
            });
        }
        out
    }

    /// Starts a chain of `body` requests; returns `None` when no target
    /// accepted the send.
    fn start_chain(
        &mut self,
        ctx: &mut dyn Context,
        mut targets: VecDeque<Target>,
        body: &Body,
        timer: ClientTimer,
    ) -> Option<Chain> {
        while let Some(t) = targets.pop_front() {
            let env = self
                .ids
                .envelope(t.sender.clone(), t.recipient.clone(), body.clone());
            if ctx.send(&t.endpoint, env).is_ok() {
                let token = self.timers.arm(ctx, self.timeout(), timer);
                return Some(Chain {
                    targets,
                    current: t,
                    timer: token,
                });
            }
        }
        None
    }

    /// Asks where `job` is and what it is doing. A status the client
    /// already knows to be final is answered locally.
    pub fn query_status(&mut self, ctx: &mut dyn Context, job: &JobId) {
        let Some(j) = self.jobs.get(job) else {
            self.outcome(ctx, ClientOutcome::StatusUnknown { job: job.clone() });
            return;
        };
        let lk = j.receiver.last_known.clone();
        if lk.status.is_terminal() || j.mobile.is_some() {
            self.outcome(
                ctx,
                ClientOutcome::Status {
                    job: job.clone(),
                    status: lk.status,
                    node: lk.node,
                    source: "local".into(),
                },
            );
            return;
        }
        if let Some(c) = self.jobs.get_mut(job).and_then(|j| j.query.take()) {
            self.timers.cancel(c.timer);
        }
        let targets = self.chain_targets(job);
        self.continue_query(ctx, job, targets);
    }

    fn continue_query(&mut self, ctx: &mut dyn Context, job: &JobId, targets: VecDeque<Target>) {
        let body = Body::StatusQuery(StatusQuery {
            job_id: job.clone(),
        });
        match self.start_chain(ctx, targets, &body, ClientTimer::Query(job.clone())) {
            Some(chain) => self.jobs.get_mut(job).expect("exists").query = Some(chain),
            None => self.outcome(ctx, ClientOutcome::StatusUnknown { job: job.clone() }),
        }
    }

    fn advance_query(&mut self, ctx: &mut dyn Context, job: &JobId) {
        let Some(c) = self.jobs.get_mut(job).and_then(|j| j.query.take()) else {
            return;
        };
        self.timers.cancel(c.timer);
        self.continue_query(ctx, job, c.targets);
    }

    /// Stops `job` wherever it is.
    pub fn kill(&mut self, ctx: &mut dyn Context, job: &JobId) {
        let Some(j) = self.jobs.get_mut(job) else {
            self.outcome(
                ctx,
                ClientOutcome::KillFailed {
                    job: job.clone(),
                    reason: "unknown_job".into(),
                },
            );
            return;
        };
        if j.receiver.last_known.status.is_terminal() {
            self.outcome(ctx, ClientOutcome::AlreadyTerminal { job: job.clone() });
            return;
        }
        match j.dispatch.as_mut() {
            Some(d) if d.stage == DispatchStage::Migrate => {
                // the agent may be on its way; finish the handoff first
                d.kill_requested = true;
                return;
            }
            Some(_) => {
                // still only offered; the agent never left
                self.take_dispatch(job);
            }
            None => {}
        }
        let j = self.jobs.get_mut(job).expect("exists");
        if j.mobile.is_some() {
            self.set_local_status(ctx, job, LifecycleEvent::Kill);
            self.jobs.get_mut(job).expect("exists").mobile = None;
            self.outcome(
                ctx,
                ClientOutcome::Killed {
                    job: job.clone(),
                    was_running: false,
                },
            );
            return;
        }
        if let Some(c) = j.kill.take() {
            self.timers.cancel(c.timer);
        }
        let targets = self.chain_targets(job);
        self.continue_kill(ctx, job, targets, "unreachable".into());
    }

    fn continue_kill(
        &mut self,
        ctx: &mut dyn Context,
        job: &JobId,
        targets: VecDeque<Target>,
        reason: String,
    ) {
        let body = Body::Kill(Kill {
            job_id: job.clone(),
        });
        match self.start_chain(ctx, targets, &body, ClientTimer::Kill(job.clone())) {
            Some(chain) => self.jobs.get_mut(job).expect("exists").kill = Some(chain),
            None => self.outcome(
                ctx,
                ClientOutcome::KillFailed {
                    job: job.clone(),
                    reason,
                },
            ),
        }
    }

    fn advance_kill(&mut self, ctx: &mut dyn Context, job: &JobId, reason: &str) {
        let Some(c) = self.jobs.get_mut(job).and_then(|j| j.kill.take()) else {
            return;
        };
        self.timers.cancel(c.timer);
        self.continue_kill(ctx, job, c.targets, reason.into());
    }

    fn on_status_report(
        &mut self,
        ctx: &mut dyn Context,
        job: JobId,
        status: JobStatus,
        node: Option<NodeId>,
    ) {
        let now = ctx.now_ms();
        let Some(j) = self.jobs.get_mut(&job) else {
            return;
        };
        let answered = j.query.take();
        let updated = j.receiver.observe(node.clone(), status.clone(), None, now);
        if let Some(c) = answered {
            self.timers.cancel(c.timer);
            let lk = self.jobs[&job].receiver.last_known.clone();
            self.outcome(
                ctx,
                ClientOutcome::Status {
                    job: job.clone(),
                    status: lk.status,
                    node: lk.node,
                    source: c.current.label,
                },
            );
        } else if updated {
            if let JobStatus::Failed { reason } = status {
                self.outcome(ctx, ClientOutcome::JobFailed { job, reason });
            }
        }
    }

    fn on_kill_ack(&mut self, ctx: &mut dyn Context, job: JobId, was_running: bool) {
        let now = ctx.now_ms();
        let Some(j) = self.jobs.get_mut(&job) else {
            return;
        };
        let Some(c) = j.kill.take() else { return };
        j.receiver.observe(None, JobStatus::Killed, None, now);
        self.timers.cancel(c.timer);
        self.outcome(ctx, ClientOutcome::Killed { job, was_running });
    }

    fn on_protocol_error(&mut self, ctx: &mut dyn Context, code: &str, job: Option<JobId>) {
        let Some(job) = job else { return };
        let Some(j) = self.jobs.get(&job) else { return };
        if j.kill.is_some() {
            if code == codes::ALREADY_TERMINAL {
                let c = self
                    .jobs
                    .get_mut(&job)
                    .and_then(|j| j.kill.take())
                    .expect("checked");
                self.timers.cancel(c.timer);
                self.outcome(ctx, ClientOutcome::AlreadyTerminal { job });
            } else {
                self.advance_kill(ctx, &job, code);
            }
        } else if j.query.is_some() {
            self.advance_query(ctx, &job);
        }
    }

    fn on_location_update(&mut self, ctx: &mut dyn Context, u: crate::wire::LocationUpdate) {
        let now = ctx.now_ms();
        let Some(j) = self
            .jobs
            .values_mut()
            .find(|j| j.receiver.twin_id == u.agent_id)
        else {
            return;
        };
        if j.receiver
            .observe(Some(u.node), u.status.clone(), Some(u.hop), now)
        {
            j.receiver.node_endpoint = Some(u.endpoint);
            if let JobStatus::Failed { reason } = u.status {
                let job = j.receiver.job_id.clone();
                self.outcome(ctx, ClientOutcome::JobFailed { job, reason });
            }
        }
    }

    /// Where to send acknowledgements for the mobile agent of `job`.
    fn agent_endpoint(&self, job: &JobId, sender: &EntityId) -> Option<Endpoint> {
        let j = self.jobs.get(job)?;
        if let Some(s) = self.cfg.servers.iter().find(|s| *sender == s.id) {
            return Some(s.endpoint.clone());
        }
        j.receiver
            .node_endpoint
            .clone()
            .or_else(|| j.receiver.job_server.as_ref().map(|s| s.endpoint.clone()))
    }

    fn accept_result(
        &mut self,
        ctx: &mut dyn Context,
        payload: ResultPayload,
        via: &'static str,
    ) -> bool {
        let job = payload.job_id.clone();
        let now = ctx.now_ms();
        let Some(j) = self.jobs.get_mut(&job) else {
            return false;
        };
        let duplicate = j.receiver.has_result();
        if !duplicate {
            j.receiver.inbox.push(payload);
            j.receiver.observe(None, JobStatus::Completed, None, now);
        }
        ctx.note(Note::ResultReceived {
            job: job.clone(),
            duplicate,
        });
        self.outcome(
            ctx,
            ClientOutcome::ResultReceived {
                job: job.clone(),
                via,
                duplicate,
            },
        );
        if !duplicate {
            self.timers.arm(
                ctx,
                self.cfg.display_ms * MICROS_PER_MS,
                ClientTimer::Display(job),
            );
        }
        true
    }

    fn on_result_transfer(
        &mut self,
        ctx: &mut dyn Context,
        sender: &EntityId,
        payload: ResultPayload,
    ) {
        let job = payload.job_id.clone();
        if !self.accept_result(ctx, payload, "direct") {
            return;
        }
        let from = self.jobs[&job].receiver.agent_id.clone();
        if let Some(endpoint) = self.agent_endpoint(&job, sender) {
            let env = self
                .ids
                .envelope(from, sender.clone(), ResultAck { job_id: job });
            let _ = ctx.send(&endpoint, env);
        }
    }

    /// The mobile agent coming home with its result.
    fn on_homecoming(&mut self, ctx: &mut dyn Context, sender: &EntityId, msg: MigrateAgent) {
        let mut snapshot = msg.snapshot;
        let job = snapshot.job.job_id.clone();
        let Some(result) = msg.result else { return };
        let known = self
            .jobs
            .get(&job)
            .is_some_and(|j| j.receiver.twin_id == snapshot.agent_id);
        let fresh = known && !self.jobs[&job].receiver.has_result();
        if fresh {
            snapshot.record_hop(self.cfg.id.as_str());
            let before = snapshot.status.clone();
            if snapshot.advance(&LifecycleEvent::Complete).is_ok() {
                ctx.note(Note::Status {
                    job: job.clone(),
                    at: self.cfg.id.to_string(),
                    from: before,
                    to: snapshot.status.clone(),
                });
            }
        }
        if known {
            self.accept_result(ctx, result, "bring_back");
        }
        let ack = MigrateAck {
            agent_id: snapshot.agent_id.clone(),
            accepted: known,
            reason: (!known).then(|| "unknown_agent".into()),
            node: None,
        };
        let endpoint = if known {
            self.agent_endpoint(&job, sender)
        } else {
            None
        };
        let endpoint = endpoint.or_else(|| {
            self.cfg
                .servers
                .iter()
                .find(|s| *sender == s.id)
                .map(|s| s.endpoint.clone())
        });
        if let Some(endpoint) = endpoint {
            let from: EntityId = snapshot.twin_id.clone().into();
            let env = self.ids.envelope(from, sender.clone(), ack);
            let _ = ctx.send(&endpoint, env);
        }
    }
}

impl Actor for ClientContainer {
    fn id(&self) -> EntityId {
        self.cfg.id.clone().into()
    }

    fn endpoint(&self) -> &str {
        &self.cfg.endpoint
    }

    fn on_start(&mut self, ctx: &mut dyn Context) {
        if self.register_on_start {
            self.register_with_all(ctx);
        }
    }

    fn on_message(&mut self, ctx: &mut dyn Context, env: Envelope) {
        let sender = env.sender.clone();
        match env.body {
            Body::RegisterAck(a) => self.on_register_ack(ctx, a.server, a.accepted),
            Body::SubmitAck(a) => self.on_submit_ack(ctx, &sender, a.job_id, a.accepted),
            Body::MigrateAck(a) => {
                self.on_dispatch_ack(ctx, &sender, a);
            }
            Body::MigrateAgent(m) => self.on_homecoming(ctx, &sender, m),
            Body::ResultTransfer(t) => self.on_result_transfer(ctx, &sender, t.payload),
            Body::LocationUpdate(u) => self.on_location_update(ctx, u),
            Body::StatusReport(r) => self.on_status_report(ctx, r.job_id, r.status, r.node),
            Body::KillAck(k) => self.on_kill_ack(ctx, k.job_id, k.was_running),
            Body::ProtocolError(e) => {
                ctx.note(Note::Info(format!(
                    "{}: {} {}",
                    self.cfg.id, e.code, e.detail
                )));
                self.on_protocol_error(ctx, &e.code, e.job_id);
            }
            Body::Heartbeat(_) => {
                let from: EntityId = self.cfg.id.clone().into();
                if let Some(s) = self.cfg.servers.iter().find(|s| sender == s.id).cloned() {
                    let env =
                        self.ids
                            .envelope(&self.cfg.id, sender, crate::wire::HeartbeatAck { from });
                    let _ = ctx.send(&s.endpoint, env);
                }
            }
            other => {
                ctx.note(Note::Info(format!(
                    "{}: ignoring {} from {sender}",
                    self.cfg.id,
                    other.kind().as_str()
                )));
            }
        }
    }

    fn on_timer(&mut self, ctx: &mut dyn Context, token: u64) {
        match self.timers.fire(token) {
            Some(ClientTimer::Register) => {
                if let Some((_, _, q)) = self.registering.as_mut() {
                    let q = *q;
                    self.registering = Some((Vec::new(), 0, q));
                    self.finish_register(ctx);
                }
            }
            Some(ClientTimer::Dispatch(job)) => self.on_dispatch_timeout(ctx, &job),
            Some(ClientTimer::Query(job)) => {
                if let Some(c) = self.jobs.get_mut(&job).and_then(|j| j.query.take()) {
                    self.continue_query(ctx, &job, c.targets);
                }
            }
            Some(ClientTimer::Kill(job)) => {
                if let Some(c) = self.jobs.get_mut(&job).and_then(|j| j.kill.take()) {
                    self.continue_kill(ctx, &job, c.targets, "timeout".into());
                }
            }
            Some(ClientTimer::Display(job)) => {
                ctx.note(Note::Displayed { job: job.clone() });
                self.outcome(ctx, ClientOutcome::Displayed { job });
            }
            None => {}
        }
    }
}
