//! Scenario scripts.
//!
//! A script is plain text, one directive per line, `#` for comments. Each
//! directive is a word, optional positional arguments, then `key=value`
//! pairs. Times are virtual milliseconds.
//!
//! ```text
//! client_link bandwidth=500000 latency_ms=50
//! server_link bandwidth=10000000 latency_ms=5
//! link n1 n2 bandwidth=1000000 latency_ms=20
//! thresholds lo=0.5 hi=0.8
//! agent max_hops=5
//! heartbeat interval_ms=1000 miss_limit=3
//! cost file_size=5000000 snapshot=2000 result=20000 display_ms=50
//! server s1 nodes=n1,n2
//! server s2 nodes=n3
//! node n1 capacity=2 speed=1.0
//! node n2 capacity=2
//! node n3 capacity=1
//! client c1 speed=2.0 servers=s1,s2
//! file data.hnf hier branches=2 values=1000
//! file events.xml xml events=10 drawables=5 points=4
//! submit c1 job=j1 at=100 kind=hist1d input=data.hnf branch=b0 nbins=10 lo=0 hi=1 delivery=direct
//! submit c1 job=j2 at=100 kind=hist2d input=data.hnf branch=b0,b1 nbins=10,10 lo=0,0 hi=1,1
//! load n1 at=0 cpu=0.9 queue=0 mem=0
//! load n1 off at=5000
//! crash s1 at=50
//! link_down c1 from=200 to=900
//! reconnect c1 at=1000
//! kill c1 job=j1 at=300
//! query c1 job=j1 at=500
//! end at=600000
//! ```
//!
//! Generated files are derived from the run seed and the file name, so the
//! same (script, seed) always produces the same bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use thiserror::Error;

use crate::model::{
    AxisSpec, ClientId, DeliveryMode, JobId, JobParams, JobSpec, LoadThresholds, NodeId,
};
use crate::runtime::{
    DEFAULT_HEARTBEAT_INTERVAL_MS, DEFAULT_HEARTBEAT_MISS_LIMIT, DEFAULT_MAX_HOPS,
};

use super::timing::{CostModel, LinkSpec};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("script line {line}: {detail}")]
pub struct ScriptError {
    pub line: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerDecl {
    pub id: NodeId,
    pub nodes: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeDecl {
    pub id: NodeId,
    pub capacity: u32,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientDecl {
    pub id: ClientId,
    pub speed: f64,
    pub servers: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileGen {
    Hier {
        branches: usize,
        values: usize,
    },
    Xml {
        events: u64,
        drawables: u64,
        points: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FileDecl {
    pub name: String,
    pub gen: FileGen,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedLoad {
    pub cpu: f64,
    pub queue: u32,
    pub mem: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScriptEvent {
    Submit {
        client: ClientId,
        spec: JobSpec,
    },
    /// `None` clears a previously scripted load.
    Load {
        node: NodeId,
        load: Option<ScriptedLoad>,
    },
    Crash {
        target: String,
    },
    LinkDown {
        entity: String,
        until_ms: u64,
    },
    Reconnect {
        client: ClientId,
    },
    Kill {
        client: ClientId,
        job: JobId,
    },
    Query {
        client: ClientId,
        job: JobId,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedEvent {
    pub at_ms: u64,
    /// Script line, for diagnostics.
    pub line: usize,
    pub event: ScriptEvent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub cost: CostModel,
    /// Per-pair link overrides, keyed with the smaller id first.
    pub links: BTreeMap<(String, String), LinkSpec>,
    pub thresholds: LoadThresholds,
    pub max_hops: u32,
    pub heartbeat_interval_ms: u64,
    pub heartbeat_miss_limit: u32,
    pub servers: Vec<ServerDecl>,
    pub nodes: Vec<NodeDecl>,
    pub clients: Vec<ClientDecl>,
    pub files: Vec<FileDecl>,
    /// Sorted by time; ties keep script order.
    pub events: Vec<TimedEvent>,
    pub end_ms: Option<u64>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            cost: CostModel::default(),
            links: BTreeMap::new(),
            thresholds: LoadThresholds::default(),
            max_hops: DEFAULT_MAX_HOPS,
            heartbeat_interval_ms: DEFAULT_HEARTBEAT_INTERVAL_MS,
            heartbeat_miss_limit: DEFAULT_HEARTBEAT_MISS_LIMIT,
            servers: Vec::new(),
            nodes: Vec::new(),
            clients: Vec::new(),
            files: Vec::new(),
            events: Vec::new(),
            end_ms: None,
        }
    }
}

impl Scenario {
    pub fn node(&self, id: &NodeId) -> Option<&NodeDecl> {
        self.nodes.iter().find(|n| &n.id == id)
    }

    /// Server whose farm contains `node`.
    pub fn server_of(&self, node: &NodeId) -> Option<&ServerDecl> {
        self.servers.iter().find(|s| s.nodes.contains(node))
    }
}

struct Line<'a> {
    no: usize,
    word: &'a str,
    positional: Vec<&'a str>,
    kv: BTreeMap<&'a str, &'a str>,
}

impl<'a> Line<'a> {
    fn err(&self, detail: impl Into<String>) -> ScriptError {
        ScriptError {
            line: self.no,
            detail: detail.into(),
        }
    }

    fn take(&mut self, key: &str) -> Option<&'a str> {
        self.kv.remove(key)
    }

    fn req(&mut self, key: &str) -> Result<&'a str, ScriptError> {
        self.take(key)
            .ok_or_else(|| self.err(format!("{}: missing {key}=", self.word)))
    }

    fn num<T: FromStr>(&self, key: &str, raw: &str) -> Result<T, ScriptError> {
        raw.parse()
            .map_err(|_| self.err(format!("{key}: bad number {raw}")))
    }

    fn req_num<T: FromStr>(&mut self, key: &str) -> Result<T, ScriptError> {
        let raw = self.req(key)?;
        self.num(key, raw)
    }

    fn opt_num<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, ScriptError> {
        match self.take(key) {
            Some(raw) => self.num(key, raw).map(Some),
            None => Ok(None),
        }
    }

    fn positional(&self, n: usize) -> Result<Vec<&'a str>, ScriptError> {
        if self.positional.len() != n {
            return Err(self.err(format!(
                "{}: expected {n} positional argument(s)",
                self.word
            )));
        }
        Ok(self.positional.clone())
    }

    fn done(&self) -> Result<(), ScriptError> {
        match self.kv.keys().next() {
            Some(k) => Err(self.err(format!("{}: unknown key {k}", self.word))),
            None => Ok(()),
        }
    }
}

fn id<T: FromStr>(line: &Line, raw: &str) -> Result<T, ScriptError>
where
    T::Err: std::fmt::Display,
{
    raw.parse()
        .map_err(|e| line.err(format!("bad id {raw:?}: {e}")))
}

fn id_list<T: FromStr>(line: &Line, raw: &str) -> Result<Vec<T>, ScriptError>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .filter(|s| !s.is_empty())
        .map(|s| id(line, s))
        .collect()
}

fn link_spec(line: &mut Line) -> Result<LinkSpec, ScriptError> {
    let bandwidth: u64 = line.req_num("bandwidth")?;
    let latency_ms: u64 = line.req_num("latency_ms")?;
    if bandwidth == 0 {
        return Err(line.err("bandwidth must be > 0"));
    }
    Ok(LinkSpec {
        bandwidth,
        latency_us: latency_ms * 1000,
    })
}

fn speed(line: &Line, raw: &str) -> Result<f64, ScriptError> {
    let s: f64 = line.num("speed", raw)?;
    if !(s.is_finite() && s >= 1.0) {
        return Err(line.err("speed must be >= 1"));
    }
    Ok(s)
}

fn parse_submit(line: &mut Line) -> Result<TimedEvent, ScriptError> {
    let [client] = line.positional(1)?[..] else {
        unreachable!()
    };
    let client = id(line, client)?;
    let raw = line.req("job")?;
    let job = id(line, raw)?;
    let at_ms = line.req_num("at")?;
    let input_ref = line.req("input")?.to_owned();
    let kind = line.req("kind")?;
    let delivery_mode = match line.take("delivery").unwrap_or("direct") {
        "direct" => DeliveryMode::Direct,
        "bringback" | "bring_back" => DeliveryMode::BringBack,
        "auto" => DeliveryMode::Auto,
        other => return Err(line.err(format!("unknown delivery mode {other}"))),
    };
    let params = match kind {
        "parsexml" | "parse_event_xml" => JobParams::ParseEventXml,
        "hist1d" | "hist2d" => {
            let branches: Vec<&str> = line.req("branch")?.split(',').collect();
            let nbins: Vec<&str> = line.req("nbins")?.split(',').collect();
            let los: Vec<&str> = line.req("lo")?.split(',').collect();
            let his: Vec<&str> = line.req("hi")?.split(',').collect();
            let want = if kind == "hist1d" { 1 } else { 2 };
            if [branches.len(), nbins.len(), los.len(), his.len()]
                .iter()
                .any(|&n| n != want)
            {
                return Err(line.err(format!(
                    "{kind}: expected {want} value(s) for branch, nbins, lo, hi"
                )));
            }
            let mut axes = Vec::new();
            for i in 0..want {
                axes.push(AxisSpec {
                    branch: branches[i].to_owned(),
                    nbins: line.num("nbins", nbins[i])?,
                    lo: line.num("lo", los[i])?,
                    hi: line.num("hi", his[i])?,
                });
            }
            let mut axes = axes.into_iter();
            let x = axes.next().expect("want >= 1");
            match axes.next() {
                None => JobParams::Hist1D { axis: x },
                Some(y) => JobParams::Hist2D { x, y },
            }
        }
        other => return Err(line.err(format!("unknown job kind {other}"))),
    };
    let spec = JobSpec {
        job_id: job,
        input_ref,
        params,
        delivery_mode,
    };
    let violations = crate::model::validate_job_spec(&spec);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(line.err(format!("invalid job: {}", list.join("; "))));
    }
    Ok(TimedEvent {
        at_ms,
        line: line.no,
        event: ScriptEvent::Submit { client, spec },
    })
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScriptError> {
    let mut sc = Scenario::default();
    let (mut lo, mut hi) = (sc.thresholds.theta_lo, sc.thresholds.theta_hi);
    let mut threshold_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut words = content.split_whitespace();
        let word = words.next().expect("non-empty");
        let mut line = Line {
            no: i + 1,
            word,
            positional: Vec::new(),
            kv: BTreeMap::new(),
        };
        for w in words {
            match w.split_once('=') {
                Some((k, v)) => {
                    if line.kv.insert(k, v).is_some() {
                        return Err(line.err(format!("duplicate key {k}")));
                    }
                }
                None if line.kv.is_empty() => line.positional.push(w),
                None => return Err(line.err(format!("positional argument {w} after key=value"))),
            }
        }
        let timed = |line: &Line, at_ms, event| TimedEvent {
            at_ms,
            line: line.no,
            event,
        };
        match word {
            "client_link" => {
                line.positional(0)?;
                sc.cost.client_link = link_spec(&mut line)?;
            }
            "server_link" => {
                line.positional(0)?;
                sc.cost.server_link = link_spec(&mut line)?;
            }
            "link" => {
                let [a, b] = line.positional(2)?[..] else {
                    unreachable!()
                };
                let key = if a <= b {
                    (a.to_string(), b.to_string())
                } else {
                    (b.to_string(), a.to_string())
                };
                let spec = link_spec(&mut line)?;
                sc.links.insert(key, spec);
            }
            "thresholds" => {
                line.positional(0)?;
                lo = line.opt_num("lo")?.unwrap_or(lo);
                hi = line.opt_num("hi")?.unwrap_or(hi);
                threshold_line = line.no;
            }
            "agent" => {
                line.positional(0)?;
                sc.max_hops = line.req_num("max_hops")?;
            }
            "heartbeat" => {
                line.positional(0)?;
                sc.heartbeat_interval_ms = line
                    .opt_num("interval_ms")?
                    .unwrap_or(sc.heartbeat_interval_ms);
                sc.heartbeat_miss_limit = line
                    .opt_num("miss_limit")?
                    .unwrap_or(sc.heartbeat_miss_limit);
                if sc.heartbeat_interval_ms == 0 || sc.heartbeat_miss_limit == 0 {
                    return Err(line.err("heartbeat settings must be positive"));
                }
            }
            "cost" => {
                line.positional(0)?;
                let c = &mut sc.cost;
                c.file_size = line.opt_num("file_size")?.unwrap_or(c.file_size);
                c.snapshot_bytes = line.opt_num("snapshot")?.unwrap_or(c.snapshot_bytes);
                c.result_bytes = line.opt_num("result")?.unwrap_or(c.result_bytes);
                if let Some(ms) = line.opt_num::<u64>("display_ms")? {
                    c.display_us = ms * 1000;
                }
                if let Some(raw) = line.take("server_speed") {
                    c.server_speed = speed(&line, raw)?;
                }
            }
            "server" => {
                let [sid] = line.positional(1)?[..] else {
                    unreachable!()
                };
                let decl = ServerDecl {
                    id: id(&line, sid)?,
                    nodes: line
                        .take("nodes")
                        .map_or(Ok(Vec::new()), |n| id_list(&line, n))?,
                };
                sc.servers.push(decl);
            }
            "node" => {
                let [nid] = line.positional(1)?[..] else {
                    unreachable!()
                };
                let capacity = line.opt_num("capacity")?.unwrap_or(1);
                if capacity == 0 {
                    return Err(line.err("capacity must be >= 1"));
                }
                let s = match line.take("speed") {
                    Some(raw) => speed(&line, raw)?,
                    None => 1.0,
                };
                sc.nodes.push(NodeDecl {
                    id: id(&line, nid)?,
                    capacity,
                    speed: s,
                });
            }
            "client" => {
                let [cid] = line.positional(1)?[..] else {
                    unreachable!()
                };
                let s = match line.take("speed") {
                    Some(raw) => speed(&line, raw)?,
                    None => sc.cost.client_speed,
                };
                let raw = line.req("servers")?;
                let servers = id_list(&line, raw)?;
                sc.clients.push(ClientDecl {
                    id: id(&line, cid)?,
                    speed: s,
                    servers,
                });
            }
            "file" => {
                let [name, kind] = line.positional(2)?[..] else {
                    unreachable!()
                };
                let gen = match kind {
                    "hier" => FileGen::Hier {
                        branches: line.req_num("branches")?,
                        values: line.req_num("values")?,
                    },
                    "xml" => FileGen::Xml {
                        events: line.req_num("events")?,
                        drawables: line.req_num("drawables")?,
                        points: line.req_num("points")?,
                    },
                    other => return Err(line.err(format!("unknown file kind {other}"))),
                };
                sc.files.push(FileDecl {
                    name: name.to_string(),
                    gen,
                });
            }
            "submit" => {
                let ev = parse_submit(&mut line)?;
                sc.events.push(ev);
            }
            "load" => {
                let node = id(&line, line.positional.first().copied().unwrap_or(""))?;
                let at = line.req_num("at")?;
                let load = match line.positional.get(1) {
                    Some(&"off") if line.positional.len() == 2 => None,
                    None => {
                        let cpu: f64 = line.opt_num("cpu")?.unwrap_or(0.0);
                        let mem: f64 = line.opt_num("mem")?.unwrap_or(0.0);
                        if !(0.0..=1.0).contains(&cpu) || !(0.0..=1.0).contains(&mem) {
                            return Err(line.err("cpu and mem must be in [0, 1]"));
                        }
                        Some(ScriptedLoad {
                            cpu,
                            queue: line.opt_num("queue")?.unwrap_or(0),
                            mem,
                        })
                    }
                    Some(_) => return Err(line.err("load: expected NODE [off]")),
                };
                sc.events
                    .push(timed(&line, at, ScriptEvent::Load { node, load }));
            }
            "crash" => {
                let [target] = line.positional(1)?[..] else {
                    unreachable!()
                };
                let at = line.req_num("at")?;
                sc.events.push(timed(
                    &line,
                    at,
                    ScriptEvent::Crash {
                        target: target.to_string(),
                    },
                ));
            }
            "link_down" => {
                let [entity] = line.positional(1)?[..] else {
                    unreachable!()
                };
                let from = line.req_num("from")?;
                let until_ms: u64 = line.req_num("to")?;
                if until_ms <= from {
                    return Err(line.err("link_down: to must be after from"));
                }
                let ev = ScriptEvent::LinkDown {
                    entity: entity.to_string(),
                    until_ms,
                };
                sc.events.push(timed(&line, from, ev));
            }
            "reconnect" => {
                let [client] = line.positional(1)?[..] else {
                    unreachable!()
                };
                let client = id(&line, client)?;
                let at = line.req_num("at")?;
                sc.events
                    .push(timed(&line, at, ScriptEvent::Reconnect { client }));
            }
            "kill" | "query" => {
                let [client] = line.positional(1)?[..] else {
                    unreachable!()
                };
                let client = id(&line, client)?;
                let raw = line.req("job")?;
                let job = id(&line, raw)?;
                let at = line.req_num("at")?;
                let ev = if word == "kill" {
                    ScriptEvent::Kill { client, job }
                } else {
                    ScriptEvent::Query { client, job }
                };
                sc.events.push(timed(&line, at, ev));
            }
            "end" => {
                line.positional(0)?;
                sc.end_ms = Some(line.req_num("at")?);
            }
            other => return Err(line.err(format!("unknown directive {other}"))),
        }
        line.done()?;
    }
    sc.thresholds = LoadThresholds::new(lo, hi).map_err(|e| ScriptError {
        line: threshold_line,
        detail: e.to_string(),
    })?;
    check_references(&sc)?;
    sc.events.sort_by_key(|e| e.at_ms);
    Ok(sc)
}

fn check_references(sc: &Scenario) -> Result<(), ScriptError> {
    let mut names = BTreeSet::new();
    let all_ids = sc
        .servers
        .iter()
        .map(|s| s.id.as_str())
        .chain(sc.nodes.iter().map(|n| n.id.as_str()))
        .chain(sc.clients.iter().map(|c| c.id.as_str()));
    for name in all_ids {
        if !names.insert(name) {
            return Err(ScriptError {
                line: 0,
                detail: format!("duplicate entity {name}"),
            });
        }
    }
    let err = |detail: String| ScriptError { line: 0, detail };
    let mut owned = BTreeSet::new();
    for s in &sc.servers {
        for n in &s.nodes {
            if sc.node(n).is_none() {
                return Err(err(format!("server {}: unknown node {n}", s.id)));
            }
            if !owned.insert(n.clone()) {
                return Err(err(format!("node {n} belongs to two servers")));
            }
        }
    }
    for c in &sc.clients {
        for s in &c.servers {
            if !sc.servers.iter().any(|d| &d.id == s) {
                return Err(err(format!("client {}: unknown server {s}", c.id)));
            }
        }
    }
    let mut jobs = BTreeSet::new();
    for e in &sc.events {
        let at = |detail: String| ScriptError {
            line: e.line,
            detail,
        };
        let client_known = |c: &ClientId| sc.clients.iter().any(|d| &d.id == c);
        match &e.event {
            ScriptEvent::Submit { client, spec } => {
                if !client_known(client) {
                    return Err(at(format!("unknown client {client}")));
                }
                if !jobs.insert(spec.job_id.clone()) {
                    return Err(at(format!("duplicate job {}", spec.job_id)));
                }
            }
            ScriptEvent::Load { node, .. } if sc.node(node).is_none() => {
                return Err(at(format!("unknown node {node}")));
            }
            ScriptEvent::Crash { target: t } | ScriptEvent::LinkDown { entity: t, .. }
                if !names.contains(t.as_str()) =>
            {
                return Err(at(format!("unknown entity {t}")));
            }
            ScriptEvent::Reconnect { client }
            | ScriptEvent::Kill { client, .. }
            | ScriptEvent::Query { client, .. }
                if !client_known(client) =>
            {
                return Err(at(format!("unknown client {client}")));
            }
            _ => {}
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn module_doc_example_parses() {
        let doc: String = include_str!("script.rs")
            .lines()
            .skip_while(|l| !l.starts_with("//! ```text"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| format!("{}\n", l.trim_start_matches("//! ")))
            .collect();
        assert!(doc.contains("submit"));
        parse_scenario(&doc).unwrap();
    }

    const BASIC: &str = "\
server s1 nodes=n1,n2
node n1 capacity=2
node n2 speed=1.5
client c1 servers=s1
file d.hnf hier branches=2 values=100
submit c1 job=j1 at=10 kind=hist1d input=d.hnf branch=b0 nbins=10 lo=0 hi=1
submit c1 job=j2 at=5 kind=hist2d input=d.hnf branch=b0,b1 nbins=4,4 lo=0,0 hi=1,1 delivery=auto
load n1 at=0 cpu=0.9
crash s1 at=5000
";

    #[test]
    fn parses_and_sorts_events() {
        let sc = parse_scenario(BASIC).unwrap();
        assert_eq!(sc.nodes[1].speed, 1.5);
        assert_eq!(sc.clients[0].speed, 2.0);
        let times: Vec<u64> = sc.events.iter().map(|e| e.at_ms).collect();
        assert_eq!(times, [0, 5, 10, 5000]);
        let ScriptEvent::Submit { spec, .. } = &sc.events[1].event else {
            panic!()
        };
        assert!(matches!(spec.params, JobParams::Hist2D { .. }));
        assert_eq!(spec.delivery_mode, DeliveryMode::Auto);
    }

    #[test]
    fn errors_name_the_line() {
        let bad = [
            ("bogus x=1", 1),
            ("server s1\nnode n1 capacity=zero", 2),
            ("server s1\nclient c1 servers=s1 colour=red", 2),
            ("thresholds lo=0.9 hi=0.1", 1),
            ("server s1\nclient c1 servers=s1\nsubmit c1 job=j at=1 kind=hist1d input=f branch=b nbins=0 lo=0 hi=1", 3),
            ("server s1\nclient c1 servers=s1\nkill c2 job=j at=1", 3),
        ];
        for (text, line) in bad {
            let err = parse_scenario(text).unwrap_err();
            assert_eq!(err.line, line, "{text}: {err}");
        }
        assert!(parse_scenario("server s1 nodes=n9").is_err());
        assert!(parse_scenario("client c1 servers=s1").is_err());
    }
}
