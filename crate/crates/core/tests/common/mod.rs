//! Shared generators and oracles for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use proptest::prelude::*;

use agentfarm::model::*;
use agentfarm::wire::*;
use agentfarm::workloads::{Axis, BoundingBox, DrawableSummary, Histogram1D, Histogram2D};

pub fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9._:-]{0,10}"
}

pub fn node_id() -> impl Strategy<Value = NodeId> {
    ident().prop_map(|s| NodeId::new(s).unwrap())
}

pub fn job_id() -> impl Strategy<Value = JobId> {
    ident().prop_map(|s| JobId::new(s).unwrap())
}

pub fn agent_id() -> impl Strategy<Value = AgentId> {
    ident().prop_map(|s| AgentId::new(s).unwrap())
}

pub fn client_id() -> impl Strategy<Value = ClientId> {
    ident().prop_map(|s| ClientId::new(s).unwrap())
}

pub fn entity_id() -> impl Strategy<Value = EntityId> {
    node_id().prop_map(EntityId::from)
}

/// Any finite float, bit patterns included (no NaN or infinity: JSON has
/// no spelling for them).
pub fn finite() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO
}

pub fn unit() -> impl Strategy<Value = f64> {
    0.0..=1.0f64
}

pub fn text() -> impl Strategy<Value = String> {
    "\\PC{0,24}"
}

pub fn axis_spec() -> impl Strategy<Value = AxisSpec> {
    (ident(), 1u32..500, finite(), finite()).prop_map(|(branch, nbins, a, b)| AxisSpec {
        branch,
        nbins,
        lo: a.min(b),
        hi: a.max(b),
    })
}

pub fn job_params() -> impl Strategy<Value = JobParams> {
    prop_oneof![
        axis_spec().prop_map(|axis| JobParams::Hist1D { axis }),
        (axis_spec(), axis_spec()).prop_map(|(x, y)| JobParams::Hist2D { x, y }),
        Just(JobParams::ParseEventXml),
    ]
}

pub fn delivery() -> impl Strategy<Value = DeliveryMode> {
    prop_oneof![
        Just(DeliveryMode::Direct),
        Just(DeliveryMode::BringBack),
        Just(DeliveryMode::Auto)
    ]
}

pub fn job_spec() -> impl Strategy<Value = JobSpec> {
    (job_id(), "\\PC{1,30}", job_params(), delivery()).prop_map(
        |(job_id, input_ref, params, delivery_mode)| JobSpec {
            job_id,
            input_ref,
            params,
            delivery_mode,
        },
    )
}

pub fn job_status() -> impl Strategy<Value = JobStatus> {
    prop_oneof![
        Just(JobStatus::Pending),
        Just(JobStatus::Submitted),
        Just(JobStatus::Migrating),
        node_id().prop_map(|node| JobStatus::Running { node }),
        (node_id(), node_id()).prop_map(|(from, to)| JobStatus::Relocating { from, to }),
        Just(JobStatus::Completed),
        text().prop_map(|reason| JobStatus::Failed { reason }),
        Just(JobStatus::Killed),
    ]
}

pub fn snapshot() -> impl Strategy<Value = AgentSnapshot> {
    (
        agent_id(),
        agent_id(),
        client_id(),
        job_spec(),
        job_status(),
        0u32..10,
        ident(),
        prop::collection::vec(ident(), 0..6),
    )
        .prop_map(
            |(agent_id, twin_id, client, job, status, hop_count, home_endpoint, visited)| {
                AgentSnapshot {
                    agent_id,
                    twin_id,
                    client,
                    job,
                    status,
                    hop_count,
                    home_endpoint,
                    visited,
                }
            },
        )
}

pub fn load_report() -> impl Strategy<Value = LoadReport> {
    (node_id(), unit(), 0u32..100, 1u32..64, unit(), any::<u64>()).prop_map(
        |(node, cpu_util, queue_depth, capacity, mem_util, sampled_at)| LoadReport {
            node,
            cpu_util,
            queue_depth,
            capacity,
            mem_util,
            sampled_at,
        },
    )
}

fn counts(n: usize) -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(any::<u64>(), n)
}

pub fn result_data() -> impl Strategy<Value = ResultData> {
    let h1 = (1usize..20, finite(), finite())
        .prop_flat_map(|(n, lo, hi)| {
            (
                Just(n),
                Just(lo),
                Just(hi),
                counts(n),
                any::<u64>(),
                any::<u64>(),
            )
        })
        .prop_map(|(n, lo, hi, counts, underflow, overflow)| {
            ResultData::Hist1D(Histogram1D {
                nbins: n as u32,
                lo,
                hi,
                counts,
                underflow,
                overflow,
            })
        });
    let h2 = (1usize..6, 1usize..6, finite(), finite())
        .prop_flat_map(|(nx, ny, lo, hi)| {
            (
                Just(nx),
                Just(ny),
                Just(lo),
                Just(hi),
                counts(nx * ny),
                any::<[u64; 4]>(),
            )
        })
        .prop_map(|(nx, ny, lo, hi, counts, f)| {
            ResultData::Hist2D(Histogram2D {
                x: Axis {
                    nbins: nx as u32,
                    lo,
                    hi,
                },
                y: Axis {
                    nbins: ny as u32,
                    lo: hi,
                    hi: lo,
                },
                counts,
                x_underflow: f[0],
                x_overflow: f[1],
                y_underflow: f[2],
                y_overflow: f[3],
            })
        });
    let bbox = (
        any::<[bool; 1]>(),
        [finite(), finite(), finite()],
        [finite(), finite(), finite()],
    )
        .prop_map(|(some, min, max)| some[0].then_some(BoundingBox { min, max }));
    let drawables = (
        any::<u64>(),
        prop::collection::btree_map(ident(), any::<u64>(), 0..5),
        any::<u64>(),
        bbox,
    )
        .prop_map(|(events, drawables_by_type, total_points, bounding_box)| {
            ResultData::Drawables(DrawableSummary {
                events,
                drawables_by_type: drawables_by_type.into_iter().collect::<BTreeMap<_, _>>(),
                total_points,
                bounding_box,
            })
        });
    prop_oneof![h1, h2, drawables]
}

pub fn result_payload() -> impl Strategy<Value = ResultPayload> {
    (job_id(), node_id(), result_data()).prop_map(|(job_id, node, data)| ResultPayload {
        job_id,
        node,
        data,
    })
}

/// Random bodies of exactly `kind`.
pub fn body_of(kind: MessageKind) -> BoxedStrategy<Body> {
    use MessageKind as K;
    match kind {
        K::RegisterClient => (client_id(), ident())
            .prop_map(|(client, endpoint)| RegisterClient { client, endpoint }.into())
            .boxed(),
        K::RegisterAck => (node_id(), any::<bool>())
            .prop_map(|(server, accepted)| RegisterAck { server, accepted }.into())
            .boxed(),
        K::SubmitJob => job_spec()
            .prop_map(|spec| SubmitJob { spec }.into())
            .boxed(),
        K::SubmitAck => (job_id(), any::<bool>(), prop::option::of(text()))
            .prop_map(|(job_id, accepted, reason)| {
                SubmitAck {
                    job_id,
                    accepted,
                    reason,
                }
                .into()
            })
            .boxed(),
        K::MigrateAgent => (snapshot(), prop::option::of(result_payload()))
            .prop_map(|(snapshot, result)| MigrateAgent { snapshot, result }.into())
            .boxed(),
        K::MigrateAck => (
            agent_id(),
            any::<bool>(),
            prop::option::of(text()),
            prop::option::of(node_id()),
        )
            .prop_map(|(agent_id, accepted, reason, node)| {
                MigrateAck {
                    agent_id,
                    accepted,
                    reason,
                    node,
                }
                .into()
            })
            .boxed(),
        K::LoadQuery => node_id().prop_map(|node| LoadQuery { node }.into()).boxed(),
        K::LoadReply => load_report()
            .prop_map(|report| LoadReply { report }.into())
            .boxed(),
        K::StatusQuery => job_id()
            .prop_map(|job_id| StatusQuery { job_id }.into())
            .boxed(),
        K::StatusReport => (job_id(), job_status(), prop::option::of(node_id()))
            .prop_map(|(job_id, status, node)| {
                StatusReport {
                    job_id,
                    status,
                    node,
                }
                .into()
            })
            .boxed(),
        K::Kill => job_id().prop_map(|job_id| Kill { job_id }.into()).boxed(),
        K::KillAck => (job_id(), any::<bool>())
            .prop_map(|(job_id, was_running)| {
                KillAck {
                    job_id,
                    was_running,
                }
                .into()
            })
            .boxed(),
        K::LocationUpdate => (agent_id(), node_id(), job_status(), ident(), any::<u32>())
            .prop_map(|(agent_id, node, status, endpoint, hop)| {
                LocationUpdate {
                    agent_id,
                    node,
                    status,
                    endpoint,
                    hop,
                }
                .into()
            })
            .boxed(),
        K::ResultTransfer => result_payload()
            .prop_map(|payload| ResultTransfer { payload }.into())
            .boxed(),
        K::ResultAck => job_id()
            .prop_map(|job_id| ResultAck { job_id }.into())
            .boxed(),
        K::Heartbeat => entity_id()
            .prop_map(|from| Heartbeat { from }.into())
            .boxed(),
        K::HeartbeatAck => entity_id()
            .prop_map(|from| HeartbeatAck { from }.into())
            .boxed(),
        K::ProtocolError => (ident(), text(), prop::option::of(job_id()))
            .prop_map(|(code, detail, job_id)| {
                ProtocolError {
                    code,
                    detail,
                    job_id,
                }
                .into()
            })
            .boxed(),
    }
}

pub fn envelope_of(kind: MessageKind) -> BoxedStrategy<Envelope> {
    (any::<u64>(), entity_id(), entity_id(), body_of(kind))
        .prop_map(|(msg_id, sender, recipient, body)| Envelope {
            msg_id,
            sender,
            recipient,
            body,
        })
        .boxed()
}

/// Axis slot by brute force: scan every bin for the one whose unit
/// interval holds the scaled position. `None` is under, `Some(nbins)` over.
fn naive_slot(v: f64, nbins: u32, lo: f64, hi: f64) -> Option<usize> {
    if v.is_nan() || v < lo {
        return None;
    }
    if v >= hi {
        return Some(nbins as usize);
    }
    let t = (v - lo) / (hi - lo) * nbins as f64;
    for b in 0..nbins as usize {
        if (b as f64) <= t && t < (b + 1) as f64 {
            return Some(b);
        }
    }
    // t rounded up to nbins for a value just below hi
    Some(nbins as usize - 1)
}

/// Counts, underflow, overflow.
pub fn naive_hist1d(values: &[f64], nbins: u32, lo: f64, hi: f64) -> (Vec<u64>, u64, u64) {
    let mut counts = vec![0u64; nbins as usize];
    let (mut under, mut over) = (0, 0);
    for &v in values {
        match naive_slot(v, nbins, lo, hi) {
            None => under += 1,
            Some(b) if b == nbins as usize => over += 1,
            Some(b) => counts[b] += 1,
        }
    }
    (counts, under, over)
}

/// Cell counts keyed by (ix, iy), then x under/over and y under/over. A
/// pair out of range on x is charged to x only.
pub fn naive_hist2d(
    xs: &[f64],
    ys: &[f64],
    x: &AxisSpec,
    y: &AxisSpec,
) -> (BTreeMap<(usize, usize), u64>, [u64; 4]) {
    let mut cells = BTreeMap::new();
    let mut flows = [0u64; 4];
    for (&vx, &vy) in xs.iter().zip(ys) {
        let sx = naive_slot(vx, x.nbins, x.lo, x.hi);
        let sy = naive_slot(vy, y.nbins, y.lo, y.hi);
        match (sx, sy) {
            (None, _) => flows[0] += 1,
            (Some(b), _) if b == x.nbins as usize => flows[1] += 1,
            (_, None) => flows[2] += 1,
            (_, Some(b)) if b == y.nbins as usize => flows[3] += 1,
            (Some(ix), Some(iy)) => *cells.entry((ix, iy)).or_insert(0) += 1,
        }
    }
    (cells, flows)
}

/// Placement by exhaustive scan, written from the rule rather than the
/// implementation: collect every eligible member, keep the best class
/// present, then sort by (index, id) and take the head.
pub fn oracle_select(
    reports: &[LoadReport],
    exclude: &std::collections::BTreeSet<NodeId>,
    t: &LoadThresholds,
) -> Option<NodeId> {
    let index = |r: &LoadReport| {
        let cap = if r.capacity == 0 { 1 } else { r.capacity };
        let q = f64::min(r.queue_depth as f64 / cap as f64, 1.0);
        [r.cpu_util, q, r.mem_util]
            .into_iter()
            .fold(f64::MIN, f64::max)
    };
    let mut under = Vec::new();
    let mut normal = Vec::new();
    for r in reports.iter().filter(|r| !exclude.contains(&r.node)) {
        let i = index(r);
        if i >= t.theta_hi {
            continue;
        }
        if i <= t.theta_lo {
            under.push((i, r.node.clone()));
        } else {
            normal.push((i, r.node.clone()));
        }
    }
    let mut pool = if under.is_empty() { normal } else { under };
    pool.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    pool.into_iter().next().map(|(_, n)| n)
}

/// Values drawn from a coarse grid so ties and threshold hits are common.
fn coarse() -> impl Strategy<Value = f64> {
    prop_oneof![3 => (0u32..=5).prop_map(|k| k as f64 / 5.0), 1 => unit()]
}

pub fn thresholds() -> impl Strategy<Value = LoadThresholds> {
    (coarse(), coarse())
        .prop_filter("lo < hi", |(a, b)| a != b)
        .prop_map(|(a, b)| LoadThresholds::new(a.min(b), a.max(b)).unwrap())
}

/// Farms of one to eight members with distinct ids. Some members copy
/// another member's load so that equal indexes are common.
pub fn farm_reports() -> impl Strategy<Value = Vec<LoadReport>> {
    // short queues keep the queue ratio from dominating every index
    let member = (
        coarse(),
        prop_oneof![3 => Just(0u32), 1 => 0u32..6],
        0u32..5,
        coarse(),
    );
    let farm = prop::collection::btree_map("[a-e][0-9]?", member, 1..=8);
    let copies =
        prop::collection::vec(prop::option::weighted(0.4, any::<prop::sample::Index>()), 8);
    (farm, copies).prop_map(|(m, copies)| {
        let mut reports: Vec<LoadReport> = m
            .into_iter()
            .map(
                |(name, (cpu_util, queue_depth, capacity, mem_util))| LoadReport {
                    node: NodeId::new(name).unwrap(),
                    cpu_util,
                    queue_depth,
                    capacity,
                    mem_util,
                    sampled_at: 0,
                },
            )
            .collect();
        for (i, c) in copies.iter().enumerate().take(reports.len()) {
            if let Some(src) = c {
                let src = reports[src.index(reports.len())].clone();
                let r = &mut reports[i];
                (r.cpu_util, r.queue_depth, r.capacity, r.mem_util) =
                    (src.cpu_util, src.queue_depth, src.capacity, src.mem_util);
            }
        }
        reports
    })
}

fn status_tag(s: &JobStatus) -> &'static str {
    match s {
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

/// Hand-written adjacency of the lifecycle graph.
const EDGES: &[(&str, &str)] = &[
    ("pending", "submitted"),
    ("submitted", "migrating"),
    ("migrating", "running"),
    ("running", "relocating"),
    ("relocating", "running"),
    ("running", "completed"),
    ("running", "failed"),
    ("submitted", "failed"),
    ("migrating", "failed"),
    ("pending", "killed"),
    ("submitted", "killed"),
    ("migrating", "killed"),
    ("running", "killed"),
    ("relocating", "killed"),
];

pub fn legal_edge(from: &JobStatus, to: &JobStatus) -> bool {
    let edge = (status_tag(from), status_tag(to));
    if !EDGES.contains(&edge) {
        return false;
    }
    match (from, to) {
        (JobStatus::Running { node }, JobStatus::Relocating { from: f, .. }) => node == f,
        (JobStatus::Relocating { to: t, .. }, JobStatus::Running { node }) => t == node,
        _ => true,
    }
}

/// Checks that consecutive transitions chain and each is an edge.
pub fn check_status_path(steps: &[(JobStatus, JobStatus)]) -> Result<(), String> {
    let mut prev: Option<&JobStatus> = None;
    for (i, (from, to)) in steps.iter().enumerate() {
        if let Some(p) = prev {
            if p != from {
                return Err(format!("step {i} starts at {from:?} but the job was {p:?}"));
            }
        }
        if !legal_edge(from, to) {
            return Err(format!("step {i}: {from:?} -> {to:?} is not an edge"));
        }
        prev = Some(to);
    }
    Ok(())
}
