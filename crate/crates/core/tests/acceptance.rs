//! Acceptance suite. Each criterion prints one PASS or FAIL line; the
//! process exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use agentfarm::balancer::{classify_load, select_target, FarmView};
use agentfarm::model::*;
use agentfarm::runtime::client::ClientOutcome;
use agentfarm::runtime::DEFAULT_MAX_HOPS;
use agentfarm::sim::*;
use agentfarm::wire::*;
use agentfarm::workloads::gen::{gen_xml, XmlGenParams};
use agentfarm::workloads::*;

type Outcome = Result<String, String>;

/// Name, check and optional time limit.
type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn runner(cases: u32, seed: u8) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(
        config,
        TestRng::from_seed(RngAlgorithm::ChaCha, &[seed; 32]),
    )
}

/// Draws `n` values from `s` with a fixed seed.
fn sample<S: Strategy>(s: S, n: usize, seed: u8) -> Vec<S::Value> {
    let mut r = runner(1, seed);
    (0..n)
        .map(|_| s.new_tree(&mut r).unwrap().current())
        .collect()
}

fn id<T: std::str::FromStr>(s: &str) -> T
where
    T::Err: std::fmt::Debug,
{
    s.parse().unwrap()
}

fn outcomes(sim: &Simulation, client: &str) -> Vec<ClientOutcome> {
    sim.client(&id(client))
        .unwrap()
        .outcomes()
        .iter()
        .map(|(_, o)| o.clone())
        .collect()
}

fn parse_ratio() -> Outcome {
    let script = "\
server s1 nodes=n1
node n1 capacity=1
client c1 speed=2.0 servers=s1
file e.xml xml events=40 drawables=4 points=6
submit c1 job=j1 at=500 kind=parsexml input=e.xml
";
    let sim = run_scenario(script, 11).map_err(|e| e.to_string())?;
    let [without, with] = sim.reports() else {
        return Err("expected one report pair".into());
    };
    let client = without
        .phase_us(Phase::Parse)
        .ok_or("no client parse phase")?;
    let server = with.phase_us(Phase::Parse).ok_or("no server parse phase")?;
    ensure!(server > 0, "server parse took no time");
    ensure!(
        client == 2 * server,
        "client {client}us vs server {server}us"
    );
    let ratio = client as f64 / server as f64;
    ensure!(ratio == 2.0, "ratio {ratio}");
    Ok(format!("client {client}us / server {server}us = {ratio}"))
}

fn offloading_benefit() -> Outcome {
    let script = "\
server s1 nodes=n1
node n1 capacity=1
client c1 servers=s1
file d.hnf hier branches=2 values=5000
file e.xml xml events=40 drawables=4 points=6
submit c1 job=j1 at=500 kind=hist1d input=d.hnf branch=b0 nbins=20 lo=0 hi=1
submit c1 job=j2 at=500 kind=hist2d input=d.hnf branch=b0,b1 nbins=8,8 lo=0,0 hi=1,1
submit c1 job=j3 at=500 kind=parsexml input=e.xml
";
    let sim = run_scenario(script, 12).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for pair in sim.reports().chunks(2) {
        let [without, with] = pair else {
            unreachable!()
        };
        let (w, a) = (without.total_us(), with.total_us());
        ensure!(2 * a < w, "with {a}us is not under half of without {w}us");
        let heavy = without.phase_us(Phase::Download).unwrap_or(0)
            + without.phase_us(Phase::Parse).unwrap_or(0);
        ensure!(
            2 * heavy >= w,
            "download+parse {heavy}us is under half of {w}us"
        );
        worst = worst.max(a as f64 / w as f64);
    }
    Ok(format!(
        "{} jobs, worst with/without {:.3}",
        sim.reports().len() / 2,
        worst
    ))
}

fn balancer_oracle() -> Outcome {
    let mut r = runner(1000, 3);
    let mut ties = 0;
    let mut trials = 0;
    let strat = (
        common::farm_reports(),
        common::thresholds(),
        prop::collection::vec(prop::bool::weighted(0.25), 8),
    );
    for _ in 0..1000 {
        let (reports, t, drop) = strat.new_tree(&mut r).unwrap().current();
        let exclude: BTreeSet<NodeId> = reports
            .iter()
            .zip(&drop)
            .filter(|(_, d)| **d)
            .map(|(r, _)| r.node.clone())
            .collect();
        let view = FarmView::new(id("s"), reports.clone(), &t, 0);
        let got = select_target(&view, &exclude, &t).ok();
        let want = common::oracle_select(&reports, &exclude, &t);
        ensure!(
            got == want,
            "farm {reports:?} thresholds {t:?}: got {got:?}, oracle {want:?}"
        );
        if let Some(n) = &got {
            let m = reports.iter().find(|r| &r.node == n).unwrap();
            ensure!(
                classify_load(m, &t) != LoadStatus::Over,
                "picked overloaded {n}"
            );
            let idx = agentfarm::balancer::load_index(m).0;
            let rivals = reports
                .iter()
                .filter(|o| &o.node != n && !exclude.contains(&o.node));
            if rivals
                .filter(|o| agentfarm::balancer::load_index(o).0 == idx)
                .count()
                > 0
            {
                ties += 1;
            }
        }
        trials += 1;
    }
    Ok(format!(
        "{trials} farms agree, {ties} with ties on the winning index"
    ))
}

const REHOME_FARM: &str = "\
server s1 nodes=n1,n2,n3,n4
node n1 capacity=2
node n2 capacity=2
node n3 capacity=2
node n4 capacity=2
client c1 servers=s1
file d.hnf hier branches=2 values=1000
load n2 at=0 cpu=0.9
load n3 at=0 cpu=0.4
load n4 at=0 cpu=0.2
submit c1 job=j1 at=500 kind=hist1d input=d.hnf branch=b0 nbins=10 lo=0 hi=1
";

fn status_time(sim: &Simulation, pred: impl Fn(&JobStatus, &JobStatus) -> bool) -> Option<u64> {
    sim.records().iter().find_map(|r| match &r.event {
        TraceEvent::Note(agentfarm::runtime::Note::Status { from, to, .. }) if pred(from, to) => {
            Some(r.at)
        }
        _ => None,
    })
}

fn withdraw_and_rehome() -> Outcome {
    let j1: JobId = id("j1");
    // first pass finds when n1 is picked and when the agent lands there
    let probe = run_scenario(REHOME_FARM, 4).map_err(|e| e.to_string())?;
    let placed = status_time(&probe, |f, t| {
        *f == JobStatus::Submitted && *t == JobStatus::Migrating
    })
    .ok_or("never placed")?;
    let arrived = status_time(&probe, |f, _| *f == JobStatus::Migrating).ok_or("never arrived")?;
    ensure!(
        probe
            .transitions(&j1)
            .contains(&(JobStatus::Migrating, JobStatus::Running { node: id("n1") })),
        "first placement was not n1"
    );
    // n1 overloads while the agent is in flight
    let spike = placed / 1000 + 1;
    ensure!(
        spike * 1000 < arrived,
        "no gap between placement {placed} and arrival {arrived}"
    );
    let script = format!("{REHOME_FARM}load n1 at={spike} cpu=0.95\n");
    let sim = run_scenario(&script, 4).map_err(|e| e.to_string())?;
    let steps = sim.transitions(&j1);
    common::check_status_path(&steps)?;
    let relocations: Vec<_> = steps
        .iter()
        .filter(|(_, t)| matches!(t, JobStatus::Relocating { .. }))
        .collect();
    ensure!(
        relocations.len() == 1,
        "{} relocations: {steps:?}",
        relocations.len()
    );
    let last_running = steps.iter().rev().find_map(|(_, t)| match t {
        JobStatus::Running { node } => Some(node.clone()),
        _ => None,
    });
    // oracle target: the farm as scripted, n1 excluded
    let t = LoadThresholds::default();
    let report = |n: &str, cpu| LoadReport {
        node: id(n),
        cpu_util: cpu,
        queue_depth: 0,
        capacity: 2,
        mem_util: 0.0,
        sampled_at: 0,
    };
    let farm = [
        report("n1", 0.95),
        report("n2", 0.9),
        report("n3", 0.4),
        report("n4", 0.2),
    ];
    let want =
        common::oracle_select(&farm, &[id("n1")].into(), &t).ok_or("oracle found no target")?;
    ensure!(
        last_running.as_ref() == Some(&want),
        "ran on {last_running:?}, expected {want}"
    );
    ensure!(
        sim.final_status(&j1) == Some(JobStatus::Completed),
        "ended {:?}",
        sim.final_status(&j1)
    );
    let receiver = sim
        .client(&id("c1"))
        .unwrap()
        .receiver(&j1)
        .ok_or("no receiver")?;
    ensure!(
        receiver.last_known.node.as_ref() == Some(&want),
        "receiver last saw {:?}",
        receiver.last_known.node
    );
    ensure!(
        receiver.hop_seen >= 1,
        "receiver saw hop {}",
        receiver.hop_seen
    );

    // adversarial sweep: loads flip fast so every arrival looks bad
    let mut at_bound = 0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let mut s = String::from(
            "server s1 nodes=n1,n2,n3,n4\nnode n1 capacity=2\nnode n2 capacity=2\nnode n3 capacity=2\nnode n4 capacity=2\n\
             client c1 servers=s1\nfile d.hnf hier branches=1 values=1000\n\
             submit c1 job=j1 at=500 kind=hist1d input=d.hnf branch=b0 nbins=10 lo=0 hi=1\nend at=120000\n",
        );
        for n in 1..=4 {
            // placement happens near 661ms on an idle farm; the storm
            // starts once the agent is on its way
            let mut at = 662 + rng.random_range(0..4u64);
            while at < 3000 {
                let cpu = if rng.random_bool(0.6) { 0.95 } else { 0.1 };
                s += &format!("load n{n} at={at} cpu={cpu}\n");
                at += rng.random_range(1..8u64);
            }
            s += &format!("load n{n} at=3000 cpu=0.95\n");
        }
        let sim = run_scenario(&s, trial).map_err(|e| e.to_string())?;
        let steps = sim.transitions(&j1);
        common::check_status_path(&steps).map_err(|e| format!("trial {trial}: {e}"))?;
        let hops = steps
            .iter()
            .filter(|(_, t)| matches!(t, JobStatus::Running { .. }))
            .count() as u32;
        ensure!(hops <= DEFAULT_MAX_HOPS, "trial {trial}: {hops} hops");
        ensure!(
            sim.final_status(&j1) == Some(JobStatus::Completed),
            "trial {trial} ended {:?}",
            sim.final_status(&j1)
        );
        if hops + 1 >= DEFAULT_MAX_HOPS {
            at_bound += 1;
        }
    }
    Ok(format!("moved n1 -> {want} once; sweep 100/100 within {DEFAULT_MAX_HOPS} hops, {at_bound} at the bound"))
}

fn server_failure_before_submission() -> Outcome {
    let j1: JobId = id("j1");
    let mut crashed = [0; 2];
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let victim = rng.random_range(0..2usize);
        let at = rng.random_range(0..1000u64);
        let order = if rng.random_bool(0.5) {
            "s1,s2"
        } else {
            "s2,s1"
        };
        crashed[victim] += 1;
        let script = format!(
            "server s1 nodes=n1\nserver s2 nodes=n2\nnode n1 capacity=2\nnode n2 capacity=2\nclient c1 servers={order}\n\
             file d.hnf hier branches=2 values=1000\ncrash s{} at={at}\n\
             submit c1 job=j1 at=1000 kind=hist1d input=d.hnf branch=b0 nbins=10 lo=0 hi=1\n",
            victim + 1
        );
        let sim = run_scenario(&script, trial).map_err(|e| e.to_string())?;
        let fin = sim.final_status(&j1);
        ensure!(
            fin == Some(JobStatus::Completed),
            "trial {trial} ({order}, s{} at {at}): {fin:?}",
            victim + 1
        );
        let gave_up = outcomes(&sim, "c1").iter().any(|o| {
            matches!(
                o,
                ClientOutcome::DispatchFailed { .. } | ClientOutcome::AllServersDown
            )
        });
        ensure!(!gave_up, "trial {trial} reported all servers failed");
        let all_failed = sim.transitions(&j1).iter().any(
            |(_, t)| matches!(t, JobStatus::Failed { reason } if reason == "all_servers_failed"),
        );
        ensure!(!all_failed, "trial {trial} failed with all_servers_failed");
    }
    Ok(format!(
        "100/100 completed (s1 down {}, s2 down {})",
        crashed[0], crashed[1]
    ))
}

fn reconnection() -> Outcome {
    let j1: JobId = id("j1");
    let mut parked = 0;
    for trial in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + trial);
        let down = rng.random_range(670..780u64);
        let up = down + rng.random_range(300..4000u64);
        let back = up + rng.random_range(1..500u64);
        let script = format!(
            "server s1 nodes=n1\nnode n1 capacity=2\nclient c1 servers=s1\nfile d.hnf hier branches=1 values=200000\n\
             submit c1 job=j1 at=500 kind=hist1d input=d.hnf branch=b0 nbins=10 lo=0 hi=1 delivery=auto\n\
             link_down c1 from={down} to={up}\nreconnect c1 at={back}\nquery c1 job=j1 at={}\n",
            back + 3000
        );
        let sim = run_scenario(&script, trial).map_err(|e| e.to_string())?;
        let os = outcomes(&sim, "c1");
        let received = os
            .iter()
            .filter(|o| matches!(o, ClientOutcome::ResultReceived { .. }))
            .count();
        ensure!(
            received == 1,
            "trial {trial}: result received {received} times"
        );
        let last_status = os.iter().rev().find_map(|o| match o {
            ClientOutcome::Status { status, .. } => Some(status.clone()),
            _ => None,
        });
        ensure!(
            last_status == Some(JobStatus::Completed),
            "trial {trial}: query said {last_status:?}"
        );
        ensure!(
            sim.final_status(&j1) == Some(JobStatus::Completed),
            "trial {trial}: {:?}",
            sim.final_status(&j1)
        );
        common::check_status_path(&sim.transitions(&j1))
            .map_err(|e| format!("trial {trial}: {e}"))?;
        if os
            .iter()
            .any(|o| matches!(o, ClientOutcome::ResultReceived { via, .. } if *via != "direct"))
        {
            parked += 1;
        }
    }
    Ok(format!(
        "50/50 delivered once and reported completed ({parked} via a held result)"
    ))
}

const KILL_BASE: &str = "\
server s1 nodes=n1
node n1 capacity=2
client c1 servers=s1
file d.hnf hier branches=1 values=200000
submit c1 job=j1 at=500 kind=hist1d input=d.hnf branch=b0 nbins=10 lo=0 hi=1
";

fn kill_semantics() -> Outcome {
    let j1: JobId = id("j1");
    let mut checked = 0;
    let mut counts = [0usize; 3];
    for delivery in ["direct", "bringback", "auto"] {
        let base = format!("{} delivery={delivery}\n", KILL_BASE.trim_end());
        let sc = parse_scenario(&base).map_err(|e| e.to_string())?;
        let reference = {
            let mut s = Simulation::new(&sc, 7).map_err(|e| e.to_string())?;
            s.run();
            s
        };
        let refs = reference.records().to_vec();
        ensure!(
            reference.final_status(&j1) == Some(JobStatus::Completed),
            "reference did not complete"
        );
        let completed_at = status_time(&reference, |_, t| *t == JobStatus::Completed).unwrap();
        let work_end = refs
            .iter()
            .find(|r| {
                matches!(
                    &r.event,
                    TraceEvent::Note(agentfarm::runtime::Note::WorkEnd { .. })
                )
            })
            .map(|r| r.at)
            .ok_or("reference has no work end")?;
        let running_at =
            status_time(&reference, |_, t| matches!(t, JobStatus::Running { .. })).unwrap();
        let submitted_at = status_time(&reference, |f, _| *f == JobStatus::Pending).unwrap();
        for i in 0..refs.len() {
            // kill right after event i of the reference run
            let mut sim = Simulation::new(&sc, 7).map_err(|e| e.to_string())?;
            while sim.records().len() <= i {
                ensure!(sim.step(), "run diverged before event {i}");
            }
            ensure!(
                sim.records()[..=i] == refs[..=i],
                "run diverged from the reference at {i}"
            );
            let t = sim.now();
            sim.inject(ScriptEvent::Kill {
                client: id("c1"),
                job: j1.clone(),
            })
            .map_err(|e| e.to_string())?;
            sim.run();
            let os = outcomes(&sim, "c1");
            let killed = os.iter().any(|o| matches!(o, ClientOutcome::Killed { .. }));
            let terminal = os
                .iter()
                .any(|o| matches!(o, ClientOutcome::AlreadyTerminal { .. }));
            let got_result = os
                .iter()
                .any(|o| matches!(o, ClientOutcome::ResultReceived { .. }));
            let transfers = sim.sent(MessageKind::ResultTransfer);
            let fin = sim.final_status(&j1);
            common::check_status_path(&sim.transitions(&j1))
                .map_err(|e| format!("{delivery} kill after {i}: {e}"))?;
            let when = format!("{delivery} kill after event {i} at {t}us");
            if t >= submitted_at && t + 100_000 < work_end {
                // still running (or earlier) when the kill lands
                ensure!(killed && fin == Some(JobStatus::Killed), "{when}: {fin:?}");
                ensure!(
                    transfers == 0 && !got_result,
                    "{when}: result still delivered"
                );
                if t >= running_at {
                    counts[0] += 1;
                }
            } else if t >= completed_at {
                ensure!(terminal && !killed, "{when}: expected already terminal");
                ensure!(fin == Some(JobStatus::Completed), "{when}: {fin:?}");
                counts[1] += 1;
            } else {
                // racing the result: one outcome or the other, never both
                ensure!(
                    killed != got_result,
                    "{when}: killed {killed}, result {got_result}"
                );
                counts[2] += 1;
            }
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} kill points: {} while running, {} after completion, {} racing the result",
        counts[0], counts[1], counts[2]
    ))
}

fn workload_equivalence() -> Outcome {
    let mut script = String::from(
        "server s1 nodes=n1,n2\nnode n1 capacity=4\nnode n2 capacity=4\nclient c1 servers=s1\n",
    );
    for k in 0..20 {
        script += &format!("file h{k}.hnf hier branches=2 values=1000\n");
        script += &format!(
            "file x{k}.xml xml events={} drawables={} points={}\n",
            1 + k % 6,
            k % 4,
            1 + k % 5
        );
        script += &format!("submit c1 job=a{k} at={} kind=hist1d input=h{k}.hnf branch=b0 nbins={} lo=0.1 hi=0.9\n", 500 + 40 * k, 5 + k);
        script += &format!(
            "submit c1 job=b{k} at={} kind=hist2d input=h{k}.hnf branch=b0,b1 nbins=6,{} lo=0,0.2 hi=1,0.7\n",
            520 + 40 * k,
            2 + k % 5
        );
        script += &format!(
            "submit c1 job=c{k} at={} kind=parsexml input=x{k}.xml\n",
            530 + 40 * k
        );
    }
    let seed = 8;
    let sim = run_scenario(&script, seed).map_err(|e| e.to_string())?;
    let client = sim.client(&id("c1")).unwrap();
    let result = |job: String| -> Result<ResultData, String> {
        let r = client.receiver(&id(&job)).ok_or(format!("{job} unknown"))?;
        r.inbox
            .first()
            .map(|p| p.data.clone())
            .ok_or(format!("{job} has no result"))
    };
    for k in 0..20u64 {
        let file =
            read_hier_file(sim.file(&format!("h{k}.hnf")).unwrap()).map_err(|e| e.to_string())?;
        let (b0, b1) = (&file.branches[0].values, &file.branches[1].values);
        ensure!(b0.len() == 1000, "file {k} has {} values", b0.len());
        let ResultData::Hist1D(h) = result(format!("a{k}"))? else {
            return Err("a{k}: wrong kind".into());
        };
        let (counts, under, over) = common::naive_hist1d(b0, 5 + k as u32, 0.1, 0.9);
        ensure!(
            (h.counts, h.underflow, h.overflow) == (counts, under, over),
            "hist1d on file {k} differs"
        );
        let x = AxisSpec {
            branch: "b0".into(),
            nbins: 6,
            lo: 0.0,
            hi: 1.0,
        };
        let y = AxisSpec {
            branch: "b1".into(),
            nbins: 2 + k as u32 % 5,
            lo: 0.2,
            hi: 0.7,
        };
        let ResultData::Hist2D(h) = result(format!("b{k}"))? else {
            return Err("b{k}: wrong kind".into());
        };
        let (cells, flows) = common::naive_hist2d(b0, b1, &x, &y);
        for iy in 0..y.nbins as usize {
            for ix in 0..x.nbins as usize {
                ensure!(
                    h.cell(ix, iy) == cells.get(&(ix, iy)).copied().unwrap_or(0),
                    "hist2d on file {k} cell {ix},{iy}"
                );
            }
        }
        ensure!(
            [h.x_underflow, h.x_overflow, h.y_underflow, h.y_overflow] == flows,
            "hist2d flows on file {k}"
        );
        let name = format!("x{k}.xml");
        let params = XmlGenParams {
            events: 1 + k % 6,
            drawables: k % 4,
            points: 1 + k % 5,
            seed: file_seed(&name, seed),
        };
        let (doc, book) = gen_xml(params);
        ensure!(
            sim.file(&name) == Some(&doc[..]),
            "{name} is not the generator's document"
        );
        ensure!(
            result(format!("c{k}"))? == ResultData::Drawables(book),
            "drawables of {name} differ"
        );
    }
    Ok("20 hier files (hist1d, hist2d) and 20 XML files match".into())
}

fn wire_protocol() -> Outcome {
    let mut cuts = 0usize;
    for (i, &kind) in MessageKind::ALL.iter().enumerate() {
        for env in sample(common::envelope_of(kind), 100, i as u8) {
            let frame = encode_frame(&env).map_err(|e| e.to_string())?;
            let (back, used) =
                decode_frame(&frame).map_err(|e| format!("{}: {e}", kind.as_str()))?;
            ensure!(
                back == env && used == frame.len(),
                "{} did not round-trip",
                kind.as_str()
            );
            for cut in (0..frame.len()).step_by(1 + frame.len() / 64) {
                ensure!(
                    matches!(
                        decode_frame(&frame[..cut]),
                        Err(WireError::Truncated { .. })
                    ),
                    "{} cut at {cut}",
                    kind.as_str()
                );
                cuts += 1;
            }
        }
    }
    let big = (MAX_PAYLOAD as u32 + 1).to_be_bytes();
    ensure!(
        matches!(decode_frame(&big), Err(WireError::OversizePayload(_))),
        "oversize frame accepted"
    );
    let streamed = read_frame(&mut std::io::Cursor::new(big));
    ensure!(
        matches!(streamed, Err(WireError::OversizePayload(_))),
        "oversize stream accepted"
    );
    Ok(format!(
        "{} kinds x 100 round-trip, {cuts} truncations rejected, oversize rejected",
        MessageKind::ALL.len()
    ))
}

fn nan_heavy() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<u64>()
            .prop_map(|b| f64::from_bits(0x7ff0_0000_0000_0001 | (b & 0x800f_ffff_ffff_ffff))),
        Just(f64::NAN),
        Just(-0.0),
        any::<u64>().prop_map(f64::from_bits),
    ]
}

fn hier_codec() -> Outcome {
    let sets = prop::collection::btree_map(
        "[A-Za-z0-9_]{1,10}",
        prop::collection::vec(nan_heavy(), 1..30),
        1..6,
    );
    let mut nans = 0;
    for (k, set) in sample(sets, 100, 10).into_iter().enumerate() {
        let branches: Vec<Branch> = set.into_iter().map(|(n, v)| Branch::new(n, v)).collect();
        let bytes = write_hier_file(&branches).map_err(|e| e.to_string())?;
        let back = read_hier_file(&bytes).map_err(|e| format!("set {k}: {e}"))?;
        ensure!(
            back.branches.len() == branches.len(),
            "set {k}: branch count"
        );
        for (a, b) in back.branches.iter().zip(&branches) {
            ensure!(a.name == b.name, "set {k}: names differ");
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            ensure!(
                bits(&a.values) == bits(&b.values),
                "set {k}: bits of {} differ",
                a.name
            );
            nans += b.values.iter().filter(|v| v.is_nan()).count();
        }
        // move one offset or count; the index no longer tiles the data
        let mut bad = bytes.clone();
        let which = k % branches.len();
        let mut pos = 8;
        for b in &branches[..which] {
            pos += 1 + b.name.len() + 16;
        }
        let field = pos + 1 + branches[which].name.len() + if k % 2 == 0 { 8 } else { 0 };
        let old = u64::from_le_bytes(bad[field..field + 8].try_into().unwrap());
        bad[field..field + 8].copy_from_slice(&(old + 1 + k as u64).to_le_bytes());
        ensure!(
            matches!(read_hier_file(&bad), Err(HierError::CorruptIndex(_))),
            "set {k}: tampered index accepted"
        );
    }
    Ok(format!(
        "100 sets identical ({nans} NaNs), 100 tampered indexes rejected"
    ))
}

fn determinism() -> Outcome {
    let scripts = [
        format!("{REHOME_FARM}load n1 at=663 cpu=0.95\n"),
        format!("{KILL_BASE}kill c1 job=j1 at=700\n"),
        "server s1 nodes=n1\nserver s2 nodes=n2\nnode n1 capacity=1\nnode n2 capacity=1\nclient c1 servers=s1,s2\n\
         file d.hnf hier branches=1 values=2000\ncrash s1 at=300\nlink_down c1 from=700 to=2000\nreconnect c1 at=2100\n\
         submit c1 job=j1 at=500 kind=hist1d input=d.hnf branch=b0 nbins=10 lo=0 hi=1 delivery=auto\n"
            .to_string(),
    ];
    let dir = std::env::temp_dir().join(format!("agentfarm-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let mut lines = 0;
    for (k, s) in scripts.iter().enumerate() {
        for seed in [0, 1, u64::MAX] {
            let a = dir.join(format!("{k}-{seed}-a.log"));
            let b = dir.join(format!("{k}-{seed}-b.log"));
            std::fs::write(
                &a,
                run_scenario(s, seed)
                    .map_err(|e| e.to_string())?
                    .trace_text(),
            )
            .map_err(|e| e.to_string())?;
            std::fs::write(
                &b,
                run_scenario(s, seed)
                    .map_err(|e| e.to_string())?
                    .trace_text(),
            )
            .map_err(|e| e.to_string())?;
            let (x, y) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
            ensure!(x == y, "script {k} seed {seed}: traces differ");
            lines += x.iter().filter(|&&c| c == b'\n').count();
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(format!(
        "9 (script, seed) pairs byte-identical over {lines} trace lines"
    ))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("parse ratio", parse_ratio, Some(Duration::from_secs(5))),
        (
            "offloading benefit",
            offloading_benefit,
            Some(Duration::from_secs(5)),
        ),
        (
            "load balancer oracle",
            balancer_oracle,
            Some(Duration::from_secs(10)),
        ),
        ("withdraw and rehome", withdraw_and_rehome, None),
        ("server failure", server_failure_before_submission, None),
        ("reconnection", reconnection, None),
        ("kill semantics", kill_semantics, None),
        ("workload equivalence", workload_equivalence, None),
        ("wire protocol", wire_protocol, None),
        ("hier codec", hier_codec, None),
        ("determinism", determinism, None),
    ];
    let mut failed = 0;
    for (i, (name, check, limit)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result =
            catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let result = match (result, limit) {
            (Ok(_), Some(l)) if took > l => Err(format!("took {took:.2?}, limit {l:?}")),
            (r, _) => r,
        };
        let (verdict, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "criterion {:>2} {name:<22} {verdict} [{took:.2?}] {detail}",
            i + 1
        );
    }
    if failed > 0 {
        println!("{failed} of 11 criteria failed");
        std::process::exit(1);
    }
    println!("all 11 criteria passed");
}
