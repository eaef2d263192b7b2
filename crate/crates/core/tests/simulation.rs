mod common;

use proptest::prelude::*;

use agentfarm::model::{ClientId, JobId, JobStatus};
use agentfarm::runtime::client::ClientOutcome;
use agentfarm::runtime::Note;
use agentfarm::sim::{run_scenario, Simulation, TraceEvent};
use agentfarm::wire::MessageKind;

const FARM: &str = "\
server s1 nodes=n1,n2
server s2 nodes=n3
node n1 capacity=2
node n2 capacity=2 speed=1.5
node n3 capacity=1
client c1 servers=s1,s2
file d.hnf hier branches=3 values=20000
file e.xml xml events=20 drawables=3 points=5
end at=60000
";

fn job(i: usize) -> JobId {
    JobId::new(format!("j{i}")).unwrap()
}

fn c1() -> ClientId {
    ClientId::new("c1").unwrap()
}

fn results_received(sim: &Simulation, j: &JobId) -> usize {
    sim.client(&c1())
        .unwrap()
        .outcomes()
        .iter()
        .filter(|(_, o)| matches!(o, ClientOutcome::ResultReceived { job, duplicate: false, .. } if job == j))
        .count()
}

fn submit_line(i: usize, at: u64, kind: u8, delivery: &str) -> String {
    let body = match kind {
        0 => "kind=hist1d input=d.hnf branch=b0 nbins=10 lo=0 hi=1".to_string(),
        1 => "kind=hist2d input=d.hnf branch=b1,b2 nbins=4,6 lo=0,0 hi=1,1".to_string(),
        _ => "kind=parsexml input=e.xml".to_string(),
    };
    format!("submit c1 job=j{i} at={at} {body} delivery={delivery}\n")
}

/// A farm plus random jobs, load swings, faults, kills and queries.
fn random_script() -> impl Strategy<Value = (String, usize)> {
    let jobs = prop::collection::vec(
        (
            200u64..3000,
            0u8..3,
            prop::sample::select(vec!["direct", "bringback", "auto"]),
        ),
        1..4,
    );
    let loads = prop::collection::vec((0usize..3, 0u64..4000, 0u32..=10), 0..6);
    let crash = prop::option::of((
        prop::sample::select(vec!["s1", "s2", "n1", "n2", "n3"]),
        0u64..4000,
    ));
    let outage = prop::option::of((300u64..3000, 1u64..4000, any::<bool>()));
    let pokes = prop::collection::vec((any::<bool>(), 0usize..3, 0u64..8000), 0..4);
    (jobs, loads, crash, outage, pokes).prop_map(|(jobs, loads, crash, outage, pokes)| {
        let mut s = FARM.to_string();
        for (i, &(at, kind, delivery)) in jobs.iter().enumerate() {
            s += &submit_line(i, at, kind, delivery);
        }
        for (n, at, cpu) in loads {
            s += &format!("load n{} at={at} cpu={}\n", n + 1, cpu as f64 / 10.0);
        }
        if let Some((target, at)) = crash {
            s += &format!("crash {target} at={at}\n");
        }
        if let Some((from, len, reconnect)) = outage {
            s += &format!("link_down c1 from={from} to={}\n", from + len);
            if reconnect {
                s += &format!("reconnect c1 at={}\n", from + len + 10);
            }
        }
        for (kill, i, at) in pokes {
            let i = i % jobs.len();
            let verb = if kill { "kill" } else { "query" };
            s += &format!("{verb} c1 job=j{i} at={at}\n");
        }
        (s, jobs.len())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_run_respects_the_lifecycle((script, jobs) in random_script(), seed in any::<u64>()) {
        let sim = run_scenario(&script, seed).unwrap();
        let mut last = 0;
        for r in sim.records() {
            prop_assert!(r.at >= last, "clock went back at {r}");
            last = r.at;
        }
        for i in 0..jobs {
            let j = job(i);
            let steps = sim.transitions(&j);
            if let Err(e) = common::check_status_path(&steps) {
                return Err(TestCaseError::fail(format!("{j}: {e}\n{script}")));
            }
            if let Some((from, _)) = steps.first() {
                prop_assert_eq!(from, &JobStatus::Pending);
            }
            let relocations = steps.iter().filter(|(_, to)| matches!(to, JobStatus::Relocating { .. })).count();
            prop_assert!(relocations < agentfarm::runtime::DEFAULT_MAX_HOPS as usize);
            let received = results_received(&sim, &j);
            prop_assert!(received <= 1, "{j} received {received} times");
            if sim.final_status(&j) == Some(JobStatus::Completed) {
                prop_assert_eq!(received, 1, "{} completed without a result\n{}", j, script);
            }
            if sim.final_status(&j) == Some(JobStatus::Killed) {
                prop_assert_eq!(received, 0);
            }
        }
    }

    #[test]
    fn same_seed_same_trace((script, _) in random_script(), seed in any::<u64>()) {
        let a = run_scenario(&script, seed).unwrap().trace_text();
        let b = run_scenario(&script, seed).unwrap().trace_text();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn one_quiet_job_ends_with_one_result_transfer() {
    let script = format!("{FARM}{}", submit_line(0, 500, 0, "direct"));
    let sim = run_scenario(&script, 1).unwrap();
    assert_eq!(sim.sent(MessageKind::ResultTransfer), 1);
    assert_eq!(sim.final_status(&job(0)), Some(JobStatus::Completed));
    let last_transfer = sim
        .records()
        .iter()
        .rposition(|r| {
            matches!(
                r.event,
                TraceEvent::Send {
                    kind: MessageKind::ResultTransfer,
                    ..
                }
            )
        })
        .unwrap();
    let later_transfers = sim.records()[last_transfer + 1..]
        .iter()
        .filter(|r| {
            matches!(
                r.event,
                TraceEvent::Send {
                    kind: MessageKind::ResultTransfer,
                    ..
                }
            )
        })
        .count();
    assert_eq!(later_transfers, 0);
}

#[test]
fn generated_files_depend_on_the_seed() {
    let script = format!("{FARM}{}", submit_line(0, 500, 0, "direct"));
    let a = run_scenario(&script, 1).unwrap();
    let b = run_scenario(&script, 2).unwrap();
    assert_ne!(a.file("d.hnf"), b.file("d.hnf"));
    assert_eq!(
        a.file("d.hnf"),
        run_scenario(&script, 1).unwrap().file("d.hnf")
    );
}

#[test]
fn lost_node_fails_its_job() {
    let script = format!(
        "{FARM}{}crash n1 at=700\n",
        submit_line(0, 500, 0, "direct")
    );
    let sim = run_scenario(&script, 3).unwrap();
    // placement lands on the least loaded node, n1 by id
    assert!(sim
        .transitions(&job(0))
        .iter()
        .any(|(_, to)| matches!(to, JobStatus::Running { node } if node.as_str() == "n1")));
    assert_eq!(
        sim.final_status(&job(0)),
        Some(JobStatus::Failed {
            reason: "node_lost".into()
        })
    );
    assert!(sim
        .records()
        .iter()
        .any(|r| matches!(&r.event, TraceEvent::Note(Note::NodeLost { .. }))));
    let failed = sim.client(&c1()).unwrap().outcomes().iter().any(
        |(_, o)| matches!(o, ClientOutcome::JobFailed { reason, .. } if reason == "node_lost"),
    );
    assert!(failed);
}

#[test]
fn work_spreads_across_independent_servers() {
    // two clients on different servers run concurrently without interference
    let script = "\
server s1 nodes=n1
server s2 nodes=n2
server s3 nodes=n3
node n1 capacity=1
node n2 capacity=1
node n3 capacity=1
client a servers=s1
client b servers=s2
client c servers=s3
file d.hnf hier branches=1 values=5000
submit a job=ja at=300 kind=hist1d input=d.hnf branch=b0 nbins=5 lo=0 hi=1
submit b job=jb at=300 kind=hist1d input=d.hnf branch=b0 nbins=5 lo=0 hi=1
submit c job=jc at=300 kind=hist1d input=d.hnf branch=b0 nbins=5 lo=0 hi=1
";
    let sim = run_scenario(script, 9).unwrap();
    for (j, n) in [("ja", "n1"), ("jb", "n2"), ("jc", "n3")] {
        let j = JobId::new(j).unwrap();
        assert_eq!(sim.final_status(&j), Some(JobStatus::Completed));
        assert!(sim
            .transitions(&j)
            .iter()
            .any(|(_, to)| matches!(to, JobStatus::Running { node } if node.as_str() == n)));
    }
}

#[test]
fn submissions_cut_off_by_an_outage_are_offered_again() {
    // s1 is dead, and the link drops before either submit is acknowledged
    let script = "\
server s1 nodes=n1
server s2 nodes=n2
node n1 capacity=1
node n2 capacity=1
client c1 servers=s1,s2
file d.hnf hier branches=1 values=5000
crash s1 at=200
submit c1 job=j0 at=600 kind=hist1d input=d.hnf branch=b0 nbins=5 lo=0 hi=1
submit c1 job=j1 at=700 kind=hist1d input=d.hnf branch=b0 nbins=5 lo=0 hi=1
submit c1 job=j2 at=700 kind=hist1d input=d.hnf branch=b0 nbins=5 lo=0 hi=1
link_down c1 from=700 to=2000
kill c1 job=j2 at=800
reconnect c1 at=2100
";
    let sim = run_scenario(script, 4).unwrap();
    for i in 0..2 {
        assert_eq!(sim.final_status(&job(i)), Some(JobStatus::Completed));
        assert_eq!(results_received(&sim, &job(i)), 1);
    }
    assert_eq!(sim.final_status(&job(2)), Some(JobStatus::Killed));
    assert_eq!(results_received(&sim, &job(2)), 0);
    assert!(!sim
        .transitions(&job(2))
        .iter()
        .any(|(_, to)| matches!(to, JobStatus::Running { .. })));
    let failed = sim
        .client(&c1())
        .unwrap()
        .outcomes()
        .iter()
        .any(|(_, o)| matches!(o, ClientOutcome::DispatchFailed { .. }));
    assert!(!failed);
}
