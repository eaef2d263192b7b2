//! The `agentfarm` command: argument handling and dispatch to the live
//! runtime, the simulator and the data generators.

pub mod args;
mod session;

use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use agentfarm::config::{load_server_config, ConfigError};
use agentfarm::model::{JobId, JobSpec, JobStatus, LoadThresholds};
use agentfarm::runtime::live::{bind, dir_resolver, spawn, LiveOptions};
use agentfarm::runtime::server::ServerConfig;
use agentfarm::runtime::{ClientOutcome, MainContainer, NodeConfig, NodeContainer};
use agentfarm::sim::{emit_report, parse_scenario, Simulation};
use agentfarm::workloads::gen::{gen_hier_bytes, gen_xml, XmlGenParams};

pub use args::{help_text, parse_args, Command, Usage};
pub use session::{home, Saved};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_JOB_FAILED: i32 = 2;
pub const EXIT_UNREACHABLE: i32 = 3;

/// Why a command did not succeed; each maps to one exit code.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    JobFailed(String),
    #[error("{0}")]
    Unreachable(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::JobFailed(_) => EXIT_JOB_FAILED,
            Failure::Unreachable(_) => EXIT_UNREACHABLE,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

/// Loads and validates a server/farm config file.
pub fn load_config(path: &Path) -> Result<ServerConfig, ConfigError> {
    load_server_config(path)
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cmd = match parse_args(argv) {
        Ok(c) => c,
        Err(Usage(msg)) => {
            eprintln!("usage error: {msg}");
            return EXIT_USAGE;
        }
    };
    match run(cmd) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

pub fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Info(text) => {
            print!("{text}");
            Ok(())
        }
        Command::Serve {
            config,
            theta_lo,
            theta_hi,
        } => serve(&config, theta_lo, theta_hi),
        Command::Node { config, id } => {
            let cfg = load_config(&config)?;
            let ncfg = NodeConfig::from_server(&cfg, &id).ok_or_else(|| {
                Failure::Usage(format!(
                    "node {id} is not in the farm of {}",
                    config.display()
                ))
            })?;
            let (listener, endpoint) = bind(&ncfg.endpoint)
                .map_err(|e| Failure::Usage(format!("bind {}: {e}", ncfg.endpoint)))?;
            let opts = LiveOptions {
                inputs: dir_resolver(
                    std::env::var_os("AGENTFARM_DATA").unwrap_or_else(|| ".".into()),
                ),
                notes: Arc::new(|n| eprintln!("{n}")),
                ..LiveOptions::default()
            };
            let _h = spawn(listener, NodeContainer::new(ncfg), opts)
                .map_err(|e| Failure::Usage(e.to_string()))?;
            println!("node {id} listening on {endpoint}");
            park_forever()
        }
        Command::Submit {
            servers,
            input,
            params,
            delivery,
        } => submit(servers, input, params, delivery),
        Command::Status { job } => status(&job),
        Command::Kill { job } => kill(&job),
        Command::Results { job, out } => results(&job, &out),
        Command::Simulate {
            scenario,
            seed,
            out,
            trace,
            theta_lo,
            theta_hi,
        } => {
            let text = std::fs::read_to_string(&scenario)
                .map_err(|e| Failure::Usage(format!("{}: {e}", scenario.display())))?;
            let mut sc = parse_scenario(&text)
                .map_err(|e| Failure::Usage(format!("{}: {e}", scenario.display())))?;
            sc.thresholds = thresholds(sc.thresholds, theta_lo, theta_hi)?;
            let mut sim = Simulation::new(&sc, seed).map_err(|e| Failure::Usage(e.to_string()))?;
            sim.run();
            write_file(&out, emit_report(sim.reports()).as_bytes())?;
            if let Some(t) = trace {
                write_file(&t, sim.trace_text().as_bytes())?;
            }
            Ok(())
        }
        Command::GenHier {
            branches,
            values,
            seed,
            out,
        } => emit(out.as_deref(), &gen_hier_bytes(branches, values, seed)),
        Command::GenXml {
            events,
            drawables,
            points,
            seed,
            out,
        } => {
            let (doc, summary) = gen_xml(XmlGenParams {
                events,
                drawables,
                points,
                seed,
            });
            emit(out.as_deref(), &doc)?;
            if out.is_some() {
                println!(
                    "{}",
                    serde_json::to_string(&summary).expect("summary serializes")
                );
            }
            Ok(())
        }
    }
}

fn thresholds(
    base: LoadThresholds,
    lo: Option<f64>,
    hi: Option<f64>,
) -> Result<LoadThresholds, Failure> {
    LoadThresholds::new(lo.unwrap_or(base.theta_lo), hi.unwrap_or(base.theta_hi))
        .map_err(|e| Failure::Usage(e.to_string()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(p) => write_file(p, bytes),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| Failure::Usage(format!("stdout: {e}"))),
    }
}

fn park_forever() -> ! {
    loop {
        std::thread::park();
    }
}

fn serve(config: &Path, lo: Option<f64>, hi: Option<f64>) -> Result<(), Failure> {
    let mut cfg = load_config(config)?;
    cfg.thresholds = thresholds(cfg.thresholds, lo, hi)?;
    let (listener, endpoint) =
        bind(&cfg.listen).map_err(|e| Failure::Usage(format!("bind {}: {e}", cfg.listen)))?;
    let opts = LiveOptions {
        notes: Arc::new(|n| eprintln!("{n}")),
        ..LiveOptions::default()
    };
    let id = cfg.id.clone();
    let _h = spawn(listener, MainContainer::new(cfg), opts)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    println!("server {id} listening on {endpoint}");
    park_forever()
}

fn outcome_failure(o: &ClientOutcome) -> Option<Failure> {
    match o {
        ClientOutcome::JobFailed { job, reason } => {
            Some(Failure::JobFailed(format!("job {job} failed: {reason}")))
        }
        ClientOutcome::Status { job, status, .. } => match status {
            JobStatus::Failed { reason } => {
                Some(Failure::JobFailed(format!("job {job} failed: {reason}")))
            }
            JobStatus::Killed => Some(Failure::JobFailed(format!("job {job} was killed"))),
            _ => None,
        },
        _ => None,
    }
}

fn submit(
    servers: Vec<String>,
    input: String,
    params: agentfarm::model::JobParams,
    delivery: agentfarm::model::DeliveryMode,
) -> Result<(), Failure> {
    // nodes resolve inputs themselves; an absolute path survives the trip
    let input_ref = std::fs::canonicalize(&input)
        .map(|p| p.to_string_lossy().into_owned())
        .unwrap_or(input);
    let mut s = session::Session::open(Some(servers))?;
    let timeout = s.request_timeout();
    let job = s.call(move |c, ctx| {
        let n = c.receivers().count() + 1;
        let job_id = JobId::new(format!("{}-{n}", c.client_id())).expect("valid id");
        c.submit(
            ctx,
            JobSpec {
                job_id,
                input_ref,
                params,
                delivery_mode: delivery,
            },
        )
    });
    let job = job.map_err(|v| Failure::Usage(format!("invalid job: {v:?}")))?;
    let j = job.clone();
    let dispatched = s.wait(timeout * 4, move |o| {
        o.job() == Some(&j)
            && matches!(
                o,
                ClientOutcome::Dispatched { .. } | ClientOutcome::DispatchFailed { .. }
            )
    });
    match dispatched {
        Some(ClientOutcome::Dispatched { .. }) => {
            println!("{job}");
            let _ = std::io::stdout().flush();
        }
        Some(ClientOutcome::DispatchFailed { reason, .. }) => {
            s.close()?;
            return Err(Failure::Unreachable(format!("job {job}: {reason}")));
        }
        _ => {
            s.close()?;
            return Err(Failure::Unreachable(format!(
                "job {job}: no answer from servers"
            )));
        }
    }
    s.save()?;
    // stay around for the result; poll now and then in case news of a kill
    // or failure went elsewhere
    let result = loop {
        let j = job.clone();
        let got = s.wait(Duration::from_secs(2), move |o| {
            o.job() == Some(&j)
                && (matches!(o, ClientOutcome::ResultReceived { .. })
                    || outcome_failure(o).is_some())
        });
        match got {
            Some(ClientOutcome::ResultReceived { .. }) => break Ok(()),
            Some(o) => break Err(outcome_failure(&o).expect("matched")),
            None => {
                let j = job.clone();
                s.call(move |c, ctx| {
                    if !c.busy() {
                        c.query_status(ctx, &j);
                    }
                });
            }
        }
    };
    s.close()?;
    result
}

/// Fails unless this client submitted `job`.
fn known_job(job: &JobId) -> Result<(), Failure> {
    let known =
        session::load(&home())?.is_some_and(|s| s.state.receivers.iter().any(|r| &r.job_id == job));
    if known {
        Ok(())
    } else {
        Err(Failure::Usage(format!("no job {job}")))
    }
}

fn status(job: &JobId) -> Result<(), Failure> {
    known_job(job)?;
    let mut s = session::Session::open(None)?;
    let timeout = s.request_timeout();
    let j = job.clone();
    s.call(move |c, ctx| c.query_status(ctx, &j));
    let j = job.clone();
    let got = s.wait(timeout * 4, move |o| {
        o.job() == Some(&j)
            && matches!(
                o,
                ClientOutcome::Status { .. } | ClientOutcome::StatusUnknown { .. }
            )
    });
    s.close()?;
    match got {
        Some(ClientOutcome::Status { status, node, .. }) => {
            match node {
                Some(n) => println!("{job} {status} {n}"),
                None => println!("{job} {status}"),
            }
            match status {
                JobStatus::Failed { .. } => Err(Failure::JobFailed(format!("job {job} failed"))),
                _ => Ok(()),
            }
        }
        _ => Err(Failure::Unreachable(format!("status of {job} unknown"))),
    }
}

fn kill(job: &JobId) -> Result<(), Failure> {
    known_job(job)?;
    let mut s = session::Session::open(None)?;
    let timeout = s.request_timeout();
    let j = job.clone();
    s.call(move |c, ctx| c.kill(ctx, &j));
    let j = job.clone();
    let got = s.wait(timeout * 6, move |o| {
        o.job() == Some(&j)
            && matches!(
                o,
                ClientOutcome::Killed { .. }
                    | ClientOutcome::AlreadyTerminal { .. }
                    | ClientOutcome::KillFailed { .. }
            )
    });
    s.close()?;
    match got {
        Some(ClientOutcome::Killed { was_running, .. }) => {
            println!(
                "{job} killed{}",
                if was_running { " while running" } else { "" }
            );
            Ok(())
        }
        Some(ClientOutcome::AlreadyTerminal { .. }) => {
            Err(Failure::JobFailed(format!("job {job} already finished")))
        }
        Some(ClientOutcome::KillFailed { reason, .. }) if reason == "unknown_job" => {
            Err(Failure::Usage(format!("no job {job}")))
        }
        Some(ClientOutcome::KillFailed { reason, .. }) => {
            Err(Failure::Unreachable(format!("kill {job}: {reason}")))
        }
        _ => Err(Failure::Unreachable(format!("kill {job}: no answer"))),
    }
}

fn write_result(
    job: &JobId,
    saved_result: Option<agentfarm::model::ResultPayload>,
    out: &Path,
) -> Result<bool, Failure> {
    match saved_result {
        Some(p) => {
            let json = serde_json::to_vec_pretty(&p.data).expect("result serializes");
            write_file(out, &json)?;
            println!("{job} result written to {}", out.display());
            Ok(true)
        }
        None => Ok(false),
    }
}

fn results(job: &JobId, out: &Path) -> Result<(), Failure> {
    known_job(job)?;
    let local = session::load(&home())?.expect("checked");
    let receiver = local
        .state
        .receivers
        .iter()
        .find(|r| &r.job_id == job)
        .expect("checked");
    if write_result(job, receiver.inbox.first().cloned(), out)? {
        return Ok(());
    }
    // registering again makes servers hand over anything they hold
    let mut s = session::Session::open(None)?;
    let timeout = s.request_timeout();
    let j = job.clone();
    s.call(move |c, ctx| c.query_status(ctx, &j));
    let j = job.clone();
    let got = s.wait(timeout * 2, move |o| {
        o.job() == Some(&j)
            && (matches!(o, ClientOutcome::ResultReceived { .. }) || outcome_failure(o).is_some())
    });
    let j = job.clone();
    let payload = s.call(move |c, _| c.receiver(&j).and_then(|r| r.inbox.first().cloned()));
    s.close()?;
    if write_result(job, payload, out)? {
        return Ok(());
    }
    match got.as_ref().and_then(outcome_failure) {
        Some(f) => Err(f),
        None => Err(Failure::Unreachable(format!(
            "result of {job} not available yet"
        ))),
    }
}
