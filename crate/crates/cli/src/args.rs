//! Command-line grammar and validation.

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use agentfarm::model::{
    validate_job_spec, AxisSpec, DeliveryMode, JobId, JobParams, JobSpec, LoadThresholds, NodeId,
};

#[derive(Debug, Parser)]
#[command(
    name = "agentfarm",
    version,
    about = "Offload data analysis from a thin client to a farm of nodes using mobile agents",
    after_help = "Exit codes: 0 success, 1 usage error, 2 job failed, 3 unreachable.\n\
                  Client state lives in $AGENTFARM_HOME (default ./.agentfarm)."
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Start a main container (server) for the farm described in FILE.
    Serve {
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        #[command(flatten)]
        thresholds: ThresholdArgs,
    },
    /// Start resource node NODE from the farm described in FILE.
    Node {
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        #[arg(long, value_name = "NODE")]
        id: Option<String>,
    },
    /// Submit a job and wait for its result; prints the job id.
    Submit {
        /// Comma-separated server endpoints, in order of preference.
        #[arg(long, value_name = "HOST:PORT[,HOST:PORT...]")]
        server: Option<String>,
        #[arg(long, value_name = "hist1d|hist2d|parsexml")]
        kind: Option<String>,
        #[arg(long, value_name = "PATH")]
        input: Option<String>,
        /// Branch to histogram; give twice for hist2d (x then y).
        #[arg(long, value_name = "NAME")]
        branch: Vec<String>,
        #[arg(long, value_name = "N")]
        nbins: Vec<String>,
        #[arg(long, value_name = "X", allow_hyphen_values = true)]
        lo: Vec<String>,
        #[arg(long, value_name = "X", allow_hyphen_values = true)]
        hi: Vec<String>,
        /// Result delivery [default: direct]
        #[arg(long, value_name = "direct|bringback|auto")]
        delivery: Option<String>,
    },
    /// Ask where a job is and what it is doing.
    Status {
        #[arg(long, value_name = "ID")]
        job: Option<String>,
    },
    /// Stop a job wherever it runs.
    Kill {
        #[arg(long, value_name = "ID")]
        job: Option<String>,
    },
    /// Write a job's result to PATH as JSON.
    Results {
        #[arg(long, value_name = "ID")]
        job: Option<String>,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Run a scenario script on the virtual clock.
    Simulate {
        #[arg(long, value_name = "FILE")]
        scenario: Option<PathBuf>,
        #[arg(long, value_name = "N")]
        seed: Option<String>,
        /// Timing report CSV.
        #[arg(long, value_name = "report.csv")]
        out: Option<PathBuf>,
        /// Event trace, one line per event.
        #[arg(long, value_name = "trace.log")]
        trace: Option<PathBuf>,
        #[command(flatten)]
        thresholds: ThresholdArgs,
    },
    /// Generate test data.
    Gendata {
        #[command(subcommand)]
        what: GenSub,
    },
}

#[derive(Debug, Args)]
struct ThresholdArgs {
    /// Load index at or below which a node is Under [default: 0.5]
    #[arg(long = "theta-lo", value_name = "X")]
    theta_lo: Option<String>,
    /// Load index at or above which a node is Over [default: 0.8]
    #[arg(long = "theta-hi", value_name = "X")]
    theta_hi: Option<String>,
}

#[derive(Debug, Subcommand)]
enum GenSub {
    /// Hierarchical columnar file with N branches of M values each.
    Hier {
        #[arg(long, value_name = "N")]
        branches: Option<String>,
        #[arg(long, value_name = "M")]
        values: Option<String>,
        #[arg(long, value_name = "S")]
        seed: Option<String>,
        /// Output file [default: stdout]
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Event XML with N events of M drawables of P points.
    Xml {
        #[arg(long, value_name = "N")]
        events: Option<String>,
        #[arg(long, value_name = "M")]
        drawables: Option<String>,
        #[arg(long, value_name = "P")]
        points: Option<String>,
        #[arg(long, value_name = "S")]
        seed: Option<String>,
        /// Output file [default: stdout]
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

/// A validated invocation.
#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Serve {
        config: PathBuf,
        theta_lo: Option<f64>,
        theta_hi: Option<f64>,
    },
    Node {
        config: PathBuf,
        id: NodeId,
    },
    Submit {
        servers: Vec<String>,
        /// Job id left empty; the client assigns one.
        input: String,
        params: JobParams,
        delivery: DeliveryMode,
    },
    Status {
        job: JobId,
    },
    Kill {
        job: JobId,
    },
    Results {
        job: JobId,
        out: PathBuf,
    },
    Simulate {
        scenario: PathBuf,
        seed: u64,
        out: PathBuf,
        trace: Option<PathBuf>,
        theta_lo: Option<f64>,
        theta_hi: Option<f64>,
    },
    GenHier {
        branches: usize,
        values: usize,
        seed: u64,
        out: Option<PathBuf>,
    },
    GenXml {
        events: u64,
        drawables: u64,
        points: u64,
        seed: u64,
        out: Option<PathBuf>,
    },
    /// `--help` or `--version`; the text goes to stdout.
    Info(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct Usage(pub String);

fn usage(s: impl Into<String>) -> Usage {
    Usage(s.into())
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T, Usage> {
    v.ok_or_else(|| usage(format!("{flag} required")))
}

fn integer<T: std::str::FromStr>(raw: Option<String>, name: &str) -> Result<T, Usage> {
    let raw = required(raw, &format!("--{name}"))?;
    raw.parse()
        .map_err(|_| usage(format!("{name} must be integer")))
}

fn number(raw: &str, name: &str) -> Result<f64, Usage> {
    raw.parse()
        .map_err(|_| usage(format!("{name} must be a number")))
}

fn job_id(raw: Option<String>) -> Result<JobId, Usage> {
    let raw = required(raw, "--job")?;
    JobId::new(raw).map_err(|e| usage(format!("--job: {e}")))
}

fn thresholds(t: ThresholdArgs) -> Result<(Option<f64>, Option<f64>), Usage> {
    let lo = t.theta_lo.map(|s| number(&s, "theta-lo")).transpose()?;
    let hi = t.theta_hi.map(|s| number(&s, "theta-hi")).transpose()?;
    let l = lo.unwrap_or(LoadThresholds::DEFAULT_LO);
    let h = hi.unwrap_or(LoadThresholds::DEFAULT_HI);
    LoadThresholds::new(l, h).map_err(|e| usage(e.to_string()))?;
    Ok((lo, hi))
}

fn axes(
    branch: Vec<String>,
    nbins: Vec<String>,
    lo: Vec<String>,
    hi: Vec<String>,
    want: usize,
) -> Result<Vec<AxisSpec>, Usage> {
    for (flag, n) in [
        ("--branch", branch.len()),
        ("--nbins", nbins.len()),
        ("--lo", lo.len()),
        ("--hi", hi.len()),
    ] {
        if n == 0 {
            return Err(usage(format!("{flag} required")));
        }
        if n != want {
            return Err(usage(format!("{flag} given {n} time(s), expected {want}")));
        }
    }
    let mut out = Vec::new();
    for i in 0..want {
        out.push(AxisSpec {
            branch: branch[i].clone(),
            nbins: nbins[i]
                .parse()
                .map_err(|_| usage("nbins must be integer"))?,
            lo: number(&lo[i], "lo")?,
            hi: number(&hi[i], "hi")?,
        });
    }
    Ok(out)
}

/// Parses `argv` (including the program name) into a validated command.
pub fn parse_args<I, S>(argv: I) -> Result<Command, Usage>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    Ok(Command::Info(e.render().to_string()))
                }
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    Err(usage(e.render().to_string()))
                }
                _ => Err(usage(
                    e.kind().to_string() + ": " + first_line(&e.render().to_string()),
                )),
            };
        }
    };
    match cli.command {
        Sub::Serve {
            config,
            thresholds: t,
        } => {
            let config = required(config, "--config")?;
            let (theta_lo, theta_hi) = thresholds(t)?;
            Ok(Command::Serve {
                config,
                theta_lo,
                theta_hi,
            })
        }
        Sub::Node { config, id } => {
            let config = required(config, "--config")?;
            let id = required(id, "--id")?;
            let id = NodeId::new(id).map_err(|e| usage(format!("--id: {e}")))?;
            Ok(Command::Node { config, id })
        }
        Sub::Submit {
            server,
            kind,
            input,
            branch,
            nbins,
            lo,
            hi,
            delivery,
        } => {
            let server = required(server, "--server")?;
            let servers: Vec<String> = server
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect();
            if servers.is_empty() {
                return Err(usage("--server required"));
            }
            let kind = required(kind, "--kind")?;
            let input = required(input, "--input")?;
            let params = match kind.as_str() {
                "hist1d" => {
                    let mut a = axes(branch, nbins, lo, hi, 1)?;
                    JobParams::Hist1D { axis: a.remove(0) }
                }
                "hist2d" => {
                    let mut a = axes(branch, nbins, lo, hi, 2)?;
                    let y = a.pop().expect("two axes");
                    let x = a.pop().expect("two axes");
                    JobParams::Hist2D { x, y }
                }
                "parsexml" => {
                    if !(branch.is_empty() && nbins.is_empty() && lo.is_empty() && hi.is_empty()) {
                        return Err(usage("parsexml takes no histogram flags"));
                    }
                    JobParams::ParseEventXml
                }
                other => return Err(usage(format!("--kind: unknown kind {other}"))),
            };
            let delivery = match delivery.as_deref().unwrap_or("direct") {
                "direct" => DeliveryMode::Direct,
                "bringback" => DeliveryMode::BringBack,
                "auto" => DeliveryMode::Auto,
                other => return Err(usage(format!("--delivery: unknown mode {other}"))),
            };
            // the placeholder id is replaced by the client
            let probe = JobSpec {
                job_id: JobId::new("probe").expect("valid"),
                input_ref: input.clone(),
                params: params.clone(),
                delivery_mode: delivery,
            };
            let violations = validate_job_spec(&probe);
            if !violations.is_empty() {
                let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
                return Err(usage(format!("invalid job: {}", list.join("; "))));
            }
            Ok(Command::Submit {
                servers,
                input,
                params,
                delivery,
            })
        }
        Sub::Status { job } => Ok(Command::Status { job: job_id(job)? }),
        Sub::Kill { job } => Ok(Command::Kill { job: job_id(job)? }),
        Sub::Results { job, out } => Ok(Command::Results {
            job: job_id(job)?,
            out: required(out, "--out")?,
        }),
        Sub::Simulate {
            scenario,
            seed,
            out,
            trace,
            thresholds: t,
        } => {
            let seed = integer(seed, "seed")?;
            let scenario = required(scenario, "--scenario")?;
            let out = required(out, "--out")?;
            let (theta_lo, theta_hi) = thresholds(t)?;
            Ok(Command::Simulate {
                scenario,
                seed,
                out,
                trace,
                theta_lo,
                theta_hi,
            })
        }
        Sub::Gendata { what } => match what {
            GenSub::Hier {
                branches,
                values,
                seed,
                out,
            } => Ok(Command::GenHier {
                branches: integer(branches, "branches")?,
                values: integer(values, "values")?,
                seed: integer(seed, "seed")?,
                out,
            }),
            GenSub::Xml {
                events,
                drawables,
                points,
                seed,
                out,
            } => Ok(Command::GenXml {
                events: integer(events, "events")?,
                drawables: integer(drawables, "drawables")?,
                points: integer(points, "points")?,
                seed: integer(seed, "seed")?,
                out,
            }),
        },
    }
}

fn first_line(s: &str) -> &str {
    s.lines().next().unwrap_or("").trim_start_matches("error: ")
}

/// Help text of `path` (empty for the top level), as `--help` prints it.
pub fn help_text(path: &[&str]) -> String {
    let mut argv = vec!["agentfarm"];
    argv.extend_from_slice(path);
    argv.push("--help");
    match parse_args(argv) {
        Ok(Command::Info(text)) => text,
        other => panic!("--help did not produce help: {other:?}"),
    }
}
