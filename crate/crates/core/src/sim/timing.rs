//! Cost model and per-phase timing reports for the with/without-agents
//! comparison.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::JobSpec;
use crate::runtime::{Micros, MICROS_PER_MS};
use crate::workloads::{run_job, WorkMeter, WorkloadError};

/// Bandwidth and latency of one network link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSpec {
    /// Bytes per second; always > 0.
    pub bandwidth: u64,
    pub latency_us: Micros,
}

impl LinkSpec {
    pub const CLIENT: LinkSpec = LinkSpec {
        bandwidth: 500_000,
        latency_us: 50_000,
    };
    pub const SERVER: LinkSpec = LinkSpec {
        bandwidth: 10_000_000,
        latency_us: 5_000,
    };

    /// Serialization delay for `bytes`, rounded up to the microsecond.
    pub fn tx_us(&self, bytes: u64) -> Micros {
        let bw = self.bandwidth.max(1) as u128;
        ((bytes as u128 * 1_000_000).div_ceil(bw)) as Micros
    }

    /// Time for `bytes` to arrive at the far end.
    pub fn transfer_us(&self, bytes: u64) -> Micros {
        self.tx_us(bytes) + self.latency_us
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub client_link: LinkSpec,
    pub server_link: LinkSpec,
    /// Wall-time multiplier of the client's compute phases.
    pub client_speed: f64,
    /// Multiplier of the node that runs an offloaded job.
    pub server_speed: f64,
    /// Reference parse throughput, bytes per second at speed 1.0.
    pub parse_rate: u64,
    /// Reference analysis throughput, items per second at speed 1.0.
    pub analyze_rate: u64,
    pub display_us: Micros,
    pub file_size: u64,
    pub snapshot_bytes: u64,
    pub result_bytes: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            client_link: LinkSpec::CLIENT,
            server_link: LinkSpec::SERVER,
            client_speed: 2.0,
            server_speed: 1.0,
            parse_rate: 10_000_000,
            analyze_rate: 20_000_000,
            display_us: 50 * MICROS_PER_MS,
            file_size: 5_000_000,
            snapshot_bytes: 2_000,
            result_bytes: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid cost model: {0}")]
pub struct BadCostModel(pub String);

/// Compute cost at the reference speed, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BaseCost {
    pub parse_us: Micros,
    pub analyze_us: Micros,
}

fn scaled(base: Micros, speed: f64) -> Micros {
    (base as f64 * speed).round() as Micros
}

impl CostModel {
    pub fn validate(&self) -> Result<(), BadCostModel> {
        let speed_ok = |s: f64| s.is_finite() && s >= 1.0;
        if !speed_ok(self.client_speed) || !speed_ok(self.server_speed) {
            return Err(BadCostModel("speed factors must be >= 1".into()));
        }
        if self.client_link.bandwidth == 0 || self.server_link.bandwidth == 0 {
            return Err(BadCostModel("bandwidth must be > 0".into()));
        }
        if self.parse_rate == 0 || self.analyze_rate == 0 {
            return Err(BadCostModel("reference rates must be > 0".into()));
        }
        Ok(())
    }

    /// Reference-speed cost of the work recorded in `meter`.
    pub fn base_cost(&self, meter: WorkMeter) -> BaseCost {
        BaseCost {
            parse_us: (meter.parse_bytes as u128 * 1_000_000).div_ceil(self.parse_rate as u128)
                as Micros,
            analyze_us: (meter.analyze_items as u128 * 1_000_000)
                .div_ceil(self.analyze_rate as u128) as Micros,
        }
    }

    /// Virtual duration of running `meter`'s work on a host with `speed`.
    pub fn compute_us(&self, meter: WorkMeter, speed: f64) -> Micros {
        let b = self.base_cost(meter);
        scaled(b.parse_us, speed) + scaled(b.analyze_us, speed)
    }

    /// Extrapolates a measured run to an input of `file_size` bytes.
    pub fn scale_meter(meter: WorkMeter, file_size: u64) -> WorkMeter {
        if meter.parse_bytes == 0 {
            return WorkMeter {
                parse_bytes: file_size,
                analyze_items: 0,
            };
        }
        let items = (meter.analyze_items as u128 * file_size as u128
            + meter.parse_bytes as u128 / 2)
            / meter.parse_bytes as u128;
        WorkMeter {
            parse_bytes: file_size,
            analyze_items: items as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Download,
    Parse,
    Analyze,
    Migrate,
    ResultTransfer,
    Display,
}

impl Phase {
    /// Declared order, used for CSV rows.
    pub const ORDER: [Phase; 6] = [
        Phase::Download,
        Phase::Parse,
        Phase::Analyze,
        Phase::Migrate,
        Phase::ResultTransfer,
        Phase::Display,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Download => "download",
            Phase::Parse => "parse",
            Phase::Analyze => "analyze",
            Phase::Migrate => "migrate",
            Phase::ResultTransfer => "result_transfer",
            Phase::Display => "display",
        }
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Phase::ORDER
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown phase {s}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioLabel {
    WithoutAgents,
    WithAgents,
}

impl ScenarioLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioLabel::WithoutAgents => "without_agents",
            ScenarioLabel::WithAgents => "with_agents",
        }
    }
}

impl FromStr for ScenarioLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "without_agents" => Ok(ScenarioLabel::WithoutAgents),
            "with_agents" => Ok(ScenarioLabel::WithAgents),
            other => Err(format!("unknown scenario {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: Phase,
    pub duration_us: Micros,
}

impl PhaseTiming {
    pub fn duration_ms(&self) -> f64 {
        self.duration_us as f64 / MICROS_PER_MS as f64
    }
}

/// Phase durations of one run. Phases appear in declared order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingReport {
    pub scenario: ScenarioLabel,
    pub phases: Vec<PhaseTiming>,
}

impl TimingReport {
    pub fn total_us(&self) -> Micros {
        self.phases.iter().map(|p| p.duration_us).sum()
    }

    pub fn total_ms(&self) -> f64 {
        self.total_us() as f64 / MICROS_PER_MS as f64
    }

    pub fn phase_us(&self, phase: Phase) -> Option<Micros> {
        self.phases
            .iter()
            .find(|p| p.phase == phase)
            .map(|p| p.duration_us)
    }
}

fn report(scenario: ScenarioLabel, phases: &[(Phase, Micros)]) -> TimingReport {
    TimingReport {
        scenario,
        phases: phases
            .iter()
            .map(|&(phase, duration_us)| PhaseTiming { phase, duration_us })
            .collect(),
    }
}

/// Measures the reference cost of `spec` by running it on `input`, then
/// extrapolates to the model's file size.
pub fn measure_base(
    spec: &JobSpec,
    input: &[u8],
    cost: &CostModel,
) -> Result<BaseCost, WorkloadError> {
    let (_, meter) = run_job(&spec.params, input)?;
    Ok(cost.base_cost(CostModel::scale_meter(meter, cost.file_size)))
}

/// The client downloads the whole file and analyzes it itself.
pub fn timing_without_agents(cost: &CostModel, base: BaseCost) -> TimingReport {
    report(
        ScenarioLabel::WithoutAgents,
        &[
            (
                Phase::Download,
                cost.client_link.transfer_us(cost.file_size),
            ),
            (Phase::Parse, scaled(base.parse_us, cost.client_speed)),
            (Phase::Analyze, scaled(base.analyze_us, cost.client_speed)),
            (Phase::Display, cost.display_us),
        ],
    )
}

/// The client ships a snapshot; the server side already holds the file.
pub fn timing_with_agents(cost: &CostModel, base: BaseCost) -> TimingReport {
    report(
        ScenarioLabel::WithAgents,
        &[
            (Phase::Parse, scaled(base.parse_us, cost.server_speed)),
            (Phase::Analyze, scaled(base.analyze_us, cost.server_speed)),
            (
                Phase::Migrate,
                cost.client_link.transfer_us(cost.snapshot_bytes),
            ),
            (
                Phase::ResultTransfer,
                cost.client_link.transfer_us(cost.result_bytes),
            ),
            (Phase::Display, cost.display_us),
        ],
    )
}

pub fn run_without_agents(
    spec: &JobSpec,
    input: &[u8],
    cost: &CostModel,
) -> Result<TimingReport, WorkloadError> {
    Ok(timing_without_agents(
        cost,
        measure_base(spec, input, cost)?,
    ))
}

pub fn run_with_agents(
    spec: &JobSpec,
    input: &[u8],
    cost: &CostModel,
) -> Result<TimingReport, WorkloadError> {
    Ok(timing_with_agents(cost, measure_base(spec, input, cost)?))
}

fn fmt_ms(us: Micros) -> String {
    format!("{}.{:03}", us / 1000, us % 1000)
}

/// CSV rendering: header, then one row per phase in declared order, report
/// by report.
pub fn emit_report(reports: &[TimingReport]) -> String {
    let mut out = String::from("scenario,phase,duration_ms\n");
    for r in reports {
        for phase in Phase::ORDER {
            if let Some(us) = r.phase_us(phase) {
                out.push_str(&format!(
                    "{},{},{}\n",
                    r.scenario.as_str(),
                    phase.as_str(),
                    fmt_ms(us)
                ));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("report line {line}: {detail}")]
pub struct ReportParseError {
    pub line: usize,
    pub detail: String,
}

fn parse_ms(s: &str) -> Option<Micros> {
    let (whole, frac) = s.split_once('.').unwrap_or((s, "0"));
    if frac.len() > 3 || frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let frac: Micros = format!("{frac:0<3}").parse().ok()?;
    Some(whole.parse::<Micros>().ok()? * 1000 + frac)
}

/// Reads CSV produced by [`emit_report`]. A new report starts whenever the
/// scenario label changes or the phase order restarts.
pub fn parse_report(csv: &str) -> Result<Vec<TimingReport>, ReportParseError> {
    let mut lines = csv.lines().enumerate();
    match lines.next() {
        Some((_, "scenario,phase,duration_ms")) => {}
        _ => {
            return Err(ReportParseError {
                line: 1,
                detail: "missing header".into(),
            })
        }
    }
    let mut out: Vec<TimingReport> = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let err = |detail: String| ReportParseError {
            line: i + 1,
            detail,
        };
        let cols: Vec<&str> = line.split(',').collect();
        let [scenario, phase, ms] = cols[..] else {
            return Err(err("expected 3 columns".into()));
        };
        let scenario: ScenarioLabel = scenario.parse().map_err(err)?;
        let phase: Phase = phase.parse().map_err(err)?;
        let duration_us = parse_ms(ms).ok_or_else(|| err(format!("bad duration {ms}")))?;
        let continues = out.last().is_some_and(|r| {
            r.scenario == scenario && r.phases.last().is_some_and(|p| p.phase < phase)
        });
        if !continues {
            out.push(TimingReport {
                scenario,
                phases: Vec::new(),
            });
        }
        out.last_mut()
            .expect("pushed")
            .phases
            .push(PhaseTiming { phase, duration_us });
    }
    Ok(out)
}

impl fmt::Display for TimingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.scenario.as_str())?;
        for p in &self.phases {
            write!(f, " {}={}ms", p.phase.as_str(), fmt_ms(p.duration_us))?;
        }
        write!(f, " total={}ms", fmt_ms(self.total_us()))
    }
}
