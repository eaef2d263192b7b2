//! Analysis workloads executed by mobile agents: histograms over indexed
//! numeric files and drawable extraction from event XML.

pub mod gen;
pub mod hier;
pub mod hist;
pub mod xml;

use thiserror::Error;

pub use hier::{read_hier_file, write_hier_file, Branch, HierError, HierFile, HierIndex};
pub use hist::{build_hist1d, build_hist2d, Axis, Histogram1D, Histogram2D, LengthMismatch};
pub use xml::{parse_event_stream, BoundingBox, DrawableSummary, XmlError};

use crate::model::{AxisSpec, JobParams, ResultData};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkloadError {
    #[error(transparent)]
    Hier(#[from] HierError),
    #[error(transparent)]
    Xml(#[from] XmlError),
    #[error(transparent)]
    Length(#[from] LengthMismatch),
}

/// Work performed by one job run, in units the cost model prices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WorkMeter {
    /// Input bytes decoded.
    pub parse_bytes: u64,
    /// Values binned, or drawables and points summarized.
    pub analyze_items: u64,
}

fn axis(a: &AxisSpec) -> Axis {
    Axis {
        nbins: a.nbins,
        lo: a.lo,
        hi: a.hi,
    }
}

/// Runs the workload for `params` over `input` and reports the work done.
pub fn run_job(params: &JobParams, input: &[u8]) -> Result<(ResultData, WorkMeter), WorkloadError> {
    match params {
        JobParams::Hist1D { axis: a } => {
            let index = HierIndex::parse(input)?;
            let values = index.read_branch(input, &a.branch)?;
            let meter = WorkMeter {
                parse_bytes: (index.index_len + 8 * values.len()) as u64,
                analyze_items: values.len() as u64,
            };
            let h = build_hist1d(&values, a.nbins, a.lo, a.hi);
            Ok((ResultData::Hist1D(h), meter))
        }
        JobParams::Hist2D { x, y } => {
            let index = HierIndex::parse(input)?;
            let xs = index.read_branch(input, &x.branch)?;
            let ys = index.read_branch(input, &y.branch)?;
            let meter = WorkMeter {
                parse_bytes: (index.index_len + 8 * (xs.len() + ys.len())) as u64,
                analyze_items: xs.len() as u64,
            };
            let h = build_hist2d(&xs, &ys, axis(x), axis(y))?;
            Ok((ResultData::Hist2D(h), meter))
        }
        JobParams::ParseEventXml => {
            let outcome = xml::parse_event_stream_metered(input)?;
            let meter = WorkMeter {
                parse_bytes: outcome.bytes_read,
                analyze_items: outcome.summary.total_drawables() + outcome.summary.total_points,
            };
            Ok((ResultData::Drawables(outcome.summary), meter))
        }
    }
}
