//! Load classification and placement.
//!
//! A node's load index is the largest of its CPU, queue and memory ratios;
//! any single saturated resource makes it a poor host.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LoadReport, LoadStatus, LoadThresholds, NodeId};

/// Scalar utilization in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct LoadIndex(pub f64);

pub fn load_index(report: &LoadReport) -> LoadIndex {
    let queue = (report.queue_depth as f64 / report.capacity.max(1) as f64).min(1.0);
    LoadIndex(report.cpu_util.max(queue).max(report.mem_util))
}

/// `Over` iff index ≥ `theta_hi`, `Under` iff index ≤ `theta_lo`.
pub fn classify_index(index: LoadIndex, t: &LoadThresholds) -> LoadStatus {
    if index.0 >= t.theta_hi {
        LoadStatus::Over
    } else if index.0 <= t.theta_lo {
        LoadStatus::Under
    } else {
        LoadStatus::Normal
    }
}

pub fn classify_load(report: &LoadReport, t: &LoadThresholds) -> LoadStatus {
    classify_index(load_index(report), t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarmMember {
    pub report: LoadReport,
    pub status: LoadStatus,
}

/// Classified load of every member of one server's farm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarmView {
    pub server: NodeId,
    pub members: Vec<FarmMember>,
    pub as_of: u64,
}

impl FarmView {
    pub fn new(server: NodeId, reports: Vec<LoadReport>, t: &LoadThresholds, as_of: u64) -> Self {
        let members = reports
            .into_iter()
            .map(|report| FarmMember {
                status: classify_load(&report, t),
                report,
            })
            .collect();
        FarmView {
            server,
            members,
            as_of,
        }
    }

    pub fn member(&self, node: &NodeId) -> Option<&FarmMember> {
        self.members.iter().find(|m| &m.report.node == node)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no placement target available")]
pub struct NoTargetAvailable;

/// Picks the least-loaded `Under` member not in `exclude`, falling back to
/// the least-loaded `Normal` member. Ties go to the smallest node id. `Over`
/// members are never chosen.
pub fn select_target(
    farm: &FarmView,
    exclude: &BTreeSet<NodeId>,
    t: &LoadThresholds,
) -> Result<NodeId, NoTargetAvailable> {
    let mut best: Option<(LoadStatus, LoadIndex, &NodeId)> = None;
    for m in &farm.members {
        let node = &m.report.node;
        if exclude.contains(node) {
            continue;
        }
        let index = load_index(&m.report);
        let status = classify_index(index, t);
        if status == LoadStatus::Over {
            continue;
        }
        let better = match best {
            None => true,
            Some((bs, bi, bn)) => {
                let rank = |s| if s == LoadStatus::Under { 0 } else { 1 };
                (rank(status), index, node) < (rank(bs), bi, bn)
            }
        };
        if better {
            best = Some((status, index, node));
        }
    }
    best.map(|(_, _, n)| n.clone()).ok_or(NoTargetAvailable)
}
