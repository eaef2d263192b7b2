//! Server configuration files.
//!
//! One `key = value` per line; `#` starts a comment. Farm members are listed
//! with repeated `node = ID ENDPOINT CAPACITY SPEED_FACTOR` lines:
//!
//! ```text
//! id = s1
//! listen = 127.0.0.1:7000
//! theta_lo = 0.5
//! theta_hi = 0.8
//! node = n1 127.0.0.1:7101 2 1.0
//! node = n2 127.0.0.1:7102 2 1.5
//! ```

use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::model::{LoadThresholds, NodeId};
use crate::runtime::server::{FarmMemberConfig, ServerConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {detail}")]
    Invalid { line: usize, detail: String },
    #[error("{0}")]
    Missing(String),
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

fn invalid(line: usize, detail: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        line,
        detail: detail.into(),
    }
}

fn number<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T, ConfigError> {
    raw.parse()
        .map_err(|_| invalid(line, format!("{key}: not a number: {raw}")))
}

pub fn parse_server_config(text: &str) -> Result<ServerConfig, ConfigError> {
    let mut id = None;
    let mut listen = None;
    let mut lo = LoadThresholds::DEFAULT_LO;
    let mut hi = LoadThresholds::DEFAULT_HI;
    let mut theta_line = 0;
    let mut cfg = ServerConfig::new(NodeId::new("placeholder").expect("valid"), "", Vec::new());
    let mut seen = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(invalid(line, format!("expected key = value: {content}")));
        };
        let (key, value) = (key.trim(), value.trim());
        if key != "node" && !seen.insert(key.to_owned()) {
            return Err(invalid(line, format!("duplicate key {key}")));
        }
        match key {
            "id" => id = Some(NodeId::new(value).map_err(|e| invalid(line, format!("id: {e}")))?),
            "listen" => listen = Some(value.to_owned()),
            "theta_lo" => {
                lo = number(line, key, value)?;
                theta_line = line;
            }
            "theta_hi" => {
                hi = number(line, key, value)?;
                theta_line = line;
            }
            "heartbeat_interval_ms" => cfg.heartbeat_interval_ms = number(line, key, value)?,
            "heartbeat_miss_limit" => cfg.heartbeat_miss_limit = number(line, key, value)?,
            "max_hops" => cfg.max_hops = number(line, key, value)?,
            "node" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                let [nid, endpoint, capacity, speed] = parts[..] else {
                    return Err(invalid(
                        line,
                        "node: expected ID ENDPOINT CAPACITY SPEED_FACTOR",
                    ));
                };
                let member = FarmMemberConfig {
                    id: NodeId::new(nid).map_err(|e| invalid(line, format!("node id: {e}")))?,
                    endpoint: endpoint.to_owned(),
                    capacity: number(line, "capacity", capacity)?,
                    speed_factor: number(line, "speed_factor", speed)?,
                };
                if member.capacity == 0 {
                    return Err(invalid(line, "capacity must be at least 1"));
                }
                if !(member.speed_factor.is_finite() && member.speed_factor > 0.0) {
                    return Err(invalid(line, "speed_factor must be positive"));
                }
                if cfg.farm.iter().any(|m| m.id == member.id) {
                    return Err(invalid(line, format!("duplicate node {nid}")));
                }
                cfg.farm.push(member);
            }
            other => return Err(invalid(line, format!("unknown key {other}"))),
        }
    }
    let listen = listen.ok_or_else(|| ConfigError::Missing("listen is required".into()))?;
    cfg.id = match id {
        Some(id) => id,
        None => {
            NodeId::new(listen.as_str()).map_err(|e| ConfigError::Missing(format!("id: {e}")))?
        }
    };
    cfg.listen = listen;
    cfg.thresholds = LoadThresholds::new(lo, hi).map_err(|e| invalid(theta_line, e.to_string()))?;
    if cfg.heartbeat_interval_ms == 0 || cfg.heartbeat_miss_limit == 0 {
        return Err(ConfigError::Missing(
            "heartbeat settings must be positive".into(),
        ));
    }
    Ok(cfg)
}

pub fn load_server_config(path: &Path) -> Result<ServerConfig, ConfigError> {
    parse_server_config(&std::fs::read_to_string(path)?)
}
