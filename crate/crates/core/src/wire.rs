//! Message vocabulary and framing.
//!
//! A frame is a 4-byte big-endian payload length followed by one UTF-8 JSON
//! object with exactly the keys `msg_id`, `sender`, `recipient`, `kind` and
//! `body`. The same frames travel over TCP and through the simulator.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::model::{
    AgentId, AgentSnapshot, ClientId, Endpoint, EntityId, JobId, JobSpec, JobStatus, LoadReport,
    NodeId, ResultPayload,
};

/// Largest accepted payload, excluding the length prefix.
pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("payload of {0} bytes exceeds the 16 MiB limit")]
    OversizePayload(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterClient {
    pub client: ClientId,
    pub endpoint: Endpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterAck {
    pub server: NodeId,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitJob {
    pub spec: JobSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitAck {
    pub job_id: JobId,
    pub accepted: bool,
    #[serde(default)]
    pub reason: Option<String>,
}

/// Carries a migrating agent. `result` is set only when the agent travels
/// with a finished result (bring-back, or parking at the server).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MigrateAgent {
    pub snapshot: AgentSnapshot,
    #[serde(default)]
    pub result: Option<ResultPayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MigrateAck {
    pub agent_id: AgentId,
    pub accepted: bool,
    #[serde(default)]
    pub reason: Option<String>,
    /// Placement chosen by the accepting server.
    #[serde(default)]
    pub node: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadQuery {
    pub node: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadReply {
    pub report: LoadReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatusQuery {
    pub job_id: JobId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatusReport {
    pub job_id: JobId,
    pub status: JobStatus,
    #[serde(default)]
    pub node: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Kill {
    pub job_id: JobId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KillAck {
    pub job_id: JobId,
    pub was_running: bool,
}

/// Sent by a mobile agent to its twin and to its server whenever it lands
/// somewhere or changes state. `hop` orders updates from different nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocationUpdate {
    pub agent_id: AgentId,
    pub node: NodeId,
    pub status: JobStatus,
    pub endpoint: Endpoint,
    pub hop: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultTransfer {
    pub payload: ResultPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultAck {
    pub job_id: JobId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Heartbeat {
    pub from: EntityId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeartbeatAck {
    pub from: EntityId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolError {
    pub code: String,
    pub detail: String,
    /// Job the error refers to, when there is one.
    #[serde(default)]
    pub job_id: Option<JobId>,
}

/// Error codes carried by [`ProtocolError`].
pub mod codes {
    pub const UNKNOWN_JOB: &str = "unknown_job";
    pub const UNKNOWN_RECIPIENT: &str = "unknown_recipient";
    pub const UNREACHABLE: &str = "unreachable";
    pub const ALREADY_TERMINAL: &str = "already_terminal";
    pub const UNEXPECTED: &str = "unexpected_message";
}

macro_rules! vocabulary {
    ($($variant:ident => $kind:literal),* $(,)?) => {
        #[derive(Debug, Clone, PartialEq)]
        pub enum Body {
            $($variant($variant)),*
        }

        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum MessageKind {
            $($variant),*
        }

        impl MessageKind {
            pub const ALL: &'static [MessageKind] = &[$(MessageKind::$variant),*];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(MessageKind::$variant => $kind),*
                }
            }

            pub fn parse(s: &str) -> Option<MessageKind> {
                match s {
                    $($kind => Some(MessageKind::$variant),)*
                    _ => None,
                }
            }
        }

        impl Body {
            pub fn kind(&self) -> MessageKind {
                match self {
                    $(Body::$variant(_) => MessageKind::$variant),*
                }
            }

            fn to_raw(&self) -> serde_json::Result<Box<RawValue>> {
                match self {
                    $(Body::$variant(b) => serde_json::value::to_raw_value(b)),*
                }
            }

            fn from_raw(kind: MessageKind, raw: &RawValue) -> serde_json::Result<Body> {
                match kind {
                    $(MessageKind::$variant => serde_json::from_str(raw.get()).map(Body::$variant)),*
                }
            }
        }

        $(
            impl From<$variant> for Body {
                fn from(b: $variant) -> Body {
                    Body::$variant(b)
                }
            }
        )*
    };
}

vocabulary! {
    RegisterClient => "register_client",
    RegisterAck => "register_ack",
    SubmitJob => "submit_job",
    SubmitAck => "submit_ack",
    MigrateAgent => "migrate_agent",
    MigrateAck => "migrate_ack",
    LoadQuery => "load_query",
    LoadReply => "load_reply",
    StatusQuery => "status_query",
    StatusReport => "status_report",
    Kill => "kill",
    KillAck => "kill_ack",
    LocationUpdate => "location_update",
    ResultTransfer => "result_transfer",
    ResultAck => "result_ack",
    Heartbeat => "heartbeat",
    HeartbeatAck => "heartbeat_ack",
    ProtocolError => "protocol_error",
}

impl MessageKind {
    /// The reply kind for a request kind; `None` for replies and one-way
    /// notifications.
    pub fn reply_kind(self) -> Option<MessageKind> {
        use MessageKind::*;
        Some(match self {
            RegisterClient => RegisterAck,
            SubmitJob => SubmitAck,
            MigrateAgent => MigrateAck,
            LoadQuery => LoadReply,
            StatusQuery => StatusReport,
            Kill => KillAck,
            ResultTransfer => ResultAck,
            Heartbeat => HeartbeatAck,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub msg_id: u64,
    pub sender: EntityId,
    pub recipient: EntityId,
    pub body: Body,
}

impl Envelope {
    pub fn kind(&self) -> MessageKind {
        self.body.kind()
    }
}

#[derive(Serialize)]
struct OutFrame<'a> {
    msg_id: u64,
    sender: &'a EntityId,
    recipient: &'a EntityId,
    kind: &'static str,
    body: &'a RawValue,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InFrame<'a> {
    msg_id: u64,
    sender: EntityId,
    recipient: EntityId,
    kind: String,
    #[serde(borrow)]
    body: &'a RawValue,
}

fn encode_payload(env: &Envelope) -> Result<Vec<u8>, WireError> {
    let body = env
        .body
        .to_raw()
        .map_err(|e| WireError::MalformedPayload(e.to_string()))?;
    serde_json::to_vec(&OutFrame {
        msg_id: env.msg_id,
        sender: &env.sender,
        recipient: &env.recipient,
        kind: env.kind().as_str(),
        body: &body,
    })
    .map_err(|e| WireError::MalformedPayload(e.to_string()))
}

fn decode_payload(payload: &[u8]) -> Result<Envelope, WireError> {
    let malformed = |e: serde_json::Error| WireError::MalformedPayload(e.to_string());
    let frame: InFrame<'_> = serde_json::from_slice(payload).map_err(malformed)?;
    let kind = MessageKind::parse(&frame.kind)
        .ok_or_else(|| WireError::MalformedPayload(format!("unknown kind {:?}", frame.kind)))?;
    let body = Body::from_raw(kind, frame.body).map_err(malformed)?;
    Ok(Envelope {
        msg_id: frame.msg_id,
        sender: frame.sender,
        recipient: frame.recipient,
        body,
    })
}

pub fn encode_frame(env: &Envelope) -> Result<Vec<u8>, WireError> {
    let payload = encode_payload(env)?;
    if payload.len() > MAX_PAYLOAD {
        return Err(WireError::OversizePayload(payload.len()));
    }
    let mut frame = Vec::with_capacity(4 + payload.len());
    frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    frame.extend_from_slice(&payload);
    Ok(frame)
}

/// Decodes the frame at the start of `bytes`, returning the envelope and the
/// number of bytes consumed. Bytes past the frame are left alone.
pub fn decode_frame(bytes: &[u8]) -> Result<(Envelope, usize), WireError> {
    if bytes.len() < 4 {
        return Err(WireError::Truncated {
            needed: 4,
            available: bytes.len(),
        });
    }
    let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(WireError::OversizePayload(len));
    }
    if bytes.len() - 4 < len {
        return Err(WireError::Truncated {
            needed: 4 + len,
            available: bytes.len(),
        });
    }
    let env = decode_payload(&bytes[4..4 + len])?;
    Ok((env, 4 + len))
}

pub fn write_frame<W: Write>(w: &mut W, env: &Envelope) -> Result<(), WireError> {
    w.write_all(&encode_frame(env)?)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame from a stream. `Ok(None)` on a clean end of stream
/// between frames.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Envelope>, WireError> {
    let mut prefix = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut prefix[got..])? {
            0 if got == 0 => return Ok(None),
            0 => {
                return Err(WireError::Truncated {
                    needed: 4,
                    available: got,
                })
            }
            n => got += n,
        }
    }
    let len = u32::from_be_bytes(prefix) as usize;
    if len > MAX_PAYLOAD {
        return Err(WireError::OversizePayload(len));
    }
    let mut payload = vec![0u8; len];
    let mut filled = 0;
    while filled < len {
        match r.read(&mut payload[filled..])? {
            0 => {
                return Err(WireError::Truncated {
                    needed: 4 + len,
                    available: 4 + filled,
                })
            }
            n => filled += n,
        }
    }
    decode_payload(&payload).map(Some)
}
