//! A short-lived client process: restores client state from disk, talks to
//! the servers for one command, and saves the state again.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use agentfarm::model::{ClientId, NodeId};
use agentfarm::runtime::agent::ServerRef;
use agentfarm::runtime::client::ClientState;
use agentfarm::runtime::live::{bind, spawn, LiveHandle, LiveOptions};
use agentfarm::runtime::{ClientConfig, ClientContainer, ClientOutcome};

use crate::Failure;

const STATE_FILE: &str = "client.json";

/// Everything a client needs to survive between invocations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Saved {
    pub client: ClientId,
    pub servers: Vec<String>,
    pub state: ClientState,
}

/// State directory: `$AGENTFARM_HOME`, else `./.agentfarm`.
pub fn home() -> PathBuf {
    std::env::var_os("AGENTFARM_HOME")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".agentfarm"))
}

pub fn load(home: &Path) -> Result<Option<Saved>, Failure> {
    let path = home.join(STATE_FILE);
    match std::fs::read(&path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Failure::Usage(format!("{}: {e}", path.display()))),
    }
}

pub fn save(home: &Path, saved: &Saved) -> Result<(), Failure> {
    std::fs::create_dir_all(home)
        .map_err(|e| Failure::Usage(format!("{}: {e}", home.display())))?;
    let path = home.join(STATE_FILE);
    let tmp = home.join(format!("{STATE_FILE}.tmp"));
    let json = serde_json::to_vec_pretty(saved).expect("state serializes");
    std::fs::write(&tmp, json)
        .and_then(|_| std::fs::rename(&tmp, &path))
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn fresh_client_id() -> ClientId {
    let nanos = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    ClientId::new(format!(
        "cli-{:x}-{:x}",
        std::process::id(),
        nanos & 0xffff_ffff
    ))
    .expect("valid id")
}

pub struct Session {
    home: PathBuf,
    client: ClientId,
    servers: Vec<String>,
    handle: LiveHandle<ClientContainer>,
    seen: usize,
}

impl Session {
    /// Restores the client, binds a fresh endpoint and registers with the
    /// servers. `servers` replaces the remembered server list when given.
    pub fn open(servers: Option<Vec<String>>) -> Result<Session, Failure> {
        let home = home();
        let saved = load(&home)?;
        let (client, remembered, state) = match saved {
            Some(s) => (s.client, s.servers, s.state),
            None => (fresh_client_id(), Vec::new(), ClientState::default()),
        };
        let servers = servers.unwrap_or(remembered);
        if servers.is_empty() {
            return Err(Failure::Usage(
                "no servers known; submit with --server first".into(),
            ));
        }
        let mut refs = Vec::new();
        for s in &servers {
            let id = NodeId::new(s.as_str())
                .map_err(|e| Failure::Usage(format!("--server {s}: {e}")))?;
            refs.push(ServerRef {
                id,
                endpoint: s.clone(),
            });
        }
        let addr = std::env::var("AGENTFARM_CLIENT_ADDR").unwrap_or_else(|_| "127.0.0.1:0".into());
        let (listener, endpoint) =
            bind(&addr).map_err(|e| Failure::Usage(format!("bind {addr}: {e}")))?;
        let cfg = ClientConfig::new(client.clone(), endpoint, refs);
        let actor = ClientContainer::with_state(cfg, state);
        let handle = spawn(listener, actor, LiveOptions::default())
            .map_err(|e| Failure::Usage(format!("start client: {e}")))?;
        let mut session = Session {
            home,
            client,
            servers,
            handle,
            seen: 0,
        };
        let timeout = session.request_timeout() + Duration::from_secs(1);
        match session.wait(timeout, |o| {
            matches!(
                o,
                ClientOutcome::Registered { .. } | ClientOutcome::AllServersDown
            )
        }) {
            Some(ClientOutcome::Registered { .. }) => Ok(session),
            _ => {
                session.save()?;
                Err(Failure::Unreachable("no server reachable".into()))
            }
        }
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_millis(self.handle.call(|c, _| c.config().request_timeout_ms))
    }

    /// Runs `f` on the client's actor thread.
    pub fn call<R: Send + 'static>(
        &self,
        f: impl FnOnce(&mut ClientContainer, &mut dyn agentfarm::runtime::Context) -> R + Send + 'static,
    ) -> R {
        self.handle.call(f)
    }

    /// Waits until an outcome matching `pred` appears, or `timeout` passes.
    pub fn wait(
        &mut self,
        timeout: Duration,
        pred: impl Fn(&ClientOutcome) -> bool,
    ) -> Option<ClientOutcome> {
        let deadline = Instant::now() + timeout;
        loop {
            let seen = self.seen;
            let fresh: Vec<ClientOutcome> = self.handle.call(move |c, _| {
                c.outcomes()[seen..]
                    .iter()
                    .map(|(_, o)| o.clone())
                    .collect()
            });
            for o in fresh {
                self.seen += 1;
                if pred(&o) {
                    return Some(o);
                }
            }
            if Instant::now() >= deadline {
                return None;
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }

    pub fn save(&self) -> Result<(), Failure> {
        let state = self.handle.call(|c, _| c.state());
        save(
            &self.home,
            &Saved {
                client: self.client.clone(),
                servers: self.servers.clone(),
                state,
            },
        )
    }

    /// Saves state and shuts the client down.
    pub fn close(self) -> Result<(), Failure> {
        self.save()?;
        drop(self.handle.stop());
        Ok(())
    }
}
