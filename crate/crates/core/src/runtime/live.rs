//! Runs one container over real TCP connections and wall-clock time.
//!
//! Each inbound connection gets a reader thread; all events funnel into a
//! single actor thread, so actor code never runs concurrently with itself.
//! Jobs run on worker threads.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::io::{self, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::model::JobSpec;
use crate::wire::{read_frame, write_frame, Envelope};
use crate::workloads::run_job;

use super::{Actor, Context, Micros, Note, SendError, WorkOutcome};

type Call<A> = Box<dyn FnOnce(&mut A, &mut dyn Context) + Send>;

enum Event<A> {
    Message(Envelope),
    WorkDone(u64, WorkOutcome),
    Call(Call<A>),
    Stop,
}

/// Where jobs find their input files.
pub type InputResolver = Arc<dyn Fn(&str) -> Option<Vec<u8>> + Send + Sync>;

/// Resolves input references as paths relative to `root`.
pub fn dir_resolver(root: impl Into<PathBuf>) -> InputResolver {
    let root = root.into();
    Arc::new(move |input_ref: &str| std::fs::read(root.join(input_ref)).ok())
}

pub type NoteSink = Arc<dyn Fn(&Note) + Send + Sync>;

#[derive(Clone)]
pub struct LiveOptions {
    pub inputs: InputResolver,
    pub notes: NoteSink,
    pub connect_timeout: Duration,
}

impl Default for LiveOptions {
    fn default() -> Self {
        LiveOptions {
            inputs: dir_resolver("."),
            notes: Arc::new(|_| {}),
            connect_timeout: Duration::from_millis(500),
        }
    }
}

/// Binds a listener; `addr` may use port 0 for an ephemeral port. Returns
/// the listener and the endpoint string peers should use.
pub fn bind(addr: &str) -> io::Result<(TcpListener, String)> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    Ok((listener, local.to_string()))
}

struct LiveCtx<A> {
    start: Instant,
    events: Sender<Event<A>>,
    timers: BinaryHeap<Reverse<(Micros, u64)>>,
    pool: HashMap<String, BufWriter<TcpStream>>,
    opts: LiveOptions,
}

impl<A: Send + 'static> LiveCtx<A> {
    fn connect(&self, endpoint: &str) -> io::Result<TcpStream> {
        let addrs: Vec<SocketAddr> = endpoint.to_socket_addrs()?.collect();
        let mut last = io::Error::new(io::ErrorKind::NotFound, "no address");
        for a in addrs {
            match TcpStream::connect_timeout(&a, self.opts.connect_timeout) {
                Ok(s) => {
                    s.set_nodelay(true)?;
                    return Ok(s);
                }
                Err(e) => last = e,
            }
        }
        Err(last)
    }

    fn try_send(&mut self, endpoint: &str, env: &Envelope) -> io::Result<()> {
        if !self.pool.contains_key(endpoint) {
            let s = self.connect(endpoint)?;
            self.pool.insert(endpoint.to_owned(), BufWriter::new(s));
        }
        let w = self.pool.get_mut(endpoint).expect("inserted");
        let res = write_frame(w, env)
            .map_err(|e| io::Error::other(e.to_string()))
            .and_then(|_| w.flush());
        if res.is_err() {
            self.pool.remove(endpoint);
        }
        res
    }
}

impl<A: Send + 'static> Context for LiveCtx<A> {
    fn now(&self) -> Micros {
        self.start.elapsed().as_micros() as Micros
    }

    fn send(&mut self, endpoint: &str, env: Envelope) -> Result<(), SendError> {
        // a pooled connection may have been closed by the peer; retry once
        // on a fresh one
        if self.try_send(endpoint, &env).is_ok() || self.try_send(endpoint, &env).is_ok() {
            Ok(())
        } else {
            Err(SendError::Unreachable(endpoint.to_owned()))
        }
    }

    fn set_timer(&mut self, after: Micros, token: u64) {
        let due = self.now() + after;
        self.timers.push(Reverse((due, token)));
    }

    fn start_work(&mut self, ticket: u64, job: &JobSpec, _speed_factor: f64) {
        let events = self.events.clone();
        let inputs = self.opts.inputs.clone();
        let job = job.clone();
        thread::spawn(move || {
            let outcome = match inputs(&job.input_ref) {
                None => WorkOutcome::InputMissing,
                Some(bytes) => match run_job(&job.params, &bytes) {
                    Ok((data, meter)) => WorkOutcome::Done { data, meter },
                    Err(e) => WorkOutcome::Failed(e.to_string()),
                },
            };
            let _ = events.send(Event::WorkDone(ticket, outcome));
        });
    }

    fn note(&mut self, note: Note) {
        (self.opts.notes)(&note);
    }
}

/// A running container. Dropping the handle stops it.
pub struct LiveHandle<A> {
    endpoint: String,
    events: Sender<Event<A>>,
    stopped: Arc<AtomicBool>,
    actor_thread: Option<JoinHandle<A>>,
}

impl<A: Actor + Send + 'static> LiveHandle<A> {
    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Runs `f` on the actor thread and returns its result.
    pub fn call<R: Send + 'static>(
        &self,
        f: impl FnOnce(&mut A, &mut dyn Context) -> R + Send + 'static,
    ) -> R {
        let (tx, rx) = mpsc::channel();
        let call: Call<A> = Box::new(move |a, ctx| {
            let _ = tx.send(f(a, ctx));
        });
        self.events
            .send(Event::Call(call))
            .expect("actor thread alive");
        rx.recv().expect("actor thread alive")
    }

    /// Stops the container and returns the actor.
    pub fn stop(mut self) -> A {
        self.shutdown().expect("actor thread present")
    }

    fn shutdown(&mut self) -> Option<A> {
        self.stopped.store(true, Ordering::SeqCst);
        let _ = self.events.send(Event::Stop);
        // unblock the accept loop
        let _ = TcpStream::connect(&self.endpoint);
        self.actor_thread.take().and_then(|h| h.join().ok())
    }
}

impl<A> Drop for LiveHandle<A> {
    fn drop(&mut self) {
        if let Some(h) = self.actor_thread.take() {
            self.stopped.store(true, Ordering::SeqCst);
            let _ = self.events.send(Event::Stop);
            let _ = TcpStream::connect(&self.endpoint);
            let _ = h.join();
        }
    }
}

/// Starts `actor` serving on `listener`.
pub fn spawn<A: Actor + Send + 'static>(
    listener: TcpListener,
    actor: A,
    opts: LiveOptions,
) -> io::Result<LiveHandle<A>> {
    let endpoint = listener.local_addr()?.to_string();
    let (tx, rx) = mpsc::channel::<Event<A>>();
    let stopped = Arc::new(AtomicBool::new(false));

    {
        let tx = tx.clone();
        let stopped = stopped.clone();
        thread::spawn(move || accept_loop(listener, tx, stopped));
    }

    let ctx = LiveCtx {
        start: Instant::now(),
        events: tx.clone(),
        timers: BinaryHeap::new(),
        pool: HashMap::new(),
        opts,
    };
    let actor_thread = thread::spawn(move || actor_loop(actor, ctx, rx));
    Ok(LiveHandle {
        endpoint,
        events: tx,
        stopped,
        actor_thread: Some(actor_thread),
    })
}

fn accept_loop<A: Send + 'static>(
    listener: TcpListener,
    tx: Sender<Event<A>>,
    stopped: Arc<AtomicBool>,
) {
    for stream in listener.incoming() {
        if stopped.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let tx = tx.clone();
        let stopped = stopped.clone();
        thread::spawn(move || {
            let mut r = BufReader::new(stream);
            while !stopped.load(Ordering::SeqCst) {
                match read_frame(&mut r) {
                    Ok(Some(env)) => {
                        if tx.send(Event::Message(env)).is_err() {
                            break;
                        }
                    }
                    // a malformed frame poisons the stream; drop it
                    Ok(None) | Err(_) => break,
                }
            }
        });
    }
}

fn actor_loop<A: Actor + Send + 'static>(
    mut actor: A,
    mut ctx: LiveCtx<A>,
    rx: Receiver<Event<A>>,
) -> A {
    actor.on_start(&mut ctx);
    loop {
        // fire due timers first
        while let Some(Reverse((due, token))) = ctx.timers.peek().copied() {
            if due > ctx.now() {
                break;
            }
            ctx.timers.pop();
            actor.on_timer(&mut ctx, token);
        }
        let wait = ctx
            .timers
            .peek()
            .map(|Reverse((due, _))| Duration::from_micros(due.saturating_sub(ctx.now())))
            .unwrap_or(Duration::from_millis(200));
        match rx.recv_timeout(wait) {
            Ok(Event::Message(env)) => actor.on_message(&mut ctx, env),
            Ok(Event::WorkDone(ticket, outcome)) => actor.on_work_done(&mut ctx, ticket, outcome),
            Ok(Event::Call(f)) => f(&mut actor, &mut ctx),
            Ok(Event::Stop) | Err(RecvTimeoutError::Disconnected) => break,
            Err(RecvTimeoutError::Timeout) => {}
        }
    }
    actor
}
