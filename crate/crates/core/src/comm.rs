//! Simulated ranks: one thread per rank, point-to-point channels between
//! them, and collectives built on top.
//!
//! Every rank runs the same program (SPMD). Collectives and any call to
//! [`Comm::next_tag`] must happen in the same order on all ranks.
//!
//! With an exclusive compute token, at most one rank computes at a time. A
//! rank gives the token up whenever it blocks on a receive, so compute phases
//! never time-slice against each other. [`Comm::clock_us`] then leaves out
//! the time spent off the token, so per-rank timers behave as if every rank
//! owned a dedicated device that idles while it waits for a message.

use std::any::Any;
use std::cell::{Cell, RefCell};
use std::panic::{self, AssertUnwindSafe};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

enum Payload {
    Data(Box<dyn Any + Send>),
    Abort,
}

struct Message {
    src: usize,
    tag: u64,
    payload: Payload,
}

#[derive(Default)]
struct Token {
    busy: Mutex<bool>,
    freed: Condvar,
}

impl Token {
    fn acquire(&self) {
        let mut busy = self.busy.lock().unwrap();
        while *busy {
            busy = self.freed.wait(busy).unwrap();
        }
        *busy = true;
    }

    fn release(&self) {
        *self.busy.lock().unwrap() = false;
        self.freed.notify_one();
    }
}

/// Panic payload used when a peer rank went down.
#[derive(Debug)]
struct PeerAborted;

/// Per-rank communicator.
pub struct Comm {
    rank: usize,
    size: usize,
    peers: Vec<Sender<Message>>,
    inbox: Receiver<Message>,
    stash: RefCell<Vec<Message>>,
    tag: Cell<u64>,
    token: Option<Arc<Token>>,
    holding: Cell<bool>,
    epoch: Instant,
    /// Seconds spent waiting off the token.
    idle: Cell<f64>,
}

impl Comm {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Fresh tag for a point-to-point exchange.
    pub fn next_tag(&self) -> u64 {
        let t = self.tag.get();
        self.tag.set(t + 1);
        t << 8
    }

    pub fn send<T: Send + 'static>(&self, dest: usize, tag: u64, value: T) {
        let msg = Message { src: self.rank, tag, payload: Payload::Data(Box::new(value)) };
        // A closed channel means the peer already exited; its error surfaces elsewhere.
        let _ = self.peers[dest].send(msg);
    }

    pub fn recv<T: 'static>(&self, src: usize, tag: u64) -> T {
        let payload = self.recv_raw(src, tag);
        match payload.downcast::<T>() {
            Ok(v) => *v,
            Err(_) => panic!("rank {}: message from {src} with tag {tag} has unexpected type", self.rank),
        }
    }

    fn recv_raw(&self, src: usize, tag: u64) -> Box<dyn Any + Send> {
        {
            let mut stash = self.stash.borrow_mut();
            if let Some(pos) = stash.iter().position(|m| m.src == src && m.tag == tag) {
                return match stash.swap_remove(pos).payload {
                    Payload::Data(d) => d,
                    Payload::Abort => panic::panic_any(PeerAborted),
                };
            }
        }
        loop {
            let msg = match self.inbox.try_recv() {
                Ok(m) => m,
                Err(TryRecvError::Empty) => {
                    let t0 = Instant::now();
                    self.release();
                    let m = self.inbox.recv();
                    self.acquire();
                    if self.token.is_some() {
                        self.idle.set(self.idle.get() + t0.elapsed().as_secs_f64());
                    }
                    m.unwrap_or_else(|_| panic::panic_any(PeerAborted))
                }
                Err(TryRecvError::Disconnected) => panic::panic_any(PeerAborted),
            };
            if let Payload::Abort = msg.payload {
                panic::panic_any(PeerAborted);
            }
            if msg.src == src && msg.tag == tag {
                if let Payload::Data(d) = msg.payload {
                    return d;
                }
            }
            self.stash.borrow_mut().push(msg);
        }
    }

    fn acquire(&self) {
        if let Some(t) = &self.token {
            if !self.holding.get() {
                t.acquire();
                self.holding.set(true);
            }
        }
    }

    fn release(&self) {
        if let Some(t) = &self.token {
            if self.holding.get() {
                self.holding.set(false);
                t.release();
            }
        }
    }

    fn abort_peers(&self) {
        for (r, p) in self.peers.iter().enumerate() {
            if r != self.rank {
                let _ = p.send(Message { src: self.rank, tag: u64::MAX, payload: Payload::Abort });
            }
        }
    }

    /// Microseconds since this rank started: wall time, minus the time spent
    /// waiting for the compute token when ranks are exclusive.
    pub fn clock_us(&self) -> f64 {
        (self.epoch.elapsed().as_secs_f64() - self.idle.get()) * 1e6
    }

    pub fn barrier(&self) {
        self.allgather(());
    }

    /// Every rank's value, in rank order.
    pub fn allgather<T: Clone + Send + 'static>(&self, value: T) -> Vec<T> {
        let tag = self.next_tag();
        for dest in 0..self.size {
            if dest != self.rank {
                self.send(dest, tag, value.clone());
            }
        }
        (0..self.size)
            .map(|src| if src == self.rank { value.clone() } else { self.recv(src, tag) })
            .collect()
    }

    /// Sends `blocks[d]` to rank `d`; returns the blocks received, indexed by source.
    pub fn alltoall<T: Send + 'static>(&self, blocks: Vec<T>) -> Vec<T> {
        assert_eq!(blocks.len(), self.size, "alltoall needs one block per rank");
        let tag = self.next_tag();
        let mut own = None;
        for (dest, b) in blocks.into_iter().enumerate() {
            if dest == self.rank {
                own = Some(b);
            } else {
                self.send(dest, tag, b);
            }
        }
        let mut own = own;
        (0..self.size).map(|src| if src == self.rank { own.take().unwrap() } else { self.recv(src, tag) }).collect()
    }

    pub fn max_f64(&self, x: f64) -> f64 {
        self.allgather(x).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_f64(&self, x: f64) -> f64 {
        self.allgather(x).into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn sum_u64(&self, x: u64) -> u64 {
        self.allgather(x).into_iter().sum()
    }

    pub fn any(&self, flag: bool) -> bool {
        self.allgather(flag).into_iter().any(|f| f)
    }
}

/// How a rank failed.
#[derive(Debug)]
pub enum RankFailure<E> {
    Error { rank: usize, error: E },
    Panic { rank: usize, message: String },
}

impl<E: std::fmt::Display> std::fmt::Display for RankFailure<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RankFailure::Error { rank, error } => write!(f, "rank {rank}: {error}"),
            RankFailure::Panic { rank, message } => write!(f, "rank {rank} panicked: {message}"),
        }
    }
}

/// Runs `body` on `n` simulated ranks and returns their results in rank order.
///
/// If any rank fails, its peers are torn down and the first genuine failure
/// is returned.
pub fn run_ranks<R, E, F>(n: usize, exclusive: bool, body: F) -> Result<Vec<R>, RankFailure<E>>
where
    R: Send,
    E: Send,
    F: Fn(&Comm) -> Result<R, E> + Sync,
{
    assert!(n > 0, "need at least one rank");
    let token = exclusive.then(|| Arc::new(Token::default()));
    let (senders, receivers): (Vec<_>, Vec<_>) = (0..n).map(|_| mpsc::channel::<Message>()).unzip();

    let outcomes: Vec<Result<Result<R, E>, String>> = std::thread::scope(|s| {
        let handles: Vec<_> = receivers
            .into_iter()
            .enumerate()
            .map(|(rank, inbox)| {
                let comm = Comm {
                    rank,
                    size: n,
                    peers: senders.clone(),
                    inbox,
                    stash: RefCell::new(Vec::new()),
                    tag: Cell::new(0),
                    token: token.clone(),
                    holding: Cell::new(false),
                    epoch: Instant::now(),
                    idle: Cell::new(0.0),
                };
                let body = &body;
                std::thread::Builder::new()
                    .name(format!("rank-{rank}"))
                    .spawn_scoped(s, move || {
                        comm.acquire();
                        let out = panic::catch_unwind(AssertUnwindSafe(|| body(&comm)));
                        let failed = !matches!(out, Ok(Ok(_)));
                        if failed {
                            comm.abort_peers();
                        }
                        comm.release();
                        match out {
                            Ok(r) => Ok(r),
                            Err(p) if p.is::<PeerAborted>() => Err(String::new()),
                            Err(p) => Err(panic_message(p.as_ref())),
                        }
                    })
                    .expect("spawn rank thread")
            })
            .collect();
        drop(senders);
        handles.into_iter().map(|h| h.join().expect("rank thread")).collect()
    });

    let mut results = Vec::with_capacity(n);
    let mut aborted = None;
    for (rank, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(Ok(r)) => results.push(r),
            Ok(Err(error)) => return Err(RankFailure::Error { rank, error }),
            Err(message) if message.is_empty() => aborted = aborted.or(Some(rank)),
            Err(message) => return Err(RankFailure::Panic { rank, message }),
        }
    }
    if let Some(rank) = aborted {
        return Err(RankFailure::Panic { rank, message: "peer aborted".into() });
    }
    Ok(results)
}

fn panic_message(p: &(dyn Any + Send)) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic".into()
    }
}
