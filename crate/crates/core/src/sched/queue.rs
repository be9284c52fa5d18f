//! Asynchronous kernel queues.
//!
//! Work submitted to one queue runs in submission order; different queues
//! run concurrently. [`Queues::barrier`] waits for everything submitted so
//! far. Jobs on different queues between two barriers must write disjoint
//! memory; debug builds check the declared write ranges.

use std::ops::Range;
use std::sync::mpsc::{self, Sender};
use std::sync::Mutex;
use std::thread::Scope;

type Job<'env> = Box<dyn FnOnce() + Send + 'env>;

enum Msg<'env> {
    Run(Job<'env>),
    Fence(Sender<()>),
}

pub struct Queues<'scope, 'env> {
    senders: Vec<Sender<Msg<'env>>>,
    writes: Mutex<Vec<(usize, Range<usize>)>>,
    _scope: &'scope Scope<'scope, 'env>,
}

/// Address range covered by a slice, for write-set declarations.
pub fn span<T>(s: &[T]) -> Range<usize> {
    let start = s.as_ptr() as usize;
    start..start + std::mem::size_of_val(s)
}

impl<'scope, 'env> Queues<'scope, 'env> {
    /// Enqueues `job` on `queue`; `writes` lists the memory it may modify.
    pub fn submit(&self, queue: usize, writes: &[Range<usize>], job: impl FnOnce() + Send + 'env) {
        if cfg!(debug_assertions) {
            let mut all = self.writes.lock().unwrap();
            for w in writes {
                for (q, other) in all.iter() {
                    assert!(
                        *q == queue || w.end <= other.start || other.end <= w.start,
                        "queue {queue} write set overlaps queue {q} before a barrier"
                    );
                }
            }
            all.extend(writes.iter().map(|w| (queue, w.clone())));
        }
        self.senders[queue].send(Msg::Run(Box::new(job))).expect("queue worker alive");
    }

    pub fn len(&self) -> usize {
        self.senders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.senders.is_empty()
    }

    /// Blocks until all submitted jobs have finished.
    pub fn barrier(&self) {
        let (tx, rx) = mpsc::channel();
        for s in &self.senders {
            s.send(Msg::Fence(tx.clone())).expect("queue worker alive");
        }
        drop(tx);
        for _ in 0..self.senders.len() {
            rx.recv().expect("queue fence");
        }
        self.writes.lock().unwrap().clear();
    }
}

/// Runs `body` with `n` queues; all queues are drained before returning.
pub fn with_queues<'env, R>(n: usize, body: impl for<'scope> FnOnce(&Queues<'scope, 'env>) -> R) -> R {
    std::thread::scope(|scope| {
        let senders = (0..n)
            .map(|_| {
                let (tx, rx) = mpsc::channel::<Msg<'env>>();
                scope.spawn(move || {
                    for msg in rx {
                        match msg {
                            Msg::Run(job) => job(),
                            Msg::Fence(done) => {
                                let _ = done.send(());
                            }
                        }
                    }
                });
                tx
            })
            .collect();
        let queues = Queues { senders, writes: Mutex::new(Vec::new()), _scope: scope };
        let out = body(&queues);
        queues.barrier();
        out
    })
}
