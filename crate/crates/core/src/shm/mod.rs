//! Shared-memory backend: one thread per process.
//!
//! Every pair of threads has a mailbox used by the metadata exchange and a
//! channel for point-to-point frames. Payload never passes through either:
//! during a sync each thread publishes a view of its slot table and every
//! destination thread copies the bytes it receives itself, so no thread ever
//! writes into another thread's memory.

pub(crate) mod barrier;

use std::any::Any;
use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use crate::config::Config;
use crate::context::Context;
use crate::error::{Error, FatalKind, Result};
use crate::slots::TableView;
use crate::transport::{Backend, DataPath, SharedDirectory, Transport, TransportCounters};
use crate::types::{Args, Pid};
use barrier::TreeBarrier;

pub(crate) struct Group {
    p: usize,
    barrier: TreeBarrier,
    departed: AtomicU32,
    gone: Vec<AtomicBool>,
    /// Indexed by `(parity * p + from) * p + to`.
    mailboxes: Vec<Mutex<Vec<u8>>>,
    directory: Vec<Mutex<TableView>>,
}

impl Group {
    fn new(p: usize, fanin: usize) -> Self {
        Group {
            p,
            barrier: TreeBarrier::new(p, fanin),
            departed: AtomicU32::new(0),
            gone: (0..p).map(|_| AtomicBool::new(false)).collect(),
            mailboxes: (0..2 * p * p).map(|_| Mutex::new(Vec::new())).collect(),
            directory: (0..p).map(|_| Mutex::new(TableView::EMPTY)).collect(),
        }
    }

    fn mailbox(&self, parity: u64, from: usize, to: usize) -> &Mutex<Vec<u8>> {
        &self.mailboxes[(parity as usize * self.p + from) * self.p + to]
    }

    fn depart(&self, pid: Pid) {
        if !self.gone[pid as usize].swap(true, Ordering::AcqRel) {
            self.departed.fetch_add(1, Ordering::AcqRel);
        }
    }
}

impl SharedDirectory for Group {
    fn publish(&self, pid: Pid, view: TableView) {
        *self.directory[pid as usize].lock().unwrap() = view;
    }

    fn view(&self, pid: Pid) -> TableView {
        *self.directory[pid as usize].lock().unwrap()
    }
}

pub(crate) struct ShmTransport {
    pid: Pid,
    group: Arc<Group>,
    tx: Vec<Sender<Vec<u8>>>,
    rx: Vec<Receiver<Vec<u8>>>,
    episode: u64,
    exchanges: u64,
    counters: TransportCounters,
}

const POLL: Duration = Duration::from_millis(20);

impl Transport for ShmTransport {
    fn pid(&self) -> Pid {
        self.pid
    }

    fn nprocs(&self) -> u32 {
        self.group.p as u32
    }

    fn send(&mut self, to: Pid, frame: Vec<u8>) -> Result<()> {
        if to != self.pid {
            self.counters.messages_sent += 1;
            self.counters.bytes_sent += frame.len() as u64;
        }
        self.tx
            .get(to as usize)
            .ok_or_else(|| Error::illegal(format!("no process {to}")))?
            .send(frame)
            .map_err(|_| Error::peer_lost(format!("process {to} has left")))
    }

    fn recv(&mut self, from: Pid) -> Result<Vec<u8>> {
        let rx = self
            .rx
            .get(from as usize)
            .ok_or_else(|| Error::illegal(format!("no process {from}")))?;
        loop {
            match rx.recv_timeout(POLL) {
                Ok(frame) => return Ok(frame),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::peer_lost(format!("process {from} has left")))
                }
            }
        }
    }

    fn barrier(&mut self, ok: bool) -> Result<bool> {
        self.counters.barriers += 1;
        self.group
            .barrier
            .wait(self.pid as usize, &mut self.episode, ok, &self.group.departed)
    }

    /// Writes every block into its mailbox, waits at the barrier, then drains
    /// the mailboxes addressed here. Mailboxes alternate between two sets so a
    /// fast writer never overwrites a block that has not been read yet.
    fn exchange(&mut self, mut blocks: Vec<Vec<u8>>) -> Result<Vec<Vec<u8>>> {
        let p = self.group.p;
        let me = self.pid as usize;
        if blocks.len() != p {
            return Err(Error::illegal(format!(
                "exchange needs {p} blocks, got {}",
                blocks.len()
            )));
        }
        let parity = self.exchanges % 2;
        self.exchanges += 1;
        let mut out = vec![Vec::new(); p];
        out[me] = std::mem::take(&mut blocks[me]);
        for (to, block) in blocks.into_iter().enumerate() {
            if to == me {
                continue;
            }
            self.counters.messages_sent += 1;
            self.counters.bytes_sent += block.len() as u64;
            *self.group.mailbox(parity, me, to).lock().unwrap() = block;
        }
        self.barrier(true)?;
        for (from, slot) in out.iter_mut().enumerate() {
            if from != me {
                *slot = std::mem::take(&mut *self.group.mailbox(parity, from, me).lock().unwrap());
            }
        }
        Ok(out)
    }

    fn counters(&self) -> TransportCounters {
        self.counters
    }

    fn record_payload(&mut self, bytes: u64, copies: u64) {
        self.counters.payload_bytes_written += bytes;
        self.counters.payload_copies += copies;
    }
}

impl Backend for ShmTransport {
    fn data_path(&self) -> DataPath<'_> {
        DataPath::DestinationCopy(&*self.group)
    }

    fn into_any(self: Box<Self>) -> Box<dyn Any + Send> {
        self
    }
}

impl Drop for ShmTransport {
    fn drop(&mut self) {
        self.group.depart(self.pid);
    }
}

fn transports(p: usize, fanin: usize) -> Vec<ShmTransport> {
    let group = Arc::new(Group::new(p, fanin));
    let mut tx: Vec<Vec<Sender<Vec<u8>>>> = (0..p).map(|_| Vec::with_capacity(p)).collect();
    let mut rx: Vec<Vec<Receiver<Vec<u8>>>> = (0..p).map(|_| Vec::with_capacity(p)).collect();
    // Channel (from, to): sender held by `from`, receiver by `to`.
    for from in 0..p {
        for to_rx in rx.iter_mut() {
            let (s, r) = mpsc::channel();
            tx[from].push(s);
            to_rx.push(r);
        }
    }
    tx.into_iter()
        .zip(rx)
        .enumerate()
        .map(|(pid, (tx, rx))| ShmTransport {
            pid: pid as Pid,
            group: group.clone(),
            tx,
            rx,
            episode: 0,
            exchanges: 0,
            counters: TransportCounters::default(),
        })
        .collect()
}

fn fanin_for(p: usize, config: &Config) -> usize {
    match config.barrier_fanin {
        Some(f) if f >= 2 => f,
        _ if p <= 2 => barrier::FALLBACK_FANIN,
        _ => barrier::tuned_fanin(p),
    }
}

/// Backend of a single-process context.
pub(crate) fn solo(_config: &Config) -> Box<dyn Backend> {
    Box::new(transports(1, barrier::FALLBACK_FANIN).pop().expect("one transport"))
}

/// Runs `spmd` on `p` threads, the calling thread acting as process 0.
pub(crate) fn run_group<F>(p: u32, config: Arc<Config>, spmd: &F, args: &mut Args) -> Result<()>
where
    F: Fn(&mut Context, &mut Args) + Sync,
{
    let n = p as usize;
    let mut ts = transports(n, fanin_for(n, &config)).into_iter();
    let root_t = ts.next().expect("p >= 1");
    let symbols = args.symbols.clone();
    let mut root_args = Args {
        input: args.input.clone(),
        output: args.output.clone(),
        symbols: symbols.clone(),
    };

    let run = |t: ShmTransport, a: &mut Args| -> Option<Error> {
        let pid = t.pid;
        let mut ctx = Context::new(pid, p, Box::new(t), config.clone());
        spmd(&mut ctx, a);
        ctx.fatal_error().cloned()
    };

    let (root_outcome, others) = thread::scope(|s| {
        let mut handles = Vec::with_capacity(n - 1);
        let mut spawn_error = None;
        for t in ts.by_ref() {
            let pid = t.pid;
            let symbols = symbols.clone();
            let run = &run;
            let spawned = thread::Builder::new()
                .name(format!("lpf-{pid}"))
                .spawn_scoped(s, move || {
                    let mut a = Args {
                        symbols,
                        ..Args::default()
                    };
                    run(t, &mut a)
                });
            match spawned {
                Ok(h) => handles.push((pid, h)),
                Err(e) => {
                    // The transport went down with the closure; peers see it as
                    // departed and fail instead of waiting.
                    spawn_error = Some(Error::fatal(
                        FatalKind::Spawn,
                        format!("starting process {pid}: {e}"),
                    ));
                    break;
                }
            }
        }
        // Unstarted processes count as departed.
        drop(ts);
        let root_outcome = if spawn_error.is_some() {
            drop(root_t);
            Ok(spawn_error)
        } else {
            panic::catch_unwind(AssertUnwindSafe(|| run(root_t, &mut root_args)))
        };
        let others: Vec<(Pid, thread::Result<Option<Error>>)> =
            handles.into_iter().map(|(pid, h)| (pid, h.join())).collect();
        (root_outcome, others)
    });

    let root_error = match root_outcome {
        Ok(e) => e,
        Err(payload) => panic::resume_unwind(payload),
    };
    args.output = root_args.output;
    if let Some(e) = root_error {
        return Err(e);
    }
    for (pid, outcome) in others {
        match outcome {
            Ok(None) => {}
            Ok(Some(e)) => {
                return Err(Error::fatal(
                    FatalKind::RemoteFailure,
                    format!("process {pid} failed: {e}"),
                ))
            }
            Err(_) => {
                return Err(Error::fatal(
                    FatalKind::PeerLost,
                    format!("process {pid} panicked"),
                ))
            }
        }
    }
    Ok(())
}
