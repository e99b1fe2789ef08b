//! The superstep: metadata exchange, conflict resolution, payload movement,
//! final barrier.

pub mod conflict;
pub mod exchange;
pub mod meta;
pub mod stats;

use std::ptr;

pub use conflict::{resolve_conflicts, Clip, OrderKey, WriteInterval};
pub use exchange::{
    ceil_log2, decode_routing_frame, exchange_bruck_randomized, exchange_direct, tree_barrier, tree_depth,
    ExchangeAlgorithm, ExchangeStats,
};
pub use stats::{ProcessTraffic, SyncStats};

use crate::context::Context;
use crate::error::{Error, FatalKind, Result};
use crate::slots::{SlotTable, TableView};
use crate::transport::{Backend, DataPath, SharedDirectory};
use crate::types::Pid;
use meta::{Kind, Loc, MetaBlock, MetaRecord, PullEntry};

/// A write into this process's memory, with where its bytes come from.
struct Incoming {
    src_pid: Pid,
    src: Loc,
    dst: Loc,
}

/// Keeps the first error of a superstep while the collective runs on.
#[derive(Default)]
struct Failure(Option<Error>);

impl Failure {
    fn set(&mut self, e: Error) {
        if self.0.is_none() {
            self.0 = Some(e);
        }
    }

    fn ok(&self) -> bool {
        self.0.is_none()
    }
}

fn check_range(table: &SlotTable, loc: Loc, size: u64, what: &str) -> Result<()> {
    match table.get(loc.slot) {
        Some(r) if r.contains(loc.offset, size) => Ok(()),
        Some(r) => Err(Error::illegal(format!(
            "{what} range {}+{size} exceeds {:?} of {} bytes",
            loc.offset, loc.slot, r.len
        ))),
        None => Err(Error::illegal(format!("{what} names unregistered {:?}", loc.slot))),
    }
}

/// Executes the superstep formed by the queued requests of all processes.
/// Returns this process's traffic.
pub(crate) fn run_superstep(ctx: &mut Context) -> Result<ProcessTraffic> {
    let me = ctx.pid;
    let p = ctx.nprocs;
    let debug = ctx.config.debug_checks;
    let small = ctx.config.small_limit;
    let algorithm = ctx.config.meta_exchange;
    let cap_msgs = ctx.cap_msgs;
    let slots = &mut ctx.slots;
    let queue = &ctx.queue;
    let rng = &mut ctx.rng;
    let t: &mut dyn Backend = ctx
        .backend
        .as_deref_mut()
        .ok_or_else(|| Error::illegal("context is suspended"))?;

    let mut fail = Failure::default();
    let mut traffic = ProcessTraffic {
        requests_out: queue.len() as u64,
        ..Default::default()
    };

    let destination_copy = matches!(t.data_path(), DataPath::DestinationCopy(_));
    if let DataPath::DestinationCopy(dir) = t.data_path() {
        dir.publish(me, slots.view());
    }

    // Phase 1: metadata goes to the remote party of every request; a get is
    // forwarded to its data source.
    let regs = slots.global_registrations();
    let mut blocks: Vec<MetaBlock> = (0..p)
        .map(|_| MetaBlock {
            global_registrations: regs,
            records: Vec::new(),
        })
        .collect();
    let mut self_requests = 0u64;
    for r in queue.iter() {
        match r.kind {
            Kind::Put => traffic.add_sent(r.size, small),
            Kind::Get => traffic.add_received(r.size, small),
        }
        if r.remote == me {
            self_requests += 1;
            match r.kind {
                Kind::Put => traffic.add_received(r.size, small),
                Kind::Get => traffic.add_sent(r.size, small),
            }
            continue;
        }
        let (src, dst) = match r.kind {
            Kind::Put => (r.local, r.remote_loc),
            Kind::Get => (r.remote_loc, r.local),
        };
        blocks[r.remote as usize].records.push(MetaRecord {
            initiator: me,
            kind: r.kind,
            src,
            dst,
            size: r.size,
            attr: r.attr,
        });
    }
    let frames: Vec<Vec<u8>> = blocks
        .iter()
        .enumerate()
        .map(|(j, b)| {
            if j as Pid == me || (b.records.is_empty() && !debug) {
                Vec::new()
            } else {
                b.encode()
            }
        })
        .collect();
    drop(blocks);
    let received = match algorithm {
        ExchangeAlgorithm::Direct => t.exchange(frames)?,
        ExchangeAlgorithm::RandomizedBruck => {
            let r = exchange_bruck_randomized(t, frames, rng)?.0;
            if destination_copy {
                // Peers' tables must be published before anyone reads them.
                t.barrier(true)?;
            }
            r
        }
    };

    // Validate what arrived and collect the writes into this process.
    let mut incoming: Vec<Incoming> = Vec::new();
    let mut writes: Vec<WriteInterval> = Vec::new();
    let mut reads: Vec<(u32, u64, u64)> = Vec::new();
    let mut requests_in = self_requests;
    for (i, frame) in received.iter().enumerate() {
        let i = i as Pid;
        if i == me || frame.is_empty() {
            continue;
        }
        let block = match MetaBlock::decode(frame) {
            Ok(b) => b,
            Err(e) => {
                fail.set(e);
                continue;
            }
        };
        if debug && block.global_registrations != regs {
            fail.set(Error::illegal(format!(
                "global registrations diverged: process {i} has {}, process {me} has {regs}",
                block.global_registrations
            )));
        }
        requests_in += block.records.len() as u64;
        for (pos, rec) in block.records.into_iter().enumerate() {
            if rec.initiator != i {
                fail.set(Error::protocol("metadata from the wrong initiator"));
                continue;
            }
            match rec.kind {
                Kind::Put => {
                    traffic.add_received(rec.size, small);
                    if let Err(e) = check_range(slots, rec.dst, rec.size, "put destination")
                        .and_then(|_| global_only(rec.dst))
                    {
                        fail.set(e);
                        continue;
                    }
                    writes.push(WriteInterval {
                        slot: rec.dst.slot.to_raw(),
                        begin: rec.dst.offset,
                        end: rec.dst.offset + rec.size,
                        request: incoming.len(),
                        key: (i, pos as u32),
                    });
                    incoming.push(Incoming {
                        src_pid: i,
                        src: rec.src,
                        dst: rec.dst,
                    });
                }
                Kind::Get => {
                    traffic.add_sent(rec.size, small);
                    if let Err(e) = check_range(slots, rec.src, rec.size, "get source")
                        .and_then(|_| global_only(rec.src))
                    {
                        fail.set(e);
                        continue;
                    }
                    reads.push((rec.src.slot.to_raw(), rec.src.offset, rec.src.offset + rec.size));
                }
            }
        }
    }
    traffic.requests_in = requests_in;
    if requests_in > cap_msgs as u64 {
        fail.set(Error::illegal(format!(
            "process {me} is the remote side of {requests_in} requests but its message capacity is {cap_msgs}"
        )));
    }

    for (q, r) in queue.iter().enumerate() {
        let key = (me, q as u32);
        let (src_pid, src, dst) = match r.kind {
            Kind::Put if r.remote == me => (me, r.local, r.remote_loc),
            Kind::Put => {
                reads.push((r.local.slot.to_raw(), r.local.offset, r.local.offset + r.size));
                continue;
            }
            Kind::Get => (r.remote, r.remote_loc, r.local),
        };
        if src_pid == me {
            let checked = check_range(slots, src, r.size, "source")
                .and_then(|_| check_range(slots, dst, r.size, "destination"));
            if let Err(e) = checked {
                fail.set(e);
                continue;
            }
            reads.push((src.slot.to_raw(), src.offset, src.offset + r.size));
        }
        writes.push(WriteInterval {
            slot: dst.slot.to_raw(),
            begin: dst.offset,
            end: dst.offset + r.size,
            request: incoming.len(),
            key,
        });
        incoming.push(Incoming { src_pid, src, dst });
    }

    if debug && fail.ok() {
        let w: Vec<(u32, u64, u64)> = writes.iter().map(|w| (w.slot, w.begin, w.end)).collect();
        if conflict::reads_overlap_writes(&reads, &w) {
            fail.set(Error::illegal(format!(
                "process {me}: the same memory is read and written in one superstep"
            )));
        }
    }

    // Phase 2: destination-side conflict resolution.
    let clips = if fail.ok() {
        resolve_conflicts(&writes)
    } else {
        Vec::new()
    };
    let sizes: Vec<u64> = writes.iter().map(|w| w.end - w.begin).collect();
    drop(writes);

    // Phase 3: payload.
    let (bytes, copies) = if destination_copy {
        let DataPath::DestinationCopy(dir) = t.data_path() else {
            unreachable!()
        };
        copy_at_destination(slots, &incoming, &sizes, &clips, p, dir, &mut fail)
    } else {
        push_from_sources(t, slots, &incoming, &clips, &mut fail)?
    };
    t.record_payload(bytes, copies);

    // Phase 4: everyone is done reading and writing.
    let all_ok = t.barrier(fail.ok())?;
    if let Some(e) = fail.0 {
        return Err(e);
    }
    if !all_ok {
        return Err(Error::fatal(
            FatalKind::RemoteFailure,
            "another process failed during sync",
        ));
    }
    Ok(traffic)
}

fn global_only(loc: Loc) -> Result<()> {
    if loc.slot.is_global() {
        Ok(())
    } else {
        Err(Error::illegal("remote side of a transfer names a local slot"))
    }
}

/// Copies every surviving piece from the source's published memory into
/// this process's regions. Returns (bytes, copies).
fn copy_at_destination(
    slots: &mut SlotTable,
    incoming: &[Incoming],
    sizes: &[u64],
    clips: &[Clip],
    p: u32,
    dir: &dyn SharedDirectory,
    fail: &mut Failure,
) -> (u64, u64) {
    if !fail.ok() {
        return (0, 0);
    }
    let mut views: Vec<Option<TableView>> = vec![None; p as usize];
    let mut view_of = |pid: Pid| *views[pid as usize].get_or_insert_with(|| dir.view(pid));
    // Whole source ranges are validated first so that a bad get fails before
    // any byte is written.
    let mut sources = Vec::with_capacity(incoming.len());
    for (inc, &size) in incoming.iter().zip(sizes) {
        // SAFETY: every process published its view before the metadata
        // exchange completed and does not modify its table until the final
        // barrier of this superstep.
        let region = unsafe { view_of(inc.src_pid).region(inc.src.slot) };
        match region {
            Some(r) if r.contains(inc.src.offset, size) => sources.push(r),
            Some(r) => {
                fail.set(Error::illegal(format!(
                    "read range {}+{size} exceeds {:?} of {} bytes on process {}",
                    inc.src.offset, inc.src.slot, r.len, inc.src_pid
                )));
                return (0, 0);
            }
            None => {
                fail.set(Error::illegal(format!(
                    "read from unregistered {:?} on process {}",
                    inc.src.slot, inc.src_pid
                )));
                return (0, 0);
            }
        }
    }
    let (mut bytes, mut copies) = (0u64, 0u64);
    for c in clips {
        let inc = &incoming[c.request];
        let src = sources[c.request];
        let dst = slots
            .get(inc.dst.slot)
            .expect("destination validated in phase 1");
        let len = (c.end - c.begin) as usize;
        let src_off = (inc.src.offset + (c.begin - inc.dst.offset)) as usize;
        // SAFETY: both ranges were checked against their regions; regions stay
        // allocated until the final barrier. Source and destination may only
        // alias when the program reads and writes the same bytes, which is
        // illegal; `ptr::copy` tolerates it regardless.
        unsafe { ptr::copy(src.ptr.add(src_off), dst.ptr.add(c.begin as usize), len) };
        bytes += len as u64;
        copies += 1;
    }
    (bytes, copies)
}

/// Second metadata exchange telling sources which pieces to send, then the
/// payload exchange. Returns (bytes, copies) written locally.
fn push_from_sources(
    t: &mut dyn Backend,
    slots: &mut SlotTable,
    incoming: &[Incoming],
    clips: &[Clip],
    fail: &mut Failure,
) -> Result<(u64, u64)> {
    let p = t.nprocs() as usize;
    let mut pulls: Vec<Vec<PullEntry>> = vec![Vec::new(); p];
    let mut landing: Vec<Vec<(Loc, u64)>> = vec![Vec::new(); p];
    for c in clips {
        let inc = &incoming[c.request];
        let len = c.end - c.begin;
        pulls[inc.src_pid as usize].push(PullEntry {
            slot: inc.src.slot,
            offset: inc.src.offset + (c.begin - inc.dst.offset),
            len,
        });
        landing[inc.src_pid as usize].push((
            Loc {
                slot: inc.dst.slot,
                offset: c.begin,
            },
            len,
        ));
    }
    let requests = t.exchange(pulls.iter().map(|l| meta::encode_pull_list(l)).collect())?;

    let mut frames = Vec::with_capacity(p);
    for frame in &requests {
        let entries = match meta::decode_pull_list(frame) {
            Ok(e) => e,
            Err(e) => {
                fail.set(e);
                frames.push(meta::data_frame_header(meta::STATUS_FAILED, 0));
                continue;
            }
        };
        let total: u64 = entries.iter().map(|e| e.len).sum();
        let valid = entries.iter().all(|e| {
            slots
                .get(e.slot)
                .is_some_and(|r| r.contains(e.offset, e.len))
        });
        if !valid {
            fail.set(Error::protocol("pull list names bytes outside registered memory"));
            frames.push(meta::data_frame_header(meta::STATUS_FAILED, 0));
            continue;
        }
        let mut out = meta::data_frame_header(meta::STATUS_OK, total as usize);
        for e in &entries {
            let b = slots.bytes(e.slot).expect("validated");
            out.extend_from_slice(&b[e.offset as usize..(e.offset + e.len) as usize]);
        }
        frames.push(out);
    }
    let data = t.exchange(frames)?;

    let (mut bytes, mut copies) = (0u64, 0u64);
    for (src, frame) in data.iter().enumerate() {
        let (status, payload) = match meta::decode_data_frame(frame) {
            Ok(x) => x,
            Err(e) => {
                fail.set(e);
                continue;
            }
        };
        if status != meta::STATUS_OK {
            fail.set(Error::fatal(
                FatalKind::RemoteFailure,
                format!("process {src} could not serve its data"),
            ));
            continue;
        }
        let expected: u64 = landing[src].iter().map(|(_, l)| l).sum();
        if payload.len() as u64 != expected {
            fail.set(Error::protocol("payload length does not match the pull list"));
            continue;
        }
        let mut pos = 0usize;
        for &(loc, len) in &landing[src] {
            let len = len as usize;
            let dst = slots.bytes_mut(loc.slot).expect("validated in phase 1");
            dst[loc.offset as usize..loc.offset as usize + len]
                .copy_from_slice(&payload[pos..pos + len]);
            pos += len;
            bytes += len as u64;
            copies += 1;
        }
    }
    Ok((bytes, copies))
}
