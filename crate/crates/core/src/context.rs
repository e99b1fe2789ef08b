use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::panic::{self, AssertUnwindSafe};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::engine::{self, meta::Kind, meta::Loc, ProcessTraffic, SyncStats};
use crate::error::{Error, FatalKind, Mitigable, Result};
use crate::params::MachineParams;
use crate::shm;
use crate::slots::SlotTable;
use crate::transport::{Backend, TransportCounters};
use crate::types::{Args, MsgAttr, Pid, Slot, SyncAttr};

/// One queued put or get, as stored by the initiator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) struct Request {
    pub(crate) kind: Kind,
    pub(crate) remote: Pid,
    pub(crate) local: Loc,
    pub(crate) remote_loc: Loc,
    pub(crate) size: u64,
    pub(crate) attr: MsgAttr,
}

/// A process's handle on a group of SPMD processes.
///
/// Memory is registered by size and owned by the context; read and write it
/// with [`Context::slot`] and [`Context::slot_mut`] between supersteps.
/// A fresh context has room for zero slots and zero messages; call the
/// resize primitives and then [`Context::sync`] before registering.
pub struct Context {
    pub(crate) pid: Pid,
    pub(crate) nprocs: u32,
    pub(crate) backend: Option<Box<dyn Backend>>,
    pub(crate) slots: SlotTable,
    pub(crate) queue: Vec<Request>,
    pub(crate) cap_slots: usize,
    pub(crate) cap_msgs: usize,
    pub(crate) pending_slots: Option<usize>,
    pub(crate) pending_msgs: Option<usize>,
    pub(crate) config: Arc<Config>,
    pub(crate) rng: ChaCha8Rng,
    last: ProcessTraffic,
    syncs: u64,
    payload_syncs: u64,
    fatal: Option<Error>,
    broken: bool,
}

impl Context {
    pub(crate) fn new(pid: Pid, nprocs: u32, backend: Box<dyn Backend>, config: Arc<Config>) -> Self {
        let seed = config.seed ^ (pid as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        Context {
            pid,
            nprocs,
            backend: Some(backend),
            slots: SlotTable::default(),
            queue: Vec::new(),
            cap_slots: 0,
            cap_msgs: 0,
            pending_slots: None,
            pending_msgs: None,
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            last: ProcessTraffic::default(),
            syncs: 0,
            payload_syncs: 0,
            fatal: None,
            broken: false,
        }
    }

    /// The sequential context of the calling thread: one process, pid 0,
    /// configured from the environment.
    pub fn root() -> Self {
        Self::root_with(Config::from_env())
    }

    pub fn root_with(config: Config) -> Self {
        let config = Arc::new(config);
        Context::new(0, 1, shm::solo(&config), config)
    }

    pub fn pid(&self) -> Pid {
        self.pid
    }

    pub fn nprocs(&self) -> u32 {
        self.nprocs
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    fn fail<T>(&mut self, e: Error) -> Result<T> {
        if e.is_fatal() && self.fatal.is_none() {
            self.fatal = Some(e.clone());
        }
        Err(e)
    }

    fn illegal<T>(&mut self, detail: impl Into<String>) -> Result<T> {
        self.fail(Error::illegal(detail))
    }

    /// First fatal error this context returned, if any.
    pub fn fatal_error(&self) -> Option<&Error> {
        self.fatal.as_ref()
    }

    fn backend(&mut self) -> Result<&mut dyn Backend> {
        if self.broken {
            return self.fail(Error::fatal(
                FatalKind::RemoteFailure,
                "context is unusable after an earlier communication failure",
            ));
        }
        match self.backend.as_deref_mut() {
            Some(b) => Ok(b),
            None => Err(Error::illegal("context is suspended")),
        }
    }

    /// Starts `min(max_p, config.max_procs)` processes running `spmd` and
    /// waits for all of them.
    ///
    /// Only process 0 sees `args.input`; its `args.output` is copied back
    /// into `args.output`. Symbols are passed to every process. A panic on
    /// process 0 is resumed on the caller after all processes finished; a
    /// panic or fatal error elsewhere is reported as a fatal error.
    pub fn exec<F>(&mut self, max_p: u32, spmd: F, args: &mut Args) -> Result<()>
    where
        F: Fn(&mut Context, &mut Args) + Sync,
    {
        if max_p == 0 {
            return self.illegal("exec needs at least one process");
        }
        let p = max_p.min(self.config.max_procs).max(1);
        let config = self.config.clone();
        match shm::run_group(p, config, &spmd, args) {
            Ok(()) => Ok(()),
            Err(e) => self.fail(e),
        }
    }

    /// Runs `spmd` on the same processes in a pristine context, then
    /// restores this one. Collective.
    pub fn rehook<F>(&mut self, spmd: F, args: &mut Args) -> Result<()>
    where
        F: FnOnce(&mut Context, &mut Args),
    {
        self.backend()?;
        let backend = self.backend.take().expect("checked above");
        let mut inner = Context::new(self.pid, self.nprocs, backend, self.config.clone());
        let outcome = panic::catch_unwind(AssertUnwindSafe(|| spmd(&mut inner, args)));
        let inner_failed = inner.fatal.is_some();
        let inner_broken = inner.broken;
        self.backend = inner.backend.take();
        drop(inner);
        if let Err(payload) = outcome {
            panic::resume_unwind(payload);
        }
        if inner_broken {
            self.broken = true;
            return self.fail(Error::fatal(FatalKind::PeerLost, "rehooked context lost a peer"));
        }
        let all_ok = match self.backend()?.barrier(!inner_failed) {
            Ok(ok) => ok,
            Err(e) => {
                self.broken = true;
                return self.fail(e);
            }
        };
        if !all_ok {
            return self.fail(Error::fatal(
                FatalKind::RemoteFailure,
                "a process failed inside rehook",
            ));
        }
        Ok(())
    }

    fn register(&mut self, global: bool, size: usize) -> Result<Slot> {
        if self.slots.live() >= self.cap_slots {
            return Err(Mitigable::OutOfCapacity.into());
        }
        self.slots.register(global, size).or_else(|e| self.fail(e))
    }

    /// Registers `size` zeroed bytes usable as the local side of put and get.
    pub fn register_local(&mut self, size: usize) -> Result<Slot> {
        self.register(false, size)
    }

    /// Registers `size` zeroed bytes addressable by remote processes.
    /// Collective: every process must register its global slots in the same
    /// order; sizes may differ.
    pub fn register_global(&mut self, size: usize) -> Result<Slot> {
        self.register(true, size)
    }

    pub fn deregister(&mut self, slot: Slot) -> Result<()> {
        if self.config.debug_checks {
            if self.slots.get(slot).is_none() {
                return self.illegal(format!("deregister of unknown {slot:?}"));
            }
            let me = self.pid;
            let referenced = self
                .queue
                .iter()
                .any(|r| r.local.slot == slot || (r.remote == me && r.remote_loc.slot == slot));
            if referenced {
                return self.illegal(format!("deregister of {slot:?} with queued requests"));
            }
        }
        self.slots.deregister(slot);
        Ok(())
    }

    fn check_local_range(&mut self, slot: Slot, offset: u64, size: u64) -> Result<()> {
        match self.slots.get(slot) {
            Some(r) if r.contains(offset, size) => Ok(()),
            Some(_) => self.illegal(format!(
                "range {offset}+{size} exceeds {slot:?} of {} bytes",
                self.slots.get(slot).map_or(0, |r| r.len)
            )),
            None => self.illegal(format!("{slot:?} is not registered")),
        }
    }

    fn enqueue(&mut self, req: Request) -> Result<()> {
        if req.remote >= self.nprocs {
            return self.illegal(format!("pid {} out of range", req.remote));
        }
        if req.remote != self.pid && !req.remote_loc.slot.is_global() {
            return self.illegal("remote side of a transfer must be a global slot");
        }
        self.check_local_range(req.local.slot, req.local.offset, req.size)?;
        if self.queue.len() >= self.cap_msgs {
            return Err(Mitigable::OutOfCapacity.into());
        }
        self.queue.push(req);
        Ok(())
    }

    /// Queues a copy of `size` bytes from local `src_slot` to `dst_slot` on
    /// `dst_pid`. Nothing moves until the next sync.
    #[allow(clippy::too_many_arguments)]
    pub fn put(
        &mut self,
        src_slot: Slot,
        src_offset: u64,
        dst_pid: Pid,
        dst_slot: Slot,
        dst_offset: u64,
        size: u64,
        attr: MsgAttr,
    ) -> Result<()> {
        self.enqueue(Request {
            kind: Kind::Put,
            remote: dst_pid,
            local: Loc {
                slot: src_slot,
                offset: src_offset,
            },
            remote_loc: Loc {
                slot: dst_slot,
                offset: dst_offset,
            },
            size,
            attr,
        })
    }

    /// Queues a copy of `size` bytes from `src_slot` on `src_pid` into local
    /// `dst_slot`. Nothing moves until the next sync.
    #[allow(clippy::too_many_arguments)]
    pub fn get(
        &mut self,
        src_pid: Pid,
        src_slot: Slot,
        src_offset: u64,
        dst_slot: Slot,
        dst_offset: u64,
        size: u64,
        attr: MsgAttr,
    ) -> Result<()> {
        self.enqueue(Request {
            kind: Kind::Get,
            remote: src_pid,
            local: Loc {
                slot: dst_slot,
                offset: dst_offset,
            },
            remote_loc: Loc {
                slot: src_slot,
                offset: src_offset,
            },
            size,
            attr,
        })
    }

    /// Completes every queued put and get of every process. Collective.
    ///
    /// Overlapping writes end up as if applied in ascending order of
    /// (initiating pid, queue position). Pending capacities become active
    /// when the sync succeeds.
    pub fn sync(&mut self, _attr: SyncAttr) -> Result<()> {
        self.backend()?;
        let res = engine::run_superstep(self);
        self.queue.clear();
        match res {
            Ok(traffic) => {
                self.syncs += 1;
                if traffic.sent + traffic.received > 0 {
                    self.payload_syncs += 1;
                }
                self.last = traffic;
                if let Some(n) = self.pending_slots.take() {
                    self.cap_slots = n.max(self.slots.live());
                    self.slots.shrink_to(self.cap_slots);
                }
                if let Some(n) = self.pending_msgs.take() {
                    self.cap_msgs = n;
                    self.queue.shrink_to(n);
                }
                Ok(())
            }
            Err(e) => {
                if !matches!(
                    e.fatal_kind(),
                    Some(FatalKind::IllegalArgument | FatalKind::RemoteFailure)
                ) {
                    self.broken = true;
                }
                self.fail(e)
            }
        }
    }

    /// Machine parameters from the configured file, or defaults. Constant time.
    pub fn probe(&self) -> MachineParams {
        match &self.config.params {
            Some(p) => MachineParams::clone(p),
            None => MachineParams::defaults(self.nprocs),
        }
    }

    /// Sets the slot capacity that takes effect after the next successful sync.
    pub fn resize_memory_register(&mut self, n: usize) -> Result<()> {
        if n < self.slots.live() {
            return self.illegal(format!(
                "cannot shrink below the {} registered slots",
                self.slots.live()
            ));
        }
        self.slots.reserve(n)?;
        self.pending_slots = Some(n);
        Ok(())
    }

    /// Sets how many requests this process may queue, and be the remote side
    /// of, per superstep, from the next successful sync on.
    pub fn resize_message_queue(&mut self, n: usize) -> Result<()> {
        let extra = n.saturating_sub(self.queue.len());
        self.queue
            .try_reserve(extra)
            .map_err(|_| Error::Mitigable(Mitigable::OutOfMemory))?;
        self.pending_msgs = Some(n);
        Ok(())
    }

    /// Bytes of a registered slot. Panics if the slot is not registered.
    pub fn slot(&self, slot: Slot) -> &[u8] {
        self.try_slot(slot)
            .unwrap_or_else(|| panic!("{slot:?} is not registered"))
    }

    /// Mutable bytes of a registered slot. Panics if the slot is not registered.
    pub fn slot_mut(&mut self, slot: Slot) -> &mut [u8] {
        self.slots
            .bytes_mut(slot)
            .unwrap_or_else(|| panic!("{slot:?} is not registered"))
    }

    pub fn try_slot(&self, slot: Slot) -> Option<&[u8]> {
        self.slots.bytes(slot)
    }

    pub fn registered_slots(&self) -> usize {
        self.slots.live()
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    /// Active (slot, message) capacities.
    pub fn capacities(&self) -> (usize, usize) {
        (self.cap_slots, self.cap_msgs)
    }

    pub fn pending_capacities(&self) -> (Option<usize>, Option<usize>) {
        (self.pending_slots, self.pending_msgs)
    }

    /// h-relation the queued requests of all processes would form.
    /// Collective; moves no payload and leaves the queues untouched.
    pub fn account_h(&mut self) -> Result<SyncStats> {
        let (me, p, small) = (self.pid, self.nprocs, self.config.small_limit);
        let mut own = ProcessTraffic {
            requests_out: self.queue.len() as u64,
            ..Default::default()
        };
        // Per remote: put bytes, small put bytes, get bytes, small get bytes, count.
        let mut per_remote = vec![[0u64; 5]; p as usize];
        for r in &self.queue {
            let row = &mut per_remote[r.remote as usize];
            let small_size = if r.size <= small { r.size } else { 0 };
            match r.kind {
                Kind::Put => {
                    own.add_sent(r.size, small);
                    row[0] += r.size;
                    row[1] += small_size;
                }
                Kind::Get => {
                    own.add_received(r.size, small);
                    row[2] += r.size;
                    row[3] += small_size;
                }
            }
            row[4] += 1;
        }
        let blocks = per_remote
            .iter()
            .map(|row| row.iter().flat_map(|v| v.to_le_bytes()).collect())
            .collect();
        let res = (|| {
            let t = self.backend()?;
            let incoming = t.exchange(blocks)?;
            for frame in &incoming {
                if frame.len() != 40 {
                    return Err(Error::protocol("malformed accounting frame"));
                }
                let f = |i: usize| u64::from_le_bytes(frame[8 * i..8 * i + 8].try_into().unwrap());
                own.received += f(0);
                own.received_small += f(1);
                own.sent += f(2);
                own.sent_small += f(3);
                own.requests_in += f(4);
            }
            let mine = own.encode();
            let all = t.exchange(vec![mine; p as usize])?;
            let traffic = all
                .iter()
                .map(|b| ProcessTraffic::decode(b))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::protocol("malformed accounting frame"))?;
            debug_assert_eq!(traffic[me as usize], own);
            Ok(SyncStats::from_traffic(traffic, small))
        })();
        res.or_else(|e| {
            self.broken = true;
            self.fail(e)
        })
    }

    /// Traffic of this process in its last successful sync.
    pub fn last_superstep(&self) -> ProcessTraffic {
        self.last
    }

    /// Successful syncs so far.
    pub fn syncs(&self) -> u64 {
        self.syncs
    }

    /// Successful syncs in which this process sent or received payload.
    pub fn payload_supersteps(&self) -> u64 {
        self.payload_syncs
    }

    pub fn transport_counters(&self) -> TransportCounters {
        self.backend
            .as_deref()
            .map(|b| b.counters())
            .unwrap_or_default()
    }

    /// Hash of the observable state: slots and their bytes, queued requests,
    /// active and pending capacities.
    pub fn state_digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        (self.pid, self.nprocs).hash(&mut h);
        (self.cap_slots, self.cap_msgs, self.pending_slots, self.pending_msgs).hash(&mut h);
        self.queue.hash(&mut h);
        self.slots.live().hash(&mut h);
        self.slots.global_registrations().hash(&mut h);
        for (slot, bytes) in self.slots.iter() {
            slot.hash(&mut h);
            bytes.hash(&mut h);
        }
        h.finish()
    }

    pub(crate) fn into_backend(mut self) -> Option<Box<dyn Backend>> {
        self.backend.take()
    }
}
