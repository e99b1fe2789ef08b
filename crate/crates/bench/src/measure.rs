//! Timed communication patterns.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use lpf::{Context, MsgAttr, Result, Slot, SyncAttr};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pattern {
    TotalExchange,
    RoundRobin,
}

impl std::str::FromStr for Pattern {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "total-exchange" => Ok(Pattern::TotalExchange),
            "roundrobin" | "round-robin" => Ok(Pattern::RoundRobin),
            _ => Err(format!("unknown pattern {s:?}")),
        }
    }
}

/// Timings of one pattern at one size.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub pattern: Pattern,
    /// Word size in bytes; the message size for round-robin.
    pub w: u64,
    /// Words per process for total exchange; messages per process for
    /// round-robin.
    pub h: u64,
    pub times: Vec<f64>,
    pub mean: f64,
    pub ci95: f64,
}

impl Measurement {
    pub fn new(pattern: Pattern, w: u64, h: u64, times: Vec<f64>) -> Self {
        assert!(!times.is_empty(), "a measurement needs at least one repetition");
        Measurement {
            pattern,
            w,
            h,
            mean: stats::mean(&times),
            ci95: stats::ci95_half_width(&times),
            times,
        }
    }

    pub fn reps(&self) -> usize {
        self.times.len()
    }
}

/// Extra time injected into every timed superstep, growing as a power of
/// its volume. Models a backend that is not affine, for exercising the
/// compliance verdict on a real run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Degradation {
    /// Seconds added at `bytes == unit`.
    pub seconds: f64,
    pub unit: u64,
    pub exponent: i32,
}

impl Degradation {
    fn delay(&self, bytes: u64) -> Duration {
        let x = bytes as f64 / self.unit as f64;
        Duration::from_secs_f64(self.seconds * x.powi(self.exponent))
    }
}

fn spin_for(d: Duration) {
    let until = Instant::now() + d;
    while Instant::now() < until {
        std::hint::spin_loop();
    }
}

/// Send and receive buffers registered once and grown on demand.
///
/// Every method is collective: all processes of the context must call it
/// with the same arguments.
pub struct Bench<'a> {
    ctx: &'a mut Context,
    send: Option<Slot>,
    recv: Option<Slot>,
    bytes: usize,
    msgs: usize,
    pub degradation: Option<Degradation>,
}

impl<'a> Bench<'a> {
    pub fn new(ctx: &'a mut Context) -> Self {
        Bench {
            ctx,
            send: None,
            recv: None,
            bytes: 0,
            msgs: 0,
            degradation: None,
        }
    }

    pub fn ctx(&mut self) -> &mut Context {
        self.ctx
    }

    /// Makes both buffers at least `bytes` long and the queue `msgs` deep.
    pub fn reserve(&mut self, bytes: usize, msgs: usize) -> Result<()> {
        if bytes <= self.bytes && msgs <= self.msgs && self.send.is_some() {
            return Ok(());
        }
        for s in [self.send.take(), self.recv.take()].into_iter().flatten() {
            self.ctx.deregister(s)?;
        }
        self.bytes = self.bytes.max(bytes);
        self.msgs = self.msgs.max(msgs);
        self.ctx.resize_memory_register(2)?;
        self.ctx.resize_message_queue(self.msgs)?;
        self.ctx.sync(SyncAttr::Default)?;
        let send = self.ctx.register_global(self.bytes)?;
        let recv = self.ctx.register_global(self.bytes)?;
        for (i, b) in self.ctx.slot_mut(send).iter_mut().enumerate() {
            *b = i as u8;
        }
        self.send = Some(send);
        self.recv = Some(recv);
        Ok(())
    }

    fn timed(&mut self, queue: impl FnOnce(&mut Context, Slot, Slot) -> Result<u64>) -> Result<f64> {
        let (send, recv) = (self.send.unwrap(), self.recv.unwrap());
        // Everyone leaves this fence together, so the clock starts close to
        // the moment the last process enters the timed sync.
        self.ctx.sync(SyncAttr::Default)?;
        let start = Instant::now();
        let bytes = queue(self.ctx, send, recv)?;
        self.ctx.sync(SyncAttr::Default)?;
        if let Some(d) = self.degradation {
            spin_for(d.delay(bytes));
        }
        Ok(start.elapsed().as_secs_f64())
    }

    /// Words of `w` bytes process `src` sends to `dst` when spreading `h`
    /// words evenly over all processes; remainders rotate with the source so
    /// every process also receives exactly `h` words.
    pub fn share(h: u64, p: u64, src: u64, dst: u64) -> u64 {
        h / p + u64::from((dst + p - src) % p < h % p)
    }

    /// One total exchange of `h` words of `w` bytes per process.
    pub fn total_exchange_once(&mut self, h: u64, w: u64) -> Result<f64> {
        let p = self.ctx.nprocs() as u64;
        self.reserve((h * w) as usize, p as usize)?;
        self.timed(|ctx, send, recv| {
            let me = ctx.pid() as u64;
            let mut src_off = 0;
            for k in 0..p {
                let dst = (me + k) % p;
                let n = Self::share(h, p, me, dst);
                if n == 0 {
                    continue;
                }
                // Offset of this block at the destination: words from lower sources.
                let dst_off: u64 = (0..me).map(|s| Self::share(h, p, s, dst)).sum();
                ctx.put(send, src_off * w, dst as u32, recv, dst_off * w, n * w, MsgAttr::Default)?;
                src_off += n;
            }
            Ok(h * w)
        })
    }

    /// `n` messages of `size` bytes, sent round-robin starting at the next
    /// process, in one superstep.
    pub fn roundrobin_once(&mut self, n: u64, size: u64) -> Result<f64> {
        let p = self.ctx.nprocs() as u64;
        let per_peer = n.div_ceil(p);
        self.reserve(((p * per_peer).max(1) * size) as usize, n.max(1) as usize)?;
        self.timed(|ctx, send, recv| {
            let me = ctx.pid() as u64;
            for i in 0..n {
                let dst = (me + 1 + i) % p;
                let src_off = (i % per_peer.max(1)) * size;
                let dst_off = (me * per_peer + i / p) * size;
                ctx.put(send, src_off, dst as u32, recv, dst_off, size, MsgAttr::Default)?;
            }
            Ok(n * size)
        })
    }

    /// Times `run(x)` for every `x` in `xs`, `reps` times each after
    /// `warmup` discarded runs, in an order shuffled by `seed`.
    pub fn sweep(
        &mut self,
        xs: &[u64],
        reps: usize,
        warmup: usize,
        seed: u64,
        mut run: impl FnMut(&mut Self, u64) -> Result<f64>,
    ) -> Result<BTreeMap<u64, Vec<f64>>> {
        assert!(reps >= 1, "at least one repetition");
        if let Some(&largest) = xs.iter().max() {
            // Grow buffers before timing anything.
            run(self, largest)?;
        }
        let mut order: Vec<(u64, usize)> = xs
            .iter()
            .flat_map(|&x| (0..warmup + reps).map(move |r| (x, r)))
            .collect();
        // The same seed on every process keeps the collective order identical.
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut seen: BTreeMap<u64, usize> = BTreeMap::new();
        let mut out: BTreeMap<u64, Vec<f64>> = xs.iter().map(|&x| (x, Vec::new())).collect();
        for (x, _) in order {
            let t = run(self, x)?;
            let k = seen.entry(x).or_default();
            *k += 1;
            if *k > warmup {
                out.get_mut(&x).unwrap().push(t);
            }
        }
        Ok(out)
    }

    pub fn total_exchange(&mut self, hs: &[u64], w: u64, reps: usize, warmup: usize, seed: u64) -> Result<Vec<Measurement>> {
        let t = self.sweep(hs, reps, warmup, seed, |b, h| b.total_exchange_once(h, w))?;
        Ok(t.into_iter()
            .map(|(h, times)| Measurement::new(Pattern::TotalExchange, w, h, times))
            .collect())
    }

    pub fn roundrobin(&mut self, ns: &[u64], size: u64, reps: usize, warmup: usize, seed: u64) -> Result<Vec<Measurement>> {
        let t = self.sweep(ns, reps, warmup, seed, |b, n| b.roundrobin_once(n, size))?;
        Ok(t.into_iter()
            .map(|(n, times)| Measurement::new(Pattern::RoundRobin, size, n, times))
            .collect())
    }

    /// Deregisters the buffers. Collective.
    pub fn release(mut self) -> Result<()> {
        for s in [self.send.take(), self.recv.take()].into_iter().flatten() {
            self.ctx.deregister(s)?;
        }
        Ok(())
    }
}

/// Total exchange of `h` words of `w` bytes, `reps` timed repetitions.
pub fn run_total_exchange(ctx: &mut Context, h: u64, w: u64, reps: usize) -> Result<Measurement> {
    let mut b = Bench::new(ctx);
    let m = b.total_exchange(&[h], w, reps, 0, 0)?.remove(0);
    b.release()?;
    Ok(m)
}

/// `n_messages` puts of `msg_size` bytes round-robin over all processes.
pub fn run_roundrobin_small(ctx: &mut Context, n_messages: u64, msg_size: u64, reps: usize) -> Result<Measurement> {
    let mut b = Bench::new(ctx);
    let m = b.roundrobin(&[n_messages], msg_size, reps, 0, 0)?.remove(0);
    b.release()?;
    Ok(m)
}

pub const DEFAULT_MSG_SIZE: u64 = 4096;
pub const DEFAULT_REPS: usize = 200;
pub const DEFAULT_WARMUP: usize = 10;
