//! Combining-tree barrier over atomics.
//!
//! Participants are grouped `fanin` at a time into leaf nodes; the last
//! arriver at a node climbs to its parent, and the last arriver at the root
//! publishes the new episode. Every waiter spins on that single counter, so
//! arrival costs O(log_fanin p) contended atomics instead of O(p) on one.

use std::collections::HashMap;
use std::hint;
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Instant;

use crate::error::{Error, Result};

pub(crate) const FANIN_CANDIDATES: [usize; 3] = [2, 4, 8];
pub(crate) const FALLBACK_FANIN: usize = 4;
const SPINS: u32 = 64;

#[repr(align(64))]
struct Node {
    arrived: AtomicUsize,
    expected: usize,
}

pub(crate) struct TreeBarrier {
    fanin: usize,
    levels: Vec<Vec<Node>>,
    released: AtomicU64,
    failed: [AtomicBool; 2],
}

impl TreeBarrier {
    pub(crate) fn new(p: usize, fanin: usize) -> Self {
        assert!(p >= 1 && fanin >= 2);
        let mut levels = Vec::new();
        let mut width = p;
        while width > 1 {
            let nodes = width.div_ceil(fanin);
            levels.push(
                (0..nodes)
                    .map(|n| Node {
                        arrived: AtomicUsize::new(0),
                        expected: fanin.min(width - n * fanin),
                    })
                    .collect(),
            );
            width = nodes;
        }
        TreeBarrier {
            fanin,
            levels,
            released: AtomicU64::new(0),
            failed: [AtomicBool::new(false), AtomicBool::new(false)],
        }
    }

    #[cfg(test)]
    fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Waits for all `p` participants. `episode` is the caller's count of
    /// completed barriers. Fails when a participant departs for good (counted
    /// in `departed`) before the episode completes.
    pub(crate) fn wait(
        &self,
        pid: usize,
        episode: &mut u64,
        ok: bool,
        departed: &AtomicU32,
    ) -> Result<bool> {
        let ep = *episode;
        *episode += 1;
        let slot = (ep % 2) as usize;
        if !ok {
            self.failed[slot].store(true, Ordering::Relaxed);
        }
        let mut idx = pid;
        let mut last = true;
        for level in &self.levels {
            let n = idx / self.fanin;
            let node = &level[n];
            if node.arrived.fetch_add(1, Ordering::AcqRel) + 1 < node.expected {
                last = false;
                break;
            }
            node.arrived.store(0, Ordering::Relaxed);
            idx = n;
        }
        if last {
            self.failed[1 - slot].store(false, Ordering::Relaxed);
            self.released.store(ep + 1, Ordering::Release);
        } else {
            let mut spins = 0u32;
            while self.released.load(Ordering::Acquire) <= ep {
                if spins < SPINS {
                    spins += 1;
                    hint::spin_loop();
                    continue;
                }
                if departed.load(Ordering::Acquire) > 0
                    && self.released.load(Ordering::Acquire) <= ep
                {
                    return Err(Error::peer_lost("a process left while others wait at a barrier"));
                }
                thread::yield_now();
            }
        }
        Ok(!self.failed[slot].load(Ordering::Acquire))
    }
}

fn time_barrier(p: usize, fanin: usize, rounds: usize) -> Option<f64> {
    let barrier = TreeBarrier::new(p, fanin);
    let none = AtomicU32::new(0);
    let start = Instant::now();
    thread::scope(|s| {
        let mut handles = Vec::new();
        for pid in 1..p {
            let (b, none) = (&barrier, &none);
            let h = thread::Builder::new()
                .spawn_scoped(s, move || {
                    let mut ep = 0;
                    for _ in 0..rounds {
                        b.wait(pid, &mut ep, true, none).ok()?;
                    }
                    Some(())
                })
                .ok();
            match h {
                Some(h) => handles.push(h),
                None => {
                    // Spawning failed: let the started threads bail out.
                    none.store(1, Ordering::Release);
                    return None;
                }
            }
        }
        let mut ep = 0;
        for _ in 0..rounds {
            barrier.wait(0, &mut ep, true, &none).ok()?;
        }
        let all = handles.into_iter().all(|h| h.join().ok().flatten().is_some());
        all.then(|| start.elapsed().as_secs_f64())
    })
}

/// Fan-in with the lowest measured barrier latency at `p` participants.
pub(crate) fn tune(p: usize) -> usize {
    if p <= 2 {
        return FALLBACK_FANIN;
    }
    let mut best: Option<(f64, usize)> = None;
    for &f in &FANIN_CANDIDATES {
        match time_barrier(p, f, 32) {
            Some(t) if best.map_or(true, |(bt, _)| t < bt) => best = Some((t, f)),
            Some(_) => {}
            None => return FALLBACK_FANIN,
        }
    }
    best.map_or(FALLBACK_FANIN, |(_, f)| f)
}

/// Tuned fan-in for `p`, measured once per process and size.
pub(crate) fn tuned_fanin(p: usize) -> usize {
    static CACHE: Mutex<Option<HashMap<usize, usize>>> = Mutex::new(None);
    if let Some(&f) = CACHE.lock().unwrap().get_or_insert_with(HashMap::new).get(&p) {
        return f;
    }
    let f = tune(p);
    log::debug!("barrier fan-in {f} for {p} threads");
    CACHE.lock().unwrap().get_or_insert_with(HashMap::new).insert(p, f);
    f
}
