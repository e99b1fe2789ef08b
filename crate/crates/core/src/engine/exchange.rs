//! Total exchanges and the tree barrier over point-to-point frames.
//!
//! The direct algorithm sends one frame to every peer. The randomized Bruck
//! algorithm routes every block through a uniformly random intermediate
//! (two-phase randomized routing); each phase is an index all-to-all in
//! `ceil(log2 p)` rounds where a process sends exactly one frame per round,
//! to `pid + 2^k`. Message count drops from `p - 1` to `2 ceil(log2 p)` at
//! the price of forwarding each block up to `ceil(log2 p)` times per phase.

use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::transport::Transport;
use crate::types::Pid;

pub(crate) const DEFAULT_TREE_FANIN: usize = 2;

const BARRIER_UP: u8 = 0xB1;
const BARRIER_DOWN: u8 = 0xB2;

/// Metadata exchange algorithm used by the superstep engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExchangeAlgorithm {
    #[default]
    Direct,
    RandomizedBruck,
}

impl FromStr for ExchangeAlgorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(ExchangeAlgorithm::Direct),
            "bruck" | "rb" | "randomized-bruck" => Ok(ExchangeAlgorithm::RandomizedBruck),
            other => Err(format!("unknown exchange algorithm `{other}`")),
        }
    }
}

/// Instrumentation of one total exchange on one process.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExchangeStats {
    /// Communication rounds executed.
    pub rounds: u32,
    /// Frames sent to other processes.
    pub messages: u32,
    /// Bytes of user blocks handed in by this process, including its own block.
    pub block_bytes: u64,
    /// Block bytes put on the wire by this process, counting every hop.
    pub forwarded_bytes: u64,
    /// Block bytes that used this process as random intermediate (Bruck only).
    pub intermediate_bytes: u64,
}

/// `ceil(log2 p)`, with 0 for `p <= 1`.
pub fn ceil_log2(p: u32) -> u32 {
    if p <= 1 {
        0
    } else {
        32 - (p - 1).leading_zeros()
    }
}

/// Levels of a combining tree with the given fan-in over `p` participants.
pub fn tree_depth(p: u32, fanin: u32) -> u32 {
    assert!(fanin >= 2, "fan-in must be at least 2");
    let mut levels = 0;
    let mut reach: u64 = 1;
    while reach < p as u64 {
        reach *= fanin as u64;
        levels += 1;
    }
    levels
}

fn check_blocks(p: u32, blocks: &[Vec<u8>]) -> Result<()> {
    if blocks.len() != p as usize {
        return Err(Error::illegal(format!(
            "exchange needs {p} blocks, got {}",
            blocks.len()
        )));
    }
    Ok(())
}

/// Sends `blocks[d]` to every `d` and returns the block each peer sent here.
pub fn exchange_direct<T: Transport + ?Sized>(
    t: &mut T,
    mut blocks: Vec<Vec<u8>>,
) -> Result<(Vec<Vec<u8>>, ExchangeStats)> {
    let p = t.nprocs();
    let me = t.pid();
    check_blocks(p, &blocks)?;
    let mut stats = ExchangeStats {
        rounds: 1,
        block_bytes: blocks.iter().map(|b| b.len() as u64).sum(),
        ..Default::default()
    };
    let mut out = vec![Vec::new(); p as usize];
    out[me as usize] = std::mem::take(&mut blocks[me as usize]);
    for k in 1..p {
        let to = (me + k) % p;
        let block = std::mem::take(&mut blocks[to as usize]);
        stats.messages += 1;
        stats.forwarded_bytes += block.len() as u64;
        t.send(to, block)?;
    }
    for k in 1..p {
        let from = (me + p - k) % p;
        out[from as usize] = t.recv(from)?;
    }
    Ok((out, stats))
}

struct Item {
    target: Pid,
    origin: Pid,
    dest: Pid,
    data: Vec<u8>,
}

const ITEM_HEADER: usize = 4 + 4 + 4 + 8;

fn encode_items(items: &[Item]) -> Vec<u8> {
    let len = 4 + items.iter().map(|i| ITEM_HEADER + i.data.len()).sum::<usize>();
    let mut buf = Vec::with_capacity(len);
    buf.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for it in items {
        buf.extend_from_slice(&it.target.to_le_bytes());
        buf.extend_from_slice(&it.origin.to_le_bytes());
        buf.extend_from_slice(&it.dest.to_le_bytes());
        buf.extend_from_slice(&(it.data.len() as u64).to_le_bytes());
        buf.extend_from_slice(&it.data);
    }
    buf
}

fn decode_items(frame: &[u8], p: u32, into: &mut Vec<Item>) -> Result<()> {
    let bad = || Error::protocol("malformed routing frame");
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        let end = pos.checked_add(n).filter(|&e| e <= frame.len()).ok_or_else(bad)?;
        let s = &frame[*pos..end];
        *pos = end;
        Ok(s)
    };
    let mut pos = 0;
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    for _ in 0..count {
        let target = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        let origin = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        let dest = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        let len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        if target >= p || origin >= p || dest >= p {
            return Err(bad());
        }
        let len = usize::try_from(len).map_err(|_| bad())?;
        let data = take(&mut pos, len)?.to_vec();
        into.push(Item {
            target,
            origin,
            dest,
            data,
        });
    }
    if pos != frame.len() {
        return Err(bad());
    }
    Ok(())
}

/// Decodes a routing frame of a `p`-process group and returns its item
/// count. Exposed for fuzzing.
#[doc(hidden)]
pub fn decode_routing_frame(frame: &[u8], p: u32) -> Result<usize> {
    let mut items = Vec::new();
    decode_items(frame, p, &mut items)?;
    Ok(items.len())
}

/// Index all-to-all: after return every held item has `target == me`.
fn bruck_route<T: Transport + ?Sized>(
    t: &mut T,
    mut items: Vec<Item>,
    stats: &mut ExchangeStats,
) -> Result<Vec<Item>> {
    let p = t.nprocs();
    let me = t.pid();
    for k in 0..ceil_log2(p) {
        let dist = 1u32 << k;
        let to = (me + dist) % p;
        let from = (me + p - dist) % p;
        let (moving, staying): (Vec<Item>, Vec<Item>) = items
            .into_iter()
            .partition(|it| ((it.target + p - me) % p) & dist != 0);
        items = staying;
        stats.rounds += 1;
        stats.messages += 1;
        stats.forwarded_bytes += moving.iter().map(|i| i.data.len() as u64).sum::<u64>();
        t.send(to, encode_items(&moving))?;
        let frame = t.recv(from)?;
        decode_items(&frame, p, &mut items)?;
    }
    debug_assert!(items.iter().all(|it| it.target == me));
    Ok(items)
}

/// Same result as [`exchange_direct`], routed through random intermediates.
///
/// Intermediates are drawn from `rng`; seed it identically across runs for
/// reproducible routing. Empty blocks are not routed.
pub fn exchange_bruck_randomized<T: Transport + ?Sized, R: Rng + ?Sized>(
    t: &mut T,
    blocks: Vec<Vec<u8>>,
    rng: &mut R,
) -> Result<(Vec<Vec<u8>>, ExchangeStats)> {
    let p = t.nprocs();
    let me = t.pid();
    check_blocks(p, &blocks)?;
    let mut stats = ExchangeStats {
        block_bytes: blocks.iter().map(|b| b.len() as u64).sum(),
        ..Default::default()
    };
    let items: Vec<Item> = blocks
        .into_iter()
        .enumerate()
        .filter(|(_, b)| !b.is_empty())
        .map(|(d, data)| Item {
            target: rng.gen_range(0..p),
            origin: me,
            dest: d as Pid,
            data,
        })
        .collect();

    let mut held = bruck_route(t, items, &mut stats)?;
    stats.intermediate_bytes = held.iter().map(|i| i.data.len() as u64).sum();
    for it in &mut held {
        it.target = it.dest;
    }
    let delivered = bruck_route(t, held, &mut stats)?;

    let mut out = vec![Vec::new(); p as usize];
    for it in delivered {
        if it.dest != me || !out[it.origin as usize].is_empty() {
            return Err(Error::protocol("misrouted block in randomized exchange"));
        }
        out[it.origin as usize] = it.data;
    }
    Ok((out, stats))
}

/// Combining-tree barrier over frames; reduces `ok` with logical and.
pub fn tree_barrier<T: Transport + ?Sized>(t: &mut T, ok: bool, fanin: usize) -> Result<bool> {
    let p = t.nprocs() as usize;
    let me = t.pid() as usize;
    if p == 1 {
        return Ok(ok);
    }
    let first_child = me * fanin + 1;
    let children = first_child.min(p)..(first_child + fanin).min(p);
    let mut all = ok;
    for c in children.clone() {
        all &= barrier_flag(&t.recv(c as Pid)?, BARRIER_UP)?;
    }
    if me != 0 {
        let parent = ((me - 1) / fanin) as Pid;
        t.send(parent, vec![BARRIER_UP, all as u8])?;
        all = barrier_flag(&t.recv(parent)?, BARRIER_DOWN)?;
    }
    for c in children {
        t.send(c as Pid, vec![BARRIER_DOWN, all as u8])?;
    }
    Ok(all)
}

fn barrier_flag(frame: &[u8], tag: u8) -> Result<bool> {
    match frame {
        [t, f] if *t == tag && *f <= 1 => Ok(*f == 1),
        _ => Err(Error::protocol("unexpected frame during barrier")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log2_ceiling() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(3), 2);
        assert_eq!(ceil_log2(8), 3);
        assert_eq!(ceil_log2(9), 4);
        assert_eq!(ceil_log2(32), 5);
    }

    #[test]
    fn depth_of_binary_tree_over_128() {
        assert_eq!(tree_depth(128, 2), 7);
        assert_eq!(tree_depth(1, 2), 0);
        assert_eq!(tree_depth(8, 4), 2);
        assert_eq!(tree_depth(8, 8), 1);
    }

    #[test]
    fn item_codec_rejects_truncation() {
        let items = vec![Item {
            target: 1,
            origin: 0,
            dest: 1,
            data: vec![1, 2, 3],
        }];
        let buf = encode_items(&items);
        let mut out = Vec::new();
        decode_items(&buf, 2, &mut out).unwrap();
        assert_eq!(out[0].data, vec![1, 2, 3]);
        let mut out = Vec::new();
        assert!(decode_items(&buf[..buf.len() - 1], 2, &mut out).is_err());
        assert!(decode_items(&buf, 1, &mut Vec::new()).is_err());
    }

    #[test]
    fn algorithm_names_parse() {
        assert_eq!("direct".parse(), Ok(ExchangeAlgorithm::Direct));
        assert_eq!("bruck".parse(), Ok(ExchangeAlgorithm::RandomizedBruck));
        assert!("ring".parse::<ExchangeAlgorithm>().is_err());
    }
}
