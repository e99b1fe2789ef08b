//! Destination-side write-conflict resolution.
//!
//! Overlapping writes are resolved as if applied one after the other in
//! ascending order key, so every byte ends up with the value of the highest
//! keyed interval covering it. Endpoints are radix sorted by (slot, offset)
//! and coordinate-compressed into elementary segments; intervals then claim
//! still-unowned segments in descending key order, with a "next free segment"
//! union-find so each segment is claimed once. Total work is O(m α(m)) for
//! m intervals, independent of the byte volume.

use crate::types::Pid;

/// Order key of a request: initiating process, then its queue position.
pub type OrderKey = (Pid, u32);

/// One write targeting this process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteInterval {
    /// Raw slot id (see [`crate::Slot::to_raw`]).
    pub slot: u32,
    pub begin: u64,
    pub end: u64,
    /// Caller-chosen request id reported back in [`Clip::request`].
    pub request: usize,
    pub key: OrderKey,
}

/// A surviving piece `[begin, end)` of the write with id `request`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Clip {
    pub request: usize,
    pub slot: u32,
    pub begin: u64,
    pub end: u64,
}

/// LSD radix sort, skipping digits that are constant over the input.
/// Digits are 8 bits wide for short inputs and 16 bits otherwise, so the
/// bucket table never dwarfs the input. Stable.
pub(crate) fn radix_sort<T: Copy>(items: &mut Vec<(u128, T)>) {
    if items.len() < 2 {
        return;
    }
    let (mut or, mut and) = (0u128, !0u128);
    for (k, _) in items.iter() {
        or |= *k;
        and &= *k;
    }
    let varying = or ^ and;
    let bits: u32 = if items.len() < 1 << 12 { 8 } else { 16 };
    let mask = (1u128 << bits) - 1;
    let mut buf = items.clone();
    let mut counts = vec![0usize; 1 << bits];
    for digit in 0..128 / bits {
        let shift = digit * bits;
        if (varying >> shift) & mask == 0 {
            continue;
        }
        counts.iter_mut().for_each(|c| *c = 0);
        for (k, _) in items.iter() {
            counts[((k >> shift) & mask) as usize] += 1;
        }
        let mut sum = 0;
        for c in counts.iter_mut() {
            let n = *c;
            *c = sum;
            sum += n;
        }
        for it in items.iter() {
            let d = ((it.0 >> shift) & mask) as usize;
            buf[counts[d]] = *it;
            counts[d] += 1;
        }
        std::mem::swap(items, &mut buf);
    }
}

fn find(next: &mut [usize], mut k: usize) -> usize {
    while next[k] != k {
        next[k] = next[next[k]];
        k = next[k];
    }
    k
}

/// Clips `intervals` so that the survivors are disjoint and each byte is kept
/// from its highest-keyed writer. Empty intervals are ignored. The result is
/// sorted by (slot, begin), with adjacent pieces of one request merged.
pub fn resolve_conflicts(intervals: &[WriteInterval]) -> Vec<Clip> {
    let live: Vec<usize> = (0..intervals.len())
        .filter(|&i| intervals[i].end > intervals[i].begin)
        .collect();
    if live.is_empty() {
        return Vec::new();
    }

    let mut ends: Vec<(u128, u32)> = Vec::with_capacity(2 * live.len());
    for (n, &i) in live.iter().enumerate() {
        let w = &intervals[i];
        let base = (w.slot as u128) << 64;
        ends.push((base | w.begin as u128, (2 * n) as u32));
        ends.push((base | w.end as u128, (2 * n + 1) as u32));
    }
    radix_sort(&mut ends);

    // Compressed coordinates and each interval's [lo, hi) segment range.
    let mut coords: Vec<(u32, u64)> = Vec::with_capacity(ends.len());
    let mut range = vec![(0usize, 0usize); live.len()];
    for &(k, tag) in &ends {
        let c = ((k >> 64) as u32, k as u64);
        if coords.last() != Some(&c) {
            coords.push(c);
        }
        let idx = coords.len() - 1;
        let n = tag as usize / 2;
        if tag % 2 == 0 {
            range[n].0 = idx;
        } else {
            range[n].1 = idx;
        }
    }

    let mut order: Vec<(u128, u32)> = live
        .iter()
        .enumerate()
        .map(|(n, &i)| {
            let (pid, q) = intervals[i].key;
            (((pid as u128) << 32) | q as u128, n as u32)
        })
        .collect();
    radix_sort(&mut order);

    const FREE: usize = usize::MAX;
    let segments = coords.len() - 1;
    let mut owner = vec![FREE; segments];
    let mut next: Vec<usize> = (0..=segments).collect();
    for &(_, n) in order.iter().rev() {
        let (lo, hi) = range[n as usize];
        let mut k = find(&mut next, lo);
        while k < hi {
            owner[k] = n as usize;
            next[k] = k + 1;
            k = find(&mut next, k + 1);
        }
    }

    let mut clips: Vec<Clip> = Vec::new();
    for k in 0..segments {
        let n = owner[k];
        if n == FREE {
            continue;
        }
        let (slot, begin) = coords[k];
        let end = coords[k + 1].1;
        let request = intervals[live[n]].request;
        match clips.last_mut() {
            Some(c) if c.request == request && c.slot == slot && c.end == begin => c.end = end,
            _ => clips.push(Clip {
                request,
                slot,
                begin,
                end,
            }),
        }
    }
    clips
}

/// Returns true when some byte range in `reads` intersects one in `writes`.
/// Ranges are `(slot, begin, end)` on a single process.
pub(crate) fn reads_overlap_writes(reads: &[(u32, u64, u64)], writes: &[(u32, u64, u64)]) -> bool {
    let mut w: Vec<(u32, u64, u64)> = writes.iter().copied().filter(|r| r.2 > r.1).collect();
    if w.is_empty() {
        return false;
    }
    w.sort_unstable();
    // Union of write ranges, sorted and disjoint.
    let mut merged: Vec<(u32, u64, u64)> = Vec::with_capacity(w.len());
    for r in w {
        match merged.last_mut() {
            Some(m) if m.0 == r.0 && r.1 <= m.2 => m.2 = m.2.max(r.2),
            _ => merged.push(r),
        }
    }
    reads.iter().filter(|r| r.2 > r.1).any(|&(slot, b, e)| {
        let i = merged.partition_point(|m| (m.0, m.2) <= (slot, b));
        merged
            .get(i)
            .is_some_and(|m| m.0 == slot && m.1 < e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(slot: u32, begin: u64, end: u64, request: usize, key: OrderKey) -> WriteInterval {
        WriteInterval {
            slot,
            begin,
            end,
            request,
            key,
        }
    }

    fn c(request: usize, slot: u32, begin: u64, end: u64) -> Clip {
        Clip {
            request,
            slot,
            begin,
            end,
        }
    }

    #[test]
    fn full_overlap_keeps_highest_key() {
        let got = resolve_conflicts(&[w(0, 0, 8, 0, (0, 1)), w(0, 0, 8, 1, (0, 2))]);
        assert_eq!(got, vec![c(1, 0, 0, 8)]);
    }

    #[test]
    fn disjoint_writes_survive() {
        let got = resolve_conflicts(&[w(0, 4, 8, 1, (1, 0)), w(0, 0, 4, 0, (0, 0))]);
        assert_eq!(got, vec![c(0, 0, 0, 4), c(1, 0, 4, 8)]);
    }

    #[test]
    fn partial_overlap_is_clipped() {
        let got = resolve_conflicts(&[w(0, 0, 6, 0, (0, 1)), w(0, 4, 10, 1, (0, 2))]);
        assert_eq!(got, vec![c(0, 0, 0, 4), c(1, 0, 4, 10)]);
    }

    #[test]
    fn winner_splits_a_loser_in_two() {
        let got = resolve_conflicts(&[w(3, 0, 10, 0, (0, 0)), w(3, 4, 6, 1, (2, 0))]);
        assert_eq!(got, vec![c(0, 3, 0, 4), c(1, 3, 4, 6), c(0, 3, 6, 10)]);
    }

    #[test]
    fn slots_do_not_interact() {
        let got = resolve_conflicts(&[w(1, 0, 4, 0, (0, 0)), w(2, 0, 4, 1, (1, 0))]);
        assert_eq!(got, vec![c(0, 1, 0, 4), c(1, 2, 0, 4)]);
    }

    #[test]
    fn empty_intervals_are_dropped() {
        assert!(resolve_conflicts(&[w(0, 5, 5, 0, (0, 0))]).is_empty());
        assert!(resolve_conflicts(&[]).is_empty());
    }

    #[test]
    fn radix_sort_is_stable_and_ordered() {
        let mut v: Vec<(u128, u32)> = vec![(5, 0), (1 << 80, 1), (5, 2), (0, 3), (1 << 17, 4)];
        radix_sort(&mut v);
        assert_eq!(v, vec![(0, 3), (5, 0), (5, 2), (1 << 17, 4), (1 << 80, 1)]);
    }

    proptest! {
        #[test]
        fn radix_sort_matches_stable_sort(keys in proptest::collection::vec(any::<u128>().prop_map(|k| k >> (k % 128)), 0..5000)) {
            let mut v: Vec<(u128, usize)> = keys.into_iter().enumerate().map(|(i, k)| (k, i)).collect();
            let mut want = v.clone();
            want.sort_by_key(|x| x.0);
            radix_sort(&mut v);
            prop_assert_eq!(v, want);
        }
    }

    #[test]
    fn overlap_detection() {
        let writes = [(0, 10, 20), (0, 30, 40), (1, 0, 4)];
        assert!(reads_overlap_writes(&[(0, 15, 16)], &writes));
        assert!(reads_overlap_writes(&[(0, 0, 11)], &writes));
        assert!(!reads_overlap_writes(&[(0, 20, 30)], &writes));
        assert!(!reads_overlap_writes(&[(2, 0, 100)], &writes));
        assert!(!reads_overlap_writes(&[(0, 15, 15)], &writes));
        assert!(reads_overlap_writes(&[(1, 3, 9)], &writes));
    }

    /// Applies writes byte by byte in ascending key order.
    fn last_writer_oracle(ints: &[WriteInterval]) -> Vec<((u32, u64), usize)> {
        let mut order: Vec<&WriteInterval> = ints.iter().collect();
        order.sort_by_key(|i| i.key);
        let mut owner = std::collections::BTreeMap::new();
        for i in order {
            for b in i.begin..i.end {
                owner.insert((i.slot, b), i.request);
            }
        }
        owner.into_iter().collect()
    }

    fn intervals() -> impl Strategy<Value = Vec<WriteInterval>> {
        proptest::collection::vec((0u32..3, 0u64..64, 0u64..24, 0u32..4), 0..24).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(n, (slot, begin, len, pid))| w(slot, begin, begin + len, n, (pid, n as u32)))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn clipping_matches_sequential_application(ints in intervals()) {
            let clips = resolve_conflicts(&ints);
            let mut got = Vec::new();
            for c in &clips {
                prop_assert!(c.end > c.begin);
                for b in c.begin..c.end {
                    got.push(((c.slot, b), c.request));
                }
            }
            got.sort();
            // Disjointness: no byte listed twice.
            for pair in got.windows(2) {
                prop_assert_ne!(pair[0].0, pair[1].0);
            }
            prop_assert_eq!(got, last_writer_oracle(&ints));
        }

        #[test]
        fn clips_lie_inside_their_request(ints in intervals()) {
            for c in resolve_conflicts(&ints) {
                let i = &ints[c.request];
                prop_assert!(i.slot == c.slot && i.begin <= c.begin && c.end <= i.end);
            }
        }
    }
}
