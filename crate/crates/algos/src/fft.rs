//! Parallel radix-2 FFT with a single all-to-all redistribution.
//!
//! With `n = p m` and the input distributed cyclically (process `s` holds
//! `x[s + p t]`), write `k = k1 + m k2`:
//!
//! ```text
//! X[k1 + m k2] = sum_s  w_p^(s k2)  w_n^(s k1)  Y_s[k1],   Y_s = FFT_m(x[s + p .])
//! ```
//!
//! Each process transforms its own slice, sends `Y_s[k1]` to process
//! `k1 mod p`, and the receiver twiddles, permutes and finishes with `m / p`
//! transforms of length `p`. The output is again cyclic.

use std::f64::consts::PI;

use lpf::{Context, Error, FatalKind, MsgAttr, Pid, Result, SyncAttr};
use num_complex::Complex64;

/// Bytes of one complex double word.
pub const WORD: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distribution {
    /// Process `s` holds indices `[s n/p, (s+1) n/p)`, up to rounding.
    Block,
    /// Process `s` holds indices `s, s + p, s + 2p, ...`.
    Cyclic,
}

/// One process's share of a distributed complex vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DistVector {
    pub n: usize,
    pub p: u32,
    pub pid: Pid,
    pub dist: Distribution,
    pub local: Vec<Complex64>,
}

fn block_range(n: usize, p: usize, s: usize) -> (usize, usize) {
    let (q, r) = (n / p, n % p);
    let begin = s * q + s.min(r);
    (begin, begin + q + usize::from(s < r))
}

impl DistVector {
    /// The part of `global` that process `pid` of `p` holds.
    pub fn from_global(global: &[Complex64], p: u32, pid: Pid, dist: Distribution) -> Self {
        let n = global.len();
        let local = (0..Self::local_len_of(n, p, pid, dist))
            .map(|l| global[Self::global_index_of(n, p, pid, dist, l)])
            .collect();
        DistVector {
            n,
            p,
            pid,
            dist,
            local,
        }
    }

    fn local_len_of(n: usize, p: u32, pid: Pid, dist: Distribution) -> usize {
        let (n, p, s) = (n, p as usize, pid as usize);
        match dist {
            Distribution::Block => {
                let (b, e) = block_range(n, p, s);
                e - b
            }
            Distribution::Cyclic => n / p + usize::from(s < n % p),
        }
    }

    fn global_index_of(n: usize, p: u32, pid: Pid, dist: Distribution, l: usize) -> usize {
        match dist {
            Distribution::Block => block_range(n, p as usize, pid as usize).0 + l,
            Distribution::Cyclic => pid as usize + p as usize * l,
        }
    }

    /// Global index of local element `l`.
    pub fn global_index(&self, l: usize) -> usize {
        Self::global_index_of(self.n, self.p, self.pid, self.dist, l)
    }

    /// Writes the local elements into their places in `global`.
    pub fn scatter_into(&self, global: &mut [Complex64]) {
        for (l, v) in self.local.iter().enumerate() {
            global[self.global_index(l)] = *v;
        }
    }
}

/// `exp(-2 pi i e / n)`, with the exponent reduced first to keep the angle
/// small and exact.
fn root_of_unity(e: usize, n: usize) -> Complex64 {
    Complex64::from_polar(1.0, -2.0 * PI * (e % n) as f64 / n as f64)
}

/// Direct `O(n^2)` evaluation of `X_k = sum_j x_j exp(-2 pi i j k / n)`.
pub fn dft_oracle(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(j, v)| v * root_of_unity(j * k % n, n))
                .sum()
        })
        .collect()
}

/// In-place iterative radix-2 FFT; `x.len()` must be a power of two.
pub fn fft_local(x: &mut [Complex64]) {
    let n = x.len();
    assert!(n.is_power_of_two(), "length {n} is not a power of two");
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            x.swap(i, j);
        }
    }
    let twiddles: Vec<Complex64> = (0..n / 2).map(|k| root_of_unity(k, n)).collect();
    let mut len = 2;
    while len <= n {
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..len / 2 {
                let w = twiddles[k * stride];
                let a = x[start + k];
                let b = x[start + k + len / 2] * w;
                x[start + k] = a + b;
                x[start + k + len / 2] = a - b;
            }
        }
        len *= 2;
    }
}

fn illegal(detail: impl Into<String>) -> Error {
    Error::fatal(FatalKind::IllegalArgument, detail)
}

fn check(ctx: &Context, v: &DistVector) -> Result<()> {
    let (n, p) = (v.n, ctx.nprocs() as usize);
    if v.p as usize != p || v.pid != ctx.pid() {
        return Err(illegal("vector belongs to a different process group"));
    }
    if v.dist != Distribution::Cyclic {
        return Err(illegal("fft_forward expects a cyclic distribution"));
    }
    if !n.is_power_of_two() || !p.is_power_of_two() {
        return Err(illegal(format!("n = {n} and p = {p} must be powers of two")));
    }
    // sqrt(n) > p, in integers.
    if n <= p * p {
        return Err(illegal(format!("n = {n} needs sqrt(n) > p = {p}")));
    }
    if v.local.len() != n / p {
        return Err(illegal("local slice has the wrong length"));
    }
    Ok(())
}

fn to_bytes(xs: &[Complex64], out: &mut [u8]) {
    for (x, chunk) in xs.iter().zip(out.chunks_exact_mut(WORD as usize)) {
        chunk[..8].copy_from_slice(&x.re.to_le_bytes());
        chunk[8..].copy_from_slice(&x.im.to_le_bytes());
    }
}

fn from_bytes(bytes: &[u8]) -> Vec<Complex64> {
    bytes
        .chunks_exact(WORD as usize)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect()
}

/// Forward DFT of a cyclically distributed vector. Collective; performs
/// exactly one superstep that moves data, of `n / p` complex words per
/// process. Needs room for two more slots and `p` messages, and resizes
/// (with an empty sync) when there is none.
pub fn fft_forward(ctx: &mut Context, v: &DistVector) -> Result<DistVector> {
    check(ctx, v)?;
    let (n, p, me) = (v.n, ctx.nprocs() as usize, ctx.pid() as usize);
    let m = n / p;
    let q = m / p;

    // Phase A: transform the local slice.
    let mut y = v.local.clone();
    fft_local(&mut y);

    // Pack Y[k1] by destination k1 mod p: block r holds k1 = r + p i.
    let mut packed = vec![Complex64::default(); m];
    for r in 0..p {
        for i in 0..q {
            packed[r * q + i] = y[r + p * i];
        }
    }

    let (slots, msgs) = ctx.capacities();
    if ctx.registered_slots() + 2 > slots || msgs < p {
        ctx.resize_memory_register(ctx.registered_slots() + 2)?;
        ctx.resize_message_queue(msgs.max(p))?;
        ctx.sync(SyncAttr::Default)?;
    }
    let bytes = m * WORD as usize;
    let send = ctx.register_global(bytes)?;
    let recv = ctx.register_global(bytes)?;
    to_bytes(&packed, ctx.slot_mut(send));

    // Phase B: one all-to-all; process s's block lands at offset s q.
    let block = q as u64 * WORD;
    for r in 0..p {
        ctx.put(send, r as u64 * block, r as Pid, recv, me as u64 * block, block, MsgAttr::Default)?;
    }
    ctx.sync(SyncAttr::Default)?;
    let z = from_bytes(ctx.slot(recv));
    ctx.deregister(send)?;
    ctx.deregister(recv)?;

    // Phase C: twiddle, permute into length-p groups, transform, place.
    let mut out = vec![Complex64::default(); m];
    let mut group = vec![Complex64::default(); p];
    for i in 0..q {
        let k1 = me + p * i;
        for (s, g) in group.iter_mut().enumerate() {
            *g = z[s * q + i] * root_of_unity(s * k1, n);
        }
        fft_local(&mut group);
        for (k2, g) in group.iter().enumerate() {
            out[i + q * k2] = *g;
        }
    }
    Ok(DistVector {
        n,
        p: p as u32,
        pid: me as Pid,
        dist: Distribution::Cyclic,
        local: out,
    })
}

/// Relative l2 distance `|a - b| / |b|`, or `|a - b|` when `b` is zero.
pub fn relative_l2_error(a: &[Complex64], b: &[Complex64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}
