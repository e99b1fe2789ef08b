//! End-to-end acceptance checks. Prints one PASS or FAIL line per criterion
//! and exits non-zero if any fails.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use lpf::engine::{ceil_log2, exchange_bruck_randomized, exchange_direct};
use lpf::{
    Args, Config, Context, Error, ExchangeAlgorithm, MachineParams, MsgAttr, ParamsSource, Pid, SyncAttr,
    Transport, TransportCounters, DEFAULT_INIT_TIMEOUT,
};
use lpf_algos::{
    bootstrap, dft_oracle, encode_dims, fft_forward, relative_l2_error, DistVector, Distribution, OK,
};
use lpf_bench::{
    calibrate, compliance, default_n_max_bytes, estimate_params, h_grid, write_params_file, Bench,
    CalibrationOptions, COMPLIANCE_R2,
};
use num_complex::Complex64;
use proptest::strategy::{Just, Strategy};
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn cores() -> u32 {
    thread::available_parallelism().map(|n| n.get() as u32).unwrap_or(1)
}

fn root(max_procs: u32) -> Context {
    Context::root_with(Config {
        max_procs,
        ..Config::default()
    })
}

// ---------------------------------------------------------------- 1

fn hello_over_tcp(p: u32, failing: &[u32]) -> Result<i32, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lpf-hello"));
    cmd.args(["--backend", "tcp", "-p", &p.to_string(), "--rows", "1000", "--cols", "10"]);
    for s in failing {
        cmd.args(["--fail-pid", &s.to_string()]);
    }
    let out = cmd.stderr(Stdio::inherit()).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("lpf-hello exited with {}", out.status));
    }
    let text = String::from_utf8_lossy(&out.stdout);
    let errs: Vec<i32> = text
        .lines()
        .filter_map(|l| l.rsplit_once("global error ").map(|x| x.1))
        .filter_map(|v| v.split_whitespace().next()?.parse().ok())
        .collect();
    // One line per process plus the root's summary.
    if errs.len() != p as usize + 1 || errs.windows(2).any(|w| w[0] != w[1]) {
        return Err(format!("disagreement in output:\n{text}"));
    }
    Ok(errs[0])
}

fn hello_on_threads(p: u32, failing: &[u32]) -> Result<i32, String> {
    let seen = Mutex::new(Vec::new());
    let mut args = Args::new().with_input(encode_dims(1000, 10)).with_output([0u8; 4]);
    root(8)
        .exec(
            p,
            |ctx, args| {
                let b = bootstrap(ctx, args, |s| failing.contains(&s).then_some(100 + s as i32));
                seen.lock().unwrap().push(b.map(|b| b.global_error));
            },
            &mut args,
        )
        .map_err(|e| e.to_string())?;
    let seen: Result<Vec<i32>, Error> = seen.into_inner().unwrap().into_iter().collect();
    let mut seen = seen.map_err(|e| e.to_string())?;
    seen.push(i32::from_le_bytes(args.output[..].try_into().unwrap()));
    if seen.len() != p as usize + 1 || seen.windows(2).any(|w| w[0] != w[1]) {
        return Err(format!("disagreement {seen:?}"));
    }
    Ok(seen[0])
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let configs: [(bool, u32); 6] = [(false, 1), (false, 2), (false, 4), (false, 8), (true, 2), (true, 4)];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut agreed = 0;
    for trial in 0..100 {
        let (tcp, p) = configs[trial % configs.len()];
        let failing: Vec<u32> = (0..p).filter(|_| rng.gen_bool(0.3)).collect();
        let g = if tcp { hello_over_tcp(p, &failing) } else { hello_on_threads(p, &failing) }
            .map_err(|e| format!("trial {trial} (p={p}, tcp={tcp}): {e}"))?;
        let valid = if failing.is_empty() {
            g == OK
        } else {
            failing.iter().any(|&s| g == 100 + s as i32)
        };
        check(valid, || format!("trial {trial}: global error {g} for failing {failing:?}"))?;
        agreed += 1;
    }
    let t = start.elapsed();
    check(t < Duration::from_secs(60), || format!("took {t:?}"))?;
    Ok(format!(
        "bootstrap agreed in {agreed}/100 injections (shm p=1,2,4,8; tcp p=2,4) in {:.1} s",
        t.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- 2

const CRCW_SLOT: usize = 8192;

#[derive(Debug, Clone, Copy)]
struct Req {
    initiator: u32,
    put: bool,
    remote: u32,
    src_off: u64,
    dst_off: u64,
    size: u64,
}

impl Req {
    fn endpoints(&self) -> (u32, u32) {
        if self.put {
            (self.initiator, self.remote)
        } else {
            (self.remote, self.initiator)
        }
    }
}

fn crcw_case(rng: &mut impl Rng, max_p: u32, max_reqs: usize) -> (u32, Vec<Req>) {
    let p = rng.gen_range(1..=max_p);
    let n = rng.gen_range(0..=max_reqs);
    let reqs = (0..n)
        .map(|_| {
            let size = match rng.gen_range(0..10) {
                0 => 0,
                1 => rng.gen_range(1..=4096u64),
                _ => rng.gen_range(1..=96u64),
            };
            Req {
                initiator: rng.gen_range(0..p),
                put: rng.gen_bool(0.5),
                remote: rng.gen_range(0..p),
                src_off: rng.gen_range(0..=CRCW_SLOT as u64 - size),
                dst_off: rng.gen_range(0..=256u64.min(CRCW_SLOT as u64 - size)),
                size,
            }
        })
        .collect();
    (p, reqs)
}

fn crcw_source(pid: u32) -> Vec<u8> {
    (0..CRCW_SLOT).map(|i| (i as u32 * 31 + pid * 101 + 7) as u8).collect()
}

fn apply(dst: &mut [Vec<u8>], src: &[Vec<u8>], r: &Req) {
    let (from, to) = r.endpoints();
    let (a, b, n) = (r.src_off as usize, r.dst_off as usize, r.size as usize);
    dst[to as usize][b..b + n].copy_from_slice(&src[from as usize][a..a + n]);
}

/// Sequential application in (initiator, queue position) order.
fn crcw_oracle(p: u32, reqs: &[Req]) -> Vec<Vec<u8>> {
    let src: Vec<_> = (0..p).map(crcw_source).collect();
    let mut dst = vec![vec![0u8; CRCW_SLOT]; p as usize];
    for owner in 0..p {
        for r in reqs.iter().filter(|r| r.initiator == owner) {
            apply(&mut dst, &src, r);
        }
    }
    dst
}

fn crcw_run(p: u32, reqs: &[Req], exchange: ExchangeAlgorithm) -> Result<Vec<Vec<u8>>, String> {
    let out = Mutex::new(vec![Vec::new(); p as usize]);
    let mut ctx = Context::root_with(Config {
        max_procs: 8,
        debug_checks: true,
        meta_exchange: exchange,
        ..Config::default()
    });
    let failures = Mutex::new(Vec::new());
    ctx.exec(
        p,
        |ctx, _| {
            let res = (|| -> lpf::Result<()> {
                let me = ctx.pid();
                ctx.resize_memory_register(2)?;
                ctx.resize_message_queue(64)?;
                ctx.sync(SyncAttr::Default)?;
                let src = ctx.register_global(CRCW_SLOT)?;
                let dst = ctx.register_global(CRCW_SLOT)?;
                ctx.slot_mut(src).copy_from_slice(&crcw_source(me));
                for r in reqs.iter().filter(|r| r.initiator == me) {
                    if r.put {
                        ctx.put(src, r.src_off, r.remote, dst, r.dst_off, r.size, MsgAttr::Default)?;
                    } else {
                        ctx.get(r.remote, src, r.src_off, dst, r.dst_off, r.size, MsgAttr::Default)?;
                    }
                }
                ctx.sync(SyncAttr::Default)?;
                out.lock().unwrap()[me as usize] = ctx.slot(dst).to_vec();
                Ok(())
            })();
            if let Err(e) = res {
                failures.lock().unwrap().push(e.to_string());
            }
        },
        &mut Args::new(),
    )
    .map_err(|e| e.to_string())?;
    let failures = failures.into_inner().unwrap();
    if !failures.is_empty() {
        return Err(failures.join("; "));
    }
    Ok(out.into_inner().unwrap())
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for perm in permutations(n - 1) {
        for i in 0..=perm.len() {
            let mut q = perm.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Requests whose destination bytes overlap another request's.
fn conflicting(reqs: &[Req]) -> Vec<usize> {
    let overlaps = |a: &Req, b: &Req| {
        a.endpoints().1 == b.endpoints().1
            && a.size > 0
            && b.size > 0
            && a.dst_off < b.dst_off + b.size
            && b.dst_off < a.dst_off + a.size
    };
    (0..reqs.len())
        .filter(|&i| (0..reqs.len()).any(|j| j != i && overlaps(&reqs[i], &reqs[j])))
        .collect()
}

/// Whether `got` equals the outcome of some order of the conflicting
/// writes; disjoint writes commute.
fn member_of_all_orders(p: u32, reqs: &[Req], got: &[Vec<u8>]) -> bool {
    let src: Vec<_> = (0..p).map(crcw_source).collect();
    let conf = conflicting(reqs);
    let mut base = vec![vec![0u8; CRCW_SLOT]; p as usize];
    for (i, r) in reqs.iter().enumerate() {
        if !conf.contains(&i) {
            apply(&mut base, &src, r);
        }
    }
    permutations(conf.len()).into_iter().any(|perm| {
        let mut dst = base.clone();
        for k in perm {
            apply(&mut dst, &src, &reqs[conf[k]]);
        }
        dst == got
    })
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut exhaustive = 0;
    for case in 0..1000 {
        let (p, reqs) = crcw_case(&mut rng, 8, 32);
        let exchange = if case % 2 == 0 {
            ExchangeAlgorithm::Direct
        } else {
            ExchangeAlgorithm::RandomizedBruck
        };
        let got = crcw_run(p, &reqs, exchange).map_err(|e| format!("case {case}: {e}"))?;
        check(got == crcw_oracle(p, &reqs), || {
            format!("case {case}: p={p}, {} requests differ from the oracle", reqs.len())
        })?;
        if conflicting(&reqs).len() <= 5 {
            check(member_of_all_orders(p, &reqs, &got), || format!("case {case}: not a sequential outcome"))?;
            exhaustive += 1;
        }
    }
    // Small, dense instances so that conflicts of up to five writes are common.
    let mut dense = 0;
    while dense < 300 {
        let (p, mut reqs) = crcw_case(&mut rng, 3, 5);
        for r in &mut reqs {
            r.dst_off %= 24;
            r.size = r.size.min(16);
        }
        let c = conflicting(&reqs).len();
        if c < 2 {
            continue;
        }
        let got = crcw_run(p, &reqs, ExchangeAlgorithm::Direct).map_err(|e| format!("dense: {e}"))?;
        check(member_of_all_orders(p, &reqs, &got), || format!("dense instance {reqs:?} not a sequential outcome"))?;
        check(got == crcw_oracle(p, &reqs), || "dense instance differs from the oracle".into())?;
        dense += 1;
        exhaustive += 1;
    }
    Ok(format!(
        "1000 random request sets equal the ordered oracle; {exhaustive} instances with <= 5 conflicting writes checked against all orderings"
    ))
}

// ---------------------------------------------------------------- 3

struct Chan {
    pid: Pid,
    p: u32,
    tx: Vec<Sender<(Pid, Vec<u8>)>>,
    rx: Receiver<(Pid, Vec<u8>)>,
    parked: Vec<VecDeque<Vec<u8>>>,
    counters: TransportCounters,
}

fn chan_group(p: u32) -> Vec<Chan> {
    let (txs, rxs): (Vec<_>, Vec<_>) = (0..p).map(|_| channel()).unzip();
    rxs.into_iter()
        .enumerate()
        .map(|(pid, rx)| Chan {
            pid: pid as Pid,
            p,
            tx: txs.clone(),
            rx,
            parked: vec![VecDeque::new(); p as usize],
            counters: TransportCounters::default(),
        })
        .collect()
}

impl Transport for Chan {
    fn pid(&self) -> Pid {
        self.pid
    }

    fn nprocs(&self) -> u32 {
        self.p
    }

    fn send(&mut self, to: Pid, frame: Vec<u8>) -> lpf::Result<()> {
        self.tx[to as usize].send((self.pid, frame)).unwrap();
        Ok(())
    }

    fn recv(&mut self, from: Pid) -> lpf::Result<Vec<u8>> {
        loop {
            if let Some(f) = self.parked[from as usize].pop_front() {
                return Ok(f);
            }
            let (src, f) = self.rx.recv().unwrap();
            self.parked[src as usize].push_back(f);
        }
    }

    fn counters(&self) -> TransportCounters {
        self.counters
    }

    fn record_payload(&mut self, bytes: u64, copies: u64) {
        self.counters.payload_bytes_written += bytes;
        self.counters.payload_copies += copies;
    }
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_c, mut worst_c_large): (f64, f64) = (0.0, 0.0);
    let mut max_rounds_seen = 0;
    for case in 0..500u64 {
        let p: u32 = rng.gen_range(1..=32);
        let blocks: Vec<Vec<Vec<u8>>> = (0..p)
            .map(|_| {
                (0..p)
                    .map(|_| {
                        let n = if rng.gen_bool(0.2) { 0 } else { rng.gen_range(0..=64) };
                        (0..n).map(|_| rng.gen()).collect()
                    })
                    .collect()
            })
            .collect();
        let outcomes = thread::scope(|s| {
            let hs: Vec<_> = chan_group(p)
                .into_iter()
                .map(|mut t| {
                    let mine = blocks[t.pid as usize].clone();
                    s.spawn(move || {
                        let (d, ds) = exchange_direct(&mut t, mine.clone()).unwrap();
                        let mut r = ChaCha8Rng::seed_from_u64(case ^ ((t.pid as u64) << 32));
                        let (b, bs) = exchange_bruck_randomized(&mut t, mine, &mut r).unwrap();
                        (d, ds, b, bs)
                    })
                })
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect::<Vec<_>>()
        });
        let (mut direct_bytes, mut bruck_bytes) = (0u64, 0u64);
        for (me, (d, ds, b, bs)) in outcomes.iter().enumerate() {
            for (src, got) in d.iter().enumerate() {
                check(got == &blocks[src][me], || format!("case {case}: direct wrong at {me}"))?;
            }
            check(b == d, || format!("case {case}: p={p} Bruck differs from direct at {me}"))?;
            check(bs.rounds <= 2 * ceil_log2(p), || {
                format!("case {case}: p={p} took {} rounds > {}", bs.rounds, 2 * ceil_log2(p))
            })?;
            max_rounds_seen = max_rounds_seen.max(bs.rounds);
            direct_bytes += ds.forwarded_bytes;
            bruck_bytes += bs.forwarded_bytes;
        }
        if p > 1 && direct_bytes > 0 {
            let c = bruck_bytes as f64 / (direct_bytes as f64 * (p as f64).log2());
            worst_c = worst_c.max(c);
            if p >= 8 {
                worst_c_large = worst_c_large.max(c);
            }
        }
    }
    Ok(format!(
        "500 cases p in 1..32: Bruck == direct, rounds <= 2*ceil(log2 p) (max {max_rounds_seen}); Bruck bytes <= c*log2(p)*direct with c = {worst_c:.3} (c = {worst_c_large:.3} over p >= 8)"
    ))
}

// ---------------------------------------------------------------- 4 and 5

struct RealRun {
    p: u32,
    g: f64,
    l: f64,
}

fn criterion_4(real: &mut Option<RealRun>) -> Verdict {
    let start = Instant::now();
    let p = cores();
    let result = Mutex::new(None);
    let failures = Mutex::new(Vec::new());
    root(p)
        .exec(
            p,
            |ctx, _| {
                let res = (|| -> Result<_, Box<dyn std::error::Error>> {
                    let ns: Vec<u64> = (0..=12).map(|k| 1u64 << k).collect();
                    let mut b = Bench::new(ctx);
                    let rr = b.roundrobin(&ns, 4096, 30, 5, 4)?;
                    b.release()?;
                    let opts = CalibrationOptions {
                        w: 8,
                        n_max_bytes: default_n_max_bytes(ctx.nprocs()),
                        reps: 20,
                        warmup: 3,
                        seed: 4,
                    };
                    let cal = calibrate(ctx, &opts)?;
                    Ok((rr, cal))
                })();
                match res {
                    Ok(r) if ctx.pid() == 0 => *result.lock().unwrap() = Some(r),
                    Ok(_) => {}
                    Err(e) => failures.lock().unwrap().push(e.to_string()),
                }
            },
            &mut Args::new(),
        )
        .map_err(|e| e.to_string())?;
    let failures = failures.into_inner().unwrap();
    check(failures.is_empty(), || failures.join("; "))?;
    let (rr, cal) = result.into_inner().unwrap().ok_or("no result from pid 0")?;
    let pts: Vec<_> = rr.iter().map(|m| (m.h as f64, m.mean)).collect();
    let rr_fit = compliance(&pts, COMPLIANCE_R2).ok_or("round-robin fit failed")?;
    let te_fit = cal.compliance.clone().ok_or("total-exchange fit failed")?;
    *real = Some(RealRun { p, g: cal.g, l: cal.l });
    let t = start.elapsed();
    let summary = format!(
        "p={p}: round-robin 4 KiB n=2^0..2^12 R^2={:.4}; total exchange up to {} words of 8 B (4x cache) R^2={:.4}; {:.1} s",
        rr_fit.fit.r2,
        cal.n_max,
        te_fit.fit.r2,
        t.as_secs_f64()
    );
    check(rr_fit.compliant && te_fit.compliant && t < Duration::from_secs(600), || summary.clone())?;
    Ok(summary)
}

fn criterion_5(real: &Option<RealRun>) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let p = rng.gen_range(1..=64u64);
        // Desk-scale magnitudes: n_max spans at least a few cache lines per
        // process and l dominates g p, as on every machine measured.
        let n_max = rng.gen_range(1024 * p..=1 << 24);
        let g = rng.gen_range(1e-10..1e-7);
        let l = rng.gen_range(1e-6..1e-3);
        let t: BTreeMap<u64, f64> = h_grid(p, n_max).into_iter().map(|h| (h, g * h as f64 + l)).collect();
        let (eg, el) = estimate_params(&t, p, n_max).map_err(|e| e.to_string())?;
        worst = worst.max(((eg - g) / g).abs());
        worst = worst.max(((el - l) / l).abs());
    }
    check(worst <= 1e-9, || format!("synthetic relative error {worst:e}"))?;
    let t: BTreeMap<u64, f64> = [0u64, 2, 4, 1000].iter().map(|&h| (h, 2.0 * h as f64 + 7.0)).collect();
    let (g, l) = estimate_params(&t, 2, 1000).map_err(|e| e.to_string())?;
    check(g == 2.0 && l == 7.0, || format!("T = 2h + 7 gave g={g} l={l}"))?;

    let real = real.as_ref().ok_or("no real run available")?;
    check(real.g.is_finite() && real.g > 0.0 && real.l.is_finite() && real.l >= 0.0, || {
        format!("real run gave g={} l={}", real.g, real.l)
    })?;
    let dir = std::env::temp_dir().join(format!("lpf-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let path = dir.join("machine.params");
    write_params_file(&path, real.p, &[(8, real.g, real.l)]).map_err(|e| e.to_string())?;
    let ctx = Context::root_with(Config::default().with_params(MachineParams::load(&path).map_err(|e| e.to_string())?));
    let w = ctx.probe().get(8);
    std::fs::remove_dir_all(&dir).ok();
    check(
        w.g.to_bits() == real.g.to_bits()
            && w.l.to_bits() == real.l.to_bits()
            && matches!(w.source, ParamsSource::Measured(_)),
        || format!("probe read back {w:?}"),
    )?;
    Ok(format!(
        "synthetic max relative error {worst:.1e}; real shm p={}: g={:.3e} s/word, l={:.3e} s; probe round-trip bit-exact",
        real.p, real.g, real.l
    ))
}

// ---------------------------------------------------------------- 6

#[derive(Debug, Clone)]
enum Op {
    ResizeSlots(usize),
    ResizeMsgs(usize),
    HugeResizeSlots,
    HugeResizeMsgs,
    Sync,
    RegisterLocal(usize),
    RegisterGlobal(usize),
    Deregister(usize),
    Put(usize, usize, u64),
    Get(usize, usize, u64),
}

fn op() -> impl Strategy<Value = Op> {
    proptest::prop_oneof![
        (0usize..5).prop_map(Op::ResizeSlots),
        (0usize..5).prop_map(Op::ResizeMsgs),
        Just(Op::HugeResizeSlots),
        Just(Op::HugeResizeMsgs),
        Just(Op::Sync),
        (0usize..32).prop_map(Op::RegisterLocal),
        (0usize..32).prop_map(Op::RegisterGlobal),
        (0usize..8).prop_map(Op::Deregister),
        (0usize..8, 0usize..8, 0u64..8).prop_map(|(a, b, n)| Op::Put(a, b, n)),
        (0usize..8, 0usize..8, 0u64..8).prop_map(|(a, b, n)| Op::Get(a, b, n)),
    ]
}

fn criterion_6() -> Verdict {
    let mut runner = TestRunner::new(PropConfig {
        cases: 500,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let failures = Mutex::new(0u64);
    let checked = Mutex::new(0u64);
    runner
        .run(&proptest::collection::vec(op(), 1..80), |ops| {
            let mut ctx = Context::root_with(Config {
                debug_checks: false,
                ..Config::default()
            });
            let (mut globals, mut all) = (Vec::new(), Vec::new());
            for op in ops {
                let before = ctx.state_digest();
                let res = match op {
                    Op::ResizeSlots(n) => {
                        let n = n.max(ctx.registered_slots());
                        ctx.resize_memory_register(n)
                    }
                    Op::ResizeMsgs(n) => ctx.resize_message_queue(n),
                    Op::HugeResizeSlots => ctx.resize_memory_register(usize::MAX / 2),
                    Op::HugeResizeMsgs => ctx.resize_message_queue(usize::MAX / 2),
                    Op::Sync => ctx.sync(SyncAttr::Default),
                    Op::RegisterLocal(n) => ctx.register_local(n).map(|s| all.push((s, n))),
                    Op::RegisterGlobal(n) => ctx.register_global(n).map(|s| {
                        globals.push((s, n));
                        all.push((s, n));
                    }),
                    Op::Deregister(i) if !all.is_empty() && ctx.queued() == 0 => {
                        let (s, _) = all.remove(i % all.len());
                        globals.retain(|g: &(lpf::Slot, usize)| g.0 != s);
                        ctx.deregister(s)
                    }
                    Op::Put(a, b, n) | Op::Get(a, b, n) if !all.is_empty() && !globals.is_empty() => {
                        let (local, llen) = all[a % all.len()];
                        let (remote, rlen) = globals[b % globals.len()];
                        let n = n.min(llen as u64).min(rlen as u64);
                        if matches!(op, Op::Put(..)) {
                            ctx.put(local, 0, 0, remote, 0, n, MsgAttr::Default)
                        } else {
                            ctx.get(0, remote, 0, local, 0, n, MsgAttr::Default)
                        }
                    }
                    _ => Ok(()),
                };
                match res {
                    Ok(()) => {}
                    Err(Error::Mitigable(_)) => {
                        *checked.lock().unwrap() += 1;
                        if ctx.state_digest() != before {
                            *failures.lock().unwrap() += 1;
                        }
                    }
                    Err(e) => return Err(proptest::test_runner::TestCaseError::fail(e.to_string())),
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    // Exhaustion at every primitive explicitly, including inside a group.
    let primitives = Mutex::new(HashSet::new());
    root(4)
        .exec(
            4,
            |ctx, _| {
                let hit = |name: &str, ok: bool| {
                    if ok {
                        primitives.lock().unwrap().insert(name.to_owned());
                    }
                };
                let d = ctx.state_digest();
                hit("register_local", ctx.register_local(4).is_err_and(|e| e.is_mitigable()));
                hit("register_global", ctx.register_global(4).is_err_and(|e| e.is_mitigable()));
                hit("resize_memory_register", ctx.resize_memory_register(usize::MAX).is_err_and(|e| e.is_mitigable()));
                hit("resize_message_queue", ctx.resize_message_queue(usize::MAX).is_err_and(|e| e.is_mitigable()));
                hit("digest", ctx.state_digest() == d);
                ctx.resize_memory_register(1).unwrap();
                ctx.sync(SyncAttr::Default).unwrap();
                let s = ctx.register_global(8).unwrap();
                let d = ctx.state_digest();
                hit("put", ctx.put(s, 0, 0, s, 4, 4, MsgAttr::Default).is_err_and(|e| e.is_mitigable()));
                hit("get", ctx.get(0, s, 0, s, 4, 4, MsgAttr::Default).is_err_and(|e| e.is_mitigable()));
                hit("digest after put/get", ctx.state_digest() == d);
                ctx.sync(SyncAttr::Default).unwrap();
            },
            &mut Args::new(),
        )
        .map_err(|e| e.to_string())?;
    let primitives = primitives.into_inner().unwrap();
    check(primitives.len() == 8, || format!("only {primitives:?} behaved"))?;
    let (f, c) = (failures.into_inner().unwrap(), checked.into_inner().unwrap());
    check(f == 0, || format!("{f} of {c} mitigable failures changed the state digest"))?;
    Ok(format!(
        "{c} mitigable failures over 500 random op sequences, all with unchanged digest; every primitive exhausts cleanly"
    ))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for bits in 4..=12u32 {
        let n = 1usize << bits;
        let mut rng = ChaCha8Rng::seed_from_u64(bits as u64);
        let x: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let want = dft_oracle(&x);
        for p in [1u32, 2, 4, 8] {
            if n <= (p * p) as usize {
                continue;
            }
            let out = Mutex::new(vec![Complex64::default(); n]);
            let traffic = Mutex::new(Vec::new());
            root(8)
                .exec(
                    p,
                    |ctx, _| {
                        let v = DistVector::from_global(&x, p, ctx.pid(), Distribution::Cyclic);
                        let before = ctx.payload_supersteps();
                        match fft_forward(ctx, &v) {
                            Ok(y) => {
                                let t = ctx.last_superstep();
                                let h = t.sent.max(t.received) / 16;
                                traffic.lock().unwrap().push((ctx.payload_supersteps() - before, h));
                                y.scatter_into(&mut out.lock().unwrap());
                            }
                            Err(e) => traffic.lock().unwrap().push((u64::MAX, e.to_string().len() as u64)),
                        }
                    },
                    &mut Args::new(),
                )
                .map_err(|e| e.to_string())?;
            let err = relative_l2_error(&out.into_inner().unwrap(), &want);
            worst = worst.max(err);
            check(err <= 1e-10, || format!("n={n} p={p}: error {err:e}"))?;
            let traffic = traffic.into_inner().unwrap();
            check(
                traffic.len() == p as usize && traffic.iter().all(|&t| t == (1, (n / p as usize) as u64)),
                || format!("n={n} p={p}: (payload supersteps, h) = {traffic:?}"),
            )?;
            cases += 1;
        }
    }
    let t = start.elapsed();
    check(t < Duration::from_secs(120), || format!("took {t:?}"))?;
    Ok(format!(
        "{cases} (n, p) pairs, n=2^4..2^12, p=1,2,4,8 with sqrt(n)>p: max error {worst:.1e}, one payload superstep with h=n/p words; {:.1} s",
        t.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- 8

fn spawn_interop(pids: &[u32], nprocs: u32, port: u16, timeout_ms: Option<u64>) -> Result<Vec<(i32, String)>, String> {
    let exe = Path::new(env!("CARGO_BIN_EXE_lpf-interop"));
    let mut children = Vec::new();
    for &pid in pids {
        let mut cmd = Command::new(exe);
        cmd.env("LPF_PID", pid.to_string())
            .env("LPF_NPROCS", nprocs.to_string())
            .env("LPF_MASTER", format!("127.0.0.1:{port}"))
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        if let Some(ms) = timeout_ms {
            cmd.env("LPF_INIT_TIMEOUT_MS", ms.to_string());
        }
        children.push(cmd.spawn().map_err(|e| e.to_string())?);
    }
    children
        .into_iter()
        .map(|c| {
            let out = c.wait_with_output().map_err(|e| e.to_string())?;
            let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
            Ok((out.status.code().unwrap_or(-1), text))
        })
        .collect()
}

fn criterion_8() -> Verdict {
    check(DEFAULT_INIT_TIMEOUT == Duration::from_secs(30), || {
        format!("default init timeout is {DEFAULT_INIT_TIMEOUT:?}")
    })?;
    let port = lpf_cli::free_port().map_err(|e| e.to_string())?;
    let runs = spawn_interop(&[0, 1, 2, 3], 4, port, None)?;
    for (pid, (code, text)) in runs.iter().enumerate() {
        check(*code == 0, || format!("process {pid} exited {code}: {text}"))?;
    }
    let verified = runs[0].1.matches("verified").count();
    check(verified == 2, || format!("root reported {verified} verified hooks: {}", runs[0].1))?;

    let port = lpf_cli::free_port().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let runs = spawn_interop(&[0, 1, 2], 4, port, Some(2000))?;
    let t = start.elapsed();
    for (pid, (code, text)) in runs.iter().enumerate() {
        // Exit code 3 means the run failed with a Timeout error.
        check(*code == 3 && text.contains("Timeout"), || format!("process {pid} exited {code}: {text}"))?;
    }
    check(t >= Duration::from_millis(1900) && t < Duration::from_secs(15), || {
        format!("absent peer detected after {t:?}")
    })?;
    Ok(format!(
        "4 OS processes hooked twice with verified total exchanges and finalized; absent peer gave Timeout on all 3 others after {:.1} s (2 s override of the 30 s default)",
        t.as_secs_f64()
    ))
}

fn main() {
    let mut real = None;
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Verdict + '_>)> = vec![
        ("1 primitive semantics (bootstrap)", Box::new(criterion_1)),
        ("2 CRCW oracle equivalence", Box::new(criterion_2)),
        ("3 exchange equivalence and bounds", Box::new(criterion_3)),
        ("4 model compliance", Box::new(|| criterion_4(&mut real))),
    ];
    let mut failed = 0;
    let mut report = |name: &str, v: Verdict| match v {
        Ok(msg) => println!("PASS criterion {name}: {msg}"),
        Err(msg) => {
            failed += 1;
            println!("FAIL criterion {name}: {msg}");
        }
    };
    for (name, f) in criteria {
        let v = f();
        report(name, v);
    }
    report("5 estimator exactness", criterion_5(&real));
    report("6 side-effect-free mitigable errors", criterion_6());
    report("7 FFT correctness", criterion_7());
    report("8 interoperability over TCP", criterion_8());
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
