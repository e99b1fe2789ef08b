//! Times the parallel FFT and, with `--check`, compares it to a sequential
//! reference.

use std::sync::Mutex;
use std::time::Instant;

use clap::Parser;
use lpf::{Args, Context, MsgAttr, Result, SyncAttr};
use lpf_algos::{dft_oracle, fft_forward, fft_local, DistVector, Distribution};
use lpf_cli::{group_exit_code, run, Backend, Role};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};

/// Above this length the reference is the sequential FFT, not the direct DFT.
const ORACLE_MAX: usize = 1 << 13;

#[derive(Parser)]
#[command(about = "Parallel FFT of a random vector")]
struct Cli {
    #[arg(long, value_enum, default_value = "shm")]
    backend: Backend,
    /// log2 of the vector length.
    #[arg(short = 'n', long = "log2n", default_value_t = 16)]
    log2n: u32,
    #[arg(short = 'p', long, default_value_t = 4)]
    procs: u32,
    #[arg(long)]
    check: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    reps: u32,
}

fn input(n: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect()
}

/// Sums `(|y - ref|^2, |ref|^2)` over all processes on the root.
fn reduce_error(ctx: &mut Context, diff2: f64, norm2: f64) -> Result<(f64, f64)> {
    let p = ctx.nprocs() as usize;
    ctx.resize_memory_register(ctx.registered_slots() + 2)?;
    ctx.resize_message_queue(p)?;
    ctx.sync(SyncAttr::Default)?;
    let mine = ctx.register_local(16)?;
    let all = ctx.register_global(16 * p)?;
    ctx.slot_mut(mine)[..8].copy_from_slice(&diff2.to_le_bytes());
    ctx.slot_mut(mine)[8..].copy_from_slice(&norm2.to_le_bytes());
    let me = ctx.pid() as u64;
    ctx.put(mine, 0, 0, all, 16 * me, 16, MsgAttr::Default)?;
    ctx.sync(SyncAttr::Default)?;
    let sums = ctx.slot(all).chunks_exact(16).fold((0.0, 0.0), |(d, n), c| {
        (
            d + f64::from_le_bytes(c[..8].try_into().unwrap()),
            n + f64::from_le_bytes(c[8..].try_into().unwrap()),
        )
    });
    ctx.deregister(mine)?;
    ctx.deregister(all)?;
    Ok(sums)
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    let n = 1usize << cli.log2n;
    let report = Mutex::new(None);
    let spmd = |ctx: &mut Context, _: &mut Args| {
        let res = (|| -> Result<()> {
            let x = input(n, cli.seed);
            let v = DistVector::from_global(&x, ctx.nprocs(), ctx.pid(), Distribution::Cyclic);
            let mut times = Vec::new();
            let mut y = None;
            for _ in 0..cli.reps.max(1) {
                ctx.sync(SyncAttr::Default)?;
                let start = Instant::now();
                y = Some(fft_forward(ctx, &v)?);
                ctx.sync(SyncAttr::Default)?;
                times.push(start.elapsed().as_secs_f64());
            }
            let y = y.unwrap();
            let error = if cli.check {
                let reference = if n <= ORACLE_MAX {
                    dft_oracle(&x)
                } else {
                    let mut r = x.clone();
                    fft_local(&mut r);
                    r
                };
                let (mut d2, mut n2) = (0.0, 0.0);
                for (l, v) in y.local.iter().enumerate() {
                    let r = reference[y.global_index(l)];
                    d2 += (v - r).norm_sqr();
                    n2 += r.norm_sqr();
                }
                let (d, nn) = reduce_error(ctx, d2, n2)?;
                Some((d / nn).sqrt())
            } else {
                None
            };
            if ctx.pid() == 0 {
                let best = times.iter().copied().fold(f64::INFINITY, f64::min);
                *report.lock().unwrap() = Some((best, error));
            }
            Ok(())
        })();
        if let Err(e) = res {
            eprintln!("pid {}: {e}", ctx.pid());
        }
    };
    match run(cli.backend, cli.procs, spmd, &mut Args::new()) {
        Ok(Role::Launcher(st)) => std::process::exit(group_exit_code(&st)),
        Ok(Role::Worker) => {
            if let Some((t, err)) = report.into_inner().unwrap() {
                let flops = 5.0 * n as f64 * cli.log2n as f64;
                println!(
                    "n = 2^{} p = {}: {:.6} s ({:.1} Mflop/s)",
                    cli.log2n,
                    cli.procs,
                    t,
                    flops / t / 1e6
                );
                if let Some(e) = err {
                    let reference = if n <= ORACLE_MAX { "direct DFT" } else { "sequential FFT" };
                    println!("relative l2 error vs {reference}: {e:.3e}");
                    if !(e <= 1e-10) {
                        std::process::exit(1);
                    }
                }
            } else if !lpf_cli::launched() || std::env::var("LPF_PID").as_deref() == Ok("0") {
                std::process::exit(1);
            }
        }
        Err(e) => {
            eprintln!("lpf-fft: {e}");
            std::process::exit(1);
        }
    }
}
