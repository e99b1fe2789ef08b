//! Measures the BSP machine constants `g` and `l` of an lpf backend.
//!
//! A total exchange is timed over a geometric grid of h-relations up to
//! `n_max`; `g` and `l` follow from the closed-form estimators in
//! [`estimate_params`], and an affine least-squares fit of the whole curve
//! decides whether the backend behaves as the BSP cost model predicts.

pub mod cache;
pub mod estimate;
pub mod measure;
pub mod stats;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use lpf::params::ParamsError;
use lpf::{Context, MachineParams};

pub use estimate::{compliance, estimate_params, h_grid, Compliance, EstimateError, COMPLIANCE_R2};
pub use measure::{run_roundrobin_small, run_total_exchange, Bench, Degradation, Measurement, Pattern};
pub use stats::AffineFit;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Lpf(#[from] lpf::Error),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Params(#[from] ParamsError),
}

/// Default per-process volume in bytes: four times the aggregate last-level
/// cache, divided over the processes.
pub fn default_n_max_bytes(p: u32) -> u64 {
    (4 * cache::aggregate_llc_bytes()).div_ceil(p.max(1) as u64)
}

#[derive(Debug, Clone)]
pub struct CalibrationOptions {
    /// Word size in bytes.
    pub w: u64,
    /// Largest per-process volume in bytes.
    pub n_max_bytes: u64,
    pub reps: usize,
    pub warmup: usize,
    pub seed: u64,
}

/// `g` and `l` for one word size, with the curve they came from.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub p: u32,
    pub w: u64,
    /// Largest h, in words.
    pub n_max: u64,
    pub curve: Vec<Measurement>,
    /// Seconds per word.
    pub g: f64,
    /// Seconds.
    pub l: f64,
    pub compliance: Option<Compliance>,
}

/// Times a total exchange over [`h_grid`] and estimates `(g, l)`. Collective.
pub fn calibrate(ctx: &mut Context, opts: &CalibrationOptions) -> Result<Calibration, BenchError> {
    let p = ctx.nprocs();
    let n_max = (opts.n_max_bytes / opts.w).max(2 * p as u64 + 1);
    let grid = h_grid(p as u64, n_max);
    let mut bench = Bench::new(ctx);
    let curve = bench.total_exchange(&grid, opts.w, opts.reps, opts.warmup, opts.seed)?;
    bench.release()?;
    let t: BTreeMap<u64, f64> = curve.iter().map(|m| (m.h, m.mean)).collect();
    let (g, l) = estimate_params(&t, p as u64, n_max)?;
    let points: Vec<(f64, f64)> = curve.iter().map(|m| (m.h as f64, m.mean)).collect();
    Ok(Calibration {
        p,
        w: opts.w,
        n_max,
        curve,
        g,
        l,
        compliance: compliance(&points, COMPLIANCE_R2),
    })
}

/// Writes the machine-parameters file read by [`Context::probe`]. Fails
/// without writing when an entry has `g <= 0` or `l < 0`.
pub fn write_params_file(path: &Path, p: u32, per_w: &[(u64, f64, f64)]) -> Result<(), ParamsError> {
    let mut params = MachineParams::new(p);
    for &(w, g, l) in per_w {
        params.try_set(w, g, l)?;
    }
    params.write(path)
}

/// `h,mean_s,ci95_s` rows for plotting.
pub fn csv(measurements: &[Measurement]) -> String {
    let mut out = String::from("h,mean_s,ci95_s\n");
    for m in measurements {
        let _ = writeln!(out, "{},{:e},{:e}", m.h, m.mean, m.ci95);
    }
    out
}

/// Bytes per second of a plain in-memory copy of `bytes` bytes; reported for
/// context next to `g`.
pub fn copy_rate(bytes: usize) -> f64 {
    let src = vec![1u8; bytes];
    let mut dst = vec![0u8; bytes];
    dst.copy_from_slice(&src);
    let start = std::time::Instant::now();
    let mut n = 0;
    while start.elapsed().as_secs_f64() < 0.05 {
        dst.copy_from_slice(&src);
        std::hint::black_box(&mut dst);
        n += 1;
    }
    (n * bytes) as f64 / start.elapsed().as_secs_f64()
}
