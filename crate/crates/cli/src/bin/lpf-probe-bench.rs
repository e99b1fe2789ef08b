//! Measures g and l of a backend and writes the machine-parameters file
//! read by `probe`.

use std::path::PathBuf;
use std::sync::Mutex;

use clap::Parser;
use lpf::{Args, Context, STANDARD_WORD_SIZES};
use lpf_bench::measure::{DEFAULT_MSG_SIZE, DEFAULT_REPS, DEFAULT_WARMUP};
use lpf_bench::{
    calibrate, compliance, copy_rate, csv, default_n_max_bytes, write_params_file, Bench, Calibration,
    CalibrationOptions, Compliance, Measurement, Pattern, COMPLIANCE_R2,
};
use lpf_cli::{group_exit_code, run, Backend, Role};

#[derive(Parser)]
#[command(about = "Estimate the BSP constants g and l")]
struct Cli {
    #[arg(long, value_enum, default_value = "shm")]
    backend: Backend,
    #[arg(long, default_value_t = 1)]
    nprocs: u32,
    /// Word sizes in bytes; repeat the flag for several. Defaults to the
    /// standard sizes.
    #[arg(long = "word-size")]
    word_size: Vec<u64>,
    /// Largest per-process volume in bytes; four times the last-level cache
    /// over p by default.
    #[arg(long)]
    nmax: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_REPS)]
    reps: usize,
    #[arg(long, default_value_t = DEFAULT_WARMUP)]
    warmup: usize,
    #[arg(long, default_value = "total-exchange")]
    pattern: Pattern,
    /// Round-robin: message size in bytes.
    #[arg(long, default_value_t = DEFAULT_MSG_SIZE)]
    msg_size: u64,
    /// Round-robin: largest message count is 2^this.
    #[arg(long, default_value_t = 12)]
    max_log2_messages: u32,
    /// Machine-parameters file.
    #[arg(long, default_value = "machine.params")]
    out: PathBuf,
    /// Plotting data; `<out>.csv` by default.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

enum Outcome {
    Calibrated(Vec<Calibration>),
    RoundRobin(Vec<Measurement>, Option<Compliance>),
}

fn verdict(c: &Option<Compliance>) -> String {
    match c {
        None => "no fit".into(),
        Some(c) if c.compliant => format!("affine (R^2 = {:.4})", c.fit.r2),
        Some(c) => {
            let (lo, hi) = c.deviating.unwrap_or((f64::NAN, f64::NAN));
            format!("NOT affine (R^2 = {:.4}); deviation over h in [{lo}, {hi}]", c.fit.r2)
        }
    }
}

/// `bench.csv` becomes `bench.w64.csv`.
fn per_word_path(path: &std::path::Path, w: u64) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.w{w}.{}", ext.to_string_lossy()),
        None => format!("{stem}.w{w}"),
    };
    path.with_file_name(name)
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    let words: Vec<u64> = if cli.word_size.is_empty() {
        STANDARD_WORD_SIZES.to_vec()
    } else {
        cli.word_size.clone()
    };
    let result = Mutex::new(None);
    let spmd = |ctx: &mut Context, _: &mut Args| {
        let p = ctx.nprocs();
        let res: Result<Outcome, Box<dyn std::error::Error>> = (|| match cli.pattern {
            Pattern::TotalExchange => {
                let n_max_bytes = cli.nmax.unwrap_or_else(|| default_n_max_bytes(p));
                let mut out = Vec::new();
                for (i, &w) in words.iter().enumerate() {
                    let opts = CalibrationOptions {
                        w,
                        n_max_bytes: n_max_bytes.max(w * (2 * p as u64 + 1)),
                        reps: cli.reps,
                        warmup: cli.warmup,
                        seed: cli.seed.wrapping_add(i as u64),
                    };
                    out.push(calibrate(ctx, &opts)?);
                }
                Ok(Outcome::Calibrated(out))
            }
            Pattern::RoundRobin => {
                let ns: Vec<u64> = (0..=cli.max_log2_messages).map(|k| 1u64 << k).collect();
                let mut b = Bench::new(ctx);
                let curve = b.roundrobin(&ns, cli.msg_size, cli.reps, cli.warmup, cli.seed)?;
                b.release()?;
                let pts: Vec<_> = curve.iter().map(|m| (m.h as f64, m.mean)).collect();
                let c = compliance(&pts, COMPLIANCE_R2);
                Ok(Outcome::RoundRobin(curve, c))
            }
        })();
        match res {
            Ok(o) if ctx.pid() == 0 => *result.lock().unwrap() = Some((p, o)),
            Ok(_) => {}
            Err(e) => eprintln!("pid {}: {e}", ctx.pid()),
        }
    };
    let role = match run(cli.backend, cli.nprocs, spmd, &mut Args::new()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("lpf-probe-bench: {e}");
            std::process::exit(1);
        }
    };
    if let Role::Launcher(st) = role {
        std::process::exit(group_exit_code(&st));
    }
    let Some((p, outcome)) = result.into_inner().unwrap() else {
        if !lpf_cli::launched() || std::env::var("LPF_PID").as_deref() == Ok("0") {
            std::process::exit(1);
        }
        return;
    };
    let csv_path = cli
        .csv
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.csv", cli.out.display())));
    let write = |path: &PathBuf, text: String| {
        if let Err(e) = std::fs::write(path, text) {
            eprintln!("lpf-probe-bench: {}: {e}", path.display());
            std::process::exit(1);
        }
    };
    match outcome {
        Outcome::Calibrated(cals) => {
            println!("p = {p}, memory copy rate {:.2} GB/s", copy_rate(1 << 24) / 1e9);
            for c in &cals {
                println!(
                    "w = {:>8} B: g = {:.4e} s/word, l = {:.4e} s, n_max = {} words; {}",
                    c.w,
                    c.g,
                    c.l,
                    c.n_max,
                    verdict(&c.compliance)
                );
            }
            let mut per_w = Vec::new();
            for c in &cals {
                if c.g > 0.0 && c.l >= 0.0 {
                    per_w.push((c.w, c.g, c.l));
                } else {
                    eprintln!("lpf-probe-bench: w = {}: estimate is not physical, left out of the file", c.w);
                }
            }
            if let Err(e) = write_params_file(&cli.out, p, &per_w) {
                eprintln!("lpf-probe-bench: {}: {e}", cli.out.display());
                std::process::exit(1);
            }
            let mut written = Vec::new();
            for c in &cals {
                let path = if cals.len() == 1 {
                    csv_path.clone()
                } else {
                    per_word_path(&csv_path, c.w)
                };
                write(&path, csv(&c.curve));
                written.push(path.display().to_string());
            }
            println!("wrote {} and {}", cli.out.display(), written.join(", "));
        }
        Outcome::RoundRobin(curve, c) => {
            for m in &curve {
                println!("n = {:>5}: {:.4e} s +- {:.1e}", m.h, m.mean, m.ci95);
            }
            println!("round-robin {} B messages: {}", cli.msg_size, verdict(&c));
            write(&csv_path, csv(&curve));
            println!("wrote {}", csv_path.display());
        }
    }
}
