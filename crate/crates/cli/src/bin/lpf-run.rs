//! Starts `-n` local copies of a program that join through `InitHandle::from_env`.

use std::ffi::OsString;
use std::path::Path;
use std::time::Duration;

use clap::Parser;
use lpf_cli::{free_port, group_exit_code, spawn_group, wait_group};

#[derive(Parser)]
#[command(about = "Launch an lpf program on local processes")]
struct Cli {
    /// Number of processes.
    #[arg(short = 'n', long = "nprocs", default_value_t = 1)]
    n: u32,
    /// Master port; a free one is chosen by default.
    #[arg(long)]
    port: Option<u16>,
    /// Seconds to let the other processes finish after one fails.
    #[arg(long, default_value_t = 35)]
    grace: u64,
    /// Program and its arguments, after `--`.
    #[arg(last = true, required = true)]
    command: Vec<OsString>,
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    if cli.n == 0 {
        eprintln!("lpf-run: -n must be positive");
        std::process::exit(2);
    }
    let status = free_port()
        .map(|p| cli.port.unwrap_or(p))
        .and_then(|port| spawn_group(Path::new(&cli.command[0]), &cli.command[1..], cli.n, port))
        .and_then(|children| wait_group(children, Duration::from_secs(cli.grace)));
    match status {
        Ok(st) => {
            for (pid, s) in st.iter().enumerate() {
                if !s.success() {
                    eprintln!("lpf-run: process {pid} exited with {s}");
                }
            }
            std::process::exit(group_exit_code(&st));
        }
        Err(e) => {
            eprintln!("lpf-run: {e}");
            std::process::exit(1);
        }
    }
}
