//! The bootstrap example end to end: the root's problem size is shared,
//! checked on every process, and the processes agree on one error code.

use std::sync::Mutex;

use clap::Parser;
use lpf::Args;
use lpf_algos::{bootstrap, encode_dims, OK};
use lpf_cli::{group_exit_code, run, Backend, Role};

#[derive(Parser)]
#[command(about = "Share a problem size and agree on an error code")]
struct Cli {
    #[arg(long, value_enum, default_value = "shm")]
    backend: Backend,
    #[arg(short = 'p', long, default_value_t = 4)]
    procs: u32,
    /// Rows of the problem; split over the processes.
    #[arg(long, default_value_t = 1000, allow_negative_numbers = true)]
    rows: i32,
    #[arg(long, default_value_t = 1000, allow_negative_numbers = true)]
    cols: i32,
    /// Make this process report an error of its own; may be repeated.
    #[arg(long)]
    fail_pid: Vec<u32>,
    /// A failing process reports this plus its pid.
    #[arg(long, default_value_t = 100)]
    fail_code: i32,
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    let mut args = Args::new()
        .with_input(encode_dims(cli.rows, cli.cols))
        .with_output([0u8; 4]);
    let lines = Mutex::new(Vec::new());
    let spmd = |ctx: &mut lpf::Context, args: &mut Args| {
        let fail = |s: u32| cli.fail_pid.contains(&s).then_some(cli.fail_code + s as i32);
        match bootstrap(ctx, args, fail) {
            Ok(b) => {
                let line = format!(
                    "pid {}/{}: {} x {} local, local error {}, global error {}",
                    ctx.pid(),
                    ctx.nprocs(),
                    b.rows,
                    b.cols,
                    b.local_error,
                    b.global_error
                );
                lines.lock().unwrap().push((ctx.pid(), line));
            }
            Err(e) => eprintln!("pid {}: {e}", ctx.pid()),
        }
    };
    match run(cli.backend, cli.procs, spmd, &mut args) {
        Ok(Role::Launcher(st)) => std::process::exit(group_exit_code(&st)),
        Ok(Role::Worker) => {
            let mut lines = lines.into_inner().unwrap();
            lines.sort();
            for (_, l) in lines {
                println!("{l}");
            }
            let gerr = i32::from_le_bytes(args.output[..].try_into().unwrap());
            if !lpf_cli::launched() || std::env::var("LPF_PID").as_deref() == Ok("0") {
                println!("global error {gerr}{}", if gerr == OK { " (ok)" } else { "" });
            }
        }
        Err(e) => {
            eprintln!("lpf-hello: {e}");
            std::process::exit(1);
        }
    }
}
