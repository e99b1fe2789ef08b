//! Shared plumbing for the command-line tools: choosing a backend and
//! launching local processes for the TCP one.

use std::ffi::OsString;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, ExitStatus};
use std::time::{Duration, Instant};

use lpf::{Args, Config, Context, InitHandle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Backend {
    /// Threads in this process.
    Shm,
    /// One OS process per pid, connected over TCP on localhost.
    Tcp,
}

/// Environment variables a launched process reads.
pub const ENV_PID: &str = "LPF_PID";
pub const ENV_NPROCS: &str = "LPF_NPROCS";
pub const ENV_MASTER: &str = "LPF_MASTER";

/// A free localhost port, as reported by the kernel for a throwaway bind.
pub fn free_port() -> std::io::Result<u16> {
    Ok(TcpListener::bind("127.0.0.1:0")?.local_addr()?.port())
}

/// Starts `p` copies of `program` with the pid, process count and master
/// address in their environment. Process 0 is the master.
pub fn spawn_group(program: &Path, args: &[OsString], p: u32, port: u16) -> std::io::Result<Vec<Child>> {
    let mut children = Vec::with_capacity(p as usize);
    for pid in 0..p {
        let child = Command::new(program)
            .args(args)
            .env(ENV_PID, pid.to_string())
            .env(ENV_NPROCS, p.to_string())
            .env(ENV_MASTER, format!("127.0.0.1:{port}"))
            .spawn();
        match child {
            Ok(c) => children.push(c),
            Err(e) => {
                kill_all(&mut children);
                return Err(e);
            }
        }
    }
    Ok(children)
}

fn kill_all(children: &mut [Child]) {
    for c in children {
        let _ = c.kill();
        let _ = c.wait();
    }
}

/// Waits for every child. Once one fails, the others get `grace` to finish
/// on their own before they are killed.
pub fn wait_group(mut children: Vec<Child>, grace: Duration) -> std::io::Result<Vec<ExitStatus>> {
    let mut status: Vec<Option<ExitStatus>> = vec![None; children.len()];
    let mut failed_at: Option<Instant> = None;
    loop {
        for (c, s) in children.iter_mut().zip(status.iter_mut()) {
            if s.is_none() {
                if let Some(st) = c.try_wait()? {
                    if !st.success() && failed_at.is_none() {
                        failed_at = Some(Instant::now());
                    }
                    *s = Some(st);
                }
            }
        }
        if status.iter().all(Option::is_some) {
            return Ok(status.into_iter().map(Option::unwrap).collect());
        }
        if failed_at.is_some_and(|t| t.elapsed() > grace) {
            for (c, s) in children.iter_mut().zip(status.iter_mut()) {
                if s.is_none() {
                    let _ = c.kill();
                    *s = Some(c.wait()?);
                }
            }
        }
        std::thread::sleep(Duration::from_millis(5));
    }
}

/// Whether this process was started by a launcher.
pub fn launched() -> bool {
    std::env::var_os(ENV_PID).is_some()
}

/// How a call to [`run`] ended on this process.
#[derive(Debug)]
pub enum Role {
    /// The SPMD function ran here.
    Worker,
    /// This process only launched and awaited the workers.
    Launcher(Vec<ExitStatus>),
}

/// Runs `spmd` on `p` processes of `backend`.
///
/// On TCP, a process not started by a launcher re-executes itself `p` times
/// with the same arguments and waits; the copies then run `spmd` through
/// one hook each. `args` reaches every process on TCP and only the root
/// under shared memory.
pub fn run<F>(backend: Backend, p: u32, spmd: F, args: &mut Args) -> Result<Role, Box<dyn std::error::Error>>
where
    F: Fn(&mut Context, &mut Args) + Sync,
{
    match backend {
        Backend::Shm => {
            let config = Config {
                max_procs: p,
                ..Config::from_env()
            };
            Context::root_with(config).exec(p, spmd, args)?;
            Ok(Role::Worker)
        }
        Backend::Tcp if launched() => {
            let mut init = InitHandle::from_env()?;
            init.hook(spmd, args)?;
            init.finalize()?;
            Ok(Role::Worker)
        }
        Backend::Tcp => {
            let exe = std::env::current_exe()?;
            let argv: Vec<OsString> = std::env::args_os().skip(1).collect();
            let children = spawn_group(&exe, &argv, p, free_port()?)?;
            Ok(Role::Launcher(wait_group(children, Duration::from_secs(35))?))
        }
    }
}

/// Process exit code for a launcher: zero only when every worker succeeded.
pub fn group_exit_code(status: &[ExitStatus]) -> i32 {
    if status.iter().all(ExitStatus::success) {
        0
    } else {
        1
    }
}
