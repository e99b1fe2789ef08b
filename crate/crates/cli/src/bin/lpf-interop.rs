//! Processes started independently (for instance by `lpf-run`) bind once,
//! run two total exchanges in two separate hooks, and finalize.

use clap::Parser;
use lpf::{Args, Context, InitHandle, MsgAttr, Result, SyncAttr};

#[derive(Parser)]
#[command(about = "Hook twice into processes started by a launcher")]
struct Cli {
    /// Bytes each process sends to every process per hook.
    #[arg(long, default_value_t = 64)]
    block: usize,
    /// Number of hooks.
    #[arg(long, default_value_t = 2)]
    hooks: u32,
}

fn pattern(round: u32, src: u32, dst: u32, i: usize) -> u8 {
    (round as usize * 31 + src as usize * 7 + dst as usize * 3 + i) as u8
}

fn total_exchange(ctx: &mut Context, round: u32, block: usize) -> Result<()> {
    let (me, p) = (ctx.pid(), ctx.nprocs());
    ctx.resize_memory_register(2)?;
    ctx.resize_message_queue(p as usize)?;
    ctx.sync(SyncAttr::Default)?;
    let send = ctx.register_global(block * p as usize)?;
    let recv = ctx.register_global(block * p as usize)?;
    for dst in 0..p {
        let part = &mut ctx.slot_mut(send)[dst as usize * block..][..block];
        for (i, b) in part.iter_mut().enumerate() {
            *b = pattern(round, me, dst, i);
        }
    }
    let b = block as u64;
    for dst in 0..p {
        ctx.put(send, dst as u64 * b, dst, recv, me as u64 * b, b, MsgAttr::Default)?;
    }
    ctx.sync(SyncAttr::Default)?;
    for src in 0..p {
        let part = &ctx.slot(recv)[src as usize * block..][..block];
        if part.iter().enumerate().any(|(i, &x)| x != pattern(round, src, me, i)) {
            return Err(lpf::Error::fatal(
                lpf::FatalKind::Protocol,
                format!("hook {round}: wrong bytes from process {src}"),
            ));
        }
    }
    ctx.deregister(send)?;
    ctx.deregister(recv)?;
    Ok(())
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    let outcome = (|| -> Result<()> {
        let mut init = InitHandle::from_env()?;
        for round in 0..cli.hooks {
            let mut res = Ok(());
            init.hook(|ctx, _| res = total_exchange(ctx, round, cli.block), &mut Args::new())?;
            res?;
            if init.pid() == 0 {
                println!("hook {round}: total exchange over {} processes verified", init.nprocs());
            }
        }
        init.finalize()
    })();
    if let Err(e) = outcome {
        eprintln!("lpf-interop: {e}");
        std::process::exit(match e.fatal_kind() {
            Some(lpf::FatalKind::Timeout) => 3,
            _ => 1,
        });
    }
}
