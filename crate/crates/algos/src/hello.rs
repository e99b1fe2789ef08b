//! The bootstrap pattern: share the problem size from the root, check it
//! locally, and agree on an error code, all with four registered words.

use lpf::{Args, Context, MsgAttr, Result, SyncAttr, ROOT_PID};

use crate::collectives::OK;

/// Local error code for a problem too small to give every process work.
pub const ILLEGAL_INPUT: i32 = 1;

/// Outcome of [`bootstrap`] on one process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bootstrap {
    /// Rows owned by this process: `(mdim0 + p - s - 1) / p`.
    pub rows: i64,
    pub cols: i64,
    pub local_error: i32,
    pub global_error: i32,
}

/// Encodes a problem size as the root's input.
pub fn encode_dims(m: i32, n: i32) -> [u8; 8] {
    let mut out = [0; 8];
    out[..4].copy_from_slice(&m.to_le_bytes());
    out[4..].copy_from_slice(&n.to_le_bytes());
    out
}

/// Runs the bootstrap on every process. The root reads the two `i32`
/// dimensions from `args.input`; others fetch them with a get. `fail`
/// lets a process override its local error, for injecting faults. When the
/// root's `args.output` is four bytes long, the agreed error is written
/// there.
pub fn bootstrap(ctx: &mut Context, args: &mut Args, fail: impl Fn(u32) -> Option<i32>) -> Result<Bootstrap> {
    let p = ctx.nprocs();
    ctx.resize_memory_register(3)?;
    ctx.resize_message_queue(2 * p as usize)?;
    ctx.sync(SyncAttr::Default)?;

    let mut lerr = [0u8; 4];
    let s_lerr = ctx.register_local(4)?;
    let s_gerr = ctx.register_global(4)?;
    let s_mdim = ctx.register_global(8)?;
    if ctx.pid() == ROOT_PID {
        if args.input.len() != 8 {
            lerr = ILLEGAL_INPUT.to_le_bytes();
        } else {
            let input = args.input.clone();
            ctx.slot_mut(s_mdim).copy_from_slice(&input);
        }
    } else {
        ctx.get(ROOT_PID, s_mdim, 0, s_mdim, 0, 8, MsgAttr::Default)?;
    }
    ctx.sync(SyncAttr::Default)?;

    let dims = ctx.slot(s_mdim);
    let m = i32::from_le_bytes(dims[..4].try_into().unwrap()) as i64;
    let n = i32::from_le_bytes(dims[4..].try_into().unwrap()) as i64;
    let (s, p64) = (ctx.pid() as i64, p as i64);
    let rows = (m + p64 - s - 1).div_euclid(p64);
    if rows <= 0 || n <= 0 {
        lerr = ILLEGAL_INPUT.to_le_bytes();
    }
    if let Some(e) = fail(ctx.pid()) {
        lerr = e.to_le_bytes();
    }
    let local_error = i32::from_le_bytes(lerr);

    ctx.slot_mut(s_lerr).copy_from_slice(&lerr);
    ctx.slot_mut(s_gerr).copy_from_slice(&OK.to_le_bytes());
    if local_error != OK {
        for k in 0..p {
            ctx.put(s_lerr, 0, k, s_gerr, 0, 4, MsgAttr::Default)?;
        }
    }
    ctx.sync(SyncAttr::Default)?;
    let global_error = i32::from_le_bytes(ctx.slot(s_gerr).try_into().unwrap());

    for slot in [s_lerr, s_gerr, s_mdim] {
        ctx.deregister(slot)?;
    }
    if ctx.pid() == ROOT_PID && args.output.len() == 4 {
        args.output.copy_from_slice(&global_error.to_le_bytes());
    }
    Ok(Bootstrap {
        rows,
        cols: n,
        local_error,
        global_error,
    })
}
