//! Collectives built from puts, gets and one sync.

use lpf::{Context, Error, FatalKind, MsgAttr, Pid, Result, Slot, SyncAttr};

/// Error code meaning success.
pub const OK: i32 = 0;

/// Copies `size` bytes at the start of `slot` from `root` to every process.
/// Collective; `slot` is global, and the root's queue must hold the `p - 1`
/// gets it serves.
pub fn broadcast(ctx: &mut Context, root: Pid, slot: Slot, size: u64) -> Result<()> {
    if root >= ctx.nprocs() {
        return Err(Error::fatal(FatalKind::IllegalArgument, format!("root {root} out of range")));
    }
    if ctx.pid() != root && size > 0 {
        ctx.get(root, slot, 0, slot, 0, size, MsgAttr::Default)?;
    }
    ctx.sync(SyncAttr::Default)
}

/// Agrees on one error code across all processes in a single superstep.
///
/// Every process whose `local_error` is not [`OK`] writes it into the global
/// error of every process; overlapping writes resolve in the fixed conflict
/// order, so all processes read the same erring process's code. Collective;
/// needs room for two slots and `p` queued messages.
pub fn error_allreduce(ctx: &mut Context, local_error: i32) -> Result<i32> {
    let lerr = ctx.register_local(4)?;
    let gerr = match ctx.register_global(4) {
        Ok(s) => s,
        Err(e) => {
            ctx.deregister(lerr)?;
            return Err(e);
        }
    };
    ctx.slot_mut(lerr).copy_from_slice(&local_error.to_le_bytes());
    ctx.slot_mut(gerr).copy_from_slice(&OK.to_le_bytes());
    let res = (|| {
        if local_error != OK {
            for k in 0..ctx.nprocs() {
                ctx.put(lerr, 0, k, gerr, 0, 4, MsgAttr::Default)?;
            }
        }
        ctx.sync(SyncAttr::Default)?;
        Ok(i32::from_le_bytes(ctx.slot(gerr).try_into().unwrap()))
    })();
    ctx.deregister(lerr)?;
    ctx.deregister(gerr)?;
    res
}
