//! A BSP communication layer with one-sided puts and gets.
//!
//! Processes run an SPMD function on a [`Context`]. Communication is queued
//! with [`Context::put`] and [`Context::get`] and completed, for all
//! processes at once, by the collective [`Context::sync`]. The cost of a
//! sync is modelled as `h g + l`, where `h` is the largest number of bytes
//! any process sends or receives and `(g, l)` come from [`Context::probe`].
//!
//! ```
//! use lpf::{Args, Context, MsgAttr, SyncAttr};
//!
//! let mut args = Args::new();
//! Context::root()
//!     .exec(4, |ctx, _| {
//!         ctx.resize_memory_register(1).unwrap();
//!         ctx.resize_message_queue(1).unwrap();
//!         ctx.sync(SyncAttr::Default).unwrap();
//!         let s = ctx.register_global(4).unwrap();
//!         let me = ctx.pid();
//!         ctx.slot_mut(s).copy_from_slice(&me.to_le_bytes());
//!         let next = (ctx.pid() + 1) % ctx.nprocs();
//!         ctx.put(s, 0, next, s, 0, 0, MsgAttr::Default).unwrap();
//!         ctx.sync(SyncAttr::Default).unwrap();
//!     }, &mut args)
//!     .unwrap();
//! ```
//!
//! Two backends exist: threads sharing one address space ([`Context::exec`])
//! and processes connected over TCP ([`tcp::init_over_tcp`] and
//! [`tcp::InitHandle::hook`]).

mod config;
mod context;
pub mod engine;
mod error;
pub mod params;
mod shm;
mod slots;
pub mod tcp;
mod transport;
mod types;

pub use config::{Config, DEFAULT_INIT_TIMEOUT};
pub use context::Context;
pub use engine::{ExchangeAlgorithm, ExchangeStats, ProcessTraffic, SyncStats};
pub use error::{Error, FatalKind, Mitigable, Result};
pub use params::{MachineParams, ParamsSource, WordParams, STANDARD_WORD_SIZES};
pub use tcp::{init_over_tcp, init_over_tcp_with, InitHandle};
pub use transport::{Transport, TransportCounters};
pub use types::{register_symbol, Args, MsgAttr, Pid, Slot, SpmdFn, Symbol, SyncAttr, MAX_P, ROOT_PID};
