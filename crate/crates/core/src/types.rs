use std::collections::HashMap;
use std::fmt;
use std::sync::{OnceLock, RwLock};

use crate::context::Context;

/// Process identifier within a context, in `0..nprocs`.
pub type Pid = u32;

/// The process that receives `exec` input and whose output is returned.
pub const ROOT_PID: Pid = 0;

/// Request as many processes as the backend offers.
pub const MAX_P: u32 = u32::MAX;

const LOCAL_BIT: u32 = 1 << 31;

/// Handle to a registered memory region.
///
/// Global slots are numbered by registration order, so the k-th global
/// registration names the same logical slot on every process. Local slots
/// live in a separate id space and can only be used on the initiating side
/// of a put or get.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Slot(u32);

impl Slot {
    pub(crate) const MAX_INDEX: u32 = LOCAL_BIT - 1;

    pub(crate) fn local(index: u32) -> Self {
        Slot(index | LOCAL_BIT)
    }

    pub(crate) fn global(index: u32) -> Self {
        Slot(index)
    }

    pub fn is_global(self) -> bool {
        self.0 & LOCAL_BIT == 0
    }

    pub fn index(self) -> u32 {
        self.0 & !LOCAL_BIT
    }

    /// Wire representation: bit 31 marks a local slot.
    pub fn to_raw(self) -> u32 {
        self.0
    }

    pub fn from_raw(raw: u32) -> Self {
        Slot(raw)
    }
}

impl fmt::Debug for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_global() {
            write!(f, "Slot(global {})", self.index())
        } else {
            write!(f, "Slot(local {})", self.index())
        }
    }
}

/// Message attribute. Only the default, which keeps every guarantee, exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum MsgAttr {
    #[default]
    Default,
}

impl MsgAttr {
    pub(crate) fn to_raw(self) -> u32 {
        0
    }

    /// Unknown attribute tokens are accepted and treated as the default.
    pub(crate) fn from_raw(_raw: u32) -> Self {
        MsgAttr::Default
    }
}

/// Sync attribute. Only the default exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SyncAttr {
    #[default]
    Default,
}

/// Signature of an SPMD entry point that can be named in [`Args::symbols`].
pub type SpmdFn = fn(&mut Context, &mut Args);

/// Name of an SPMD entry point registered in the process-wide symbol table.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Symbol(String);

fn registry() -> &'static RwLock<HashMap<String, SpmdFn>> {
    static REGISTRY: OnceLock<RwLock<HashMap<String, SpmdFn>>> = OnceLock::new();
    REGISTRY.get_or_init(Default::default)
}

impl Symbol {
    pub fn new(name: impl Into<String>) -> Self {
        Symbol(name.into())
    }

    pub fn name(&self) -> &str {
        &self.0
    }

    /// Looks the name up in this process's symbol table.
    pub fn resolve(&self) -> Option<SpmdFn> {
        registry().read().unwrap().get(&self.0).copied()
    }
}

/// Adds `f` to the process-wide symbol table under `name` and returns its symbol.
/// Every process that resolves the symbol must register it at startup.
pub fn register_symbol(name: &str, f: SpmdFn) -> Symbol {
    registry().write().unwrap().insert(name.to_owned(), f);
    Symbol::new(name)
}

/// Arguments passed to an SPMD function.
///
/// Under `exec` only the root process receives `input` and only the root's
/// `output` is copied back to the caller; symbols are passed to everyone.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Args {
    pub input: Vec<u8>,
    pub output: Vec<u8>,
    pub symbols: Vec<Symbol>,
}

impl Args {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_input(mut self, input: impl Into<Vec<u8>>) -> Self {
        self.input = input.into();
        self
    }

    pub fn with_output(mut self, output: impl Into<Vec<u8>>) -> Self {
        self.output = output.into();
        self
    }

    pub fn with_symbol(mut self, symbol: Symbol) -> Self {
        self.symbols.push(symbol);
        self
    }
}
