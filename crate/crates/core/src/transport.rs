//! Point-to-point channel abstraction the superstep engine runs on.

use std::any::Any;

use crate::engine::exchange;
use crate::error::Result;
use crate::slots::TableView;
use crate::types::Pid;

/// Instrumentation kept by every transport.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TransportCounters {
    /// Frames handed to another process (self-delivery excluded).
    pub messages_sent: u64,
    /// Bytes in those frames.
    pub bytes_sent: u64,
    /// User payload bytes written into this process's registered memory.
    pub payload_bytes_written: u64,
    /// Payload copies this process performed into its own memory.
    pub payload_copies: u64,
    /// Barriers completed.
    pub barriers: u64,
}

/// One process's endpoint of a group of `nprocs` communicating processes.
///
/// Frames between a pair of processes are delivered in order. Collective
/// helpers (barrier, exchange) must be entered by every process of the group
/// in the same sequence.
pub trait Transport: Send {
    fn pid(&self) -> Pid;
    fn nprocs(&self) -> u32;

    /// Sends one frame to `to`. Sending to oneself queues the frame locally.
    fn send(&mut self, to: Pid, frame: Vec<u8>) -> Result<()>;

    /// Blocks until the next frame from `from` arrives.
    fn recv(&mut self, from: Pid) -> Result<Vec<u8>>;

    /// Blocks until every process has entered; returns whether all of them
    /// passed `ok = true`.
    fn barrier(&mut self, ok: bool) -> Result<bool> {
        exchange::tree_barrier(self, ok, exchange::DEFAULT_TREE_FANIN)
    }

    /// Total exchange of one block per destination, using direct messages.
    fn exchange(&mut self, blocks: Vec<Vec<u8>>) -> Result<Vec<Vec<u8>>> {
        exchange::exchange_direct(self, blocks).map(|(r, _)| r)
    }

    fn counters(&self) -> TransportCounters;

    /// Adds to the payload counters after copies into local memory.
    fn record_payload(&mut self, bytes: u64, copies: u64);
}

/// How payload reaches its destination during a superstep.
pub(crate) enum DataPath<'a> {
    /// The destination reads source memory directly from the peer's
    /// published slot table and copies it into its own regions.
    DestinationCopy(&'a dyn SharedDirectory),
    /// Sources are told what to send and push bytes over the channel.
    SourcePush,
}

/// Slot tables published by the processes of one shared address space.
pub(crate) trait SharedDirectory {
    fn publish(&self, pid: Pid, view: TableView);
    fn view(&self, pid: Pid) -> TableView;
}

/// Transport as seen by a context.
pub(crate) trait Backend: Transport + 'static {
    fn data_path(&self) -> DataPath<'_> {
        DataPath::SourcePush
    }

    fn into_any(self: Box<Self>) -> Box<dyn Any + Send>;
}
