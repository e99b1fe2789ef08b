use std::fmt;

/// Why a call failed in a way the caller can recover from locally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mitigable {
    /// A slot table or message queue is full at its active capacity.
    OutOfCapacity,
    /// A buffer reservation could not be satisfied.
    OutOfMemory,
}

impl fmt::Display for Mitigable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mitigable::OutOfCapacity => f.write_str("out of capacity"),
            Mitigable::OutOfMemory => f.write_str("out of memory"),
        }
    }
}

/// Coarse classification of fatal failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FatalKind {
    /// A peer aborted, exited its SPMD section, or its connection dropped.
    PeerLost,
    /// A bounded wait expired.
    Timeout,
    /// Malformed or unexpected data arrived on a channel.
    Protocol,
    /// A call violated its contract (bad slot, range, pid, ...).
    IllegalArgument,
    /// Another process reported a failure in the same collective.
    RemoteFailure,
    /// Processes or threads could not be created.
    Spawn,
    /// Operating system I/O failure.
    Io,
    /// The handle was finalized.
    Finalized,
}

/// Error returned by every runtime primitive.
///
/// A `Mitigable` error never has side effects; a `Fatal` one means the
/// current context should be cleaned up and its SPMD function exited.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    #[error("mitigable error: {0}")]
    Mitigable(Mitigable),
    #[error("fatal error ({kind:?}): {detail}")]
    Fatal { kind: FatalKind, detail: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn fatal(kind: FatalKind, detail: impl Into<String>) -> Self {
        Error::Fatal {
            kind,
            detail: detail.into(),
        }
    }

    pub(crate) fn illegal(detail: impl Into<String>) -> Self {
        Error::fatal(FatalKind::IllegalArgument, detail)
    }

    pub(crate) fn protocol(detail: impl Into<String>) -> Self {
        Error::fatal(FatalKind::Protocol, detail)
    }

    pub(crate) fn peer_lost(detail: impl Into<String>) -> Self {
        Error::fatal(FatalKind::PeerLost, detail)
    }

    pub(crate) fn io(context: &str, err: std::io::Error) -> Self {
        let kind = match err.kind() {
            std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock => FatalKind::Timeout,
            std::io::ErrorKind::UnexpectedEof
            | std::io::ErrorKind::ConnectionReset
            | std::io::ErrorKind::ConnectionAborted
            | std::io::ErrorKind::BrokenPipe => FatalKind::PeerLost,
            _ => FatalKind::Io,
        };
        Error::fatal(kind, format!("{context}: {err}"))
    }

    pub fn is_fatal(&self) -> bool {
        matches!(self, Error::Fatal { .. })
    }

    pub fn is_mitigable(&self) -> bool {
        matches!(self, Error::Mitigable(_))
    }

    pub fn fatal_kind(&self) -> Option<FatalKind> {
        match self {
            Error::Fatal { kind, .. } => Some(*kind),
            Error::Mitigable(_) => None,
        }
    }
}

impl From<Mitigable> for Error {
    fn from(m: Mitigable) -> Self {
        Error::Mitigable(m)
    }
}
