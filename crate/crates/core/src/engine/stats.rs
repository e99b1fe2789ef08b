//! h-relation accounting.

/// Per-process traffic of one superstep, in bytes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ProcessTraffic {
    pub sent: u64,
    pub received: u64,
    pub sent_small: u64,
    pub received_small: u64,
    /// Requests initiated by this process.
    pub requests_out: u64,
    /// Requests naming this process as the remote side.
    pub requests_in: u64,
}

impl ProcessTraffic {
    pub(crate) fn add_sent(&mut self, bytes: u64, small_limit: u64) {
        self.sent += bytes;
        if bytes <= small_limit {
            self.sent_small += bytes;
        }
    }

    pub(crate) fn add_received(&mut self, bytes: u64, small_limit: u64) {
        self.received += bytes;
        if bytes <= small_limit {
            self.received_small += bytes;
        }
    }

    pub(crate) const WIRE_LEN: usize = 48;

    pub(crate) fn encode(&self) -> Vec<u8> {
        [
            self.sent,
            self.received,
            self.sent_small,
            self.received_small,
            self.requests_out,
            self.requests_in,
        ]
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect()
    }

    pub fn decode(buf: &[u8]) -> Option<Self> {
        if buf.len() != Self::WIRE_LEN {
            return None;
        }
        let f = |i: usize| u64::from_le_bytes(buf[8 * i..8 * i + 8].try_into().unwrap());
        Some(ProcessTraffic {
            sent: f(0),
            received: f(1),
            sent_small: f(2),
            received_small: f(3),
            requests_out: f(4),
            requests_in: f(5),
        })
    }
}

/// h-relation of a superstep: `h = max_s max(t_s, r_s)`, in bytes.
///
/// A request counts as small when its size is at most `small_limit` bytes;
/// `h_small` and `h_big` are the h-relations of the small and big requests.
/// `m` is the largest number of requests any process issues or is subject to.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SyncStats {
    pub per_process: Vec<ProcessTraffic>,
    pub h: u64,
    pub h_small: u64,
    pub h_big: u64,
    pub m: u64,
    pub small_limit: u64,
}

impl SyncStats {
    pub fn from_traffic(per_process: Vec<ProcessTraffic>, small_limit: u64) -> Self {
        let mut s = SyncStats {
            small_limit,
            ..Default::default()
        };
        for t in &per_process {
            s.h = s.h.max(t.sent).max(t.received);
            s.h_small = s.h_small.max(t.sent_small).max(t.received_small);
            s.h_big = s
                .h_big
                .max(t.sent - t.sent_small)
                .max(t.received - t.received_small);
            s.m = s.m.max(t.requests_out).max(t.requests_in);
        }
        s.per_process = per_process;
        s
    }

    /// `h` in words of `w` bytes, rounded up.
    pub fn words(&self, w: u64) -> u64 {
        self.h.div_ceil(w)
    }

    pub fn sent(&self, pid: u32) -> u64 {
        self.per_process[pid as usize].sent
    }

    pub fn received(&self, pid: u32) -> u64 {
        self.per_process[pid as usize].received
    }
}
