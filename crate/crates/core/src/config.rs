use std::sync::Arc;
use std::time::Duration;

use crate::engine::exchange::ExchangeAlgorithm;
use crate::params::MachineParams;

/// Runtime settings shared by a context and everything it spawns.
///
/// [`Config::from_env`] reads `LPF_MAX_PROCS`, `LPF_DEBUG` (0/1),
/// `LPF_EXCHANGE` (direct/bruck), `LPF_SEED`, `LPF_BARRIER_FANIN`,
/// `LPF_INIT_TIMEOUT_MS` and `LPF_MACHINE_PARAMS` (path of a parameters file).
#[derive(Debug, Clone)]
pub struct Config {
    /// Upper bound on processes `exec` starts.
    pub max_procs: u32,
    /// Enables collective-order, double-deregister and read/write overlap checks.
    pub debug_checks: bool,
    /// Algorithm for the metadata exchange of a superstep.
    pub meta_exchange: ExchangeAlgorithm,
    /// Seed for random intermediate selection; mixed with the pid.
    pub seed: u64,
    /// Requests of at most this many bytes count as small.
    pub small_limit: u64,
    /// Fan-in of the shared-memory barrier; `None` auto-tunes.
    pub barrier_fanin: Option<usize>,
    /// Bound on waits during TCP bootstrap and hook entry.
    pub init_timeout: Duration,
    pub params: Option<Arc<MachineParams>>,
}

pub const DEFAULT_INIT_TIMEOUT: Duration = Duration::from_millis(30_000);

impl Default for Config {
    fn default() -> Self {
        Config {
            max_procs: std::thread::available_parallelism()
                .map(|n| n.get() as u32)
                .unwrap_or(1),
            debug_checks: cfg!(debug_assertions),
            meta_exchange: ExchangeAlgorithm::Direct,
            seed: 0x5eed,
            small_limit: 4096,
            barrier_fanin: None,
            init_timeout: DEFAULT_INIT_TIMEOUT,
            params: None,
        }
    }
}

fn env<T: std::str::FromStr>(name: &str) -> Option<T> {
    let raw = std::env::var(name).ok()?;
    match raw.trim().parse() {
        Ok(v) => Some(v),
        Err(_) => {
            log::warn!("ignoring unparsable {name}={raw}");
            None
        }
    }
}

impl Config {
    pub fn from_env() -> Self {
        let mut c = Config::default();
        if let Some(n) = env::<u32>("LPF_MAX_PROCS").filter(|&n| n > 0) {
            c.max_procs = n;
        }
        if let Some(d) = env::<u8>("LPF_DEBUG") {
            c.debug_checks = d != 0;
        }
        if let Some(x) = env("LPF_EXCHANGE") {
            c.meta_exchange = x;
        }
        if let Some(s) = env("LPF_SEED") {
            c.seed = s;
        }
        if let Some(f) = env::<usize>("LPF_BARRIER_FANIN").filter(|&f| f >= 2) {
            c.barrier_fanin = Some(f);
        }
        if let Some(ms) = env("LPF_INIT_TIMEOUT_MS") {
            c.init_timeout = Duration::from_millis(ms);
        }
        if let Ok(path) = std::env::var("LPF_MACHINE_PARAMS") {
            match MachineParams::load(path.as_ref()) {
                Ok(p) => c.params = Some(Arc::new(p)),
                Err(e) => log::warn!("machine parameters not loaded: {e}"),
            }
        }
        c
    }

    pub fn with_params(mut self, params: MachineParams) -> Self {
        self.params = Some(Arc::new(params));
        self
    }
}
