//! Last-level cache size from sysfs.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

pub const FALLBACK_LLC_BYTES: u64 = 32 << 20;

/// Parses sysfs cache sizes such as `32768K`, `8M` or `512`.
pub fn parse_size(s: &str) -> Option<u64> {
    let s = s.trim();
    let (num, mult) = match s.as_bytes().last()? {
        b'K' | b'k' => (&s[..s.len() - 1], 1 << 10),
        b'M' | b'm' => (&s[..s.len() - 1], 1 << 20),
        b'G' | b'g' => (&s[..s.len() - 1], 1 << 30),
        _ => (s, 1),
    };
    num.parse::<u64>().ok()?.checked_mul(mult)
}

/// Sum of the highest-level caches over all distinct instances found under
/// `root` (normally `/sys/devices/system/cpu`).
pub fn aggregate_llc_bytes_in(root: &Path) -> Option<u64> {
    let mut best_level = 0;
    // (shared cpu list, size) per instance of the current best level.
    let mut instances: BTreeSet<(String, u64)> = BTreeSet::new();
    for cpu in fs::read_dir(root).ok()?.flatten() {
        let name = cpu.file_name();
        let name = name.to_string_lossy();
        if !name.starts_with("cpu") || !name[3..].bytes().all(|b| b.is_ascii_digit()) || name.len() == 3 {
            continue;
        }
        let Ok(indices) = fs::read_dir(cpu.path().join("cache")) else { continue };
        for idx in indices.flatten() {
            let dir = idx.path();
            let read = |f: &str| fs::read_to_string(dir.join(f)).ok();
            if read("type").is_some_and(|t| t.trim() == "Instruction") {
                continue;
            }
            let (Some(level), Some(size)) = (
                read("level").and_then(|l| l.trim().parse::<u32>().ok()),
                read("size").and_then(|s| parse_size(&s)),
            ) else {
                continue;
            };
            let shared = read("shared_cpu_list").unwrap_or_else(|| name.to_string());
            if level > best_level {
                best_level = level;
                instances.clear();
            }
            if level == best_level {
                instances.insert((shared.trim().to_owned(), size));
            }
        }
    }
    let total: u64 = instances.iter().map(|(_, s)| s).sum();
    (total > 0).then_some(total)
}

/// Aggregate last-level cache of this machine, or [`FALLBACK_LLC_BYTES`].
pub fn aggregate_llc_bytes() -> u64 {
    aggregate_llc_bytes_in(Path::new("/sys/devices/system/cpu")).unwrap_or(FALLBACK_LLC_BYTES)
}
