//! Machine parameters returned by `probe`, and their file format.
//!
//! ```text
//! p=4
//! w=8 g=2.5e0 l=1e2
//! w=64 g=... l=...
//! ```
//!
//! `g` is in seconds per word of `w` bytes and `l` in seconds. Lines that do
//! not start with `p=` or `w=` are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Word sizes, in bytes, that the benchmark measures.
pub const STANDARD_WORD_SIZES: [u64; 4] = [8, 64, 1024, 1_048_576];

/// Seconds per byte assumed when nothing was measured.
pub const DEFAULT_G_PER_BYTE: f64 = 1e-10;
/// Seconds per superstep assumed when nothing was measured.
pub const DEFAULT_L: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum ParamsError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing `p=` header")]
    MissingHeader,
    #[error("w={w}: need g > 0 and l >= 0, got g={g} l={l}")]
    Invalid { w: u64, g: f64, l: f64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamsSource {
    Measured(PathBuf),
    /// Values came from a table that was not loaded from a file.
    Table,
    Default,
}

/// `(g, l)` for one word size.
#[derive(Debug, Clone, PartialEq)]
pub struct WordParams {
    pub w: u64,
    pub g: f64,
    pub l: f64,
    pub source: ParamsSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachineParams {
    pub p: u32,
    entries: BTreeMap<u64, (f64, f64)>,
    path: Option<PathBuf>,
}

impl MachineParams {
    /// An empty table: every lookup falls back to the defaults.
    pub fn defaults(p: u32) -> Self {
        MachineParams {
            p: p.max(1),
            entries: BTreeMap::new(),
            path: None,
        }
    }

    pub fn new(p: u32) -> Self {
        Self::defaults(p)
    }

    /// Adds or replaces the entry for `w`. Panics on `g <= 0` or `l < 0`.
    pub fn set(&mut self, w: u64, g: f64, l: f64) {
        if let Err(e) = self.try_set(w, g, l) {
            panic!("{e}");
        }
    }

    pub fn try_set(&mut self, w: u64, g: f64, l: f64) -> Result<(), ParamsError> {
        if !(g > 0.0 && g.is_finite() && l >= 0.0 && l.is_finite()) {
            return Err(ParamsError::Invalid { w, g, l });
        }
        self.entries.insert(w, (g, l));
        Ok(())
    }

    pub fn is_default(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn word_sizes(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.keys().copied()
    }

    pub fn get(&self, w: u64) -> WordParams {
        match self.entries.get(&w) {
            Some(&(g, l)) => WordParams {
                w,
                g,
                l,
                source: match &self.path {
                    Some(p) => ParamsSource::Measured(p.clone()),
                    None => ParamsSource::Table,
                },
            },
            None => WordParams {
                w,
                g: DEFAULT_G_PER_BYTE * w as f64,
                l: DEFAULT_L,
                source: ParamsSource::Default,
            },
        }
    }

    pub fn parse(text: &str) -> Result<Self, ParamsError> {
        let mut p = None;
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |msg: String| ParamsError::Parse { line: n + 1, msg };
            if let Some(v) = line.strip_prefix("p=") {
                let v: u32 = v.trim().parse().map_err(|e| err(format!("bad p: {e}")))?;
                if v == 0 {
                    return Err(err("p must be at least 1".into()));
                }
                p = Some(v);
            } else if line.starts_with("w=") {
                let (mut w, mut g, mut l) = (None, None, None);
                for field in line.split_whitespace() {
                    let (key, val) = field
                        .split_once('=')
                        .ok_or_else(|| err(format!("field `{field}` has no `=`")))?;
                    match key {
                        "w" => w = Some(val.parse::<u64>().map_err(|e| err(format!("bad w: {e}")))?),
                        "g" => g = Some(val.parse::<f64>().map_err(|e| err(format!("bad g: {e}")))?),
                        "l" => l = Some(val.parse::<f64>().map_err(|e| err(format!("bad l: {e}")))?),
                        _ => {}
                    }
                }
                let (Some(w), Some(g), Some(l)) = (w, g, l) else {
                    return Err(err("need w, g and l".into()));
                };
                if !(g > 0.0 && g.is_finite()) || !(l >= 0.0 && l.is_finite()) || w == 0 {
                    return Err(err(format!("out of range: w={w} g={g} l={l}")));
                }
                entries.insert(w, (g, l));
            }
        }
        Ok(MachineParams {
            p: p.ok_or(ParamsError::MissingHeader)?,
            entries,
            path: None,
        })
    }

    /// Serializes so that [`MachineParams::parse`] restores every value exactly.
    pub fn format(&self) -> String {
        let mut out = format!("p={}\n", self.p);
        for (w, (g, l)) in &self.entries {
            let _ = writeln!(out, "w={w} g={g:e} l={l:e}");
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self, ParamsError> {
        let text = std::fs::read_to_string(path).map_err(|source| ParamsError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut params = Self::parse(&text)?;
        params.path = Some(path.to_owned());
        Ok(params)
    }

    pub fn write(&self, path: &Path) -> Result<(), ParamsError> {
        std::fs::write(path, self.format()).map_err(|source| ParamsError::Io {
            path: path.to_owned(),
            source,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_the_documented_example() {
        let m = MachineParams::parse("p=4\nw=8 g=2.5 l=100\n").unwrap();
        assert_eq!(m.p, 4);
        let e = m.get(8);
        assert_eq!((e.g, e.l), (2.5, 100.0));
        assert_eq!(e.source, ParamsSource::Table);
    }

    #[test]
    fn unknown_lines_are_ignored() {
        let m = MachineParams::parse("# measured\np=2\nhost=x\nw=64 g=1 l=0 note=y\n").unwrap();
        assert_eq!(m.get(64).g, 1.0);
    }

    #[test]
    fn missing_word_size_falls_back() {
        let m = MachineParams::parse("p=2\nw=8 g=1 l=1\n").unwrap();
        let e = m.get(1024);
        assert_eq!(e.source, ParamsSource::Default);
        assert!(e.g > 0.0 && e.l > 0.0);
    }

    #[test]
    fn malformed_entries_are_rejected() {
        assert!(matches!(MachineParams::parse("w=8 g=1 l=1"), Err(ParamsError::MissingHeader)));
        assert!(MachineParams::parse("p=0").is_err());
        assert!(MachineParams::parse("p=2\nw=8 g=0 l=1").is_err());
        assert!(MachineParams::parse("p=2\nw=8 g=1 l=-1").is_err());
        assert!(MachineParams::parse("p=2\nw=8 g=1").is_err());
        assert!(MachineParams::parse("p=2\nw=8 g=nan l=1").is_err());
    }

    #[test]
    fn load_reports_io_errors() {
        let err = MachineParams::load(Path::new("/nonexistent/dir/params")).unwrap_err();
        assert!(matches!(err, ParamsError::Io { .. }));
    }

    proptest! {
        #[test]
        fn format_round_trips_exactly(
            p in 1u32..1000,
            rows in proptest::collection::btree_map(1u64..1 << 30, (1e-300f64..1e10, 0f64..1e10), 0..6),
        ) {
            let mut m = MachineParams::new(p);
            for (w, (g, l)) in &rows {
                m.set(*w, *g, *l);
            }
            let back = MachineParams::parse(&m.format()).unwrap();
            prop_assert_eq!(back, m);
        }

        #[test]
        fn parser_never_panics(text in "[pwgl=0-9. \\n.e-]{0,80}") {
            let _ = MachineParams::parse(&text);
        }
    }
}
