//! Rendezvous and mesh greeting lines.
//!
//! ```text
//! client -> master   LPF1 <pid> <nprocs>\n
//! master -> client   OK <nprocs>\n  then nprocs lines  <pid> <host> <port>\n
//! mesh connect       MESH <pid>\n
//! ```

use std::io::Read;

use crate::error::{Error, FatalKind, Result};
use crate::types::Pid;

/// Longest line either side will read.
pub const MAX_LINE: usize = 512;

/// Address of one process's mesh listener.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PeerAddr {
    pub host: String,
    pub port: u16,
}

fn bad(what: &str, line: &str) -> Error {
    Error::protocol(format!("malformed {what}: {:?}", line.trim_end()))
}

fn fields<'a>(line: &'a str, what: &str, n: usize) -> Result<Vec<&'a str>> {
    let body = line.strip_suffix('\n').unwrap_or(line);
    let parts: Vec<&str> = body.split(' ').collect();
    if parts.len() != n || parts.iter().any(|p| p.is_empty()) {
        return Err(bad(what, line));
    }
    Ok(parts)
}

fn num<T: std::str::FromStr>(s: &str, what: &str, line: &str) -> Result<T> {
    if !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad(what, line));
    }
    s.parse().map_err(|_| bad(what, line))
}

pub fn format_hello(pid: Pid, nprocs: u32) -> String {
    format!("LPF1 {pid} {nprocs}\n")
}

/// Parses `LPF1 <pid> <nprocs>`; returns (pid, nprocs).
pub fn parse_hello(line: &str) -> Result<(Pid, u32)> {
    let f = fields(line, "hello", 3)?;
    if f[0] != "LPF1" {
        return Err(bad("hello", line));
    }
    Ok((num(f[1], "hello", line)?, num(f[2], "hello", line)?))
}

/// Refusal sent by the master when the rendezvous cannot complete.
pub fn format_refusal(e: &Error) -> String {
    let (word, detail) = match e {
        Error::Fatal { kind: FatalKind::Timeout, detail } => ("timeout", detail.as_str()),
        Error::Fatal { kind: FatalKind::IllegalArgument, detail } => ("illegal", detail.as_str()),
        Error::Fatal { detail, .. } => ("failed", detail.as_str()),
        Error::Mitigable(_) => ("failed", "out of resources"),
    };
    let detail: String = detail.chars().filter(|c| *c != '\n').take(MAX_LINE - 32).collect();
    format!("ERR {word} {detail}\n")
}

/// The master's error, if `line` is a refusal.
pub fn parse_refusal(line: &str) -> Option<Error> {
    let body = line.strip_prefix("ERR ")?.trim_end_matches('\n');
    let (word, detail) = body.split_once(' ').unwrap_or((body, ""));
    let kind = match word {
        "timeout" => FatalKind::Timeout,
        "illegal" => FatalKind::IllegalArgument,
        _ => FatalKind::RemoteFailure,
    };
    Some(Error::fatal(kind, format!("master refused the rendezvous: {detail}")))
}

pub fn format_ok(nprocs: u32) -> String {
    format!("OK {nprocs}\n")
}

pub fn parse_ok(line: &str) -> Result<u32> {
    let f = fields(line, "reply", 2)?;
    if f[0] != "OK" {
        return Err(bad("reply", line));
    }
    num(f[1], "reply", line)
}

pub fn format_entry(pid: Pid, addr: &PeerAddr) -> String {
    format!("{pid} {} {}\n", addr.host, addr.port)
}

pub fn parse_entry(line: &str) -> Result<(Pid, PeerAddr)> {
    let f = fields(line, "address entry", 3)?;
    let host = f[1];
    if !host.bytes().all(|b| b.is_ascii_graphic()) {
        return Err(bad("address entry", line));
    }
    Ok((
        num(f[0], "address entry", line)?,
        PeerAddr {
            host: host.to_owned(),
            port: num(f[2], "address entry", line)?,
        },
    ))
}

/// The full master reply for an address book indexed by pid.
pub fn format_book(book: &[PeerAddr]) -> String {
    let mut s = format_ok(book.len() as u32);
    for (pid, a) in book.iter().enumerate() {
        s.push_str(&format_entry(pid as Pid, a));
    }
    s
}

/// Parses a complete master reply. Entries must list pids `0..nprocs` in order.
pub fn parse_book(text: &str) -> Result<Vec<PeerAddr>> {
    let mut lines = text.split_inclusive('\n');
    let n = parse_ok(lines.next().unwrap_or(""))?;
    let mut book = Vec::new();
    for expected in 0..n {
        let (pid, addr) = parse_entry(lines.next().ok_or_else(|| bad("reply", text))?)?;
        if pid != expected {
            return Err(bad("address entry order", text));
        }
        book.push(addr);
    }
    if lines.next().is_some() {
        return Err(bad("reply", text));
    }
    Ok(book)
}

pub fn format_mesh_hello(pid: Pid) -> String {
    format!("MESH {pid}\n")
}

pub fn parse_mesh_hello(line: &str) -> Result<Pid> {
    let f = fields(line, "mesh greeting", 2)?;
    if f[0] != "MESH" {
        return Err(bad("mesh greeting", line));
    }
    num(f[1], "mesh greeting", line)
}

/// Reads one `\n`-terminated line byte by byte, so nothing past it is consumed.
pub fn read_line(r: &mut impl Read) -> std::io::Result<String> {
    let mut buf = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(std::io::ErrorKind::UnexpectedEof.into());
        }
        buf.push(byte[0]);
        if byte[0] == b'\n' {
            break;
        }
        if buf.len() >= MAX_LINE {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "handshake line too long",
            ));
        }
    }
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}
