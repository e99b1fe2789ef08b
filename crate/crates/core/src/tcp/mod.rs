//! Distributed backend over TCP.
//!
//! Bootstrap: the master (pid 0) listens at a known address; every other
//! process opens its own listener, then connects to the master *from that
//! listener's port* (both sockets share it via `SO_REUSEPORT`), so the master
//! learns each peer's listening address from the connection itself. The
//! master answers everyone with the complete address book.
//!
//! The full mesh is built at the first hook: process `i` connects to every
//! `j < i` and accepts every `j > i`. Each connection has a reader thread
//! feeding a channel, so writes never block on a peer that is itself writing.
//! At the end of a hook every process sends a depart frame to all peers and
//! drains its inbound channels up to each peer's depart frame; a process that
//! leaves a hook early is thereby seen as lost by peers still communicating.

pub mod frame;
pub mod handshake;

use std::any::Any;
use std::collections::VecDeque;
use std::io::Write;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr, Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::panic::{self, AssertUnwindSafe};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use socket2::{Domain, SockAddr, Socket, Type};

use crate::config::Config;
use crate::context::Context;
use crate::error::{Error, FatalKind, Result};
use crate::transport::{Backend, Transport, TransportCounters};
use crate::types::{Args, Pid};
use frame::FrameKind;
use handshake::PeerAddr;

const RETRY: Duration = Duration::from_millis(20);

fn timeout_error(what: &str) -> Error {
    Error::fatal(FatalKind::Timeout, format!("timed out {what}"))
}

fn remaining(deadline: Instant, what: &str) -> Result<Duration> {
    let left = deadline.saturating_duration_since(Instant::now());
    if left.is_zero() {
        return Err(timeout_error(what));
    }
    Ok(left)
}

fn resolve(host: &str, port: u16) -> Result<SocketAddr> {
    (host, port)
        .to_socket_addrs()
        .map_err(|e| Error::io(&format!("resolving {host}:{port}"), e))?
        .next()
        .ok_or_else(|| Error::fatal(FatalKind::Io, format!("{host}:{port} has no address")))
}

fn reuse_socket(domain: Domain) -> Result<Socket> {
    let s = Socket::new(domain, Type::STREAM, None).map_err(|e| Error::io("socket", e))?;
    s.set_reuse_address(true).map_err(|e| Error::io("SO_REUSEADDR", e))?;
    #[cfg(unix)]
    s.set_reuse_port(true).map_err(|e| Error::io("SO_REUSEPORT", e))?;
    Ok(s)
}

fn listen_on(addr: SocketAddr) -> Result<TcpListener> {
    let s = reuse_socket(Domain::for_address(addr))?;
    s.bind(&SockAddr::from(addr))
        .map_err(|e| Error::io(&format!("binding {addr}"), e))?;
    s.listen(128).map_err(|e| Error::io("listen", e))?;
    Ok(s.into())
}

fn unspecified(like: &SocketAddr, port: u16) -> SocketAddr {
    let ip = match like {
        SocketAddr::V4(_) => IpAddr::V4(Ipv4Addr::UNSPECIFIED),
        SocketAddr::V6(_) => IpAddr::V6(Ipv6Addr::UNSPECIFIED),
    };
    SocketAddr::new(ip, port)
}

/// Connects to `to`, retrying refused attempts until `deadline`. With
/// `from_port`, the connection originates from that (shared) local port.
fn connect_until(to: SocketAddr, from_port: Option<u16>, deadline: Instant, what: &str) -> Result<TcpStream> {
    loop {
        let left = remaining(deadline, what)?;
        let attempt = (|| -> std::io::Result<TcpStream> {
            match from_port {
                Some(port) => {
                    let s = Socket::new(Domain::for_address(to), Type::STREAM, None)?;
                    s.set_reuse_address(true)?;
                    #[cfg(unix)]
                    s.set_reuse_port(true)?;
                    s.bind(&SockAddr::from(unspecified(&to, port)))?;
                    s.connect_timeout(&SockAddr::from(to), left)?;
                    Ok(s.into())
                }
                None => TcpStream::connect_timeout(&to, left),
            }
        })();
        match attempt {
            Ok(s) => return Ok(s),
            Err(e) => {
                log::trace!("{what}: {e}; retrying");
                thread::sleep(RETRY.min(deadline.saturating_duration_since(Instant::now())));
            }
        }
    }
}

/// Accepts one connection before `deadline` and reads its first line.
fn accept_line(listener: &TcpListener, deadline: Instant, what: &str) -> Result<(TcpStream, SocketAddr, String)> {
    listener
        .set_nonblocking(true)
        .map_err(|e| Error::io("listener", e))?;
    loop {
        match listener.accept() {
            Ok((mut s, addr)) => {
                let left = remaining(deadline, what)?;
                let setup = s
                    .set_nonblocking(false)
                    .and_then(|_| s.set_read_timeout(Some(left)));
                if let Err(e) = setup {
                    log::debug!("dropping connection from {addr}: {e}");
                    continue;
                }
                match handshake::read_line(&mut s) {
                    Ok(line) => {
                        s.set_read_timeout(None).map_err(|e| Error::io("socket", e))?;
                        return Ok((s, addr, line));
                    }
                    Err(e) => log::debug!("dropping connection from {addr}: {e}"),
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                remaining(deadline, what)?;
                thread::sleep(Duration::from_millis(2));
            }
            Err(e) => return Err(Error::io("accept", e)),
        }
    }
}

enum Event {
    Frame(FrameKind, u32, Vec<u8>),
    Closed(String),
}

struct Mesh {
    pid: Pid,
    p: u32,
    writers: Vec<Option<TcpStream>>,
    inbox: Vec<Option<Receiver<Event>>>,
    readers: Vec<JoinHandle<()>>,
    local: VecDeque<Vec<u8>>,
    departed: Vec<bool>,
    broken: bool,
}

impl Mesh {
    fn start(pid: Pid, p: u32, streams: Vec<Option<TcpStream>>) -> Result<Mesh> {
        let mut mesh = Mesh {
            pid,
            p,
            writers: Vec::with_capacity(p as usize),
            inbox: Vec::with_capacity(p as usize),
            readers: Vec::new(),
            local: VecDeque::new(),
            departed: vec![false; p as usize],
            broken: false,
        };
        for (j, s) in streams.into_iter().enumerate() {
            let Some(s) = s else {
                mesh.writers.push(None);
                mesh.inbox.push(None);
                continue;
            };
            s.set_nodelay(true).map_err(|e| Error::io("TCP_NODELAY", e))?;
            let mut rs = s.try_clone().map_err(|e| Error::io("cloning socket", e))?;
            let (tx, rx) = mpsc::channel();
            let reader = thread::Builder::new()
                .name(format!("lpf-rx-{j}"))
                .spawn(move || loop {
                    let ev = match frame::read_frame(&mut rs) {
                        Ok(Some((h, payload))) => Event::Frame(h.kind, h.tag, payload),
                        Ok(None) => Event::Closed("connection closed".into()),
                        Err(e) => Event::Closed(e.to_string()),
                    };
                    let closed = matches!(ev, Event::Closed(_));
                    if tx.send(ev).is_err() || closed {
                        return;
                    }
                })
                .map_err(|e| Error::fatal(FatalKind::Spawn, format!("reader thread: {e}")))?;
            mesh.readers.push(reader);
            mesh.writers.push(Some(s));
            mesh.inbox.push(Some(rx));
        }
        Ok(mesh)
    }

    fn peers(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.p as usize).filter(move |&j| j != self.pid as usize)
    }

    /// Announces departure to everyone and consumes each peer's frames up to
    /// its own departure.
    fn depart(&mut self, tag: u32) -> Result<()> {
        let mut result = Ok(());
        for j in self.peers().collect::<Vec<_>>() {
            if let Some(w) = self.writers[j].as_mut() {
                if let Err(e) = frame::write_frame(w, FrameKind::Depart, tag, &[]) {
                    self.broken = true;
                    result = Err(Error::io(&format!("leaving hook, process {j}"), e));
                }
            }
        }
        for j in self.peers().collect::<Vec<_>>() {
            if self.departed[j] {
                continue;
            }
            let Some(rx) = self.inbox[j].as_ref() else { continue };
            loop {
                match rx.recv() {
                    Ok(Event::Frame(FrameKind::Depart, t, _)) if t == tag => break,
                    Ok(Event::Frame(FrameKind::Data, _, _)) => {}
                    Ok(Event::Frame(FrameKind::Depart, t, _)) => {
                        self.broken = true;
                        result = Err(Error::protocol(format!(
                            "process {j} left hook {t} during hook {tag}"
                        )));
                        break;
                    }
                    Ok(Event::Closed(msg)) => {
                        self.broken = true;
                        result = Err(Error::peer_lost(format!("process {j}: {msg}")));
                        break;
                    }
                    Err(_) => {
                        self.broken = true;
                        result = Err(Error::peer_lost(format!("process {j} reader stopped")));
                        break;
                    }
                }
            }
        }
        self.departed.iter_mut().for_each(|d| *d = false);
        self.local.clear();
        result
    }

    fn shutdown(mut self) {
        for w in self.writers.iter().flatten() {
            let _ = w.shutdown(Shutdown::Both);
        }
        self.writers.clear();
        self.inbox.clear();
        for r in self.readers.drain(..) {
            let _ = r.join();
        }
    }
}

pub(crate) struct TcpTransport {
    mesh: Mesh,
    tag: u32,
    deadline: Option<Instant>,
    counters: TransportCounters,
}

impl Transport for TcpTransport {
    fn pid(&self) -> Pid {
        self.mesh.pid
    }

    fn nprocs(&self) -> u32 {
        self.mesh.p
    }

    fn send(&mut self, to: Pid, frame: Vec<u8>) -> Result<()> {
        if to == self.mesh.pid {
            self.mesh.local.push_back(frame);
            return Ok(());
        }
        let w = self
            .mesh
            .writers
            .get_mut(to as usize)
            .and_then(|w| w.as_mut())
            .ok_or_else(|| Error::illegal(format!("no process {to}")))?;
        self.counters.messages_sent += 1;
        self.counters.bytes_sent += frame.len() as u64;
        if let Err(e) = frame::write_frame(w, FrameKind::Data, self.tag, &frame) {
            self.mesh.broken = true;
            return Err(Error::io(&format!("sending to process {to}"), e));
        }
        Ok(())
    }

    fn recv(&mut self, from: Pid) -> Result<Vec<u8>> {
        if from == self.mesh.pid {
            return self
                .mesh
                .local
                .pop_front()
                .ok_or_else(|| Error::protocol("no frame queued to self"));
        }
        let j = from as usize;
        if self.mesh.departed.get(j).copied().unwrap_or(false) {
            return Err(Error::peer_lost(format!("process {from} left the hook")));
        }
        let rx = self
            .mesh
            .inbox
            .get(j)
            .and_then(|r| r.as_ref())
            .ok_or_else(|| Error::illegal(format!("no process {from}")))?;
        let ev = match self.deadline {
            Some(d) => match rx.recv_timeout(d.saturating_duration_since(Instant::now())) {
                Ok(ev) => ev,
                Err(RecvTimeoutError::Timeout) => {
                    self.mesh.broken = true;
                    return Err(timeout_error(&format!("waiting for process {from}")));
                }
                Err(RecvTimeoutError::Disconnected) => Event::Closed("reader stopped".into()),
            },
            None => rx
                .recv()
                .unwrap_or_else(|_| Event::Closed("reader stopped".into())),
        };
        match ev {
            Event::Frame(FrameKind::Data, tag, payload) if tag == self.tag => Ok(payload),
            Event::Frame(FrameKind::Data, tag, _) => {
                self.mesh.broken = true;
                Err(Error::protocol(format!(
                    "frame of hook {tag} from process {from} during hook {}",
                    self.tag
                )))
            }
            Event::Frame(FrameKind::Depart, _, _) => {
                self.mesh.departed[j] = true;
                Err(Error::peer_lost(format!("process {from} left the hook")))
            }
            Event::Closed(msg) => {
                self.mesh.broken = true;
                Err(Error::peer_lost(format!("process {from}: {msg}")))
            }
        }
    }

    fn counters(&self) -> TransportCounters {
        self.counters
    }

    fn record_payload(&mut self, bytes: u64, copies: u64) {
        self.counters.payload_bytes_written += bytes;
        self.counters.payload_copies += copies;
    }
}

impl Backend for TcpTransport {
    fn into_any(self: Box<Self>) -> Box<dyn Any + Send> {
        self
    }
}

/// Binding of pre-existing processes, reusable for any number of hooks.
pub struct InitHandle {
    pid: Pid,
    nprocs: u32,
    timeout: Duration,
    book: Vec<PeerAddr>,
    listener: Option<TcpListener>,
    mesh: Option<Mesh>,
    broken: bool,
    epoch: u32,
    finalized: bool,
    config: Arc<Config>,
}

/// Rendezvous of `nprocs` processes through the master at `host:port`.
///
/// Process 0 is the master and listens at `host:port`; the others connect
/// to it. Fails with a timeout after `timeout_ms` milliseconds.
pub fn init_over_tcp(host: &str, port: u16, timeout_ms: u64, pid: Pid, nprocs: u32) -> Result<InitHandle> {
    let mut config = Config::from_env();
    config.init_timeout = Duration::from_millis(timeout_ms);
    init_over_tcp_with(config, host, port, pid, nprocs)
}

/// As [`init_over_tcp`], with the timeout taken from `config.init_timeout`.
pub fn init_over_tcp_with(config: Config, host: &str, port: u16, pid: Pid, nprocs: u32) -> Result<InitHandle> {
    if nprocs == 0 || pid >= nprocs {
        return Err(Error::illegal(format!("pid {pid} with {nprocs} processes")));
    }
    let timeout = config.init_timeout;
    let deadline = Instant::now() + timeout;
    let master = PeerAddr {
        host: host.to_owned(),
        port,
    };
    let (listener, book) = if nprocs == 1 {
        (None, vec![master])
    } else if pid == 0 {
        let (l, book) = serve_rendezvous(&master, nprocs, deadline)?;
        (Some(l), book)
    } else {
        let (l, book) = join_rendezvous(&master, pid, nprocs, deadline)?;
        (Some(l), book)
    };
    log::debug!("process {pid}/{nprocs} initialised; book {book:?}");
    Ok(InitHandle {
        pid,
        nprocs,
        timeout,
        book,
        listener,
        mesh: None,
        broken: false,
        epoch: 0,
        finalized: false,
        config: Arc::new(config),
    })
}

fn serve_rendezvous(master: &PeerAddr, n: u32, deadline: Instant) -> Result<(TcpListener, Vec<PeerAddr>)> {
    let listener = listen_on(resolve(&master.host, master.port)?)?;
    let mut book: Vec<Option<PeerAddr>> = vec![None; n as usize];
    book[0] = Some(master.clone());
    let mut clients: Vec<TcpStream> = Vec::new();
    let refuse = |clients: &mut Vec<TcpStream>, e: Error| -> Error {
        for c in clients.iter_mut() {
            let _ = c.write_all(handshake::format_refusal(&e).as_bytes());
        }
        e
    };
    while clients.len() + 1 < n as usize {
        let missing: Vec<usize> = (1..n as usize).filter(|&j| book[j].is_none()).collect();
        let (mut s, addr, line) =
            match accept_line(&listener, deadline, &format!("waiting for processes {missing:?}")) {
                Ok(x) => x,
                Err(e) => return Err(refuse(&mut clients, e)),
            };
        let checked = handshake::parse_hello(&line).and_then(|(pid, np)| {
            if np != n {
                Err(Error::illegal(format!("process {pid} expects {np} processes, master {n}")))
            } else if pid == 0 || pid >= n {
                Err(Error::illegal(format!("pid {pid} out of range 1..{n}")))
            } else if book[pid as usize].is_some() {
                Err(Error::illegal(format!("duplicate pid {pid}")))
            } else {
                Ok(pid)
            }
        });
        match checked {
            Ok(pid) => {
                book[pid as usize] = Some(PeerAddr {
                    host: addr.ip().to_string(),
                    port: addr.port(),
                });
                clients.push(s);
            }
            Err(e) => {
                let _ = s.write_all(handshake::format_refusal(&e).as_bytes());
                return Err(refuse(&mut clients, e));
            }
        }
    }
    let book: Vec<PeerAddr> = book.into_iter().map(|a| a.expect("all registered")).collect();
    let reply = handshake::format_book(&book);
    for c in clients.iter_mut() {
        c.write_all(reply.as_bytes())
            .map_err(|e| Error::io("sending address book", e))?;
    }
    Ok((listener, book))
}

fn join_rendezvous(master: &PeerAddr, pid: Pid, n: u32, deadline: Instant) -> Result<(TcpListener, Vec<PeerAddr>)> {
    let master_addr = resolve(&master.host, master.port)?;
    let listener = listen_on(unspecified(&master_addr, 0))?;
    let port = listener
        .local_addr()
        .map_err(|e| Error::io("listener address", e))?
        .port();
    let mut s = connect_until(master_addr, Some(port), deadline, "connecting to the master")?;
    s.write_all(handshake::format_hello(pid, n).as_bytes())
        .map_err(|e| Error::io("sending hello", e))?;
    s.set_read_timeout(Some(remaining(deadline, "waiting for the address book")?))
        .map_err(|e| Error::io("socket", e))?;
    let mut text = handshake::read_line(&mut s).map_err(|e| Error::io("reading the master's reply", e))?;
    if let Some(e) = handshake::parse_refusal(&text) {
        return Err(e);
    }
    let count = handshake::parse_ok(&text)?;
    if count != n {
        return Err(Error::protocol(format!("master reports {count} processes, expected {n}")));
    }
    for _ in 0..n {
        text.push_str(&handshake::read_line(&mut s).map_err(|e| Error::io("reading the address book", e))?);
    }
    let book = handshake::parse_book(&text)?;
    if book[pid as usize].port != port {
        return Err(Error::protocol("address book lists a different port for this process"));
    }
    Ok((listener, book))
}

impl InitHandle {
    /// Reads `LPF_PID`, `LPF_NPROCS` and `LPF_MASTER` (`host:port`), as set
    /// by `lpf-run`.
    pub fn from_env() -> Result<InitHandle> {
        let var = |name: &str| {
            std::env::var(name).map_err(|_| Error::illegal(format!("{name} is not set")))
        };
        let pid: Pid = var("LPF_PID")?
            .parse()
            .map_err(|_| Error::illegal("LPF_PID is not a number"))?;
        let nprocs: u32 = var("LPF_NPROCS")?
            .parse()
            .map_err(|_| Error::illegal("LPF_NPROCS is not a number"))?;
        let master = var("LPF_MASTER")?;
        let (host, port) = master
            .rsplit_once(':')
            .and_then(|(h, p)| Some((h.trim_matches(['[', ']']), p.parse::<u16>().ok()?)))
            .ok_or_else(|| Error::illegal(format!("LPF_MASTER={master} is not host:port")))?;
        init_over_tcp_with(Config::from_env(), host, port, pid, nprocs)
    }

    pub fn pid(&self) -> Pid {
        self.pid
    }

    pub fn nprocs(&self) -> u32 {
        self.nprocs
    }

    /// Listening address of every process, indexed by pid.
    pub fn address_book(&self) -> &[PeerAddr] {
        &self.book
    }

    fn build_mesh(&mut self, deadline: Instant) -> Result<Mesh> {
        let (me, p) = (self.pid as usize, self.nprocs as usize);
        let mut streams: Vec<Option<TcpStream>> = (0..p).map(|_| None).collect();
        for (j, peer) in self.book.iter().enumerate().take(me) {
            let addr = resolve(&peer.host, peer.port)?;
            let mut s = connect_until(addr, None, deadline, &format!("connecting to process {j}"))?;
            s.write_all(handshake::format_mesh_hello(me as Pid).as_bytes())
                .map_err(|e| Error::io(&format!("greeting process {j}"), e))?;
            streams[j] = Some(s);
        }
        for _ in me + 1..p {
            let listener = self.listener.as_ref().expect("listener exists for p > 1");
            let waiting: Vec<usize> = (me + 1..p).filter(|&j| streams[j].is_none()).collect();
            let (s, _, line) = accept_line(listener, deadline, &format!("waiting for processes {waiting:?}"))?;
            let j = handshake::parse_mesh_hello(&line)? as usize;
            if j <= me || j >= p || streams[j].is_some() {
                return Err(Error::protocol(format!("unexpected mesh greeting from process {j}")));
            }
            streams[j] = Some(s);
        }
        Mesh::start(me as Pid, p as u32, streams)
    }

    /// Runs `spmd` in a fresh context spanning all processes of this handle.
    /// Collective; `args` stay local to this process.
    pub fn hook<F>(&mut self, spmd: F, args: &mut Args) -> Result<()>
    where
        F: FnOnce(&mut Context, &mut Args),
    {
        if self.finalized {
            return Err(Error::fatal(FatalKind::Finalized, "hook on a finalized handle"));
        }
        if self.broken {
            return Err(Error::fatal(FatalKind::PeerLost, "handle lost its connections"));
        }
        let deadline = Instant::now() + self.timeout;
        let mesh = match self.mesh.take() {
            Some(m) => m,
            None => self.build_mesh(deadline).inspect_err(|_| self.broken = true)?,
        };
        self.epoch = self.epoch.wrapping_add(1);
        let mut t = TcpTransport {
            mesh,
            tag: self.epoch,
            deadline: Some(deadline),
            counters: TransportCounters::default(),
        };
        if let Err(e) = t.barrier(true) {
            self.broken = true;
            t.mesh.shutdown();
            return Err(e);
        }
        t.deadline = None;

        let mut ctx = Context::new(self.pid, self.nprocs, Box::new(t), self.config.clone());
        let outcome = panic::catch_unwind(AssertUnwindSafe(|| spmd(&mut ctx, args)));
        let fatal = ctx.fatal_error().cloned();
        let t = ctx
            .into_backend()
            .expect("backend returned to the hooked context")
            .into_any()
            .downcast::<TcpTransport>()
            .expect("hooked context runs on TCP");
        let mut mesh = t.mesh;
        let departed = mesh.depart(self.epoch);
        if mesh.broken {
            self.broken = true;
            mesh.shutdown();
        } else {
            self.mesh = Some(mesh);
        }
        if let Err(payload) = outcome {
            panic::resume_unwind(payload);
        }
        departed?;
        match fatal {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Closes all connections. A second call is an error when debug checks
    /// are on and a no-op otherwise.
    pub fn finalize(&mut self) -> Result<()> {
        if self.finalized {
            if self.config.debug_checks {
                return Err(Error::fatal(FatalKind::Finalized, "handle finalized twice"));
            }
            return Ok(());
        }
        self.finalized = true;
        if let Some(m) = self.mesh.take() {
            m.shutdown();
        }
        self.listener = None;
        Ok(())
    }
}

impl Drop for InitHandle {
    fn drop(&mut self) {
        if let Some(m) = self.mesh.take() {
            m.shutdown();
        }
    }
}
