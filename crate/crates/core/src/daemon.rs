//! Wall-clock node: the same scope instances as the emulator, driven by real
//! sockets.
//!
//! One core thread owns every instance of the node. Socket readers and
//! per-peer stream senders run on their own threads and talk to the core
//! through a single channel, so instance state is never shared.

use std::collections::{BTreeSet, HashMap};
use std::io::{self, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs, UdpSocket};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::audit::AuditLog;
use crate::bpa::{AapMessage, Action, AgentHandle};
use crate::bundle::Bundle;
use crate::cla::{ClaAddress, ClaKind, Contact};
use crate::config::{ConfigError, NodeSpec};
use crate::discovery::{apply_to_instance, Beacon, DiscoveryAgent, DiscoveryEvent};
use crate::framing;
use crate::harness::{build_assembly, NodeAssembly};
use crate::time::DtnTime;

const TICK: Duration = Duration::from_millis(50);
const RETRY_EVERY: Duration = Duration::from_secs(1);

#[derive(Debug, thiserror::Error)]
pub enum DaemonError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot bind {what} on {addr}: {source}")]
    Bind {
        what: String,
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error("cannot connect BIBE CLA {what} to {addr}: {source}")]
    Connect {
        what: String,
        addr: SocketAddr,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Default)]
pub struct DaemonOptions {
    /// Audit events are appended here as JSON lines while the node runs.
    pub audit_path: Option<PathBuf>,
}

enum Input {
    AapConnected { inst: usize, agent: AgentHandle, tx: Sender<AapMessage> },
    AapRequest { inst: usize, agent: AgentHandle, message: AapMessage },
    AapClosed { inst: usize, agent: AgentHandle },
    StreamFrame { inst: usize, frame: Vec<u8> },
    BibeRecv { inst: usize, bibe: usize, payload: Vec<u8> },
    TransmitFailed { inst: usize, hop: ClaAddress, bundle: Bundle, reason: String },
    Beacon { inst: usize, datagram: Vec<u8> },
    Shutdown,
}

struct Outgoing {
    hop: ClaAddress,
    bundle: Bundle,
    frame: Vec<u8>,
    duration_ms: u64,
}

/// A node whose threads are running.
pub struct RunningNode {
    pub node: String,
    aap: Vec<(String, SocketAddr)>,
    streams: Vec<(String, String, SocketAddr)>,
    tx: Sender<Input>,
    stop: Arc<AtomicBool>,
    wake: Vec<SocketAddr>,
    core: Option<JoinHandle<()>>,
    log: AuditLog,
}

impl RunningNode {
    /// Bound AAP address of the instance for `scope`.
    pub fn aap_addr(&self, scope: &str) -> Option<SocketAddr> {
        self.aap.iter().find(|(s, _)| s == scope).map(|(_, a)| *a)
    }

    /// Bound listen address of a stream CLA.
    pub fn stream_addr(&self, scope: &str, cla: &str) -> Option<SocketAddr> {
        self.streams.iter().find(|(s, c, _)| s == scope && c == cla).map(|(_, _, a)| *a)
    }

    pub fn audit(&self) -> &AuditLog {
        &self.log
    }

    /// Blocks until the core thread exits.
    pub fn wait(mut self) {
        if let Some(core) = self.core.take() {
            let _ = core.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    fn stop_threads(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.tx.send(Input::Shutdown);
        for addr in &self.wake {
            let _ = TcpStream::connect_timeout(addr, Duration::from_millis(200));
        }
        if let Some(core) = self.core.take() {
            let _ = core.join();
        }
    }
}

impl Drop for RunningNode {
    fn drop(&mut self) {
        if self.core.is_some() {
            self.stop_threads();
        }
    }
}

fn bind_tcp(what: String, addr: &str) -> Result<TcpListener, DaemonError> {
    TcpListener::bind(addr).map_err(|source| DaemonError::Bind { what, addr: addr.to_string(), source })
}

/// Binds every socket of `spec` and starts the node. Contact windows are
/// anchored at the moment of the call.
pub fn start_node(spec: &NodeSpec, options: DaemonOptions) -> Result<RunningNode, DaemonError> {
    let log = AuditLog::new();
    let epoch = DtnTime::now();
    let assembly = build_assembly(spec, &log, epoch)?;
    let (tx, rx) = mpsc::channel();
    let stop = Arc::new(AtomicBool::new(false));
    let agents = Arc::new(AtomicU64::new(1));
    let mut aap = Vec::new();
    let mut streams = Vec::new();
    let mut wake = Vec::new();
    let mut advertised = HashMap::new();

    for (i, inst) in spec.instances.iter().enumerate() {
        let listener = bind_tcp(format!("AAP of scope {}", inst.scope), &inst.aap)?;
        let addr = listener.local_addr().expect("bound socket");
        aap.push((inst.scope.clone(), addr));
        wake.push(addr);
        spawn_aap_acceptor(listener, i, tx.clone(), stop.clone(), agents.clone());
        for s in &inst.streams {
            let listener = bind_tcp(format!("stream CLA {}", s.name), &s.listen)?;
            let addr = listener.local_addr().expect("bound socket");
            streams.push((inst.scope.clone(), s.name.clone(), addr));
            wake.push(addr);
            advertised.insert((i, s.name.clone()), advertise_addr(&s.listen, addr));
            spawn_stream_acceptor(listener, i, tx.clone(), stop.clone());
        }
    }

    let mut discovery = HashMap::new();
    for (i, inst) in spec.instances.iter().enumerate() {
        let Some(d) = inst.discovery.as_ref().filter(|d| d.enabled) else { continue };
        let bind = d.listen.clone().unwrap_or_else(|| "0.0.0.0:0".to_string());
        let socket = UdpSocket::bind(&bind)
            .map_err(|source| DaemonError::Bind { what: format!("discovery of scope {}", inst.scope), addr: bind, source })?;
        let _ = socket.set_broadcast(true);
        let targets: Vec<SocketAddr> = d.targets.iter().filter_map(|t| t.to_socket_addrs().ok()?.next()).collect();
        let own = inst.eids[0].clone();
        let address = advertised[&(i, d.cla.clone())].clone();
        let seed = DtnTime::now().as_millis() ^ i as u64;
        let agent = DiscoveryAgent::new(own, ClaAddress::new(d.cla.clone(), address), d.period_ms, seed);
        let reader = socket.try_clone().expect("clone UDP socket");
        spawn_beacon_reader(reader, i, tx.clone(), stop.clone());
        discovery.insert(i, Discovery { agent, socket, targets, next: Instant::now() });
    }

    let mut bibe_links = HashMap::new();
    for w in &assembly.wiring {
        let name = assembly.instances[w.upper].bibes[w.bibe].name.clone();
        let addr = aap[w.lower].1;
        let stream = TcpStream::connect(addr).map_err(|source| DaemonError::Connect { what: name, addr, source })?;
        let _ = stream.set_nodelay(true);
        let reader = stream.try_clone().expect("clone TCP stream");
        spawn_bibe_reader(reader, w.upper, w.bibe, tx.clone());
        let mut writer = stream;
        let register = assembly.instances[w.upper].bibes[w.bibe].registration();
        if let Err(source) = register.write_to(&mut writer) {
            return Err(DaemonError::Connect { what: assembly.instances[w.upper].bibes[w.bibe].name.clone(), addr, source });
        }
        bibe_links.insert((w.upper, w.bibe), writer);
    }

    let audit_out = match &options.audit_path {
        Some(path) => Some(BufWriter::new(std::fs::File::create(path).map_err(|e| {
            DaemonError::Config(ConfigError::Io { path: path.clone(), source: e })
        })?)),
        None => None,
    };

    let core = Core {
        assembly,
        clients: HashMap::new(),
        bibe_links,
        senders: HashMap::new(),
        open: HashMap::new(),
        discovery,
        tx: tx.clone(),
        log: log.clone(),
        audit_out,
        audit_seq: 0,
    };
    let handle = thread::Builder::new()
        .name(format!("{}-core", spec.node))
        .spawn(move || core.run(rx))
        .expect("spawn core thread");
    Ok(RunningNode { node: spec.node.clone(), aap, streams, tx, stop, wake, core: Some(handle), log })
}

/// Address advertised to peers: the configured one unless it asked for an
/// ephemeral port.
fn advertise_addr(configured: &str, bound: SocketAddr) -> String {
    if configured.ends_with(":0") {
        bound.to_string()
    } else {
        configured.to_string()
    }
}

fn spawn_aap_acceptor(listener: TcpListener, inst: usize, tx: Sender<Input>, stop: Arc<AtomicBool>, agents: Arc<AtomicU64>) {
    thread::spawn(move || {
        for conn in listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                return;
            }
            let Ok(conn) = conn else { continue };
            let _ = conn.set_nodelay(true);
            let agent = AgentHandle(agents.fetch_add(1, Ordering::SeqCst));
            let (out_tx, out_rx) = mpsc::channel::<AapMessage>();
            let Ok(mut writer) = conn.try_clone() else { continue };
            thread::spawn(move || {
                for message in out_rx {
                    if message.write_to(&mut writer).is_err() {
                        return;
                    }
                }
            });
            if tx.send(Input::AapConnected { inst, agent, tx: out_tx }).is_err() {
                return;
            }
            let tx = tx.clone();
            thread::spawn(move || {
                let mut conn = conn;
                while let Ok(Some(message)) = AapMessage::read_from(&mut conn) {
                    if tx.send(Input::AapRequest { inst, agent, message }).is_err() {
                        return;
                    }
                }
                let _ = tx.send(Input::AapClosed { inst, agent });
            });
        }
    });
}

fn spawn_stream_acceptor(listener: TcpListener, inst: usize, tx: Sender<Input>, stop: Arc<AtomicBool>) {
    thread::spawn(move || {
        for conn in listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                return;
            }
            let Ok(mut conn) = conn else { continue };
            let tx = tx.clone();
            thread::spawn(move || loop {
                match framing::read_frame(&mut conn) {
                    Ok(Some(frame)) => {
                        if tx.send(Input::StreamFrame { inst, frame }).is_err() {
                            return;
                        }
                    }
                    Ok(None) => return,
                    Err(e) => {
                        log::warn!("stream connection dropped: {e}");
                        return;
                    }
                }
            });
        }
    });
}

fn spawn_bibe_reader(mut conn: TcpStream, inst: usize, bibe: usize, tx: Sender<Input>) {
    thread::spawn(move || loop {
        match AapMessage::read_from(&mut conn) {
            Ok(Some(AapMessage::Recv { payload, .. })) => {
                if tx.send(Input::BibeRecv { inst, bibe, payload }).is_err() {
                    return;
                }
            }
            Ok(Some(AapMessage::Nack { reason })) => log::warn!("lower instance refused BIBE request: {reason}"),
            Ok(Some(_)) => {}
            Ok(None) | Err(_) => return,
        }
    });
}

fn spawn_beacon_reader(socket: UdpSocket, inst: usize, tx: Sender<Input>, stop: Arc<AtomicBool>) {
    let _ = socket.set_read_timeout(Some(Duration::from_millis(200)));
    thread::spawn(move || {
        let mut buf = [0u8; 2048];
        while !stop.load(Ordering::SeqCst) {
            if let Ok((n, _)) = socket.recv_from(&mut buf) {
                if tx.send(Input::Beacon { inst, datagram: buf[..n].to_vec() }).is_err() {
                    return;
                }
            }
        }
    });
}

/// Sends frames to one peer in order, reconnecting after failures and pacing
/// by the contact rate.
fn spawn_sender(inst: usize, address: String, tx: Sender<Input>) -> Sender<Outgoing> {
    let (out_tx, out_rx) = mpsc::channel::<Outgoing>();
    thread::spawn(move || {
        let mut conn: Option<TcpStream> = None;
        for out in out_rx {
            let start = Instant::now();
            let result = match conn.as_mut() {
                Some(c) => c.write_all(&out.frame),
                None => TcpStream::connect(&address).and_then(|mut c| {
                    let _ = c.set_nodelay(true);
                    c.write_all(&out.frame)?;
                    conn = Some(c);
                    Ok(())
                }),
            };
            match result {
                Ok(()) => {
                    let pace = Duration::from_millis(out.duration_ms);
                    if let Some(rest) = pace.checked_sub(start.elapsed()) {
                        thread::sleep(rest);
                    }
                }
                Err(e) => {
                    conn = None;
                    let failed = Input::TransmitFailed { inst, hop: out.hop, bundle: out.bundle, reason: e.to_string() };
                    if tx.send(failed).is_err() {
                        return;
                    }
                }
            }
        }
    });
    out_tx
}

struct Discovery {
    agent: DiscoveryAgent,
    socket: UdpSocket,
    targets: Vec<SocketAddr>,
    next: Instant,
}

struct Core {
    assembly: NodeAssembly,
    clients: HashMap<AgentHandle, Sender<AapMessage>>,
    bibe_links: HashMap<(usize, usize), TcpStream>,
    senders: HashMap<(usize, String), Sender<Outgoing>>,
    open: HashMap<usize, BTreeSet<ClaAddress>>,
    discovery: HashMap<usize, Discovery>,
    tx: Sender<Input>,
    log: AuditLog,
    audit_out: Option<BufWriter<std::fs::File>>,
    audit_seq: u64,
}

impl Core {
    fn run(mut self, rx: Receiver<Input>) {
        let mut last_retry = Instant::now();
        self.poll_contacts();
        loop {
            match rx.recv_timeout(TICK) {
                Ok(Input::Shutdown) | Err(RecvTimeoutError::Disconnected) => break,
                Ok(input) => self.handle(input),
                Err(RecvTimeoutError::Timeout) => {}
            }
            self.poll_contacts();
            self.poll_discovery();
            if last_retry.elapsed() >= RETRY_EVERY {
                last_retry = Instant::now();
                let now = DtnTime::now();
                for i in 0..self.assembly.instances.len() {
                    let instance = &mut self.assembly.instances[i].instance;
                    instance.purge_expired(now);
                    instance.retry_open(now);
                    self.drain(i);
                }
            }
            self.flush_audit();
        }
        self.flush_audit();
    }

    fn handle(&mut self, input: Input) {
        let now = DtnTime::now();
        match input {
            Input::AapConnected { inst, agent, tx } => {
                self.clients.insert(agent, tx);
                self.assembly.instances[inst].instance.aap_connected(agent);
                self.drain(inst);
            }
            Input::AapRequest { inst, agent, message } => {
                self.assembly.instances[inst].instance.handle_aap(agent, message, now);
                self.drain(inst);
            }
            Input::AapClosed { inst, agent } => {
                self.clients.remove(&agent);
                self.assembly.instances[inst].instance.aap_disconnected(agent);
            }
            Input::StreamFrame { inst, frame } => {
                let instance = &mut self.assembly.instances[inst].instance;
                match instance.audit().decode(&frame, now) {
                    Ok(bundle) => {
                        instance.dispatch(bundle, now);
                        self.drain(inst);
                    }
                    Err(e) => log::warn!("{}: dropping undecodable bundle: {e}", instance.scope()),
                }
            }
            Input::BibeRecv { inst, bibe, payload } => {
                let asm = &mut self.assembly.instances[inst];
                match asm.bibes[bibe].decapsulate(&payload, now) {
                    Ok(bundle) => {
                        asm.instance.dispatch(bundle, now);
                        self.drain(inst);
                    }
                    Err(e) => log::warn!("{}: dropping undecodable BIBE PDU: {e}", asm.spec.scope),
                }
            }
            Input::TransmitFailed { inst, hop, bundle, reason } => {
                self.assembly.instances[inst].instance.transmit_failed(hop, bundle, &reason, now);
                self.drain(inst);
            }
            Input::Beacon { inst, datagram } => {
                let Ok(beacon) = Beacon::decode(&datagram) else {
                    log::debug!("ignoring undecodable beacon");
                    return;
                };
                let events = match self.discovery.get_mut(&inst) {
                    Some(d) => d.agent.handle_beacon(&beacon, now),
                    None => return,
                };
                self.apply_discovery(inst, &events, now);
            }
            Input::Shutdown => {}
        }
    }

    /// Diffs each instance's open stream peers against the last poll.
    fn poll_contacts(&mut self) {
        let now = DtnTime::now();
        for i in 0..self.assembly.instances.len() {
            let asm = &mut self.assembly.instances[i];
            let current: BTreeSet<ClaAddress> = asm.streams.iter().flat_map(|s| s.contacts.open_peers(now)).collect();
            let previous = self.open.insert(i, current.clone()).unwrap_or_default();
            for gone in previous.difference(&current) {
                asm.instance.contact_ended(gone);
            }
            for new in current.difference(&previous) {
                asm.instance.contact_started(new.clone(), now);
            }
            self.drain(i);
        }
    }

    fn poll_discovery(&mut self) {
        let due: Vec<usize> = self.discovery.iter().filter(|(_, d)| d.next <= Instant::now()).map(|(i, _)| *i).collect();
        for inst in due {
            let now = DtnTime::now();
            let d = self.discovery.get_mut(&inst).expect("due agent");
            let expired = d.agent.expire(now);
            let datagram = d.agent.make_beacon().encode();
            for target in &d.targets {
                if let Err(e) = d.socket.send_to(&datagram, target) {
                    log::debug!("beacon to {target} failed: {e}");
                }
            }
            d.next = Instant::now() + Duration::from_millis(d.agent.next_emit_delay());
            self.apply_discovery(inst, &expired, now);
        }
    }

    fn apply_discovery(&mut self, inst: usize, events: &[DiscoveryEvent], now: DtnTime) {
        if events.is_empty() {
            return;
        }
        let asm = &mut self.assembly.instances[inst];
        for e in events {
            match e {
                DiscoveryEvent::ContactUp { peer } => {
                    if let Some(s) = asm.stream_mut(&peer.cla) {
                        s.contacts.add(Contact::open_ended(peer.clone(), now));
                    }
                    self.open.entry(inst).or_default().insert(peer.clone());
                }
                DiscoveryEvent::ContactDown { peer } => {
                    if let Some(s) = asm.stream_mut(&peer.cla) {
                        s.contacts.remove_peer(peer);
                    }
                    self.open.entry(inst).or_default().remove(peer);
                }
                _ => {}
            }
        }
        apply_to_instance(&mut asm.instance, events, now);
        self.drain(inst);
    }

    fn drain(&mut self, inst: usize) {
        loop {
            let actions = self.assembly.instances[inst].instance.take_actions();
            if actions.is_empty() {
                return;
            }
            for action in actions {
                match action {
                    Action::Aap { agent, message } => {
                        if let Some(tx) = self.clients.get(&agent) {
                            let _ = tx.send(message);
                        }
                    }
                    Action::Transmit { next_hop, kind: ClaKind::Stream, bundle } => self.transmit_stream(inst, next_hop, bundle),
                    Action::Transmit { next_hop, kind: ClaKind::Bibe, bundle } => self.transmit_bibe(inst, next_hop, bundle),
                }
            }
        }
    }

    fn transmit_stream(&mut self, inst: usize, hop: ClaAddress, bundle: Bundle) {
        let now = DtnTime::now();
        let asm = &mut self.assembly.instances[inst];
        let transfer = match asm.stream_mut(&hop.cla).map(|s| s.transmit(&hop, &bundle, now)) {
            Some(Ok(t)) => t,
            Some(Err(e)) => return asm.instance.transmit_failed(hop, bundle, &e.to_string(), now),
            None => return asm.instance.transmit_failed(hop, bundle, "no such stream CLA", now),
        };
        let tx = self.tx.clone();
        let sender = self
            .senders
            .entry((inst, hop.address.clone()))
            .or_insert_with(|| spawn_sender(inst, hop.address.clone(), tx));
        let _ = sender.send(Outgoing { hop, bundle, frame: transfer.frame, duration_ms: transfer.duration_ms });
    }

    fn transmit_bibe(&mut self, inst: usize, hop: ClaAddress, bundle: Bundle) {
        let now = DtnTime::now();
        let asm = &mut self.assembly.instances[inst];
        let Some(b) = asm.bibe_index(&hop.cla) else {
            return asm.instance.transmit_failed(hop, bundle, "no such BIBE CLA", now);
        };
        let send = match asm.bibes[b].encapsulate(&hop, &bundle, now) {
            Ok(send) => send,
            Err(e) => return asm.instance.transmit_failed(hop, bundle, &e.to_string(), now),
        };
        let link = self.bibe_links.get_mut(&(inst, b)).expect("wired BIBE CLA");
        if let Err(e) = send.write_to(link) {
            asm.instance.transmit_failed(hop, bundle, &e.to_string(), now);
        }
    }

    fn flush_audit(&mut self) {
        let Some(out) = self.audit_out.as_mut() else { return };
        let mut fresh: Vec<_> = self.log.events().into_iter().filter(|e| e.seq >= self.audit_seq).collect();
        if fresh.is_empty() {
            return;
        }
        fresh.sort_by_key(|e| e.seq);
        for event in &fresh {
            if let Ok(line) = serde_json::to_string(event) {
                let _ = writeln!(out, "{line}");
            }
        }
        let _ = out.flush();
        self.audit_seq = fresh.last().map_or(self.audit_seq, |e| e.seq + 1);
    }
}
