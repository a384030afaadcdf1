//! Discrete-event execution of a scenario over emulated links.
//!
//! All node activity happens inside scheduler events ordered by (virtual
//! time, insertion sequence), so a run is a pure function of the script and
//! the seed. In wall-clock mode the same schedule is paced against the host
//! clock.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::time::{Duration, Instant};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audit::{AuditLog, Digest, EventKind};
use crate::bpa::{AapMessage, Action, AgentHandle};
use crate::bundle::{decode_bpdu, decode_bundle, Bundle};
use crate::cla::stream::SEGMENT_LEN;
use crate::cla::{ClaAddress, ClaKind, Contact};
use crate::config::ConfigError;
use crate::discovery::{apply_to_instance, Beacon, DiscoveryAgent, DiscoveryEvent};
use crate::framing::FrameDecoder;
use crate::time::DtnTime;

use super::assembly::{build_assembly, NodeAssembly};
use super::report::{ExpectationResult, InstanceReport, Metrics, ScenarioReport};
use super::script::{Behavior, PhaseAction, ScenarioScript};
use super::verdict::{audit_scope_isolation, InstanceFacts};

/// Virtual time zero maps to this DTN time.
pub const SIM_EPOCH: DtnTime = DtnTime(750_000_000_000);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Overrides the script's seed.
    pub seed: Option<u64>,
    pub wall_clock: bool,
    /// Test hook: lower layers peek into payloads, which must make the
    /// isolation audit fail.
    pub inject_leak: bool,
}

/// (sender node, sender instance, receiver node, receiver instance, receiving CLA)
type ConnKey = (usize, usize, usize, usize, String);

enum Event {
    Phase(usize),
    AapToInstance { node: usize, inst: usize, agent: AgentHandle, body: Vec<u8> },
    AapToClient { agent: AgentHandle, body: Vec<u8> },
    Segment { conn: ConnKey, bytes: Vec<u8> },
    ContactStart { node: usize, inst: usize, peer: ClaAddress },
    ContactEnd { node: usize, inst: usize, peer: ClaAddress },
    BeaconEmit { node: usize, inst: usize },
    BeaconArrive { node: usize, inst: usize, datagram: Vec<u8> },
}

#[derive(Clone, Copy)]
enum Client {
    App(usize),
    Bibe { node: usize, upper: usize, bibe: usize },
}

struct Delivery {
    at_ms: u64,
    digest: Digest,
}

struct AppState {
    node: usize,
    inst: usize,
    agent: AgentHandle,
    deliveries: Vec<Delivery>,
}

struct Tracked {
    sent_ms: u64,
    digest: Digest,
    len: usize,
}

struct LinkState {
    a: usize,
    b: usize,
    delay_ms: u64,
    up: bool,
}

struct Simulator<'a> {
    script: &'a ScenarioScript,
    log: AuditLog,
    nodes: Vec<NodeAssembly>,
    apps: Vec<AppState>,
    clients: BTreeMap<AgentHandle, Client>,
    bibe_agents: BTreeMap<(usize, usize, usize), AgentHandle>,
    next_agent: u64,
    queue: BinaryHeap<Reverse<(u64, u64)>>,
    pending: BTreeMap<u64, Event>,
    next_seq: u64,
    now_ms: u64,
    links: Vec<LinkState>,
    listeners: BTreeMap<String, (usize, usize, String)>,
    decoders: BTreeMap<ConnKey, FrameDecoder>,
    busy_until: BTreeMap<ConnKey, u64>,
    discovery: BTreeMap<(usize, usize), (DiscoveryAgent, String)>,
    tracked: BTreeMap<String, Vec<Tracked>>,
    rng: ChaCha8Rng,
    metrics: Metrics,
    errors: Vec<String>,
    initial_hashes: BTreeMap<(usize, usize), Digest>,
    learned_peak: BTreeMap<(usize, usize), usize>,
}

/// Runs a scenario to completion and audits it.
pub fn run_scenario(script: &ScenarioScript, options: RunOptions) -> Result<ScenarioReport, ConfigError> {
    let started = Instant::now();
    let seed = options.seed.unwrap_or(script.seed);
    let mut sim = Simulator::new(script, seed, options.inject_leak)?;
    sim.run(options.wall_clock.then_some(started));
    let mut report = sim.finish(seed, if options.wall_clock { "wall-clock" } else { "virtual" });
    report.wall_runtime_ms = started.elapsed().as_millis() as u64;
    Ok(report)
}

fn payload_of(rng: &mut ChaCha8Rng, size: usize) -> Vec<u8> {
    let mut payload = vec![0u8; size];
    rng.fill_bytes(&mut payload);
    payload
}

/// Number of bundle layers in `bundle`, following BPDU payloads inward.
pub fn wire_nesting(bundle: &Bundle) -> usize {
    let mut levels = 1;
    let mut payload = bundle.payload.clone();
    while let Some(inner) = decode_bpdu(&payload).ok().and_then(|pdu| decode_bundle(&pdu.encapsulated).ok()) {
        levels += 1;
        payload = inner.payload;
    }
    levels
}

impl<'a> Simulator<'a> {
    fn new(script: &'a ScenarioScript, seed: u64, inject_leak: bool) -> Result<Self, ConfigError> {
        let log = AuditLog::new();
        let nodes = script
            .nodes
            .iter()
            .map(|spec| build_assembly(spec, &log, SIM_EPOCH))
            .collect::<Result<Vec<_>, _>>()?;
        let index = |name: &str| nodes.iter().position(|n| n.node == name).expect("validated node name");
        let links = script
            .links
            .iter()
            .map(|l| LinkState { a: index(&l.a), b: index(&l.b), delay_ms: l.delay_ms, up: l.up })
            .collect();
        let mut sim = Simulator {
            script,
            log,
            apps: Vec::new(),
            clients: BTreeMap::new(),
            bibe_agents: BTreeMap::new(),
            next_agent: 1,
            queue: BinaryHeap::new(),
            pending: BTreeMap::new(),
            next_seq: 0,
            now_ms: 0,
            links,
            listeners: BTreeMap::new(),
            decoders: BTreeMap::new(),
            busy_until: BTreeMap::new(),
            discovery: BTreeMap::new(),
            tracked: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            metrics: Metrics::default(),
            errors: Vec::new(),
            initial_hashes: BTreeMap::new(),
            learned_peak: BTreeMap::new(),
            nodes,
        };
        sim.setup(seed, inject_leak);
        Ok(sim)
    }

    fn now(&self) -> DtnTime {
        SIM_EPOCH.saturating_add(self.now_ms)
    }

    fn schedule(&mut self, at_ms: u64, event: Event) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse((at_ms, seq)));
        self.pending.insert(seq, event);
    }

    fn new_agent(&mut self, client: Client) -> AgentHandle {
        let agent = AgentHandle(self.next_agent);
        self.next_agent += 1;
        self.clients.insert(agent, client);
        agent
    }

    fn setup(&mut self, seed: u64, inject_leak: bool) {
        for n in 0..self.nodes.len() {
            for i in 0..self.nodes[n].instances.len() {
                let (contacts, discovery) = {
                    let asm = &mut self.nodes[n].instances[i];
                    asm.instance.set_payload_inspection(inject_leak);
                    self.initial_hashes.insert((n, i), asm.instance.routes_hash());
                    for s in &asm.streams {
                        self.listeners.insert(s.listen.clone(), (n, i, s.name.clone()));
                    }
                    let contacts: Vec<Contact> =
                        asm.streams.iter().flat_map(|s| s.contacts.contacts().to_vec()).collect();
                    let discovery = asm.spec.discovery.clone().filter(|d| d.enabled).map(|d| {
                        let listen = asm.spec.streams.iter().find(|s| s.name == d.cla).expect("validated").listen.clone();
                        (d, listen, asm.spec.eids[0].clone())
                    });
                    (contacts, discovery)
                };
                for c in contacts {
                    self.schedule_contact(n, i, &c);
                }
                if let Some((d, listen, own)) = discovery {
                    let mut agent = DiscoveryAgent::new(
                        own,
                        ClaAddress::new(d.cla.clone(), listen),
                        d.period_ms,
                        seed ^ ((n as u64) << 32 | i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                    );
                    let first = agent.next_emit_delay();
                    self.discovery.insert((n, i), (agent, d.channel.clone()));
                    self.schedule(first, Event::BeaconEmit { node: n, inst: i });
                }
            }
            let wiring = self.nodes[n].wiring.clone();
            for w in wiring {
                let agent = self.new_agent(Client::Bibe { node: n, upper: w.upper, bibe: w.bibe });
                self.bibe_agents.insert((n, w.upper, w.bibe), agent);
                self.nodes[n].instances[w.lower].instance.aap_connected(agent);
                self.drain(n, w.lower);
                let register = self.nodes[n].instances[w.upper].bibes[w.bibe].registration();
                self.schedule(0, Event::AapToInstance { node: n, inst: w.lower, agent, body: register.encode() });
            }
        }
        for (a, app) in self.script.apps.iter().enumerate() {
            let node = self.nodes.iter().position(|n| n.node == app.node).expect("validated");
            let inst = self.nodes[node].instances.iter().position(|i| i.spec.scope == app.scope).expect("validated");
            let agent = self.new_agent(Client::App(a));
            self.apps.push(AppState { node, inst, agent, deliveries: Vec::new() });
            self.nodes[node].instances[inst].instance.aap_connected(agent);
            self.drain(node, inst);
            if let Some(eid) = &app.register {
                let body = AapMessage::Register { eid: eid.to_string() }.encode();
                self.schedule(0, Event::AapToInstance { node, inst, agent, body });
            }
        }
        for (p, phase) in self.script.phases.iter().enumerate() {
            self.schedule(phase.at_ms, Event::Phase(p));
        }
    }

    fn schedule_contact(&mut self, node: usize, inst: usize, c: &Contact) {
        let start = c.start.saturating_sub(SIM_EPOCH).max(self.now_ms);
        self.schedule(start, Event::ContactStart { node, inst, peer: c.peer.clone() });
        if c.end != DtnTime(u64::MAX) {
            let end = c.end.saturating_sub(SIM_EPOCH);
            self.schedule(end, Event::ContactEnd { node, inst, peer: c.peer.clone() });
        }
    }

    fn run(&mut self, pace: Option<Instant>) {
        while let Some(Reverse((at, seq))) = self.queue.pop() {
            if at > self.script.duration_ms {
                break;
            }
            if let Some(start) = pace {
                let target = start + Duration::from_millis(at);
                let now = Instant::now();
                if target > now {
                    std::thread::sleep(target - now);
                }
            }
            self.now_ms = at;
            let event = self.pending.remove(&seq).expect("scheduled event");
            self.handle(event);
        }
    }

    fn handle(&mut self, event: Event) {
        let now = self.now();
        match event {
            Event::Phase(p) => self.phase(p),
            Event::AapToInstance { node, inst, agent, body } => match AapMessage::decode(&body) {
                Ok(msg) => {
                    self.nodes[node].instances[inst].instance.handle_aap(agent, msg, now);
                    self.drain(node, inst);
                }
                Err(e) => self.errors.push(format!("undecodable AAP request: {e}")),
            },
            Event::AapToClient { agent, body } => match AapMessage::decode(&body) {
                Ok(msg) => self.client_receive(agent, msg),
                Err(e) => self.errors.push(format!("undecodable AAP reply: {e}")),
            },
            Event::Segment { conn, bytes } => {
                let frames = match self.decoders.entry(conn.clone()).or_default().push(&bytes) {
                    Ok(frames) => frames,
                    Err(e) => {
                        self.errors.push(format!("stream framing error: {e}"));
                        return;
                    }
                };
                let (_, _, node, inst, _) = conn;
                for frame in frames {
                    let asm = &mut self.nodes[node].instances[inst];
                    if let Ok(bundle) = asm.instance.audit().decode(&frame, now) {
                        asm.instance.dispatch(bundle, now);
                    }
                    self.drain(node, inst);
                }
            }
            Event::ContactStart { node, inst, peer } => {
                let asm = &mut self.nodes[node].instances[inst];
                let open = asm.stream_mut(&peer.cla).is_some_and(|s| s.contacts.is_open(&peer, now));
                if open {
                    asm.instance.contact_started(peer, now);
                    self.drain(node, inst);
                }
            }
            Event::ContactEnd { node, inst, peer } => {
                let asm = &mut self.nodes[node].instances[inst];
                let open = asm.stream_mut(&peer.cla).is_some_and(|s| s.contacts.is_open(&peer, now));
                if !open {
                    asm.instance.contact_ended(&peer);
                }
            }
            Event::BeaconEmit { node, inst } => self.emit_beacon(node, inst),
            Event::BeaconArrive { node, inst, datagram } => {
                let Ok(beacon) = Beacon::decode(&datagram) else {
                    self.errors.push(format!("undecodable beacon at {}", self.nodes[node].node));
                    return;
                };
                let events = match self.discovery.get_mut(&(node, inst)) {
                    Some((agent, _)) => agent.handle_beacon(&beacon, now),
                    None => return,
                };
                self.apply_discovery(node, inst, &events);
            }
        }
    }

    fn apply_discovery(&mut self, node: usize, inst: usize, events: &[DiscoveryEvent]) {
        if events.is_empty() {
            return;
        }
        let now = self.now();
        let asm = &mut self.nodes[node].instances[inst];
        for e in events {
            match e {
                DiscoveryEvent::ContactUp { peer } => {
                    if let Some(s) = asm.stream_mut(&peer.cla) {
                        s.contacts.add(Contact::open_ended(peer.clone(), now));
                    }
                }
                DiscoveryEvent::ContactDown { peer } => {
                    if let Some(s) = asm.stream_mut(&peer.cla) {
                        s.contacts.remove_peer(peer);
                    }
                }
                _ => {}
            }
        }
        apply_to_instance(&mut asm.instance, events, now);
        let learned = asm.instance.routes().learned().len();
        let peak = self.learned_peak.entry((node, inst)).or_default();
        *peak = (*peak).max(learned);
        self.drain(node, inst);
    }

    fn emit_beacon(&mut self, node: usize, inst: usize) {
        let now = self.now();
        let (expired, datagram, channel, next) = {
            let (agent, channel) = self.discovery.get_mut(&(node, inst)).expect("discovery agent");
            let expired = agent.expire(now);
            (expired, agent.make_beacon().encode(), channel.clone(), agent.next_emit_delay())
        };
        self.apply_discovery(node, inst, &expired);
        let listeners: Vec<(usize, usize)> = self
            .discovery
            .iter()
            .filter(|((n, _), (_, ch))| *n != node && *ch == channel)
            .map(|(k, _)| *k)
            .collect();
        for (n, i) in listeners {
            if let Some(delay) = self.link_delay(node, n) {
                self.schedule(self.now_ms + delay, Event::BeaconArrive { node: n, inst: i, datagram: datagram.clone() });
            }
        }
        self.schedule(self.now_ms + next, Event::BeaconEmit { node, inst });
    }

    /// One-way delay of an up link between two nodes.
    fn link_delay(&self, a: usize, b: usize) -> Option<u64> {
        if a == b {
            return Some(0);
        }
        self.links
            .iter()
            .find(|l| l.up && ((l.a == a && l.b == b) || (l.a == b && l.b == a)))
            .map(|l| l.delay_ms)
    }

    fn drain(&mut self, node: usize, inst: usize) {
        loop {
            let actions = self.nodes[node].instances[inst].instance.take_actions();
            if actions.is_empty() {
                return;
            }
            for action in actions {
                match action {
                    Action::Aap { agent, message } => {
                        self.schedule(self.now_ms, Event::AapToClient { agent, body: message.encode() });
                    }
                    Action::Transmit { next_hop, kind: ClaKind::Stream, bundle } => {
                        self.transmit_stream(node, inst, next_hop, bundle)
                    }
                    Action::Transmit { next_hop, kind: ClaKind::Bibe, bundle } => {
                        self.transmit_bibe(node, inst, next_hop, bundle)
                    }
                }
            }
        }
    }

    fn transmit_bibe(&mut self, node: usize, inst: usize, hop: ClaAddress, bundle: Bundle) {
        let now = self.now();
        let asm = &mut self.nodes[node].instances[inst];
        let Some(b) = asm.bibe_index(&hop.cla) else {
            asm.instance.transmit_failed(hop, bundle, "no such BIBE CLA", now);
            return;
        };
        match asm.bibes[b].encapsulate(&hop, &bundle, now) {
            Ok(send) => {
                let lower = asm.spec.bibes[b].lower;
                let agent = self.bibe_agents[&(node, inst, b)];
                self.schedule(self.now_ms, Event::AapToInstance { node, inst: lower, agent, body: send.encode() });
            }
            Err(e) => asm.instance.transmit_failed(hop, bundle, &e.to_string(), now),
        }
    }

    fn transmit_stream(&mut self, node: usize, inst: usize, hop: ClaAddress, bundle: Bundle) {
        let now = self.now();
        let target = self.listeners.get(&hop.address).cloned();
        let delay = target.as_ref().and_then(|(n, _, _)| self.link_delay(node, *n));
        let asm = &mut self.nodes[node].instances[inst];
        let transfer = match asm.stream_mut(&hop.cla).map(|s| s.transmit(&hop, &bundle, now)) {
            Some(Ok(t)) => t,
            Some(Err(e)) => return asm.instance.transmit_failed(hop, bundle, &e.to_string(), now),
            None => return asm.instance.transmit_failed(hop, bundle, "no such stream CLA", now),
        };
        let (Some((tn, ti, tcla)), Some(delay)) = (target, delay) else {
            return asm.instance.transmit_failed(hop, bundle, "peer unreachable", now);
        };
        self.metrics.stream_transfers += 1;
        self.metrics.bytes_on_wire += transfer.frame.len() as u64;
        self.metrics.max_wire_nesting = self.metrics.max_wire_nesting.max(wire_nesting(&bundle));
        let conn: ConnKey = (node, inst, tn, ti, tcla);
        let start = self.busy_until.get(&conn).copied().unwrap_or(0).max(self.now_ms);
        self.busy_until.insert(conn.clone(), start + transfer.duration_ms);
        let segments: Vec<Vec<u8>> = transfer.frame.chunks(SEGMENT_LEN).map(<[u8]>::to_vec).collect();
        let count = segments.len() as u64;
        for (k, bytes) in segments.into_iter().enumerate() {
            let at = start + delay + transfer.duration_ms * (k as u64 + 1) / count;
            self.schedule(at, Event::Segment { conn: conn.clone(), bytes });
        }
    }

    fn client_receive(&mut self, agent: AgentHandle, message: AapMessage) {
        let now = self.now();
        match (self.clients[&agent], message) {
            (_, AapMessage::Welcome { .. } | AapMessage::Ack) => {}
            (Client::App(a), AapMessage::Recv { source, payload }) => {
                let digest = Digest::of(&payload);
                self.apps[a].deliveries.push(Delivery { at_ms: self.now_ms, digest });
                if let Behavior::Responder { size, tag } = &self.script.apps[a].behavior {
                    let photo = payload_of(&mut self.rng, *size);
                    self.track(tag.clone(), &photo);
                    let send = AapMessage::Send { destination: source, lifetime_ms: 0, payload: photo };
                    let (node, inst) = (self.apps[a].node, self.apps[a].inst);
                    self.schedule(self.now_ms, Event::AapToInstance { node, inst, agent, body: send.encode() });
                }
            }
            (Client::Bibe { node, upper, bibe }, AapMessage::Recv { payload, .. }) => {
                let asm = &mut self.nodes[node].instances[upper];
                if let Ok(bundle) = asm.bibes[bibe].decapsulate(&payload, now) {
                    asm.instance.dispatch(bundle, now);
                }
                self.drain(node, upper);
            }
            (client, AapMessage::Nack { reason }) => {
                let who = match client {
                    Client::App(a) => format!("app {}", self.script.apps[a].id),
                    Client::Bibe { node, upper, bibe } => {
                        format!("{} BIBE CLA {}", self.nodes[node].node, self.nodes[node].instances[upper].bibes[bibe].name)
                    }
                };
                self.errors.push(format!("{who} was refused: {reason}"));
            }
            (_, other) => self.errors.push(format!("unexpected AAP message to client: {other:?}")),
        }
    }

    fn track(&mut self, tag: String, payload: &[u8]) {
        self.tracked.entry(tag).or_default().push(Tracked {
            sent_ms: self.now_ms,
            digest: Digest::of(payload),
            len: payload.len(),
        });
    }

    fn phase(&mut self, p: usize) {
        let now = self.now();
        match self.script.phases[p].action.clone() {
            PhaseAction::Inject { app, dest, tag, payload, payload_size, lifetime_ms } => {
                let a = self.app_index(&app);
                let payload = match (payload, payload_size) {
                    (Some(text), _) => text.into_bytes(),
                    (None, size) => payload_of(&mut self.rng, size.unwrap_or(0)),
                };
                self.track(tag, &payload);
                let send = AapMessage::Send { destination: dest, lifetime_ms: lifetime_ms.unwrap_or(0), payload };
                let (node, inst, agent) = (self.apps[a].node, self.apps[a].inst, self.apps[a].agent);
                self.schedule(self.now_ms, Event::AapToInstance { node, inst, agent, body: send.encode() });
            }
            PhaseAction::OpenLink { a, b } | PhaseAction::CloseLink { a, b } => {
                let up = matches!(self.script.phases[p].action, PhaseAction::OpenLink { .. });
                let (na, nb) = (self.node_index(&a), self.node_index(&b));
                for l in self.links.iter_mut().filter(|l| (l.a == na && l.b == nb) || (l.a == nb && l.b == na)) {
                    l.up = up;
                }
                if up {
                    for n in [na, nb] {
                        for i in 0..self.nodes[n].instances.len() {
                            self.nodes[n].instances[i].instance.retry_open(now);
                            self.drain(n, i);
                        }
                    }
                }
            }
            PhaseAction::Reconfigure { node, scope, profile } => {
                let n = self.node_index(&node);
                let i = self.nodes[n].instances.iter().position(|x| x.spec.scope == scope).expect("validated");
                if let Err(e) = self.reconfigure(n, i, &profile) {
                    self.errors.push(format!("phase {p}: {e}"));
                }
            }
            PhaseAction::ExpectDelivery { .. } | PhaseAction::ExpectPhotoReturn { .. } => {}
        }
    }

    /// Swaps the profile-defined contacts and routes of one instance.
    /// Stored bundles stay put and are re-dispatched under the new table.
    fn reconfigure(&mut self, node: usize, inst: usize, profile: &str) -> Result<(), String> {
        let now = self.now();
        let node_name = self.nodes[node].node.clone();
        let asm = &mut self.nodes[node].instances[inst];
        let routes = asm
            .spec
            .routes_with(Some(profile))
            .ok_or_else(|| format!("unknown profile {profile:?} for {node_name}/{}", asm.spec.scope))?;
        let contacts: Vec<Contact> =
            asm.spec.contacts_with(Some(profile)).expect("profile exists").iter().map(|c| c.at(SIM_EPOCH)).collect();
        let before: Vec<ClaAddress> = asm.streams.iter().flat_map(|s| s.contacts.open_peers(now)).collect();
        for s in &mut asm.streams {
            let mine = contacts.iter().filter(|c| c.peer.cla == s.name).cloned().collect();
            s.contacts = crate::cla::ContactPlan::new(mine);
        }
        let after: Vec<ClaAddress> = asm.streams.iter().flat_map(|s| s.contacts.open_peers(now)).collect();
        for hop in before.iter().filter(|h| !after.contains(h)) {
            asm.instance.contact_ended(hop);
        }
        asm.instance
            .apply_routes(routes, now, &format!("profile {profile}"))
            .map_err(|e| e.to_string())?;
        asm.profile = Some(profile.to_string());
        for hop in after {
            asm.instance.contact_started(hop, now);
        }
        self.drain(node, inst);
        let now_ms = self.now_ms;
        let later: Vec<Contact> = contacts
            .into_iter()
            .filter(|c| c.start.saturating_sub(SIM_EPOCH) > now_ms || c.end != DtnTime(u64::MAX))
            .collect();
        for c in &later {
            self.schedule_contact(node, inst, c);
        }
        Ok(())
    }

    fn app_index(&self, id: &str) -> usize {
        self.script.apps.iter().position(|a| a.id == id).expect("validated app id")
    }

    fn node_index(&self, name: &str) -> usize {
        self.nodes.iter().position(|n| n.node == name).expect("validated node name")
    }

    fn finish(self, seed: u64, mode: &str) -> ScenarioReport {
        let events = self.log.events();
        let mut expectations = Vec::new();
        for (p, phase) in self.script.phases.iter().enumerate() {
            let (kind, app, tag, timeout) = match &phase.action {
                PhaseAction::ExpectDelivery { app, tag, timeout_ms } => ("expect_delivery", app, tag, *timeout_ms),
                PhaseAction::ExpectPhotoReturn { app, tag, timeout_ms } => ("expect_photo_return", app, tag, *timeout_ms),
                _ => continue,
            };
            let deadline = phase.at_ms + timeout;
            let state = &self.apps[self.app_index(app)];
            let sent = self.tracked.get(tag).map(Vec::as_slice).unwrap_or_default();
            let hit = sent.iter().find_map(|t| {
                state
                    .deliveries
                    .iter()
                    .find(|d| d.digest == t.digest && d.at_ms <= deadline)
                    .map(|d| (t, d))
            });
            let detail = match (sent.is_empty(), hit.is_some()) {
                (true, _) => format!("nothing was sent under tag {tag:?}"),
                (false, false) => format!("no bit-exact delivery by {deadline} ms"),
                _ => String::new(),
            };
            expectations.push(ExpectationResult {
                phase: p,
                kind: kind.to_string(),
                app: app.clone(),
                tag: tag.clone(),
                passed: hit.is_some(),
                delivered_at_ms: hit.map(|(_, d)| d.at_ms),
                latency_ms: hit.map(|(t, d)| d.at_ms - t.sent_ms),
                bytes: hit.map_or(0, |(t, _)| t.len),
                digest: hit.map(|(t, _)| t.digest),
                detail,
            });
        }

        let mut metrics = self.metrics.clone();
        metrics.events = events.len();
        let count = |k: EventKind| events.iter().filter(|e| e.kind == k).count();
        metrics.parses = count(EventKind::Parse);
        metrics.deliveries = count(EventKind::Deliver);
        metrics.forwards = count(EventKind::Forward);
        metrics.stores = count(EventKind::Store);
        metrics.deletes = count(EventKind::Delete);
        metrics.push_downs = count(EventKind::Encapsulate);
        metrics.pop_ups = count(EventKind::Decapsulate);
        let mut pushes: BTreeMap<Digest, (usize, usize)> = BTreeMap::new();
        for e in &events {
            match e.kind {
                EventKind::Encapsulate => pushes.entry(e.digest).or_default().0 += 1,
                EventKind::Decapsulate => pushes.entry(e.digest).or_default().1 += 1,
                _ => {}
            }
        }
        metrics.encapsulation_balanced = true;
        for e in events.iter().filter(|e| e.kind == EventKind::Deliver) {
            let (down, up) = pushes.get(&e.digest).copied().unwrap_or_default();
            metrics.max_encapsulation_depth = metrics.max_encapsulation_depth.max(down);
            metrics.encapsulation_balanced &= down == up;
        }

        let mut facts = Vec::new();
        let mut instances = Vec::new();
        for (n, node) in self.nodes.iter().enumerate() {
            for (i, asm) in node.instances.iter().enumerate() {
                let inst = &asm.instance;
                let mut eids = asm.spec.eids.clone();
                eids.extend(inst.registry().registered().cloned());
                let mut patterns = asm.spec.all_patterns();
                patterns.extend(inst.routes().configured().iter().map(|r| r.dest.clone()));
                patterns.extend(inst.routes().learned().iter().map(|(e, _)| crate::bpa::RoutePattern::Exact(e.clone())));
                let final_hash = inst.routes_hash();
                facts.push(InstanceFacts {
                    node: node.node.clone(),
                    scope: asm.spec.scope.clone(),
                    discovery: asm.spec.discovery_enabled(),
                    eids,
                    patterns,
                    final_hash,
                });
                let sanctioned = events
                    .iter().rfind(|e| e.node == node.node && e.scope == asm.spec.scope && e.kind == EventKind::RoutesSet)
                    .map_or(final_hash, |e| e.digest);
                instances.push(InstanceReport {
                    node: node.node.clone(),
                    scope: asm.spec.scope.clone(),
                    discovery: asm.spec.discovery_enabled(),
                    initial_hash: self.initial_hashes[&(n, i)],
                    final_hash,
                    sanctioned_hash: sanctioned,
                    profile: asm.profile.clone(),
                    learned_peak: self.learned_peak.get(&(n, i)).copied().unwrap_or(0),
                    stored_at_end: inst.stored_count(),
                });
            }
        }
        let audit = audit_scope_isolation(&events, &facts);

        ScenarioReport {
            name: self.script.name.clone(),
            seed,
            mode: mode.to_string(),
            duration_ms: self.script.duration_ms,
            expectations,
            errors: self.errors,
            audit,
            metrics,
            instances,
            wall_runtime_ms: 0,
            events,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{parse_eid, CreationTimestamp};
    use crate::cla::bibe_encapsulate;

    #[test]
    fn nesting_counts_layers() {
        let eid = |s: &str| parse_eid(s).unwrap();
        let ts = CreationTimestamp { time: DtnTime(1), sequence: 0 };
        let inner = Bundle::new(eid("ipn:1.0"), eid("ipn:2.0"), ts, 1000, b"x".to_vec());
        assert_eq!(wire_nesting(&inner), 1);
        let once = bibe_encapsulate(&inner, eid("dtn://a.s"), eid("dtn://b.s"), ts, 1000);
        let twice = bibe_encapsulate(&once, eid("dtn://c.t"), eid("dtn://d.t"), ts, 1000);
        assert_eq!(wire_nesting(&once), 2);
        assert_eq!(wire_nesting(&twice), 3);
    }
}
