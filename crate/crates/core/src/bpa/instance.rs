//! One bundle protocol agent: a single scope's registry, routes and store.
//!
//! The instance is a pure state machine. Drivers feed it inputs (received
//! bundles, AAP requests, contact changes) and drain the [`Action`]s it
//! queues. It never touches sockets, clocks or other instances.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::audit::{Digest, EventKind, ScopeAudit};
use crate::bundle::{decode_bpdu, encode_bundle, parse_eid, Bundle, CreationTimestamp, EndpointId};
use crate::cla::{ClaAddress, ClaKind};
use crate::time::DtnTime;

use super::aap::AapMessage;
use super::registry::{AgentHandle, EndpointRegistry, RegistrationToken};
use super::routing::{RouteEntry, RoutingTable};
use super::BpaError;

pub const DEFAULT_LIFETIME_MS: u64 = 24 * 60 * 60 * 1000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceConfig {
    pub node: String,
    pub scope: String,
    /// The first EID stamps the source of bundles created through the AAP.
    pub node_eids: Vec<EndpointId>,
    pub clas: BTreeMap<String, ClaKind>,
    pub routes: Vec<RouteEntry>,
    pub default_lifetime_ms: u64,
    /// Keep bundles without a route instead of deleting them. Set where
    /// discovery may add a route later.
    pub store_unrouted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DispatchOutcome {
    DeliveredLocally,
    Forwarded,
    Stored,
    Deleted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    /// Hand a bundle to the CLA named in `next_hop`.
    Transmit { next_hop: ClaAddress, kind: ClaKind, bundle: Bundle },
    /// Send an AAP message to a connected agent.
    Aap { agent: AgentHandle, message: AapMessage },
}

#[derive(Debug, Clone)]
struct Parked {
    order: u64,
    bundle: Bundle,
    digest: Digest,
}

pub struct ScopeInstance {
    node_eids: Vec<EndpointId>,
    clas: BTreeMap<String, ClaKind>,
    registry: EndpointRegistry,
    tokens: BTreeMap<(AgentHandle, EndpointId), RegistrationToken>,
    routes: RoutingTable,
    default_lifetime_ms: u64,
    store_unrouted: bool,
    open_hops: BTreeSet<ClaAddress>,
    store: BTreeMap<ClaAddress, VecDeque<Parked>>,
    unrouted: VecDeque<Parked>,
    next_order: u64,
    last_creation: (DtnTime, u64),
    audit: ScopeAudit,
    actions: Vec<Action>,
    inspect_payloads: bool,
}

impl ScopeInstance {
    pub fn new(config: InstanceConfig, audit: ScopeAudit) -> Result<Self, BpaError> {
        if config.node_eids.is_empty() {
            return Err(BpaError::InvalidRoutes("instance needs at least one node EID".into()));
        }
        let routes = RoutingTable::new(config.routes)?;
        check_hops(&routes.configured().iter().map(|e| e.next_hop.clone()).collect::<Vec<_>>(), &config.clas)?;
        let instance = ScopeInstance {
            node_eids: config.node_eids,
            clas: config.clas,
            registry: EndpointRegistry::default(),
            tokens: BTreeMap::new(),
            routes,
            default_lifetime_ms: config.default_lifetime_ms,
            store_unrouted: config.store_unrouted,
            open_hops: BTreeSet::new(),
            store: BTreeMap::new(),
            unrouted: VecDeque::new(),
            next_order: 0,
            last_creation: (DtnTime(0), 0),
            audit,
            actions: Vec::new(),
            inspect_payloads: false,
        };
        Ok(instance)
    }

    pub fn scope(&self) -> &str {
        self.audit.scope()
    }

    pub fn node(&self) -> &str {
        self.audit.node()
    }

    pub fn node_eid(&self) -> &EndpointId {
        &self.node_eids[0]
    }

    pub fn node_eids(&self) -> &[EndpointId] {
        &self.node_eids
    }

    pub fn audit(&self) -> &ScopeAudit {
        &self.audit
    }

    pub fn routes(&self) -> &RoutingTable {
        &self.routes
    }

    pub fn routes_hash(&self) -> Digest {
        self.routes.hash()
    }

    pub fn cla_kind(&self, name: &str) -> Option<ClaKind> {
        self.clas.get(name).copied()
    }

    pub fn registry(&self) -> &EndpointRegistry {
        &self.registry
    }

    /// Records the current table as the sanctioned configuration.
    pub fn announce_routes(&self, now: DtnTime, detail: &str) {
        self.audit.record(now, EventKind::RoutesSet, self.routes.hash(), detail);
    }

    /// Fault injection for auditor tests: when enabled, the instance tries to
    /// parse every bundle payload as a BPDU-wrapped bundle under its own
    /// scope label, which is exactly the cross-scope leak the auditor exists
    /// to catch.
    pub fn set_payload_inspection(&mut self, enabled: bool) {
        self.inspect_payloads = enabled;
    }

    pub fn take_actions(&mut self) -> Vec<Action> {
        std::mem::take(&mut self.actions)
    }

    pub fn stored_count(&self) -> usize {
        self.store.values().map(VecDeque::len).sum::<usize>() + self.unrouted.len()
    }

    /// Digests of parked bundles in enqueue order.
    pub fn stored_digests(&self) -> Vec<Digest> {
        let mut parked: Vec<&Parked> = self.store.values().flatten().chain(self.unrouted.iter()).collect();
        parked.sort_by_key(|p| p.order);
        parked.into_iter().map(|p| p.digest).collect()
    }

    pub fn is_hop_open(&self, hop: &ClaAddress) -> bool {
        self.open_hops.contains(hop)
    }

    // ---- registration -------------------------------------------------

    pub fn register(&mut self, eid: EndpointId, agent: AgentHandle, now: DtnTime) -> Result<RegistrationToken, BpaError> {
        let token = self.registry.register(eid, agent)?;
        self.retry_unrouted(now);
        Ok(token)
    }

    pub fn release(&mut self, token: RegistrationToken) -> bool {
        self.registry.release(token)
    }

    // ---- application agent protocol ----------------------------------

    pub fn aap_connected(&mut self, agent: AgentHandle) {
        let node_eid = self.node_eid().to_string();
        self.actions.push(Action::Aap { agent, message: AapMessage::Welcome { node_eid } });
    }

    pub fn aap_disconnected(&mut self, agent: AgentHandle) {
        self.registry.release_agent(agent);
        self.tokens.retain(|(a, _), _| *a != agent);
    }

    fn reply(&mut self, agent: AgentHandle, result: Result<(), String>) {
        let message = match result {
            Ok(()) => AapMessage::Ack,
            Err(reason) => AapMessage::Nack { reason },
        };
        self.actions.push(Action::Aap { agent, message });
    }

    pub fn handle_aap(&mut self, agent: AgentHandle, message: AapMessage, now: DtnTime) {
        match message {
            AapMessage::Register { eid } => {
                let result = parse_eid(&eid)
                    .map_err(|e| e.to_string())
                    .and_then(|eid| {
                        self.registry
                            .register(eid.clone(), agent)
                            .map(|token| {
                                self.tokens.insert((agent, eid), token);
                            })
                            .map_err(|e| e.to_string())
                    });
                let ok = result.is_ok();
                self.reply(agent, result);
                if ok {
                    self.retry_unrouted(now);
                }
            }
            AapMessage::Deregister { eid } => {
                let result = parse_eid(&eid).map_err(|e| e.to_string()).and_then(|eid| {
                    match self.tokens.remove(&(agent, eid.clone())) {
                        Some(token) => {
                            self.registry.release(token);
                            Ok(())
                        }
                        None => Err(format!("{eid} is not registered by this agent")),
                    }
                });
                self.reply(agent, result);
            }
            AapMessage::Send { destination, lifetime_ms, payload } => match parse_eid(&destination) {
                Ok(dest) => {
                    let lifetime = if lifetime_ms == 0 { self.default_lifetime_ms } else { lifetime_ms };
                    let bundle = self.create_bundle(dest, lifetime, payload, now);
                    self.reply(agent, Ok(()));
                    self.dispatch(bundle, now);
                }
                Err(e) => self.reply(agent, Err(e.to_string())),
            },
            other => self.reply(agent, Err(format!("unexpected message from agent: {other:?}"))),
        }
    }

    /// Builds a locally originated bundle stamped with this instance's node
    /// EID and a fresh creation timestamp.
    pub fn create_bundle(&mut self, dest: EndpointId, lifetime_ms: u64, payload: Vec<u8>, now: DtnTime) -> Bundle {
        let sequence = if self.last_creation.0 == now { self.last_creation.1 + 1 } else { 0 };
        self.last_creation = (now, sequence);
        Bundle::new(
            self.node_eid().clone(),
            dest,
            CreationTimestamp { time: now, sequence },
            lifetime_ms,
            payload,
        )
    }

    // ---- dispatch -------------------------------------------------------

    /// Runs one bundle to exactly one terminal outcome.
    pub fn dispatch(&mut self, bundle: Bundle, now: DtnTime) -> DispatchOutcome {
        let digest = Digest::of(&encode_bundle(&bundle));
        self.dispatch_tracked(bundle, digest, now)
    }

    fn dispatch_tracked(&mut self, bundle: Bundle, digest: Digest, now: DtnTime) -> DispatchOutcome {
        if self.inspect_payloads {
            if let Ok(pdu) = decode_bpdu(&bundle.payload) {
                let _ = self.audit.decode(&pdu.encapsulated, now);
            }
        }
        if bundle.is_expired(now) {
            self.audit.record(now, EventKind::Delete, digest, "lifetime expired");
            return DispatchOutcome::Deleted;
        }
        if let Some(agent) = self.registry.lookup(&bundle.destination) {
            self.audit.record(now, EventKind::Deliver, digest, bundle.destination.to_string());
            let message = AapMessage::Recv { source: bundle.source.to_string(), payload: bundle.payload };
            self.actions.push(Action::Aap { agent, message });
            return DispatchOutcome::DeliveredLocally;
        }
        if bundle.destination.is_null() {
            self.audit.record(now, EventKind::Delete, digest, "destination is dtn:none");
            return DispatchOutcome::Deleted;
        }
        self.audit.record(now, EventKind::Lookup, digest, bundle.destination.to_string());
        match self.routes.lookup(&bundle.destination).cloned() {
            Ok(hop) => {
                let kind = self.clas[&hop.cla];
                if kind == ClaKind::Bibe || self.open_hops.contains(&hop) {
                    self.audit.record(now, EventKind::Forward, digest, hop.to_string());
                    self.actions.push(Action::Transmit { next_hop: hop, kind, bundle });
                    DispatchOutcome::Forwarded
                } else {
                    self.audit.record(now, EventKind::Store, digest, format!("awaiting contact {hop}"));
                    let parked = self.park(bundle, digest);
                    self.store.entry(hop).or_default().push_back(parked);
                    DispatchOutcome::Stored
                }
            }
            Err(_) if self.store_unrouted => {
                self.audit.record(now, EventKind::Store, digest, "no route yet");
                let parked = self.park(bundle, digest);
                self.unrouted.push_back(parked);
                DispatchOutcome::Stored
            }
            Err(e) => {
                self.audit.record(now, EventKind::Delete, digest, e.to_string());
                DispatchOutcome::Deleted
            }
        }
    }

    fn park(&mut self, bundle: Bundle, digest: Digest) -> Parked {
        let order = self.next_order;
        self.next_order += 1;
        Parked { order, bundle, digest }
    }

    fn redispatch(&mut self, mut parked: Vec<Parked>, now: DtnTime) -> Vec<DispatchOutcome> {
        parked.sort_by_key(|p| p.order);
        parked
            .into_iter()
            .map(|p| self.dispatch_tracked(p.bundle, p.digest, now))
            .collect()
    }

    /// Deletes every parked bundle whose lifetime has elapsed.
    pub fn purge_expired(&mut self, now: DtnTime) -> usize {
        let mut purged = Vec::new();
        for queue in self.store.values_mut().chain(std::iter::once(&mut self.unrouted)) {
            queue.retain(|p| {
                let expired = p.bundle.is_expired(now);
                if expired {
                    purged.push(p.digest);
                }
                !expired
            });
        }
        self.store.retain(|_, q| !q.is_empty());
        for digest in &purged {
            self.audit.record(now, EventKind::Delete, *digest, "lifetime expired in store");
        }
        purged.len()
    }

    /// A contact to `hop` began: purge, then re-dispatch that hop's queue in
    /// FIFO order, followed by any bundles still waiting for a route.
    pub fn contact_started(&mut self, hop: ClaAddress, now: DtnTime) -> Vec<DispatchOutcome> {
        self.open_hops.insert(hop.clone());
        self.purge_expired(now);
        let queued: Vec<Parked> = self.store.remove(&hop).map(Vec::from).unwrap_or_default();
        let mut outcomes = self.redispatch(queued, now);
        outcomes.extend(self.retry_unrouted(now));
        outcomes
    }

    pub fn contact_ended(&mut self, hop: &ClaAddress) {
        self.open_hops.remove(hop);
    }

    /// Re-dispatches queues of hops that are currently open.
    pub fn retry_open(&mut self, now: DtnTime) -> Vec<DispatchOutcome> {
        self.purge_expired(now);
        let hops: Vec<ClaAddress> = self.store.keys().filter(|h| self.open_hops.contains(*h)).cloned().collect();
        let parked: Vec<Parked> = hops
            .iter()
            .flat_map(|h| self.store.remove(h).map(Vec::from).unwrap_or_default())
            .collect();
        self.redispatch(parked, now)
    }

    /// The CLA could not send a forwarded bundle; keep it for the next contact.
    pub fn transmit_failed(&mut self, hop: ClaAddress, bundle: Bundle, reason: &str, now: DtnTime) {
        let digest = Digest::of(&encode_bundle(&bundle));
        self.audit.record(now, EventKind::Store, digest, format!("transmit to {hop} failed: {reason}"));
        let parked = self.park(bundle, digest);
        self.store.entry(hop).or_default().push_back(parked);
    }

    fn retry_unrouted(&mut self, now: DtnTime) -> Vec<DispatchOutcome> {
        let waiting: Vec<Parked> = self.unrouted.drain(..).collect();
        self.redispatch(waiting, now)
    }

    // ---- routing changes -----------------------------------------------

    /// Adds a discovery-learned route and retries bundles lacking one.
    pub fn learn_route(&mut self, eid: EndpointId, hop: ClaAddress, now: DtnTime) -> Result<Vec<DispatchOutcome>, BpaError> {
        check_hops(std::slice::from_ref(&hop), &self.clas)?;
        if self.routes.learn(eid.clone(), hop.clone()) {
            self.audit.record(now, EventKind::RoutesLearned, self.routes.hash(), format!("learned {eid} via {hop}"));
        }
        Ok(self.retry_unrouted(now))
    }

    pub fn forget_route(&mut self, eid: &EndpointId, now: DtnTime) {
        if self.routes.forget(eid) {
            self.audit.record(now, EventKind::RoutesLearned, self.routes.hash(), format!("forgot {eid}"));
        }
    }

    /// Swaps the configured routes atomically. Parked bundles are kept and
    /// re-dispatched under the new table.
    pub fn apply_routes(&mut self, entries: Vec<RouteEntry>, now: DtnTime, detail: &str) -> Result<Vec<DispatchOutcome>, BpaError> {
        check_hops(&entries.iter().map(|e| e.next_hop.clone()).collect::<Vec<_>>(), &self.clas)?;
        self.routes.replace_configured(entries)?;
        self.announce_routes(now, detail);
        let mut parked: Vec<Parked> = std::mem::take(&mut self.store).into_values().flatten().collect();
        parked.extend(self.unrouted.drain(..));
        Ok(self.redispatch(parked, now))
    }
}

fn check_hops(hops: &[ClaAddress], clas: &BTreeMap<String, ClaKind>) -> Result<(), BpaError> {
    for hop in hops {
        if !clas.contains_key(&hop.cla) {
            return Err(BpaError::UnknownCla(hop.cla.clone()));
        }
    }
    Ok(())
}
