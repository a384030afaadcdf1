//! Node assembly configuration.
//!
//! A node document lists the node's scope instances top to bottom. Each
//! instance declares its EIDs, CLAs, static routes and contacts, optional
//! discovery, and optional named route/contact profiles. BIBE CLAs name the
//! lower instance (by scope label, on the same node) and the EID they
//! register there.
//!
//! ```toml
//! node = "node3"
//!
//! [[instance]]
//! scope = "scope1"
//! eids = ["ipn:2.0"]
//! aap = "127.0.0.1:4242"
//! cla = [{ name = "bibe", kind = "bibe", lower = "scope2", register = "dtn://lower3.dtn" }]
//! route = [{ dest = "ipn:1.*", cla = "bibe", address = "dtn://lower1.dtn" }]
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::bpa::{InstanceConfig, RouteEntry, RoutePattern, RoutingTable, DEFAULT_LIFETIME_MS};
use crate::bundle::{parse_eid, EndpointId};
use crate::cla::{ClaAddress, ClaKind, Contact};
use crate::discovery::DiscoveryConfig;
use crate::time::DtnTime;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl ConfigError {
    pub fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid { path: path.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    node: String,
    #[serde(default)]
    instance: Vec<InstanceDoc>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceDoc {
    scope: String,
    eids: Vec<String>,
    #[serde(default = "default_aap")]
    aap: String,
    #[serde(default)]
    default_lifetime_ms: Option<u64>,
    #[serde(default)]
    cla: Vec<ClaDoc>,
    #[serde(default)]
    route: Vec<RouteDoc>,
    #[serde(default)]
    contact: Vec<ContactDoc>,
    #[serde(default)]
    discovery: Option<DiscoveryConfig>,
    #[serde(default)]
    profile: Vec<ProfileDoc>,
    #[serde(default)]
    initial_profile: Option<String>,
}

fn default_aap() -> String {
    "127.0.0.1:0".to_string()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClaDoc {
    name: String,
    kind: ClaKind,
    #[serde(default)]
    listen: Option<String>,
    #[serde(default)]
    lower: Option<String>,
    #[serde(default)]
    register: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RouteDoc {
    dest: String,
    cla: String,
    address: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContactDoc {
    cla: String,
    address: String,
    #[serde(default)]
    start_ms: u64,
    #[serde(default)]
    end_ms: Option<u64>,
    #[serde(default)]
    rate: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileDoc {
    name: String,
    #[serde(default)]
    route: Vec<RouteDoc>,
    #[serde(default)]
    contact: Vec<ContactDoc>,
}

/// Contact window relative to the moment the node starts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContactSpec {
    pub peer: ClaAddress,
    pub start_ms: u64,
    pub end_ms: Option<u64>,
    pub rate: u64,
}

impl ContactSpec {
    pub fn at(&self, epoch: DtnTime) -> Contact {
        Contact {
            peer: self.peer.clone(),
            start: epoch.saturating_add(self.start_ms),
            end: self.end_ms.map_or(DtnTime(u64::MAX), |e| epoch.saturating_add(e)),
            rate: self.rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamSpec {
    pub name: String,
    pub listen: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BibeSpec {
    pub name: String,
    /// Index of the lower instance within the node.
    pub lower: usize,
    pub register: EndpointId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Profile {
    pub routes: Vec<RouteEntry>,
    pub contacts: Vec<ContactSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceSpec {
    pub scope: String,
    pub eids: Vec<EndpointId>,
    pub aap: String,
    pub default_lifetime_ms: u64,
    pub streams: Vec<StreamSpec>,
    pub bibes: Vec<BibeSpec>,
    pub routes: Vec<RouteEntry>,
    pub contacts: Vec<ContactSpec>,
    pub discovery: Option<DiscoveryConfig>,
    pub profiles: BTreeMap<String, Profile>,
    pub initial_profile: Option<String>,
}

impl InstanceSpec {
    pub fn discovery_enabled(&self) -> bool {
        self.discovery.as_ref().is_some_and(|d| d.enabled)
    }

    pub fn cla_kinds(&self) -> BTreeMap<String, ClaKind> {
        self.streams
            .iter()
            .map(|s| (s.name.clone(), ClaKind::Stream))
            .chain(self.bibes.iter().map(|b| (b.name.clone(), ClaKind::Bibe)))
            .collect()
    }

    /// Base routes followed by the routes of `profile`, if any.
    pub fn routes_with(&self, profile: Option<&str>) -> Option<Vec<RouteEntry>> {
        let mut routes = self.routes.clone();
        if let Some(name) = profile {
            routes.extend(self.profiles.get(name)?.routes.iter().cloned());
        }
        Some(routes)
    }

    pub fn contacts_with(&self, profile: Option<&str>) -> Option<Vec<ContactSpec>> {
        let mut contacts = self.contacts.clone();
        if let Some(name) = profile {
            contacts.extend(self.profiles.get(name)?.contacts.iter().cloned());
        }
        Some(contacts)
    }

    /// Every route pattern this instance may ever hold from configuration.
    pub fn all_patterns(&self) -> Vec<RoutePattern> {
        self.routes
            .iter()
            .chain(self.profiles.values().flat_map(|p| p.routes.iter()))
            .map(|r| r.dest.clone())
            .collect()
    }

    pub fn instance_config(&self, node: &str) -> InstanceConfig {
        InstanceConfig {
            node: node.to_string(),
            scope: self.scope.clone(),
            node_eids: self.eids.clone(),
            clas: self.cla_kinds(),
            routes: self.routes_with(self.initial_profile.as_deref()).expect("validated profile"),
            default_lifetime_ms: self.default_lifetime_ms,
            store_unrouted: self.discovery_enabled(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSpec {
    pub node: String,
    /// Top to bottom.
    pub instances: Vec<InstanceSpec>,
}

impl NodeSpec {
    pub fn instance_index(&self, scope: &str) -> Option<usize> {
        self.instances.iter().position(|i| i.scope == scope)
    }
}

pub fn load_node(path: &Path) -> Result<NodeSpec, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_node(&text).map_err(|e| match e {
        ConfigError::Invalid { path: key, message } => {
            ConfigError::invalid(format!("{}: {key}", path.display()), message)
        }
        other => other,
    })
}

pub fn parse_node(text: &str) -> Result<NodeSpec, ConfigError> {
    let doc: NodeDoc = toml::from_str(text).map_err(|e| {
        let span = e.span().map(|s| format!("byte {}", s.start)).unwrap_or_else(|| "document".into());
        ConfigError::invalid(span, e.message().to_string())
    })?;
    validate(doc)
}

fn validate(doc: NodeDoc) -> Result<NodeSpec, ConfigError> {
    if doc.node.trim().is_empty() {
        return Err(ConfigError::invalid("node", "node name is empty"));
    }
    if doc.instance.is_empty() {
        return Err(ConfigError::invalid("instance", "node has no instances"));
    }
    let mut scopes = BTreeMap::new();
    for (i, inst) in doc.instance.iter().enumerate() {
        if inst.scope.trim().is_empty() {
            return Err(ConfigError::invalid(format!("instance[{i}].scope"), "empty scope label"));
        }
        if scopes.insert(inst.scope.clone(), i).is_some() {
            return Err(ConfigError::invalid(
                format!("instance[{i}].scope"),
                format!("scope {:?} appears twice on this node", inst.scope),
            ));
        }
    }
    let instances = doc
        .instance
        .iter()
        .enumerate()
        .map(|(i, inst)| validate_instance(i, inst, &scopes))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(NodeSpec { node: doc.node, instances })
}

fn validate_instance(i: usize, doc: &InstanceDoc, scopes: &BTreeMap<String, usize>) -> Result<InstanceSpec, ConfigError> {
    let at = |key: &str| format!("instance[{i}].{key}");
    if doc.eids.is_empty() {
        return Err(ConfigError::invalid(at("eids"), "at least one node EID is required"));
    }
    let eids = doc
        .eids
        .iter()
        .enumerate()
        .map(|(j, e)| parse_eid(e).map_err(|err| ConfigError::invalid(at(&format!("eids[{j}]")), err.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    if eids.iter().any(EndpointId::is_null) {
        return Err(ConfigError::invalid(at("eids"), "dtn:none cannot be a node EID"));
    }

    let mut names = BTreeSet::new();
    let mut streams = Vec::new();
    let mut bibes = Vec::new();
    for (j, cla) in doc.cla.iter().enumerate() {
        let key = |k: &str| at(&format!("cla[{j}].{k}"));
        if !names.insert(cla.name.clone()) {
            return Err(ConfigError::invalid(key("name"), format!("duplicate CLA name {:?}", cla.name)));
        }
        match cla.kind {
            ClaKind::Stream => {
                let listen = cla
                    .listen
                    .clone()
                    .ok_or_else(|| ConfigError::invalid(key("listen"), "stream CLA needs a listen address"))?;
                if cla.lower.is_some() || cla.register.is_some() {
                    return Err(ConfigError::invalid(key("kind"), "lower/register only apply to bibe CLAs"));
                }
                streams.push(StreamSpec { name: cla.name.clone(), listen });
            }
            ClaKind::Bibe => {
                let lower_scope =
                    cla.lower.as_ref().ok_or_else(|| ConfigError::invalid(key("lower"), "bibe CLA needs a lower scope"))?;
                let lower = *scopes.get(lower_scope).ok_or_else(|| {
                    ConfigError::invalid(key("lower"), format!("no instance with scope {lower_scope:?} on this node"))
                })?;
                if lower == i {
                    return Err(ConfigError::invalid(key("lower"), "an instance cannot encapsulate into itself"));
                }
                let register = cla
                    .register
                    .as_ref()
                    .ok_or_else(|| ConfigError::invalid(key("register"), "bibe CLA needs an EID to register below"))?;
                let register = parse_eid(register).map_err(|e| ConfigError::invalid(key("register"), e.to_string()))?;
                bibes.push(BibeSpec { name: cla.name.clone(), lower, register });
            }
        }
    }
    let kinds: BTreeMap<String, ClaKind> = streams
        .iter()
        .map(|s| (s.name.clone(), ClaKind::Stream))
        .chain(bibes.iter().map(|b| (b.name.clone(), ClaKind::Bibe)))
        .collect();

    let routes = validate_routes(&at("route"), &doc.route, &kinds)?;
    let contacts = validate_contacts(&at("contact"), &doc.contact, &kinds)?;

    let mut profiles = BTreeMap::new();
    for (k, p) in doc.profile.iter().enumerate() {
        let key = at(&format!("profile[{k}]"));
        let profile = Profile {
            routes: validate_routes(&format!("{key}.route"), &p.route, &kinds)?,
            contacts: validate_contacts(&format!("{key}.contact"), &p.contact, &kinds)?,
        };
        let mut combined = routes.clone();
        combined.extend(profile.routes.iter().cloned());
        RoutingTable::new(combined).map_err(|e| ConfigError::invalid(format!("{key}.route"), e.to_string()))?;
        if profiles.insert(p.name.clone(), profile).is_some() {
            return Err(ConfigError::invalid(format!("{key}.name"), format!("duplicate profile {:?}", p.name)));
        }
    }
    if let Some(initial) = &doc.initial_profile {
        if !profiles.contains_key(initial) {
            return Err(ConfigError::invalid(at("initial_profile"), format!("unknown profile {initial:?}")));
        }
    }
    RoutingTable::new(routes.clone()).map_err(|e| ConfigError::invalid(at("route"), e.to_string()))?;

    if let Some(d) = &doc.discovery {
        if kinds.get(&d.cla) != Some(&ClaKind::Stream) {
            return Err(ConfigError::invalid(
                at("discovery.cla"),
                format!("{:?} is not a stream CLA of this instance", d.cla),
            ));
        }
        if d.period_ms == 0 {
            return Err(ConfigError::invalid(at("discovery.period_ms"), "period must be positive"));
        }
    }

    Ok(InstanceSpec {
        scope: doc.scope.clone(),
        eids,
        aap: doc.aap.clone(),
        default_lifetime_ms: doc.default_lifetime_ms.unwrap_or(DEFAULT_LIFETIME_MS),
        streams,
        bibes,
        routes,
        contacts,
        discovery: doc.discovery.clone(),
        profiles,
        initial_profile: doc.initial_profile.clone(),
    })
}

fn validate_routes(at: &str, docs: &[RouteDoc], kinds: &BTreeMap<String, ClaKind>) -> Result<Vec<RouteEntry>, ConfigError> {
    docs.iter()
        .enumerate()
        .map(|(j, r)| {
            let key = |k: &str| format!("{at}[{j}].{k}");
            let dest: RoutePattern = r.dest.parse().map_err(|e: crate::bundle::BundleError| ConfigError::invalid(key("dest"), e.to_string()))?;
            match kinds.get(&r.cla) {
                None => Err(ConfigError::invalid(key("cla"), format!("no CLA named {:?} on this instance", r.cla))),
                Some(ClaKind::Bibe) => {
                    parse_eid(&r.address).map_err(|e| ConfigError::invalid(key("address"), e.to_string()))?;
                    Ok(RouteEntry::new(dest, ClaAddress::new(r.cla.clone(), r.address.clone())))
                }
                Some(ClaKind::Stream) => Ok(RouteEntry::new(dest, ClaAddress::new(r.cla.clone(), r.address.clone()))),
            }
        })
        .collect()
}

fn validate_contacts(at: &str, docs: &[ContactDoc], kinds: &BTreeMap<String, ClaKind>) -> Result<Vec<ContactSpec>, ConfigError> {
    docs.iter()
        .enumerate()
        .map(|(j, c)| {
            let key = |k: &str| format!("{at}[{j}].{k}");
            if kinds.get(&c.cla) != Some(&ClaKind::Stream) {
                return Err(ConfigError::invalid(key("cla"), format!("{:?} is not a stream CLA of this instance", c.cla)));
            }
            if c.end_ms.is_some_and(|end| end <= c.start_ms) {
                return Err(ConfigError::invalid(key("end_ms"), "contact ends before it starts"));
            }
            Ok(ContactSpec {
                peer: ClaAddress::new(c.cla.clone(), c.address.clone()),
                start_ms: c.start_ms,
                end_ms: c.end_ms,
                rate: c.rate,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const NODE3: &str = r#"
node = "node3"

[[instance]]
scope = "scope1"
eids = ["ipn:2.0"]
cla = [{ name = "bibe", kind = "bibe", lower = "scope2", register = "dtn://lower3.dtn" }]
route = [{ dest = "ipn:1.*", cla = "bibe", address = "dtn://lower1.dtn" }]

[[instance]]
scope = "scope2"
eids = ["dtn://lower3.dtn"]
cla = [{ name = "tcp", kind = "stream", listen = "node3:4556" }]
route = [{ dest = "dtn://lower1.dtn", cla = "tcp", address = "node2:4556" }]
contact = [{ cla = "tcp", address = "node2:4556" }]
"#;

    #[test]
    fn fig1_node3() {
        let spec = parse_node(NODE3).unwrap();
        assert_eq!(spec.instances.len(), 2);
        assert_eq!(spec.instances[0].bibes[0].lower, 1);
        assert_eq!(spec.instances[1].contacts[0].end_ms, None);
        let cfg = spec.instances[0].instance_config("node3");
        assert_eq!(cfg.clas["bibe"], ClaKind::Bibe);
        assert!(!cfg.store_unrouted);
    }

    fn invalid_path(text: &str) -> String {
        match parse_node(text) {
            Err(ConfigError::Invalid { path, .. }) => path,
            other => panic!("expected ConfigInvalid, got {other:?}"),
        }
    }

    #[test]
    fn unknown_wiring_names_the_key() {
        let text = NODE3.replace("lower = \"scope2\"", "lower = \"scope9\"");
        assert_eq!(invalid_path(&text), "instance[0].cla[0].lower");
    }

    #[test]
    fn route_to_unattached_cla() {
        let text = NODE3.replace("cla = \"tcp\", address = \"node2", "cla = \"udp\", address = \"node2");
        assert_eq!(invalid_path(&text), "instance[1].route[0].cla");
    }

    #[test]
    fn duplicate_scope() {
        let text = NODE3.replace("scope = \"scope2\"", "scope = \"scope1\"");
        assert_eq!(invalid_path(&text), "instance[1].scope");
    }

    #[test]
    fn bad_eid_and_unknown_key() {
        assert_eq!(invalid_path(&NODE3.replace("ipn:2.0", "ipn:two")), "instance[0].eids[0]");
        assert!(invalid_path(&NODE3.replace("node = \"node3\"", "node = \"node3\"\nbogus = 1")).starts_with("byte"));
    }

    #[test]
    fn profiles() {
        let text = format!(
            "{NODE3}initial_profile = \"a\"\n[[instance.profile]]\nname = \"a\"\nroute = [{{ dest = \"dtn://x.s\", cla = \"tcp\", address = \"x:1\" }}]\n[[instance.profile]]\nname = \"b\"\n"
        );
        let spec = parse_node(&text).unwrap();
        let inst = &spec.instances[1];
        assert_eq!(inst.routes_with(Some("a")).unwrap().len(), 2);
        assert_eq!(inst.routes_with(Some("b")).unwrap().len(), 1);
        assert!(inst.routes_with(Some("c")).is_none());
        assert_eq!(inst.instance_config("n").routes.len(), 2);
        assert_eq!(inst.all_patterns().len(), 2);
    }
}
