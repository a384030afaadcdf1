//! Turning a validated node document into running scope instances.

use crate::audit::{AuditLog, ScopeAudit};
use crate::bpa::{BpaError, ScopeInstance};
use crate::bundle::EndpointId;
use crate::cla::{BibeCla, ContactPlan, StreamCla};
use crate::config::{ConfigError, InstanceSpec, NodeSpec};
use crate::time::DtnTime;

/// One BIBE attachment: `upper` encapsulates into `lower`, registered there
/// as `register`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Wiring {
    pub upper: usize,
    pub bibe: usize,
    pub lower: usize,
    pub register: EndpointId,
}

pub struct AssembledInstance {
    pub spec: InstanceSpec,
    pub instance: ScopeInstance,
    pub streams: Vec<StreamCla>,
    pub bibes: Vec<BibeCla>,
    pub profile: Option<String>,
}

impl AssembledInstance {
    pub fn stream_mut(&mut self, name: &str) -> Option<&mut StreamCla> {
        self.streams.iter_mut().find(|s| s.name == name)
    }

    pub fn bibe_index(&self, name: &str) -> Option<usize> {
        self.bibes.iter().position(|b| b.name == name)
    }
}

pub struct NodeAssembly {
    pub node: String,
    /// Top to bottom, as configured.
    pub instances: Vec<AssembledInstance>,
    pub wiring: Vec<Wiring>,
}

/// Builds every instance of a node. Contact windows are anchored at `epoch`;
/// each instance announces its initial routing table in the audit log.
pub fn build_assembly(spec: &NodeSpec, log: &AuditLog, epoch: DtnTime) -> Result<NodeAssembly, ConfigError> {
    let mut instances = Vec::new();
    let mut wiring = Vec::new();
    for (i, inst) in spec.instances.iter().enumerate() {
        let audit = ScopeAudit::new(spec.node.clone(), inst.scope.clone(), log.clone());
        let instance = ScopeInstance::new(inst.instance_config(&spec.node), audit.clone()).map_err(|e| {
            let key = match e {
                BpaError::UnknownCla(_) | BpaError::InvalidRoutes(_) => "route",
                _ => "eids",
            };
            ConfigError::invalid(format!("instance[{i}].{key}"), e.to_string())
        })?;
        instance.announce_routes(epoch, "initial configuration");
        let contacts = inst.contacts_with(inst.initial_profile.as_deref()).expect("validated profile");
        let streams = inst
            .streams
            .iter()
            .map(|s| {
                let plan = contacts.iter().filter(|c| c.peer.cla == s.name).map(|c| c.at(epoch)).collect();
                StreamCla::new(s.name.clone(), s.listen.clone(), ContactPlan::new(plan))
            })
            .collect();
        let bibes = inst
            .bibes
            .iter()
            .enumerate()
            .map(|(b, bibe)| {
                wiring.push(Wiring { upper: i, bibe: b, lower: bibe.lower, register: bibe.register.clone() });
                let lower_aap = spec.instances[bibe.lower].aap.clone();
                BibeCla::new(bibe.name.clone(), lower_aap, bibe.register.clone(), inst.default_lifetime_ms, audit.clone())
            })
            .collect();
        instances.push(AssembledInstance {
            spec: inst.clone(),
            instance,
            streams,
            bibes,
            profile: inst.initial_profile.clone(),
        });
    }
    Ok(NodeAssembly { node: spec.node.clone(), instances, wiring })
}
