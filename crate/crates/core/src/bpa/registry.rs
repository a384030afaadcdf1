use std::collections::BTreeMap;

use crate::bundle::EndpointId;

use super::BpaError;

/// Opaque handle for whatever receives deliveries: an application or an
/// upper-layer BIBE-CLA, both connected over the application interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgentHandle(pub u64);

/// Proof of a registration; hand it back to release the endpoint.
#[derive(Debug, PartialEq, Eq)]
pub struct RegistrationToken {
    eid: EndpointId,
    agent: AgentHandle,
    id: u64,
}

impl RegistrationToken {
    pub fn eid(&self) -> &EndpointId {
        &self.eid
    }

    pub fn agent(&self) -> AgentHandle {
        self.agent
    }
}

#[derive(Debug, Default)]
pub struct EndpointRegistry {
    entries: BTreeMap<EndpointId, (AgentHandle, u64)>,
    next_id: u64,
}

impl EndpointRegistry {
    pub fn register(&mut self, eid: EndpointId, agent: AgentHandle) -> Result<RegistrationToken, BpaError> {
        if self.entries.contains_key(&eid) {
            return Err(BpaError::DuplicateRegistration(eid));
        }
        let id = self.next_id;
        self.next_id += 1;
        self.entries.insert(eid.clone(), (agent, id));
        Ok(RegistrationToken { eid, agent, id })
    }

    /// Releases a registration. Stale tokens (already released) are ignored.
    pub fn release(&mut self, token: RegistrationToken) -> bool {
        match self.entries.get(&token.eid) {
            Some(&(_, id)) if id == token.id => {
                self.entries.remove(&token.eid);
                true
            }
            _ => false,
        }
    }

    /// Removes `eid` if `agent` holds it.
    pub fn release_eid(&mut self, eid: &EndpointId, agent: AgentHandle) -> bool {
        match self.entries.get(eid) {
            Some(&(holder, _)) if holder == agent => {
                self.entries.remove(eid);
                true
            }
            _ => false,
        }
    }

    /// Drops every registration held by `agent`.
    pub fn release_agent(&mut self, agent: AgentHandle) -> Vec<EndpointId> {
        let gone: Vec<_> = self
            .entries
            .iter()
            .filter(|(_, (a, _))| *a == agent)
            .map(|(eid, _)| eid.clone())
            .collect();
        for eid in &gone {
            self.entries.remove(eid);
        }
        gone
    }

    pub fn lookup(&self, eid: &EndpointId) -> Option<AgentHandle> {
        self.entries.get(eid).map(|(agent, _)| *agent)
    }

    pub fn registered(&self) -> impl Iterator<Item = &EndpointId> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::parse_eid;

    #[test]
    fn duplicate_registration_rejected() {
        let mut reg = EndpointRegistry::default();
        let eid = parse_eid("dtn://lower3.dtn").unwrap();
        reg.register(eid.clone(), AgentHandle(1)).unwrap();
        assert_eq!(
            reg.register(eid.clone(), AgentHandle(2)),
            Err(BpaError::DuplicateRegistration(eid))
        );
    }

    #[test]
    fn release_is_immediate_and_token_scoped() {
        let mut reg = EndpointRegistry::default();
        let eid = parse_eid("ipn:2.0").unwrap();
        let token = reg.register(eid.clone(), AgentHandle(1)).unwrap();
        assert_eq!(reg.lookup(&eid), Some(AgentHandle(1)));
        assert!(reg.release(token));
        assert_eq!(reg.lookup(&eid), None);
        let _again = reg.register(eid.clone(), AgentHandle(2)).unwrap();
        assert!(!reg.release_eid(&eid, AgentHandle(1)));
        assert_eq!(reg.release_agent(AgentHandle(2)), vec![eid]);
        assert!(reg.is_empty());
    }
}
