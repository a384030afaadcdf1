//! The bundle protocol agent for a single scope.

pub mod aap;
mod instance;
mod registry;
mod routing;

pub use aap::{AapDecodeError, AapMessage};
pub use instance::{Action, DispatchOutcome, InstanceConfig, ScopeInstance, DEFAULT_LIFETIME_MS};
pub use registry::{AgentHandle, EndpointRegistry, RegistrationToken};
pub use routing::{RouteEntry, RoutePattern, RoutingTable};

use crate::bundle::EndpointId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BpaError {
    #[error("{0} is already registered")]
    DuplicateRegistration(EndpointId),
    #[error("no route to {0}")]
    NoRoute(EndpointId),
    #[error("invalid routing table: {0}")]
    InvalidRoutes(String),
    #[error("route references CLA {0:?} which is not attached to this instance")]
    UnknownCla(String),
}
