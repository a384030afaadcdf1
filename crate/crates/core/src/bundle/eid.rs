//! Endpoint identifiers for the `dtn` and `ipn` URI schemes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::BundleError;

/// A bundle endpoint identifier.
///
/// The canonical text form lowercases the scheme and keeps a `dtn`
/// authority-path verbatim; `ipn` numbers are rendered in plain decimal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EndpointId {
    /// `dtn:none`, the null endpoint.
    Null,
    /// `dtn:` followed by an authority-path such as `//lower3.dtn`.
    Dtn(String),
    /// `ipn:<node>.<service>`.
    Ipn { node: u64, service: u64 },
}

impl EndpointId {
    pub fn ipn(node: u64, service: u64) -> Self {
        EndpointId::Ipn { node, service }
    }

    /// Builds a `dtn` endpoint from its authority-path (the part after `dtn:`).
    pub fn dtn(path: impl Into<String>) -> Result<Self, BundleError> {
        let path = path.into();
        validate_dtn_path(&path)?;
        Ok(EndpointId::Dtn(path))
    }

    pub fn is_null(&self) -> bool {
        matches!(self, EndpointId::Null)
    }

    pub fn ipn_node(&self) -> Option<u64> {
        match self {
            EndpointId::Ipn { node, .. } => Some(*node),
            _ => None,
        }
    }
}

fn validate_dtn_path(path: &str) -> Result<(), BundleError> {
    let authority = path
        .strip_prefix("//")
        .ok_or_else(|| BundleError::MalformedEid(format!("dtn:{path}: expected '//' authority")))?;
    let node = authority.split('/').next().unwrap_or("");
    if node.is_empty() {
        return Err(BundleError::MalformedEid(format!("dtn:{path}: empty authority")));
    }
    if path.chars().any(|c| c.is_whitespace() || c.is_control()) {
        return Err(BundleError::MalformedEid(format!("dtn:{path}: whitespace in authority-path")));
    }
    Ok(())
}

fn parse_ipn_part(part: &str, text: &str) -> Result<u64, BundleError> {
    if part.is_empty() || !part.bytes().all(|b| b.is_ascii_digit()) {
        return Err(BundleError::MalformedEid(format!("{text}: non-numeric ipn part")));
    }
    part.parse()
        .map_err(|_| BundleError::MalformedEid(format!("{text}: ipn number exceeds 64 bits")))
}

/// Parses an EID from its URI text.
pub fn parse_eid(text: &str) -> Result<EndpointId, BundleError> {
    let (scheme, ssp) = text
        .split_once(':')
        .ok_or_else(|| BundleError::MalformedEid(format!("{text:?}: missing scheme")))?;
    match scheme.to_ascii_lowercase().as_str() {
        "dtn" if ssp == "none" => Ok(EndpointId::Null),
        "dtn" => EndpointId::dtn(ssp),
        "ipn" => {
            let (node, service) = ssp
                .split_once('.')
                .ok_or_else(|| BundleError::MalformedEid(format!("{text}: expected ipn:<node>.<service>")))?;
            Ok(EndpointId::Ipn {
                node: parse_ipn_part(node, text)?,
                service: parse_ipn_part(service, text)?,
            })
        }
        _ => Err(BundleError::MalformedEid(format!("{text:?}: unknown scheme"))),
    }
}

impl FromStr for EndpointId {
    type Err = BundleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_eid(s)
    }
}

impl fmt::Display for EndpointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EndpointId::Null => f.write_str("dtn:none"),
            EndpointId::Dtn(path) => write!(f, "dtn:{path}"),
            EndpointId::Ipn { node, service } => write!(f, "ipn:{node}.{service}"),
        }
    }
}

impl Serialize for EndpointId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EndpointId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_eid(&text).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_ipn() {
        assert_eq!(parse_eid("ipn:2.0").unwrap(), EndpointId::ipn(2, 0));
        assert_eq!(parse_eid("IPN:007.01").unwrap().to_string(), "ipn:7.1");
        assert_eq!(
            parse_eid("ipn:18446744073709551615.0").unwrap(),
            EndpointId::ipn(u64::MAX, 0)
        );
    }

    #[test]
    fn parses_dtn() {
        let eid = parse_eid("dtn://lower3.dtn").unwrap();
        assert_eq!(eid, EndpointId::Dtn("//lower3.dtn".into()));
        assert_eq!(eid.to_string(), "dtn://lower3.dtn");
        assert_eq!(parse_eid("DTN://Node/App").unwrap().to_string(), "dtn://Node/App");
    }

    #[test]
    fn null_endpoint_is_distinct() {
        let none = parse_eid("dtn:none").unwrap();
        assert!(none.is_null());
        assert_ne!(none, parse_eid("dtn://none").unwrap());
        assert_eq!(none.to_string(), "dtn:none");
    }

    #[test]
    fn rejects_malformed() {
        for bad in [
            "", "ipn", "foo:bar", "ipn:1", "ipn:a.0", "ipn:-1.0", "ipn:+1.0", "ipn:1.",
            "ipn:18446744073709551616.0", "dtn:", "dtn://", "dtn:lower3", "dtn:///x", "dtn://a b",
        ] {
            assert!(
                matches!(parse_eid(bad), Err(BundleError::MalformedEid(_))),
                "{bad:?} should be rejected"
            );
        }
    }
}
