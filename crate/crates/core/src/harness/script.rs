//! Scenario documents: which nodes run, how they are linked, which
//! applications attach, and the timed phases of the run.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::bundle::{parse_eid, EndpointId};
use crate::config::{load_node, ConfigError, NodeSpec};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    name: String,
    #[serde(default)]
    seed: u64,
    duration_ms: u64,
    nodes: Vec<PathBuf>,
    #[serde(default)]
    link: Vec<LinkSpec>,
    #[serde(default)]
    app: Vec<AppDoc>,
    #[serde(default)]
    phase: Vec<Phase>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub a: String,
    pub b: String,
    #[serde(default)]
    pub delay_ms: u64,
    #[serde(default = "yes")]
    pub up: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct AppDoc {
    id: String,
    node: String,
    scope: String,
    #[serde(default)]
    register: Option<String>,
    #[serde(default)]
    behavior: BehaviorKind,
    #[serde(default)]
    reply_size: Option<usize>,
    #[serde(default)]
    reply_tag: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum BehaviorKind {
    #[default]
    Sink,
    Responder,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Behavior {
    /// Records deliveries.
    Sink,
    /// Answers every delivery with `size` seeded random bytes, sent back to
    /// the delivered bundle's source and tracked under `tag`.
    Responder { size: usize, tag: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppSpec {
    pub id: String,
    pub node: String,
    pub scope: String,
    pub register: Option<EndpointId>,
    pub behavior: Behavior,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct Phase {
    pub at_ms: u64,
    #[serde(flatten)]
    pub action: PhaseAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum PhaseAction {
    Inject {
        app: String,
        dest: String,
        tag: String,
        #[serde(default)]
        payload: Option<String>,
        #[serde(default)]
        payload_size: Option<usize>,
        #[serde(default)]
        lifetime_ms: Option<u64>,
    },
    OpenLink { a: String, b: String },
    CloseLink { a: String, b: String },
    Reconfigure { node: String, scope: String, profile: String },
    ExpectDelivery { app: String, tag: String, timeout_ms: u64 },
    ExpectPhotoReturn { app: String, tag: String, timeout_ms: u64 },
}

#[derive(Debug, Clone)]
pub struct ScenarioScript {
    pub name: String,
    pub seed: u64,
    pub duration_ms: u64,
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
    pub apps: Vec<AppSpec>,
    pub phases: Vec<Phase>,
}

pub fn load_scenario(path: &Path) -> Result<ScenarioScript, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_scenario(&text, base).map_err(|e| match e {
        ConfigError::Invalid { path: key, message } => {
            ConfigError::invalid(format!("{}: {key}", path.display()), message)
        }
        other => other,
    })
}

/// Parses a scenario; node paths resolve relative to `base`.
pub fn parse_scenario(text: &str, base: &Path) -> Result<ScenarioScript, ConfigError> {
    let doc: ScenarioDoc = toml::from_str(text).map_err(|e| {
        let span = e.span().map(|s| format!("byte {}", s.start)).unwrap_or_else(|| "document".into());
        ConfigError::invalid(span, e.message().to_string())
    })?;
    let nodes = doc
        .nodes
        .iter()
        .map(|p| load_node(&base.join(p)))
        .collect::<Result<Vec<_>, _>>()?;
    let script = ScenarioScript {
        name: doc.name,
        seed: doc.seed,
        duration_ms: doc.duration_ms,
        apps: doc
            .app
            .iter()
            .enumerate()
            .map(|(i, a)| app_spec(i, a))
            .collect::<Result<Vec<_>, _>>()?,
        nodes,
        links: doc.link,
        phases: doc.phase,
    };
    validate(&script)?;
    Ok(script)
}

fn app_spec(i: usize, doc: &AppDoc) -> Result<AppSpec, ConfigError> {
    let register = doc
        .register
        .as_deref()
        .map(parse_eid)
        .transpose()
        .map_err(|e| ConfigError::invalid(format!("app[{i}].register"), e.to_string()))?;
    let behavior = match doc.behavior {
        BehaviorKind::Sink => Behavior::Sink,
        BehaviorKind::Responder => Behavior::Responder {
            size: doc
                .reply_size
                .ok_or_else(|| ConfigError::invalid(format!("app[{i}].reply_size"), "responder needs reply_size"))?,
            tag: doc
                .reply_tag
                .clone()
                .ok_or_else(|| ConfigError::invalid(format!("app[{i}].reply_tag"), "responder needs reply_tag"))?,
        },
    };
    Ok(AppSpec { id: doc.id.clone(), node: doc.node.clone(), scope: doc.scope.clone(), register, behavior })
}

fn validate(s: &ScenarioScript) -> Result<(), ConfigError> {
    let mut names = BTreeSet::new();
    let mut listens = BTreeSet::new();
    for (i, n) in s.nodes.iter().enumerate() {
        if !names.insert(n.node.as_str()) {
            return Err(ConfigError::invalid(format!("nodes[{i}]"), format!("duplicate node {:?}", n.node)));
        }
        for inst in &n.instances {
            for stream in &inst.streams {
                if !listens.insert(stream.listen.as_str()) {
                    return Err(ConfigError::invalid(
                        format!("nodes[{i}]"),
                        format!("stream address {:?} used twice", stream.listen),
                    ));
                }
            }
        }
    }
    let node_exists = |key: String, name: &str| {
        if names.contains(name) {
            Ok(())
        } else {
            Err(ConfigError::invalid(key, format!("unknown node {name:?}")))
        }
    };
    for (i, l) in s.links.iter().enumerate() {
        node_exists(format!("link[{i}].a"), &l.a)?;
        node_exists(format!("link[{i}].b"), &l.b)?;
    }
    let mut ids = BTreeSet::new();
    for (i, a) in s.apps.iter().enumerate() {
        if !ids.insert(a.id.as_str()) {
            return Err(ConfigError::invalid(format!("app[{i}].id"), format!("duplicate app {:?}", a.id)));
        }
        let node = s
            .nodes
            .iter()
            .find(|n| n.node == a.node)
            .ok_or_else(|| ConfigError::invalid(format!("app[{i}].node"), format!("unknown node {:?}", a.node)))?;
        if node.instance_index(&a.scope).is_none() {
            return Err(ConfigError::invalid(
                format!("app[{i}].scope"),
                format!("node {} has no instance in scope {:?}", a.node, a.scope),
            ));
        }
    }
    let mut last = 0;
    for (i, p) in s.phases.iter().enumerate() {
        if p.at_ms < last {
            return Err(ConfigError::invalid(format!("phase[{i}].at_ms"), "phase offsets must not decrease"));
        }
        last = p.at_ms;
        let app_exists = |key: &str, id: &str| {
            if ids.contains(id) {
                Ok(())
            } else {
                Err(ConfigError::invalid(format!("phase[{i}].{key}"), format!("unknown app {id:?}")))
            }
        };
        match &p.action {
            PhaseAction::Inject { app, dest, payload, payload_size, .. } => {
                app_exists("app", app)?;
                parse_eid(dest).map_err(|e| ConfigError::invalid(format!("phase[{i}].dest"), e.to_string()))?;
                if payload.is_some() == payload_size.is_some() {
                    return Err(ConfigError::invalid(
                        format!("phase[{i}].payload"),
                        "give exactly one of payload or payload_size",
                    ));
                }
            }
            PhaseAction::OpenLink { a, b } | PhaseAction::CloseLink { a, b } => {
                if !s.links.iter().any(|l| (l.a == *a && l.b == *b) || (l.a == *b && l.b == *a)) {
                    return Err(ConfigError::invalid(format!("phase[{i}]"), format!("no link between {a} and {b}")));
                }
            }
            PhaseAction::Reconfigure { node, scope, .. } => {
                node_exists(format!("phase[{i}].node"), node)?;
                let n = s.nodes.iter().find(|n| n.node == *node).expect("checked");
                if n.instance_index(scope).is_none() {
                    return Err(ConfigError::invalid(format!("phase[{i}].scope"), format!("{node} has no scope {scope:?}")));
                }
            }
            PhaseAction::ExpectDelivery { app, timeout_ms, .. } | PhaseAction::ExpectPhotoReturn { app, timeout_ms, .. } => {
                app_exists("app", app)?;
                if *timeout_ms == 0 {
                    return Err(ConfigError::invalid(format!("phase[{i}].timeout_ms"), "expectations need a timeout"));
                }
            }
        }
    }
    Ok(())
}
