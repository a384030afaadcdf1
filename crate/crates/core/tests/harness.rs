mod common;

use std::path::Path;

use scopedtn::audit::{AuditLog, EventKind};
use scopedtn::config::{load_node, parse_node, ConfigError};
use scopedtn::harness::{build_assembly, load_scenario, parse_scenario, run_scenario, RunOptions, SIM_EPOCH};

use common::scenario_path;

fn node_path(rel: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(rel)
}

#[test]
fn fig1_node3_has_two_scopes() {
    let spec = load_node(&node_path("fig1/node3.toml")).unwrap();
    let asm = build_assembly(&spec, &AuditLog::new(), SIM_EPOCH).unwrap();
    assert_eq!(asm.instances.len(), 2);
    assert_eq!(asm.wiring.len(), 1);
    assert_eq!(asm.wiring[0].register.to_string(), "dtn://lower3.dtn");
}

#[test]
fn fig2_node3_has_three_instances() {
    let spec = load_node(&node_path("fig2/n3.toml")).unwrap();
    let asm = build_assembly(&spec, &AuditLog::new(), SIM_EPOCH).unwrap();
    let scopes: Vec<&str> = asm.instances.iter().map(|i| i.spec.scope.as_str()).collect();
    assert_eq!(scopes, ["scope1", "scope2", "scope3"]);
    assert_eq!(asm.wiring.iter().map(|w| w.lower).collect::<Vec<_>>(), [1, 2]);
}

#[test]
fn unknown_wiring_is_config_invalid() {
    let text = std::fs::read_to_string(node_path("fig1/node3.toml")).unwrap().replace("lower = \"scope2\"", "lower = \"scope7\"");
    match parse_node(&text) {
        Err(ConfigError::Invalid { path, message }) => {
            assert_eq!(path, "instance[0].cla[0].lower");
            assert!(message.contains("scope7"));
        }
        other => panic!("{other:?}"),
    }
}

const SRC: &str = r#"
node = "src"
[[instance]]
scope = "s"
eids = ["dtn://src.s"]
cla = [{ name = "tcp", kind = "stream", listen = "src" }]
route = [{ dest = "dtn://dst.s", cla = "tcp", address = "mux" }]
contact = [{ cla = "tcp", address = "mux" }]
"#;

const MUX: &str = r#"
node = "mux"
[[instance]]
scope = "s"
eids = ["dtn://mux.s"]
cla = [{ name = "tcp", kind = "stream", listen = "mux" }]
initial_profile = "a"
[[instance.profile]]
name = "a"
route = [{ dest = "dtn://dst.s", cla = "tcp", address = "x" }]
contact = [{ cla = "tcp", address = "x", start_ms = 5000 }]
[[instance.profile]]
name = "b"
route = [{ dest = "dtn://dst.s", cla = "tcp", address = "y" }]
contact = [{ cla = "tcp", address = "y" }]
"#;

fn sink(name: &str) -> String {
    format!(
        "node = \"{name}\"\n[[instance]]\nscope = \"s\"\neids = [\"dtn://{name}.s\"]\ncla = [{{ name = \"tcp\", kind = \"stream\", listen = \"{name}\" }}]\n"
    )
}

fn mux_scenario(extra_phases: &str) -> scopedtn::harness::ScenarioReport {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("src.toml"), SRC).unwrap();
    std::fs::write(dir.path().join("mux.toml"), MUX).unwrap();
    std::fs::write(dir.path().join("x.toml"), sink("x")).unwrap();
    std::fs::write(dir.path().join("y.toml"), sink("y")).unwrap();
    let text = format!(
        r#"
name = "mux"
duration_ms = 3000
nodes = ["src.toml", "mux.toml", "x.toml", "y.toml"]
link = [{{ a = "src", b = "mux" }}, {{ a = "mux", b = "x" }}, {{ a = "mux", b = "y" }}]
app = [
    {{ id = "in", node = "src", scope = "s" }},
    {{ id = "at-x", node = "x", scope = "s", register = "dtn://dst.s" }},
    {{ id = "at-y", node = "y", scope = "s", register = "dtn://dst.s" }},
]
[[phase]]
at_ms = 100
action = "inject"
app = "in"
dest = "dtn://dst.s"
payload = "stored across the switch"
tag = "t"
[[phase]]
at_ms = 100
action = "expect_delivery"
app = "at-y"
tag = "t"
timeout_ms = 2000
[[phase]]
at_ms = 1000
action = "reconfigure"
node = "mux"
scope = "s"
profile = "b"
{extra_phases}
"#
    );
    let script = parse_scenario(&text, dir.path()).unwrap();
    run_scenario(&script, RunOptions::default()).unwrap()
}

#[test]
fn stored_bundle_survives_profile_switch() {
    let r = mux_scenario("");
    assert!(r.passed(), "{}", r.summary());
    let at_mux: Vec<_> = r.events.iter().filter(|e| e.node == "mux").collect();
    let stored = at_mux.iter().find(|e| e.kind == EventKind::Store).expect("stored under profile a");
    assert!(stored.time < SIM_EPOCH.saturating_add(1000));
    let forward = at_mux.iter().find(|e| e.kind == EventKind::Forward).expect("forwarded under profile b");
    assert_eq!(forward.digest, stored.digest);
    assert_eq!(forward.detail, "tcp/y");
    assert!(r.events.iter().all(|e| !(e.node == "x" && e.kind == EventKind::Parse)));
}

#[test]
fn switching_to_the_same_profile_changes_nothing() {
    let once = mux_scenario("");
    let twice = mux_scenario(
        "[[phase]]\nat_ms = 2000\naction = \"reconfigure\"\nnode = \"mux\"\nscope = \"s\"\nprofile = \"b\"\n",
    );
    assert!(twice.passed());
    let hash = |r: &scopedtn::harness::ScenarioReport| r.instance("mux", "s").unwrap().final_hash;
    assert_eq!(hash(&once), hash(&twice));
    assert_eq!(once.metrics.deliveries, twice.metrics.deliveries);
}

#[test]
fn unknown_profile_is_reported() {
    let r = mux_scenario("[[phase]]\nat_ms = 2000\naction = \"reconfigure\"\nnode = \"mux\"\nscope = \"s\"\nprofile = \"c\"\n");
    assert!(r.errors.iter().any(|e| e.contains("unknown profile")), "{:?}", r.errors);
    assert_eq!(r.exit_code(), 1);
}

#[test]
fn discovery_learns_within_two_periods_and_expires() {
    let r = run_scenario(&load_scenario(&scenario_path("redmars-eval")).unwrap(), RunOptions::default()).unwrap();
    let link_open = SIM_EPOCH.saturating_add(12_000);
    let link_close = SIM_EPOCH.saturating_add(20_000);
    for uav in ["chip", "chap"] {
        let changes: Vec<_> = r
            .events
            .iter()
            .filter(|e| e.node == uav && e.kind == EventKind::RoutesLearned)
            .collect();
        let learned = changes.iter().find(|e| e.detail.starts_with("learned")).expect("learned a neighbor");
        assert!(learned.time >= link_open && learned.time <= link_open.saturating_add(2 * 1000), "{uav}: {}", learned.time);
        let forgot = changes.iter().find(|e| e.detail.starts_with("forgot")).expect("neighbor expired");
        assert!(forgot.time > link_close.saturating_add(2 * 1000) && forgot.time <= link_close.saturating_add(5 * 1000));
        let i = r.instance(uav, "mars").unwrap();
        assert_eq!(forgot.digest, i.initial_hash);
    }
    for i in r.instances.iter().filter(|i| !i.discovery) {
        assert_eq!(i.learned_peak, 0);
    }
}

#[test]
fn different_seed_still_passes() {
    let script = load_scenario(&scenario_path("redmars-eval")).unwrap();
    let r = run_scenario(&script, RunOptions { seed: Some(99), ..RunOptions::default() }).unwrap();
    assert!(r.passed(), "{}", r.summary());
    assert_eq!(r.seed, 99);
}

#[test]
fn wall_clock_mode_runs_fig1() {
    let script = load_scenario(&scenario_path("fig1")).unwrap();
    let r = run_scenario(&script, RunOptions { wall_clock: true, ..RunOptions::default() }).unwrap();
    assert!(r.passed());
    assert_eq!(r.mode, "wall-clock");
    assert!(r.wall_runtime_ms >= 100, "paced against the host clock");
}

#[test]
fn report_files_are_written() {
    let r = run_scenario(&load_scenario(&scenario_path("fig2")).unwrap(), RunOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    r.write_to(dir.path()).unwrap();
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["audit"]["verdict"], "PASS");
    let lines = std::fs::read_to_string(dir.path().join("audit.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), r.events.len());
    assert!(std::fs::read_to_string(dir.path().join("summary.txt")).unwrap().contains("audit: PASS"));
}
