//! Acceptance gate: one line per criterion, non-zero exit if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scopedtn::audit::EventKind;
use scopedtn::bundle::{decode_bundle, encode_bundle, parse_eid, BundleError, CreationTimestamp};
use scopedtn::cla::{bibe_decapsulate, bibe_encapsulate};
use scopedtn::harness::{load_scenario, run_scenario, RunOptions, ScenarioReport};
use scopedtn::time::DtnTime;

use common::{random_bundle, scenario_path};

/// Wall-clock budgets per scenario, in milliseconds.
const FIG_BUDGET_MS: u64 = 5_000;
const EVAL_BUDGET_MS: u64 = 30_000;
const PHOTO_BYTES: usize = 1 << 20;
const CODEC_CASES: usize = 1000;
const FUZZ_CASES: usize = 1000;
const BUNDLES_PER_DEPTH: usize = 100;

type Outcome = Result<String, String>;

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn run(name: &str, options: RunOptions) -> Result<ScenarioReport, String> {
    let script = load_scenario(&scenario_path(name)).map_err(|e| e.to_string())?;
    run_scenario(&script, options).map_err(|e| e.to_string())
}

fn fig1() -> Outcome {
    let r = run("fig1", RunOptions::default())?;
    let e = r.expectations.first().ok_or("no expectation")?;
    check(r.expectations_passed() && e.passed, format!("delivery failed: {}", e.detail))?;
    check(r.audit.passed(), format!("audit {:?}", r.audit.violations))?;
    let inner: Vec<_> = r
        .events
        .iter()
        .filter(|ev| ev.kind == EventKind::Deliver && ev.node == "node3" && ev.scope == "scope1")
        .map(|ev| ev.digest)
        .collect();
    check(inner.len() == 1, format!("{} scope-1 deliveries at node3", inner.len()))?;
    let leaked = r.events.iter().filter(|ev| ev.kind == EventKind::Parse && ev.scope == "scope2" && ev.digest == inner[0]).count();
    check(leaked == 0, format!("{leaked} scope-2 parses of the inner bundle"))?;
    let at = e.delivered_at_ms.unwrap_or(u64::MAX);
    check(at < FIG_BUDGET_MS && r.wall_runtime_ms < FIG_BUDGET_MS, "over time budget")?;
    Ok(format!("delivered {} bytes at {at} ms virtual, 0 scope-2 parses of inner, {} ms wall", e.bytes, r.wall_runtime_ms))
}

fn fig2() -> Outcome {
    let r = run("fig2", RunOptions::default())?;
    check(r.expectations_passed(), "delivery failed")?;
    check(r.audit.passed(), format!("audit {:?}", r.audit.violations))?;
    let m = &r.metrics;
    check(m.max_encapsulation_depth == 2, format!("max depth {}", m.max_encapsulation_depth))?;
    check(m.push_downs == 2 && m.pop_ups == 2, format!("{} push-downs / {} pop-ups", m.push_downs, m.pop_ups))?;
    check(m.encapsulation_balanced, "depth did not return to zero at delivery")?;
    check(r.wall_runtime_ms < FIG_BUDGET_MS, "over time budget")?;
    Ok(format!("max depth 2, 2 push-down/pop-up cycles, {} ms wall", r.wall_runtime_ms))
}

fn eval_checks(r: &ScenarioReport) -> Outcome {
    let command = r.expectations.iter().find(|e| e.tag == "command").ok_or("no command expectation")?;
    let photo = r.expectations.iter().find(|e| e.kind == "expect_photo_return").ok_or("no photo expectation")?;
    check(command.passed, format!("command: {}", command.detail))?;
    check(photo.passed && photo.bytes == PHOTO_BYTES, format!("photo: {} ({} bytes)", photo.detail, photo.bytes))?;
    check(r.errors.is_empty(), format!("errors {:?}", r.errors))?;
    check(r.audit.passed(), format!("audit {:?}", r.audit.violations))?;
    let mux = r.instance("gs-mux", "earth-mars").ok_or("no mux instance")?;
    check(mux.profile.as_deref() == Some("mars-gs"), "multiplexer never switched profile")?;
    for uav in ["chip", "chap"] {
        let i = r.instance(uav, "mars").ok_or("missing UAV")?;
        check(i.learned_peak > 0, format!("{uav} never learned a neighbor"))?;
    }
    check(r.instances.len() == 10 && r.wall_runtime_ms < EVAL_BUDGET_MS, "shape or time budget")?;
    Ok(format!(
        "command at {} ms, photo {} bytes bit-exact at {} ms, audit PASS, {} ms wall",
        command.delivered_at_ms.unwrap_or_default(),
        photo.bytes,
        photo.delivered_at_ms.unwrap_or_default(),
        r.wall_runtime_ms
    ))
}

fn codec() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..CODEC_CASES {
        let b = random_bundle(&mut rng, 512);
        let bytes = encode_bundle(&b);
        let back = decode_bundle(&bytes).map_err(|e| format!("case {case}: {e}"))?;
        check(back == b, format!("case {case}: structure changed"))?;
        check(encode_bundle(&back) == bytes, format!("case {case}: re-encoding not byte-stable"))?;
    }
    let seeds: Vec<Vec<u8>> = (0..16).map(|_| encode_bundle(&random_bundle(&mut rng, 64))).collect();
    let (mut rejected, mut accepted) = (0, 0);
    for case in 0..FUZZ_CASES {
        let input: Vec<u8> = if case % 2 == 0 {
            let len = rng.gen_range(0..256);
            (0..len).map(|_| rng.gen()).collect()
        } else {
            let mut v = seeds[case % seeds.len()].clone();
            for _ in 0..rng.gen_range(1..4) {
                match rng.gen_range(0..3) {
                    0 if !v.is_empty() => {
                        let i = rng.gen_range(0..v.len());
                        v[i] ^= 1 << rng.gen_range(0..8);
                    }
                    1 => v.truncate(rng.gen_range(0..=v.len())),
                    _ => {
                        let i = rng.gen_range(0..=v.len());
                        v.insert(i, rng.gen());
                    }
                }
            }
            v
        };
        match catch_unwind(AssertUnwindSafe(|| decode_bundle(&input))) {
            Err(_) => return Err(format!("fuzz case {case} panicked")),
            Ok(Err(BundleError::MalformedBundle(_))) => rejected += 1,
            Ok(Err(e)) => return Err(format!("fuzz case {case}: unexpected error kind {e}")),
            Ok(Ok(b)) => {
                check(encode_bundle(&b) == input, format!("fuzz case {case}: accepted input does not round-trip"))?;
                accepted += 1;
            }
        }
    }
    Ok(format!("{CODEC_CASES} round-trips byte-stable; {FUZZ_CASES} fuzz inputs: {rejected} rejected, {accepted} valid, 0 panics"))
}

fn encapsulation_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ts = CreationTimestamp { time: DtnTime(750_000_000_000), sequence: 0 };
    for depth in 1..=4 {
        for case in 0..BUNDLES_PER_DEPTH {
            let mut inner = random_bundle(&mut rng, 256);
            inner.creation = ts;
            inner.lifetime_ms = 1 << 30;
            let expected = encode_bundle(&inner);
            let mut current = inner;
            for level in 0..depth {
                let src = parse_eid(&format!("dtn://src{level}.s{level}")).expect("eid");
                let dst = parse_eid(&format!("dtn://dst{level}.s{level}")).expect("eid");
                current = bibe_encapsulate(&current, src, dst, ts, 1 << 30);
            }
            for _ in 0..depth {
                current = bibe_decapsulate(&current.payload).map_err(|e| format!("depth {depth} case {case}: {e}"))?;
            }
            check(encode_bundle(&current) == expected, format!("depth {depth} case {case}: not bit-exact"))?;
        }
    }
    Ok(format!("depths 1-4 x {BUNDLES_PER_DEPTH} bundles bit-exact"))
}

fn auditor_sensitivity() -> Outcome {
    let r = run("fig1", RunOptions { inject_leak: true, ..RunOptions::default() })?;
    check(!r.audit.passed(), "sabotaged run still audits PASS")?;
    check(r.exit_code() == 5, format!("exit code {}", r.exit_code()))?;
    Ok(format!("audit FAIL with {} violation(s), exit code 5", r.audit.violations.len()))
}

fn table_immutability(r: &ScenarioReport) -> Outcome {
    let mut fixed = 0;
    for i in &r.instances {
        if i.discovery {
            check(i.final_hash == i.initial_hash, format!("{}/{} did not return to its pre-discovery table", i.node, i.scope))?;
        } else {
            check(i.final_hash == i.sanctioned_hash, format!("{}/{} drifted from its sanctioned table", i.node, i.scope))?;
            if i.profile.is_none() {
                check(i.final_hash == i.initial_hash, format!("{}/{} changed", i.node, i.scope))?;
            }
            fixed += 1;
        }
    }
    let stray = r
        .events
        .iter()
        .filter(|e| e.kind == EventKind::RoutesLearned)
        .filter(|e| !r.instance(&e.node, &e.scope).is_some_and(|i| i.discovery))
        .count();
    check(stray == 0, format!("{stray} learned-route events outside discovery scopes"))?;
    Ok(format!("{fixed} static tables unchanged (mux only via sanctioned profile), discovery tables restored"))
}

fn determinism(first: &ScenarioReport) -> Outcome {
    let second = run("redmars-eval", RunOptions::default())?;
    check(first.without_timing() == second.without_timing(), "reports differ")?;
    check(first.events == second.events, "audit logs differ")?;
    Ok(format!("identical reports and {} audit events", first.events.len()))
}

type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() {
    let eval = &run("redmars-eval", RunOptions::default());
    let with_eval = |f: fn(&ScenarioReport) -> Outcome| move || eval.as_ref().map_err(Clone::clone).and_then(f);
    let criteria: Vec<(&str, Criterion<'_>)> = vec![
        ("1 fig1 reproduction", Box::new(fig1)),
        ("2 fig2 reproduction", Box::new(fig2)),
        ("3 evaluation scenario", Box::new(with_eval(eval_checks))),
        ("4 codec round-trip and fuzz", Box::new(codec)),
        ("5 encapsulation identity", Box::new(encapsulation_identity)),
        ("6 auditor sensitivity", Box::new(auditor_sensitivity)),
        ("7 routing-table immutability", Box::new(with_eval(table_immutability))),
        ("8 determinism", Box::new(with_eval(determinism))),
    ];
    let mut failed = 0;
    for (name, criterion) in criteria {
        match catch_unwind(AssertUnwindSafe(criterion)) {
            Ok(Ok(detail)) => println!("criterion {name}: PASS ({detail})"),
            Ok(Err(why)) => {
                failed += 1;
                println!("criterion {name}: FAIL ({why})");
            }
            Err(_) => {
                failed += 1;
                println!("criterion {name}: FAIL (panicked)");
            }
        }
    }
    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all 8 criteria passed");
}
