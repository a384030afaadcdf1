#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use scopedtn::bundle::{Bundle, CreationTimestamp, CrcType, EndpointId, ProcessingFlags};
use scopedtn::time::DtnTime;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"))
}

pub fn random_eid(rng: &mut impl Rng) -> EndpointId {
    match rng.gen_range(0..3) {
        0 => EndpointId::Null,
        1 => EndpointId::ipn(rng.gen(), rng.gen_range(0..1 << 20)),
        _ => {
            let len = rng.gen_range(1..24);
            let node: String = (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
            EndpointId::dtn(format!("//{node}.scope/svc{}", rng.gen_range(0..100))).expect("valid dtn EID")
        }
    }
}

pub fn random_bundle(rng: &mut impl Rng, max_payload: usize) -> Bundle {
    let flag_bits = [
        ProcessingFlags::ADMIN_RECORD,
        ProcessingFlags::MUST_NOT_FRAGMENT,
        ProcessingFlags::ACK_REQUESTED,
        ProcessingFlags::STATUS_TIME_REQUESTED,
    ];
    let bits = flag_bits.iter().filter(|_| rng.gen_bool(0.3)).fold(0, |acc, b| acc | b);
    let len = rng.gen_range(0..=max_payload);
    Bundle {
        flags: ProcessingFlags::from_bits(bits).expect("allowed flags"),
        destination: random_eid(rng),
        source: random_eid(rng),
        report_to: random_eid(rng),
        creation: CreationTimestamp { time: DtnTime(rng.gen_range(0..1 << 45)), sequence: rng.gen_range(0..1 << 20) },
        lifetime_ms: rng.gen_range(1..1 << 40),
        payload: (0..len).map(|_| rng.gen()).collect(),
        crc: match rng.gen_range(0..3) {
            0 => CrcType::None,
            1 => CrcType::Crc16,
            _ => CrcType::Crc32c,
        },
    }
}
