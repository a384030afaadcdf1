use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use scopedtn::bpa::AapMessage;
use scopedtn::bundle::parse_eid;
use scopedtn::config::load_node;
use scopedtn::daemon::{start_node, DaemonError, DaemonOptions};
use scopedtn::harness::{load_scenario, run_scenario, RunOptions};

const EXIT_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CONNECT: u8 = 3;
const EXIT_BAD_EID: u8 = 4;

#[derive(Parser)]
#[command(name = "scopedtn", version, about = "Scoped DTN nodes, AAP clients and scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every scope instance of a node until terminated.
    Node {
        #[arg(long)]
        config: PathBuf,
        /// Validate the configuration and exit.
        #[arg(long)]
        dry_run: bool,
        /// Append audit events to this file as JSON lines.
        #[arg(long)]
        audit: Option<PathBuf>,
    },
    /// Submit one bundle through an instance's AAP endpoint.
    Send {
        #[arg(long, env = "SCOPEDTN_AAP")]
        aap: String,
        #[arg(long)]
        dest: String,
        /// Lifetime in milliseconds; 0 uses the instance default.
        #[arg(long, default_value_t = 0)]
        lifetime: u64,
        /// Payload file; stdin when omitted.
        payload: Option<PathBuf>,
    },
    /// Register an EID and print each delivery as `source<TAB>payload`.
    Recv {
        #[arg(long, env = "SCOPEDTN_AAP")]
        aap: String,
        #[arg(long)]
        register: String,
        /// Exit after this many deliveries.
        #[arg(long)]
        count: Option<usize>,
        /// Write raw payloads into this directory instead of printing them.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run a scenario script in the emulator.
    Scenario {
        script: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Pace the emulated schedule against the wall clock.
        #[arg(long)]
        wall_clock: bool,
        /// Test hook: let lower scopes inspect payloads; the audit must fail.
        #[arg(long, hide = true)]
        inject_leak: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Node { config, dry_run, audit } => cmd_node(config, dry_run, audit),
        Command::Send { aap, dest, lifetime, payload } => cmd_send(&aap, &dest, lifetime, payload),
        Command::Recv { aap, register, count, out_dir } => cmd_recv(&aap, &register, count, out_dir),
        Command::Scenario { script, report, seed, wall_clock, inject_leak } => {
            cmd_scenario(script, report, RunOptions { seed, wall_clock, inject_leak })
        }
    };
    ExitCode::from(code)
}

fn cmd_node(config: PathBuf, dry_run: bool, audit: Option<PathBuf>) -> u8 {
    let spec = match load_node(&config) {
        Ok(spec) => spec,
        Err(e) => {
            eprintln!("invalid configuration: {e}");
            return EXIT_CONFIG;
        }
    };
    if dry_run {
        println!("{}: {} instance(s) valid", spec.node, spec.instances.len());
        return 0;
    }
    let node = match start_node(&spec, DaemonOptions { audit_path: audit }) {
        Ok(node) => node,
        Err(DaemonError::Config(e)) => {
            eprintln!("invalid configuration: {e}");
            return EXIT_CONFIG;
        }
        Err(e) => {
            eprintln!("{e}");
            return EXIT_FAILED;
        }
    };
    for inst in &spec.instances {
        if let Some(addr) = node.aap_addr(&inst.scope) {
            println!("{} {} aap {addr}", spec.node, inst.scope);
        }
    }
    let _ = io::stdout().flush();
    node.wait();
    0
}

fn connect(aap: &str) -> Result<TcpStream, u8> {
    let mut conn = TcpStream::connect(aap).map_err(|e| {
        eprintln!("cannot reach AAP endpoint {aap}: {e}");
        EXIT_CONNECT
    })?;
    let _ = conn.set_read_timeout(Some(Duration::from_secs(10)));
    match AapMessage::read_from(&mut conn) {
        Ok(Some(AapMessage::Welcome { node_eid })) => log::info!("connected to {node_eid}"),
        other => {
            eprintln!("{aap} did not greet with WELCOME: {other:?}");
            return Err(EXIT_CONNECT);
        }
    }
    let _ = conn.set_read_timeout(None);
    Ok(conn)
}

fn request(conn: &mut TcpStream, message: AapMessage) -> Result<(), u8> {
    message.write_to(conn).map_err(|e| {
        eprintln!("AAP connection lost: {e}");
        EXIT_CONNECT
    })?;
    match AapMessage::read_from(conn) {
        Ok(Some(AapMessage::Ack)) => Ok(()),
        Ok(Some(AapMessage::Nack { reason })) => {
            eprintln!("refused: {reason}");
            Err(EXIT_FAILED)
        }
        other => {
            eprintln!("unexpected AAP reply: {other:?}");
            Err(EXIT_CONNECT)
        }
    }
}

fn cmd_send(aap: &str, dest: &str, lifetime: u64, payload: Option<PathBuf>) -> u8 {
    if let Err(e) = parse_eid(dest) {
        eprintln!("malformed destination {dest:?}: {e}");
        return EXIT_BAD_EID;
    }
    let payload = match payload {
        Some(path) => std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display())),
        None => {
            let mut buf = Vec::new();
            io::stdin().read_to_end(&mut buf).map(|_| buf).map_err(|e| format!("stdin: {e}"))
        }
    };
    let payload = match payload {
        Ok(p) => p,
        Err(e) => {
            eprintln!("cannot read payload: {e}");
            return EXIT_FAILED;
        }
    };
    let mut conn = match connect(aap) {
        Ok(c) => c,
        Err(code) => return code,
    };
    match request(&mut conn, AapMessage::Send { destination: dest.to_string(), lifetime_ms: lifetime, payload }) {
        Ok(()) => 0,
        Err(code) => code,
    }
}

fn cmd_recv(aap: &str, register: &str, count: Option<usize>, out_dir: Option<PathBuf>) -> u8 {
    if let Err(e) = parse_eid(register) {
        eprintln!("malformed EID {register:?}: {e}");
        return EXIT_BAD_EID;
    }
    let mut conn = match connect(aap) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if let Err(code) = request(&mut conn, AapMessage::Register { eid: register.to_string() }) {
        return code;
    }
    let mut received = 0;
    let stdout = io::stdout();
    while count.is_none_or(|n| received < n) {
        match AapMessage::read_from(&mut conn) {
            Ok(Some(AapMessage::Recv { source, payload })) => {
                received += 1;
                let shown = match &out_dir {
                    Some(dir) => {
                        let path = dir.join(format!("{received:04}.bin"));
                        if let Err(e) = std::fs::write(&path, &payload) {
                            eprintln!("{}: {e}", path.display());
                            return EXIT_FAILED;
                        }
                        path.display().to_string()
                    }
                    None => match std::str::from_utf8(&payload) {
                        Ok(text) => text.to_string(),
                        Err(_) => format!("hex:{}", hex::encode(&payload)),
                    },
                };
                let mut out = stdout.lock();
                let _ = writeln!(out, "{source}\t{shown}");
                let _ = out.flush();
            }
            Ok(Some(other)) => log::debug!("ignoring {other:?}"),
            Ok(None) | Err(_) => {
                eprintln!("AAP connection closed after {received} deliveries");
                return EXIT_CONNECT;
            }
        }
    }
    0
}

fn cmd_scenario(script: PathBuf, report_dir: Option<PathBuf>, options: RunOptions) -> u8 {
    let script = match load_scenario(&script) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("invalid scenario: {e}");
            return EXIT_CONFIG;
        }
    };
    let report = match run_scenario(&script, options) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("invalid scenario: {e}");
            return EXIT_CONFIG;
        }
    };
    print!("{}", report.summary());
    if let Some(dir) = report_dir {
        if let Err(e) = report.write_to(&dir) {
            eprintln!("cannot write report to {}: {e}", dir.display());
            return EXIT_FAILED;
        }
    }
    u8::try_from(report.exit_code()).unwrap_or(EXIT_FAILED)
}
