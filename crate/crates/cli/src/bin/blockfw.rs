//! Administrator console.

use std::net::{SocketAddr, ToSocketAddrs};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use blockfw_core::console::{
    execute, ConsoleCommand, ConsoleError, ConsoleOptions, TcpNodeClient, UnblockTarget, EXIT_USAGE,
};
use blockfw_core::identity::{read_key_file, Address, KeyPair};
use blockfw_core::rulestate::{Protocol, RuleId, SourceSpec};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "blockfw", about = "Manage replicated firewall rules")]
struct Cli {
    /// Administrator key file.
    #[arg(long, global = true, default_value = "admin.key")]
    key: PathBuf,
    /// Node endpoint.
    #[arg(long, global = true, default_value = "127.0.0.1:7700")]
    node: String,
    #[arg(long, global = true)]
    json: bool,
    /// Return once the transaction is sent.
    #[arg(long, global = true)]
    no_wait: bool,
    #[arg(long, global = true, default_value_t = 5)]
    timeout_s: u64,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Deny traffic to a port.
    Block {
        port: u16,
        #[arg(long, default_value = "tcp")]
        proto: Protocol,
        #[arg(long, default_value = "any")]
        from: SourceSpec,
    },
    /// Remove a rule by port or rule id.
    Unblock { target: String },
    Admin {
        #[command(subcommand)]
        op: AdminOp,
    },
    /// List the active rules.
    Rules,
    /// Show chain head, admins and rules.
    Status,
}

#[derive(Subcommand)]
enum AdminOp {
    Add { address: Address },
    Remove { address: Address },
}

fn command(cmd: Cmd) -> Result<ConsoleCommand, ConsoleError> {
    Ok(match cmd {
        Cmd::Block { port, proto, from } => ConsoleCommand::Block {
            port,
            protocol: proto,
            source: from,
        },
        Cmd::Unblock { target } => {
            let t = if let Ok(port) = target.parse::<u16>() {
                UnblockTarget::Port(port)
            } else {
                let id: RuleId = target
                    .parse()
                    .map_err(|_| ConsoleError::Usage(format!("`{target}` is neither a port nor a rule id")))?;
                UnblockTarget::Rule(id)
            };
            ConsoleCommand::Unblock(t)
        }
        Cmd::Admin { op: AdminOp::Add { address } } => ConsoleCommand::AdminAdd(address),
        Cmd::Admin { op: AdminOp::Remove { address } } => ConsoleCommand::AdminRemove(address),
        Cmd::Rules => ConsoleCommand::Rules,
        Cmd::Status => ConsoleCommand::Status,
    })
}

fn resolve(node: &str) -> Result<SocketAddr, ConsoleError> {
    node.to_socket_addrs()
        .map_err(ConsoleError::Unreachable)?
        .next()
        .ok_or_else(|| ConsoleError::Usage(format!("cannot resolve {node}")))
}

fn run(cli: Cli) -> Result<String, ConsoleError> {
    let json = cli.json;
    let cmd = command(cli.cmd)?;
    let key: Option<KeyPair> = if cmd.needs_key() {
        Some(read_key_file(&cli.key).map_err(|_| ConsoleError::KeyMissing(cli.key.clone()))?)
    } else {
        None
    };
    let addr = resolve(&cli.node)?;
    let mut client = TcpNodeClient::new(addr, Duration::from_secs(cli.timeout_s));
    let options = ConsoleOptions {
        no_wait: cli.no_wait,
        ..ConsoleOptions::default()
    };
    let outcome = execute(&cmd, key.as_ref(), &mut client, options)?;
    Ok(if json {
        serde_json::to_string_pretty(&outcome).expect("serializable")
    } else {
        outcome.to_string().trim_end().to_string()
    })
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let json = cli.json;
    match run(cli) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            if json {
                let v = serde_json::json!({ "result": "error", "code": e.exit_code(), "message": e.to_string() });
                println!("{v}");
            }
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
