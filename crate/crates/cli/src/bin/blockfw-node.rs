//! Node daemon: stores the ledger, seals when authorized, gossips with
//! peers and keeps a firewall backend in line with the chain.

use std::collections::BTreeMap;
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::PathBuf;
use std::process::ExitCode;

use blockfw_core::commander::{Commander, CommanderConfig, FirewallBackend, MockBackend, ScriptBackend};
use blockfw_core::genesis::GenesisConfig;
use blockfw_core::identity::read_key_file;
use blockfw_core::netsim::message::NodeId;
use blockfw_core::netsim::node::{PeerConfig, PeerNode};
use blockfw_core::netsim::transport::spawn_node;
use clap::{Parser, ValueEnum};
use log::info;

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    None,
    Mock,
    Script,
}

#[derive(Parser)]
#[command(name = "blockfw-node", about = "Run a firewall chain node")]
struct Cli {
    #[arg(long)]
    genesis: PathBuf,
    /// Node key; required to seal.
    #[arg(long)]
    key: Option<PathBuf>,
    #[arg(long)]
    datadir: PathBuf,
    #[arg(long)]
    id: NodeId,
    #[arg(long, default_value = "127.0.0.1:7700")]
    listen: SocketAddr,
    /// Peer as `<id>@<host:port>`; repeatable.
    #[arg(long = "peer", value_parser = parse_peer)]
    peers: Vec<(NodeId, SocketAddr)>,
    #[arg(long, value_enum, default_value = "script")]
    backend: Backend,
    /// Command file for the script backend; defaults to <datadir>/firewall.rules.
    #[arg(long)]
    script_out: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    refresh_s: u64,
    #[arg(long, default_value_t = 5)]
    announce_s: u64,
}

fn parse_peer(s: &str) -> Result<(NodeId, SocketAddr), String> {
    let (id, addr) = s.split_once('@').ok_or("expected <id>@<host:port>")?;
    let id = id.parse().map_err(|e| format!("bad peer id: {e}"))?;
    let addr = addr
        .to_socket_addrs()
        .map_err(|e| e.to_string())?
        .next()
        .ok_or("address did not resolve")?;
    Ok((id, addr))
}

fn run(cli: Cli) -> Result<(), String> {
    let genesis = GenesisConfig::load(&cli.genesis).map_err(|e| format!("{}: {e}", cli.genesis.display()))?;
    let key = match &cli.key {
        Some(p) => Some(read_key_file(p).map_err(|e| format!("{}: {e}", p.display()))?),
        None => None,
    };
    std::fs::create_dir_all(&cli.datadir).map_err(|e| e.to_string())?;
    let peers: BTreeMap<NodeId, SocketAddr> = cli.peers.into_iter().collect();
    let mut config = PeerConfig::new(cli.id, peers.keys().copied().collect());
    config.announce_interval_ms = cli.announce_s.max(1) * 1000;
    let ledger = cli.datadir.join("chain.bfw");
    let peer = PeerNode::open(config, genesis.clone(), key, &ledger).map_err(|e| e.to_string())?;
    info!("ledger {} at height {}", ledger.display(), peer.chain().height());

    let backend: Option<Box<dyn FirewallBackend + Send>> = match cli.backend {
        Backend::None => None,
        Backend::Mock => Some(Box::new(MockBackend::new())),
        Backend::Script => Some(Box::new(ScriptBackend::new(
            cli.script_out.unwrap_or_else(|| cli.datadir.join("firewall.rules")),
        ))),
    };
    let commander = backend.map(|b| {
        Commander::new(
            b,
            genesis,
            CommanderConfig {
                refresh_ms: cli.refresh_s.max(1) * 1000,
                ..CommanderConfig::default()
            },
        )
    });
    let handle = spawn_node(peer, commander, cli.listen, peers).map_err(|e| format!("{}: {e}", cli.listen))?;
    handle.wait();
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
