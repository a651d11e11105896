//! Key and genesis tooling.

use std::path::PathBuf;
use std::process::ExitCode;

use blockfw_core::genesis::GenesisConfig;
use blockfw_core::identity::{generate_keypair, read_key_file, write_key_file, Address};
use clap::{Parser, Subcommand};
use rand::RngCore;

#[derive(Parser)]
#[command(name = "blockfw-key", about = "Generate keys and genesis files")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a new key file and print its address.
    Gen {
        #[arg(long)]
        out: PathBuf,
        /// 64 hex characters; random when omitted.
        #[arg(long)]
        seed_hex: Option<String>,
        #[arg(long)]
        force: bool,
    },
    /// Print the address and public key of a key file.
    Addr {
        #[arg(long)]
        key: PathBuf,
    },
    /// Write a genesis file from sealer key files and admin addresses.
    Genesis {
        #[arg(long)]
        chain_id: String,
        #[arg(long = "sealer", required = true)]
        sealers: Vec<PathBuf>,
        #[arg(long = "admin", required = true)]
        admins: Vec<Address>,
        #[arg(long, default_value_t = 1)]
        period: u64,
        #[arg(long)]
        wiggle: Option<u64>,
        #[arg(long, default_value_t = 30)]
        keepalive: u64,
        /// Genesis unix time; now when omitted.
        #[arg(long)]
        timestamp: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.cmd {
        Cmd::Gen {
            out,
            seed_hex,
            force,
        } => {
            if out.exists() && !force {
                return Err(format!("{} exists; pass --force to overwrite", out.display()));
            }
            let seed = match seed_hex {
                Some(h) => hex::decode(h.trim()).map_err(|e| format!("bad seed: {e}"))?,
                None => {
                    let mut s = vec![0u8; 32];
                    rand::rngs::OsRng.fill_bytes(&mut s);
                    s
                }
            };
            let key = generate_keypair(&seed).map_err(|e| e.to_string())?;
            write_key_file(&out, &key).map_err(|e| e.to_string())?;
            println!("{}", key.address());
        }
        Cmd::Addr { key } => {
            let key = read_key_file(&key).map_err(|e| format!("{}: {e}", key.display()))?;
            println!("address    {}", key.address());
            println!("public_key {}", key.public_key());
        }
        Cmd::Genesis {
            chain_id,
            sealers,
            admins,
            period,
            wiggle,
            keepalive,
            timestamp,
            out,
        } => {
            let keys = sealers
                .iter()
                .map(|p| {
                    read_key_file(p)
                        .map(|k| k.public_key())
                        .map_err(|e| format!("{}: {e}", p.display()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mut g = GenesisConfig::new(&chain_id, keys, admins);
            g.period = period;
            g.wiggle = wiggle;
            g.keepalive = keepalive;
            g.timestamp = timestamp.unwrap_or_else(|| {
                std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0)
            });
            g.validate().map_err(|e| e.to_string())?;
            std::fs::write(&out, g.to_toml_string()).map_err(|e| e.to_string())?;
            println!("{}", g.genesis_block().hash());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
