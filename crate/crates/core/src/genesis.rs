//! Out-of-band genesis configuration: chain identity, sealer keys, initial
//! administrators and sealing timings.
//!
//! ```toml
//! chain_id = "blockfw-lab"
//! period = 1        # seconds between blocks
//! wiggle = 2        # extra delay before out-of-turn sealing, seconds
//! keepalive = 30    # empty-block interval, seconds
//! timestamp = 0     # genesis unix time
//! sealers = ["<64 hex public key>", ...]
//! admins = ["<40 hex address>", ...]
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{sha256, Hash32};
use crate::consensus::SealerSchedule;
use crate::identity::{derive_address, Address, PublicKey, Signature};
use crate::ledger::{Block, BlockHeader};
use crate::rulestate::{state_root, ChainState};

#[derive(Debug, thiserror::Error)]
pub enum GenesisError {
    #[error("genesis config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid genesis config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenesisConfig {
    pub chain_id: String,
    pub sealers: Vec<PublicKey>,
    pub admins: Vec<Address>,
    #[serde(default = "default_period")]
    pub period: u64,
    /// Defaults to twice the period.
    #[serde(default)]
    pub wiggle: Option<u64>,
    #[serde(default = "default_keepalive")]
    pub keepalive: u64,
    #[serde(default)]
    pub timestamp: u64,
}

fn default_period() -> u64 {
    1
}

fn default_keepalive() -> u64 {
    30
}

impl GenesisConfig {
    pub fn new(chain_id: &str, sealers: Vec<PublicKey>, admins: Vec<Address>) -> Self {
        Self {
            chain_id: chain_id.to_string(),
            sealers,
            admins,
            period: default_period(),
            wiggle: None,
            keepalive: default_keepalive(),
            timestamp: 0,
        }
    }

    pub fn validate(&self) -> Result<(), GenesisError> {
        let invalid = |m: &str| Err(GenesisError::Invalid(m.to_string()));
        if self.chain_id.is_empty() {
            return invalid("chain_id is empty");
        }
        if self.sealers.is_empty() {
            return invalid("sealer list is empty");
        }
        if self.admins.is_empty() {
            return invalid("admin list is empty");
        }
        if self.period < 1 {
            return invalid("period must be at least 1 second");
        }
        if self.keepalive < 1 {
            return invalid("keepalive must be at least 1 second");
        }
        let mut seen = BTreeSet::new();
        for key in &self.sealers {
            let addr = derive_address(key)
                .map_err(|_| GenesisError::Invalid(format!("sealer key {key} is not a valid point")))?;
            if !seen.insert(addr) {
                return invalid("duplicate sealer");
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, GenesisError> {
        let cfg: GenesisConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, GenesisError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("genesis config serializes")
    }

    pub fn wiggle_secs(&self) -> u64 {
        self.wiggle.unwrap_or(self.period * 2)
    }

    pub fn sealer_addresses(&self) -> Vec<Address> {
        self.sealers
            .iter()
            .map(|k| derive_address(k).expect("validated sealer key"))
            .collect()
    }

    pub fn sealer_key(&self, address: &Address) -> Option<&PublicKey> {
        self.sealers
            .iter()
            .find(|k| derive_address(k).ok().as_ref() == Some(address))
    }

    pub fn schedule(&self) -> SealerSchedule {
        SealerSchedule::from_genesis(self)
    }

    /// Encoding hashed into the genesis identity; independent of TOML layout.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"BFW-GENESIS");
        out.extend_from_slice(&(self.chain_id.len() as u32).to_be_bytes());
        out.extend_from_slice(self.chain_id.as_bytes());
        out.extend_from_slice(&(self.sealers.len() as u32).to_be_bytes());
        for k in &self.sealers {
            out.extend_from_slice(&k.0);
        }
        let admins: BTreeSet<&Address> = self.admins.iter().collect();
        out.extend_from_slice(&(admins.len() as u32).to_be_bytes());
        for a in admins {
            out.extend_from_slice(&a.0);
        }
        for v in [
            self.period,
            self.wiggle_secs(),
            self.keepalive,
            self.timestamp,
        ] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out
    }

    pub fn config_hash(&self) -> Hash32 {
        sha256(&self.canonical_bytes())
    }

    pub fn genesis_state(&self) -> ChainState {
        ChainState::genesis(self.admins.iter().copied())
    }

    /// The unsealed height-0 block. Its `tx_root` slot carries the config
    /// hash, so the genesis block hash commits to the whole configuration.
    pub fn genesis_block(&self) -> Block {
        Block {
            header: BlockHeader {
                height: 0,
                parent_hash: Hash32::ZERO,
                state_root: state_root(&self.genesis_state()),
                tx_root: self.config_hash(),
                timestamp: self.timestamp,
                sealer: Address::ZERO,
                in_turn: false,
                seal: Signature::ZERO,
            },
            transactions: Vec::new(),
        }
    }
}
