//! Wire encoding shared by the simulator and the TCP transport.
//!
//! A message is `sender:u32 | tag:u8 | payload`. Over a stream each message
//! is framed as `len:u32 | message`, all integers big-endian.

use std::io::{self, Read, Write};

use crate::codec::{DecodeError, Hash32, Reader};
use crate::identity::Address;
use crate::ledger::{encode_record, Block, MAX_BLOCK_LEN};
use crate::rulestate::{ChainState, Transaction};

pub type NodeId = u32;

/// Sender id used by management consoles.
pub const CONSOLE_ID: NodeId = u32::MAX;

/// Most blocks a single chain response may carry.
pub const MAX_CHAIN_RESPONSE: usize = 256;
pub const MAX_FRAME_LEN: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSummary {
    pub height: u64,
    pub head_hash: Hash32,
    pub sealer: Option<Address>,
    pub period: u64,
    pub wiggle: u64,
    pub state: ChainState,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    TxGossip(Transaction),
    BlockGossip(Block),
    HeadAnnounce { height: u64, head_hash: Hash32 },
    GetChain { from_height: u64 },
    /// Contiguous, ascending.
    ChainResponse(Vec<Block>),
    GetNonce(Address),
    NonceReply { address: Address, nonce: u64 },
    GetState,
    StateReply(Box<StateSummary>),
}

impl Payload {
    pub fn tag(&self) -> u8 {
        match self {
            Payload::TxGossip(_) => 0,
            Payload::BlockGossip(_) => 1,
            Payload::HeadAnnounce { .. } => 2,
            Payload::GetChain { .. } => 3,
            Payload::ChainResponse(_) => 4,
            Payload::GetNonce(_) => 16,
            Payload::NonceReply { .. } => 17,
            Payload::GetState => 18,
            Payload::StateReply(_) => 19,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Payload::TxGossip(_) => "tx",
            Payload::BlockGossip(_) => "block",
            Payload::HeadAnnounce { .. } => "announce",
            Payload::GetChain { .. } => "get_chain",
            Payload::ChainResponse(_) => "chain_response",
            Payload::GetNonce(_) => "get_nonce",
            Payload::NonceReply { .. } => "nonce_reply",
            Payload::GetState => "get_state",
            Payload::StateReply(_) => "state_reply",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub sender: NodeId,
    pub payload: Payload,
}

impl Message {
    pub fn new(sender: NodeId, payload: Payload) -> Self {
        Self { sender, payload }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.sender.to_be_bytes());
        out.push(self.payload.tag());
        match &self.payload {
            Payload::TxGossip(tx) => tx.encode_into(&mut out),
            Payload::BlockGossip(block) => block.encode_into(&mut out),
            Payload::HeadAnnounce { height, head_hash } => {
                out.extend_from_slice(&height.to_be_bytes());
                out.extend_from_slice(head_hash.as_bytes());
            }
            Payload::GetChain { from_height } => out.extend_from_slice(&from_height.to_be_bytes()),
            Payload::ChainResponse(blocks) => {
                out.extend_from_slice(&(blocks.len() as u32).to_be_bytes());
                for b in blocks {
                    encode_record(b, &mut out);
                }
            }
            Payload::GetNonce(a) => out.extend_from_slice(&a.0),
            Payload::NonceReply { address, nonce } => {
                out.extend_from_slice(&address.0);
                out.extend_from_slice(&nonce.to_be_bytes());
            }
            Payload::GetState => {}
            Payload::StateReply(s) => {
                out.extend_from_slice(&s.height.to_be_bytes());
                out.extend_from_slice(s.head_hash.as_bytes());
                match &s.sealer {
                    Some(a) => {
                        out.push(1);
                        out.extend_from_slice(&a.0);
                    }
                    None => out.push(0),
                }
                out.extend_from_slice(&s.period.to_be_bytes());
                out.extend_from_slice(&s.wiggle.to_be_bytes());
                s.state.encode_into(&mut out);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let sender = r.u32()?;
        let offset = r.position();
        let payload = match r.u8()? {
            0 => Payload::TxGossip(Transaction::decode_from(&mut r)?),
            1 => Payload::BlockGossip(Block::decode_from(&mut r)?),
            2 => Payload::HeadAnnounce {
                height: r.u64()?,
                head_hash: Hash32(r.array()?),
            },
            3 => Payload::GetChain {
                from_height: r.u64()?,
            },
            4 => {
                let n = r.len_prefix(MAX_CHAIN_RESPONSE)?;
                let mut blocks = Vec::with_capacity(n);
                let mut expected = None;
                for _ in 0..n {
                    let len = r.len_prefix(MAX_BLOCK_LEN)?;
                    let block = Block::decode(r.bytes(len)?)?;
                    if expected.is_some_and(|h| h != block.header.height) {
                        return Err(DecodeError::NonCanonical("chain response not contiguous"));
                    }
                    expected = block.header.height.checked_add(1);
                    blocks.push(block);
                }
                Payload::ChainResponse(blocks)
            }
            16 => Payload::GetNonce(Address(r.array()?)),
            17 => Payload::NonceReply {
                address: Address(r.array()?),
                nonce: r.u64()?,
            },
            18 => Payload::GetState,
            19 => {
                let height = r.u64()?;
                let head_hash = Hash32(r.array()?);
                let sealer = if r.bool()? {
                    Some(Address(r.array()?))
                } else {
                    None
                };
                Payload::StateReply(Box::new(StateSummary {
                    height,
                    head_hash,
                    sealer,
                    period: r.u64()?,
                    wiggle: r.u64()?,
                    state: ChainState::decode_from(&mut r)?,
                }))
            }
            tag => {
                return Err(DecodeError::InvalidTag {
                    what: "message",
                    tag,
                    offset,
                })
            }
        };
        r.finish()?;
        Ok(Self { sender, payload })
    }

    pub fn encoded_len(&self) -> usize {
        self.encode().len()
    }
}

pub fn write_frame<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    let body = msg.encode();
    let mut frame = Vec::with_capacity(body.len() + 4);
    frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
    frame.extend_from_slice(&body);
    w.write_all(&frame)?;
    w.flush()
}

/// Reads one frame. `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Message>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME_LEN {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too long"));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Message::decode(&body)
        .map(Some)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}
