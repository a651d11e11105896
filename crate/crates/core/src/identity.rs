//! Administrator and sealer identities.
//!
//! Keys are Ed25519 (deterministic signatures, so scenario replays are
//! byte-identical). An [`Address`] is the trailing 20 bytes of the SHA-256
//! digest of the 32-byte public key encoding.
//!
//! A key file holds the 32-byte secret as 64 lowercase hex characters followed
//! by a newline. It stands in for the administrator's hardware key.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::codec::{parse_hex_array, sha256, HexLenError};

pub const SEED_LEN: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum IdentityError {
    #[error("seed must be {SEED_LEN} bytes, got {0}")]
    InvalidSeed(usize),
    #[error("public key is not a valid curve point encoding")]
    InvalidKey,
    #[error("malformed key file: {0}")]
    MalformedKeyFile(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// 32-byte public key encoding. Not validated until used.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub [u8; 32]);

/// 20-byte account identifier derived from a public key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address(pub [u8; 20]);

/// Detached 64-byte signature.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; 64]);

impl Signature {
    pub const ZERO: Signature = Signature([0u8; 64]);
}

#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    pub fn from_seed(seed: &[u8]) -> Result<Self, IdentityError> {
        let bytes: [u8; SEED_LEN] = seed
            .try_into()
            .map_err(|_| IdentityError::InvalidSeed(seed.len()))?;
        Ok(Self {
            signing: SigningKey::from_bytes(&bytes),
        })
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }

    pub fn address(&self) -> Address {
        address_of(&self.public_key().0)
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.signing.sign(message).to_bytes())
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("address", &self.address())
            .finish_non_exhaustive()
    }
}

impl PartialEq for KeyPair {
    fn eq(&self, other: &Self) -> bool {
        self.secret_bytes() == other.secret_bytes()
    }
}

impl Eq for KeyPair {}

pub fn generate_keypair(seed: &[u8]) -> Result<KeyPair, IdentityError> {
    KeyPair::from_seed(seed)
}

fn address_of(public_key: &[u8; 32]) -> Address {
    let digest = sha256(public_key);
    let mut out = [0u8; 20];
    out.copy_from_slice(&digest.0[12..]);
    Address(out)
}

/// Trailing 20 bytes of SHA-256 over the public key bytes.
pub fn derive_address(public_key: &PublicKey) -> Result<Address, IdentityError> {
    VerifyingKey::from_bytes(&public_key.0).map_err(|_| IdentityError::InvalidKey)?;
    Ok(address_of(&public_key.0))
}

pub fn sign(message: &[u8], secret_key: &[u8; 32]) -> Signature {
    KeyPair {
        signing: SigningKey::from_bytes(secret_key),
    }
    .sign(message)
}

/// Strict verification: rejects non-canonical and small-order encodings.
pub fn verify(message: &[u8], signature: &Signature, public_key: &PublicKey) -> bool {
    let Ok(key) = VerifyingKey::from_bytes(&public_key.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
    key.verify_strict(message, &sig).is_ok()
}

pub fn encode_key_file(key: &KeyPair) -> String {
    let mut out = hex::encode(key.secret_bytes());
    out.push('\n');
    out
}

pub fn parse_key_file(text: &str) -> Result<KeyPair, IdentityError> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    let body = body.strip_suffix('\r').unwrap_or(body);
    if body.len() != 64 || !body.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(IdentityError::MalformedKeyFile(
            "expected 64 hex characters and a newline".into(),
        ));
    }
    let seed = hex::decode(body).map_err(|e| IdentityError::MalformedKeyFile(e.to_string()))?;
    KeyPair::from_seed(&seed)
}

/// Writes the key file with owner-only permissions.
pub fn write_key_file(path: &Path, key: &KeyPair) -> Result<(), IdentityError> {
    let mut options = fs::OpenOptions::new();
    options.write(true).create(true).truncate(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        options.mode(0o600);
    }
    let mut file = options.open(path)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        file.set_permissions(fs::Permissions::from_mode(0o600))?;
    }
    file.write_all(encode_key_file(key).as_bytes())?;
    file.sync_all()?;
    Ok(())
}

pub fn read_key_file(path: &Path) -> Result<KeyPair, IdentityError> {
    parse_key_file(&fs::read_to_string(path)?)
}

impl Address {
    pub const ZERO: Address = Address([0u8; 20]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address({})", &self.to_hex()[..8])
    }
}

impl FromStr for Address {
    type Err = HexLenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_hex_array(s).map(Address)
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", hex::encode(&self.0[..4]))
    }
}

impl FromStr for PublicKey {
    type Err = HexLenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_hex_array(s).map(PublicKey)
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", hex::encode(&self.0[..4]))
    }
}

macro_rules! hex_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(&self.to_string())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_serde!(Address);
hex_serde!(PublicKey);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keypair_is_deterministic() {
        let a = generate_keypair(&[7u8; 32]).unwrap();
        let b = generate_keypair(&[7u8; 32]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.public_key(), b.public_key());
    }

    #[test]
    fn distinct_seeds_give_distinct_addresses() {
        let zero = generate_keypair(&[0u8; 32]).unwrap();
        let one = generate_keypair(&[1u8; 32]).unwrap();
        assert_ne!(zero.address(), one.address());
    }

    #[test]
    fn wrong_seed_length() {
        assert!(matches!(
            generate_keypair(&[0u8; 31]),
            Err(IdentityError::InvalidSeed(31))
        ));
        assert!(matches!(
            generate_keypair(&[0u8; 33]),
            Err(IdentityError::InvalidSeed(33))
        ));
    }

    // Golden values computed with Python's `cryptography` Ed25519 and hashlib.
    #[test]
    fn address_matches_reference_implementation() {
        let cases = [
            (
                0x00u8,
                "3b6a27bcceb6a42d62a3a8d02a6f0d73653215771de243a63ac048a18b59da29",
                "a0d741628fc826e09475d341a780acde3c4b8070",
            ),
            (
                0x11,
                "d04ab232742bb4ab3a1368bd4615e4e6d0224ab71a016baf8520a332c9778737",
                "881aab8bd702bb807796eca81932c735a94d6e6d",
            ),
            (
                0x21,
                "884b8857f4eaa1613c61504db34d4beaf346517a0e31de3cddd4d9b4201d9d0b",
                "d7f94f7144f18090d329d9370a7dfc42db38d14d",
            ),
        ];
        for (seed, public, address) in cases {
            let key = generate_keypair(&[seed; 32]).unwrap();
            assert_eq!(key.public_key().to_string(), public);
            assert_eq!(derive_address(&key.public_key()).unwrap().to_string(), address);
            assert_eq!(key.address().to_string(), address);
        }
    }

    #[test]
    fn malformed_public_key_is_rejected() {
        // y = 2 is not on the curve.
        let mut bytes = [0u8; 32];
        bytes[0] = 2;
        assert!(matches!(
            derive_address(&PublicKey(bytes)),
            Err(IdentityError::InvalidKey)
        ));
        assert!(!verify(b"m", &Signature::ZERO, &PublicKey(bytes)));
    }

    #[test]
    fn sign_verify_and_tamper() {
        let a = generate_keypair(&[3u8; 32]).unwrap();
        let b = generate_keypair(&[4u8; 32]).unwrap();
        let msg = b"deny tcp 22".to_vec();
        let sig = sign(&msg, &a.secret_bytes());
        assert_eq!(sig, a.sign(&msg));
        assert!(verify(&msg, &sig, &a.public_key()));
        let mut flipped = msg.clone();
        flipped[0] ^= 1;
        assert!(!verify(&flipped, &sig, &a.public_key()));
        assert!(!verify(&msg, &sig, &b.public_key()));
        let mut bad = sig;
        bad.0[10] ^= 0x80;
        assert!(!verify(&msg, &bad, &a.public_key()));
    }

    #[test]
    fn key_file_round_trip_and_mode() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("admin.key");
        let key = generate_keypair(&[9u8; 32]).unwrap();
        write_key_file(&path, &key).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.len(), 65);
        assert!(text.ends_with('\n'));
        assert_eq!(read_key_file(&path).unwrap(), key);
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            let mode = fs::metadata(&path).unwrap().permissions().mode();
            assert_eq!(mode & 0o777, 0o600);
        }
    }

    #[test]
    fn key_file_rejects_garbage() {
        assert!(parse_key_file("zz").is_err());
        assert!(parse_key_file(&"g".repeat(64)).is_err());
        assert!(parse_key_file(&format!("{}\n\n", "a".repeat(64))).is_err());
    }

    #[test]
    fn address_text_form() {
        let key = generate_keypair(&[5u8; 32]).unwrap();
        let text = key.address().to_string();
        assert_eq!(text.len(), 40);
        assert_eq!(text, text.to_lowercase());
        assert_eq!(text.parse::<Address>().unwrap(), key.address());
    }
}
