//! Signatures and hashing.
//!
//! Two schemes sit behind one interface: Ed25519 for production runs and a
//! keyed HMAC-SHA512 scheme for fast reproducible simulation. Both are pure
//! functions of the key seed and the input bytes.
//!
//! Verification goes through a [`Pki`], the directory of verification keys
//! known to every player. For the keyed scheme the directory holds the MAC
//! key itself, which is sound only inside a simulator where the directory is
//! trusted and players never see each other's entries.

use std::collections::BTreeMap;
use std::fmt;

use ed25519_dalek::{Signer as _, SigningKey, Verifier as _, VerifyingKey};
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256, Sha512};

use crate::codec::{Canonical, Encoder};
use crate::types::Identity;

type HmacSha512 = Hmac<Sha512>;

pub const DIGEST_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Ed25519,
    #[default]
    Keyed,
}

/// SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub fn short(&self) -> String {
        hex::encode(&self.0[..6])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; DIGEST_LEN] =
            bytes.try_into().map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))?;
        Ok(Digest(arr))
    }
}

impl Canonical for Digest {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_bytes(&self.0);
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", hex::encode(&self.0[..6]))
    }
}

impl Canonical for Signature {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_bytes(&self.0);
    }
}

pub fn hash(msg: &[u8]) -> Digest {
    Digest(Sha256::digest(msg).into())
}

/// Hash of a value's canonical encoding.
pub fn hash_canonical<T: Canonical + ?Sized>(v: &T) -> Digest {
    let mut enc = Encoder::new();
    v.encode(&mut enc);
    hash(&enc.finish())
}

/// Public half of a key; what the directory publishes.
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum PublicKey {
    Ed25519(VerifyingKey),
    /// MAC key of the keyed scheme, held only by the trusted directory.
    Keyed([u8; 32]),
}

impl PublicKey {
    /// Stable public identifier bytes for this key.
    pub fn id_bytes(&self) -> [u8; 32] {
        match self {
            PublicKey::Ed25519(vk) => vk.to_bytes(),
            PublicKey::Keyed(secret) => {
                let mut h = Sha256::new();
                h.update(b"fairledger/keyed-public");
                h.update(secret);
                h.finalize().into()
            }
        }
    }

    pub fn verify(&self, msg: &[u8], sig: &Signature) -> bool {
        match self {
            PublicKey::Ed25519(vk) => {
                let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
                vk.verify(msg, &sig).is_ok()
            }
            PublicKey::Keyed(secret) => {
                let mut mac = HmacSha512::new_from_slice(secret).expect("hmac accepts any key length");
                mac.update(msg);
                mac.verify_slice(&sig.0).is_ok()
            }
        }
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", hex::encode(&self.id_bytes()[..6]))
    }
}

#[derive(Clone)]
pub struct KeyPair {
    scheme: Scheme,
    secret: [u8; 32],
    ed: Option<SigningKey>,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("scheme", &self.scheme)
            .field("public", &self.public_key())
            .finish_non_exhaustive()
    }
}

impl PartialEq for KeyPair {
    fn eq(&self, other: &Self) -> bool {
        self.scheme == other.scheme && self.secret == other.secret
    }
}

impl Eq for KeyPair {}

/// Deterministic key generation: the same seed always yields the same pair.
pub fn keygen(scheme: Scheme, seed: u64) -> KeyPair {
    let mut h = Sha256::new();
    h.update(b"fairledger/keygen");
    h.update(seed.to_be_bytes());
    let secret: [u8; 32] = h.finalize().into();
    let ed = match scheme {
        Scheme::Ed25519 => Some(SigningKey::from_bytes(&secret)),
        Scheme::Keyed => None,
    };
    KeyPair { scheme, secret, ed }
}

impl KeyPair {
    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn public_key(&self) -> PublicKey {
        match &self.ed {
            Some(sk) => PublicKey::Ed25519(sk.verifying_key()),
            None => PublicKey::Keyed(self.secret),
        }
    }

    pub fn public_id(&self) -> [u8; 32] {
        self.public_key().id_bytes()
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        match &self.ed {
            Some(sk) => Signature(sk.sign(msg).to_bytes()),
            None => {
                let mut mac = HmacSha512::new_from_slice(&self.secret).expect("hmac accepts any key length");
                mac.update(msg);
                let out = mac.finalize().into_bytes();
                let mut bytes = [0u8; SIGNATURE_LEN];
                bytes.copy_from_slice(&out);
                Signature(bytes)
            }
        }
    }
}

pub fn sign(key: &KeyPair, msg: &[u8]) -> Signature {
    key.sign(msg)
}

/// Directory mapping every identity in a run to its verification key.
#[derive(Debug, Clone, Default)]
pub struct Pki {
    keys: BTreeMap<Identity, PublicKey>,
}

impl Pki {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, id: Identity, key: &KeyPair) {
        self.keys.insert(id, key.public_key());
    }

    pub fn public_key(&self, id: Identity) -> Option<&PublicKey> {
        self.keys.get(&id)
    }

    /// True iff `sig` was made by `id`'s key over exactly `msg`.
    pub fn verify(&self, id: Identity, msg: &[u8], sig: &Signature) -> bool {
        self.keys.get(&id).is_some_and(|pk| pk.verify(msg, sig))
    }
}

/// Key material for one run, derived from a single seed.
#[derive(Debug, Clone)]
pub struct KeyRing {
    pub pki: Pki,
    keys: BTreeMap<Identity, KeyPair>,
}

impl KeyRing {
    pub fn generate(scheme: Scheme, seed: u64, ids: impl IntoIterator<Item = Identity>) -> Self {
        let mut pki = Pki::new();
        let mut keys = BTreeMap::new();
        for id in ids {
            let key = keygen(scheme, seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ id.seed_tag());
            pki.register(id, &key);
            keys.insert(id, key);
        }
        KeyRing { pki, keys }
    }

    pub fn key(&self, id: Identity) -> &KeyPair {
        self.keys.get(&id).expect("identity has no key in this ring")
    }
}
