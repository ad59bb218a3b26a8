//! The domain-separated hash family `h1..h5` used by the protocols,
//! derived from a single base digest (SHA-256) as `h_i(x) = H(x || i)`
//! with a one-byte index tag:
//!
//! - `h1 : G -> G`, realized by exponent hashing `g^(H(enc(x) || 1) mod q)`
//! - `h2 : G -> {0,1}^cap` — the short authenticator
//! - `h3, h4, h5 : G -> {0,1}^sigma` — session key and the two
//!   role-asymmetric key-validation digests
//!
//! Outputs longer than one digest block are produced by counter-mode
//! re-digesting; shorter ones by truncation.

use num_bigint::BigUint;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channels::ShortString;
use crate::group::{GroupElement, GroupParams};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HashConfigError {
    #[error("channel capacity {0} out of range [1, 64]")]
    BadCapBits(u32),
    #[error("sigma_bits {0} below the 64-bit minimum")]
    SigmaTooSmall(u32),
    #[error("cap_bits {cap} not small relative to sigma_bits {sigma}")]
    CapNotMuchSmaller { cap: u32, sigma: u32 },
}

/// Hash-family configuration: channel capacity (width of `h2`), session
/// key length (width of `h3..h5`), and the group whose elements are
/// hashed. The capacity must be much smaller than the key length; this
/// implementation requires `2 * cap_bits <= sigma_bits`.
#[derive(Debug, Clone)]
pub struct HashConfig {
    params: GroupParams,
    cap_bits: u32,
    sigma_bits: u32,
}

impl HashConfig {
    pub fn new(params: GroupParams, cap_bits: u32, sigma_bits: u32) -> Result<HashConfig, HashConfigError> {
        if cap_bits == 0 || cap_bits > 64 {
            return Err(HashConfigError::BadCapBits(cap_bits));
        }
        if sigma_bits < 64 {
            return Err(HashConfigError::SigmaTooSmall(sigma_bits));
        }
        if 2 * cap_bits > sigma_bits {
            return Err(HashConfigError::CapNotMuchSmaller { cap: cap_bits, sigma: sigma_bits });
        }
        Ok(HashConfig { params, cap_bits, sigma_bits })
    }

    pub fn params(&self) -> &GroupParams {
        &self.params
    }

    /// Channel capacity in bits; also the small security parameter `t`.
    pub fn cap_bits(&self) -> u32 {
        self.cap_bits
    }

    /// Session-key length in bits; also the large security parameter `s`
    /// as far as key width is concerned.
    pub fn sigma_bits(&self) -> u32 {
        self.sigma_bits
    }

    /// `h1`: hash to a subgroup member via the exponent.
    pub fn h1(&self, x: &GroupElement) -> GroupElement {
        let e = BigUint::from_bytes_be(&tagged_digest(&self.params.encode_element(x), 1)) % self.params.q();
        self.params.exp(&self.params.generator(), &e)
    }

    /// `h2`: the leading `cap_bits` bits of the tagged digest.
    pub fn h2(&self, x: &GroupElement) -> ShortString {
        let d = tagged_digest(&self.params.encode_element(x), 2);
        ShortString::new(leading_bits(&d, self.cap_bits), self.cap_bits)
    }

    pub fn h3(&self, x: &GroupElement) -> SessionKey {
        self.sigma_hash(x, 3)
    }

    pub fn h4(&self, x: &GroupElement) -> SessionKey {
        self.sigma_hash(x, 4)
    }

    pub fn h5(&self, x: &GroupElement) -> SessionKey {
        self.sigma_hash(x, 5)
    }

    /// `h4` for the client (j = 0), `h5` for the server (j = 1).
    pub fn validator_hash(&self, j: u8, x: &GroupElement) -> SessionKey {
        self.sigma_hash(x, 4 + j)
    }

    fn sigma_hash(&self, x: &GroupElement, index: u8) -> SessionKey {
        let stream = digest_stream(&self.params.encode_element(x), index, self.sigma_bits);
        SessionKey::from_stream(stream, self.sigma_bits)
    }
}

/// A `sigma`-bit key or key-confirmation value. Unused trailing bits of
/// the last byte are zero, so equality is well-defined.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionKey {
    bytes: Vec<u8>,
    bits: u32,
}

impl SessionKey {
    fn from_stream(mut bytes: Vec<u8>, bits: u32) -> SessionKey {
        let n = ((bits + 7) / 8) as usize;
        bytes.truncate(n);
        let spare = (n as u32) * 8 - bits;
        if spare > 0 {
            let last = bytes.last_mut().unwrap();
            *last &= 0xffu8 << spare;
        }
        SessionKey { bytes, bits }
    }

    /// Rebuild from raw bytes, e.g. a received key-validation message.
    pub fn from_bytes(bytes: &[u8], bits: u32) -> Option<SessionKey> {
        if bytes.len() != ((bits + 7) / 8) as usize {
            return None;
        }
        Some(SessionKey::from_stream(bytes.to_vec(), bits))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.bytes)
    }
}

/// `H(input || index)`, one digest block.
fn tagged_digest(input: &[u8], index: u8) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(input);
    h.update([index]);
    h.finalize().into()
}

/// Counter-mode expansion: block 0 is `H(m || i)`, block k > 0 is
/// `H(m || i || k_be32)`. Truncated to `bits`.
fn digest_stream(input: &[u8], index: u8, bits: u32) -> Vec<u8> {
    let need = ((bits + 7) / 8) as usize;
    let mut out = Vec::with_capacity(need + 32);
    let mut counter = 0u32;
    while out.len() < need {
        let mut h = Sha256::new();
        h.update(input);
        h.update([index]);
        if counter > 0 {
            h.update(counter.to_be_bytes());
        }
        out.extend_from_slice(&h.finalize());
        counter += 1;
    }
    out
}

/// Big-endian leading `bits` bits of a digest as an integer.
fn leading_bits(digest: &[u8], bits: u32) -> u64 {
    let nbytes = ((bits + 7) / 8) as usize;
    let mut v = 0u64;
    for &b in &digest[..nbytes] {
        v = (v << 8) | b as u64;
    }
    v >> (nbytes as u32 * 8 - bits)
}

/// Regression vectors for the hash family and the canonical element
/// encoding, over the 11-member desk group (p=23, q=11, g=2) with
/// cap=4 and sigma=128. One line per `(index, element)` pair:
/// `index, element-decimal, hex-digest`, where index 0 is the element
/// encoding itself and 1..5 are the hash-family outputs.
pub fn regression_vector_lines() -> Vec<String> {
    let params = GroupParams::from_parts(
        BigUint::from(23u32),
        BigUint::from(11u32),
        BigUint::from(2u32),
        2,
    )
    .unwrap();
    let cfg = HashConfig::new(params.clone(), 4, 128).unwrap();
    let mut members = params.enumerate_subgroup().unwrap();
    members.sort_by_key(|m| m.value().clone());
    let mut lines = Vec::new();
    for m in &members {
        let dec = m.value().to_str_radix(10);
        lines.push(format!("0, {dec}, {}", hex::encode(params.encode_element(m))));
        lines.push(format!("1, {dec}, {}", hex::encode(params.encode_element(&cfg.h1(m)))));
        lines.push(format!("2, {dec}, {:01x}", cfg.h2(m).value()));
        lines.push(format!("3, {dec}, {}", cfg.h3(m).to_hex()));
        lines.push(format!("4, {dec}, {}", cfg.h4(m).to_hex()));
        lines.push(format!("5, {dec}, {}", cfg.h5(m).to_hex()));
    }
    lines
}
