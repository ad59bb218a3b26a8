//! Arithmetic in the prime-order subgroup of the multiplicative group
//! modulo a safe prime `p = 2q + 1`. The subgroup has prime order `q`
//! (the quadratic residues), which is the setting where the decisional
//! Diffie-Hellman assumption is made.
//!
//! Two profiles are provided: `desk` groups with a configurable small
//! modulus for exhaustive and brute-force testing, and a fixed well-known
//! 2048-bit safe-prime group for realistic parameter sizes.

use num_bigint::{BigUint, RandBigInt};
use num_traits::{One, Zero};
use once_cell::sync::Lazy;
use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Errors from parameter generation and element decoding.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum GroupError {
    #[error("q_bits must be at least 3, got {0}")]
    BitLengthTooSmall(u32),
    #[error("no safe prime found within {0} candidate draws")]
    SearchExhausted(u64),
    #[error("parameter validation failed: {0}")]
    InvalidParams(String),
    #[error("encoded element has length {got}, expected {expected}")]
    BadEncodingLength { got: usize, expected: usize },
    #[error("value out of range [1, p-1]")]
    OutOfRange,
    #[error("value is not a member of the order-q subgroup")]
    NotSubgroupMember,
    #[error("scalar out of range [1, q-1]")]
    ScalarOutOfRange,
    #[error("subgroup too large to enumerate")]
    SubgroupTooLarge,
}

/// Candidate draws allowed before `generate_params` gives up.
const SEARCH_BUDGET: u64 = 300_000;

/// Deterministic Miller-Rabin witnesses. Exact for inputs below 3.3e24,
/// which covers every desk-scale modulus; a strong probabilistic check
/// beyond that.
const MR_BASES: [u32; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

fn is_probable_prime(n: &BigUint) -> bool {
    let two = BigUint::from(2u32);
    if *n < two {
        return false;
    }
    for small in MR_BASES {
        let small = BigUint::from(small);
        if *n == small {
            return true;
        }
        if (n % &small).is_zero() {
            return false;
        }
    }
    // n - 1 = 2^r * d with d odd
    let n_minus_1 = n - 1u32;
    let r = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> r;
    'witness: for a in MR_BASES {
        let a = BigUint::from(a);
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 0..r.saturating_sub(1) {
            x = x.modpow(&two, n);
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Group parameters: safe prime `p`, subgroup order `q` with `p = 2q + 1`,
/// a generator `g` of the order-`q` subgroup, and the large security
/// parameter `s` in bits (the subgroup order must be at least `2^(2s)`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupParams {
    p: BigUint,
    q: BigUint,
    g: BigUint,
    s_bits: u32,
    id: u64,
}

/// A member of the order-`q` subgroup, i.e. a value in `[1, p-1]` with
/// `value^q = 1 (mod p)`. Carries a fingerprint of the parameters it
/// belongs to; mixing elements across groups is a caller bug.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupElement {
    value: BigUint,
    params_id: u64,
}

/// An exponent in `[1, q-1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scalar {
    value: BigUint,
}

impl GroupParams {
    /// Search for a desk-scale safe-prime group with a `q_bits`-bit
    /// subgroup order. Deterministic for a fixed rng state.
    pub fn generate<R: Rng>(q_bits: u32, rng: &mut R) -> Result<GroupParams, GroupError> {
        if q_bits < 3 {
            return Err(GroupError::BitLengthTooSmall(q_bits));
        }
        let mut q = BigUint::zero();
        let mut found = false;
        for _ in 0..SEARCH_BUDGET {
            let mut cand = rng.gen_biguint(q_bits as u64);
            cand.set_bit(q_bits as u64 - 1, true);
            cand.set_bit(0, true);
            if !is_probable_prime(&cand) {
                continue;
            }
            let p = (&cand << 1) + 1u32;
            if is_probable_prime(&p) {
                q = cand;
                found = true;
                break;
            }
        }
        if !found {
            return Err(GroupError::SearchExhausted(SEARCH_BUDGET));
        }
        let p: BigUint = (&q << 1) + 1u32;
        // Any nontrivial square generates the whole subgroup (its order
        // divides the prime q and is not 1).
        let g = loop {
            let h = rng.gen_biguint_range(&BigUint::from(2u32), &(&p - 1u32));
            let g = (&h * &h) % &p;
            if !g.is_one() {
                break g;
            }
        };
        GroupParams::from_parts(p, q, g, q_bits / 2)
    }

    /// Build parameters from explicit values, checking every invariant.
    /// This is the entry point for config records `{p, q, g, s_bits}`.
    pub fn from_parts(
        p: BigUint,
        q: BigUint,
        g: BigUint,
        s_bits: u32,
    ) -> Result<GroupParams, GroupError> {
        if p != (&q << 1) + 1u32 {
            return Err(GroupError::InvalidParams("p != 2q + 1".into()));
        }
        if !is_probable_prime(&q) {
            return Err(GroupError::InvalidParams("q is not prime".into()));
        }
        if !is_probable_prime(&p) {
            return Err(GroupError::InvalidParams("p is not prime".into()));
        }
        if g.is_one() || g.is_zero() || g >= p {
            return Err(GroupError::InvalidParams("g out of range or trivial".into()));
        }
        if !g.modpow(&q, &p).is_one() {
            return Err(GroupError::InvalidParams("g does not have order q".into()));
        }
        if s_bits == 0 || q.bits() < 2 * s_bits as u64 {
            return Err(GroupError::InvalidParams(
                "subgroup order below 2^(2s)".into(),
            ));
        }
        let id = fingerprint(&p, &q, &g);
        Ok(GroupParams { p, q, g, s_bits, id })
    }

    /// The fixed 2048-bit profile: the well-known RFC 3526 safe prime with
    /// generator 2 (a quadratic residue since p = 7 mod 8).
    pub fn standard() -> &'static GroupParams {
        static STANDARD: Lazy<GroupParams> = Lazy::new(|| {
            let p = BigUint::parse_bytes(RFC3526_2048_HEX.as_bytes(), 16).unwrap();
            let q: BigUint = (&p - 1u32) >> 1;
            let g = BigUint::from(2u32);
            let id = fingerprint(&p, &q, &g);
            GroupParams { p, q, g, s_bits: 1023, id }
        });
        &STANDARD
    }

    pub fn p(&self) -> &BigUint {
        &self.p
    }

    pub fn q(&self) -> &BigUint {
        &self.q
    }

    pub fn s_bits(&self) -> u32 {
        self.s_bits
    }

    pub fn generator(&self) -> GroupElement {
        GroupElement { value: self.g.clone(), params_id: self.id }
    }

    /// Fixed length of the canonical element encoding in bytes.
    pub fn encoded_len(&self) -> usize {
        (self.p.bits() as usize + 7) / 8
    }

    /// `base^e mod p`. Total on valid inputs; the result stays in the
    /// subgroup whenever `base` is a member, so no membership re-check.
    pub fn exp(&self, base: &GroupElement, e: &BigUint) -> GroupElement {
        debug_assert_eq!(base.params_id, self.id, "element from another group");
        GroupElement {
            value: base.value.modpow(e, &self.p),
            params_id: self.id,
        }
    }

    /// `base^e mod p` for a scalar exponent.
    pub fn exp_scalar(&self, base: &GroupElement, e: &Scalar) -> GroupElement {
        self.exp(base, &e.value)
    }

    /// Uniform scalar in `[1, q-1]`.
    pub fn random_scalar<R: Rng>(&self, rng: &mut R) -> Scalar {
        Scalar {
            value: rng.gen_biguint_range(&BigUint::one(), &self.q),
        }
    }

    /// Construct an element from an untrusted integer, verifying subgroup
    /// membership by exponentiation.
    pub fn element_from_biguint(&self, value: BigUint) -> Result<GroupElement, GroupError> {
        if value.is_zero() || value >= self.p {
            return Err(GroupError::OutOfRange);
        }
        if !value.modpow(&self.q, &self.p).is_one() {
            return Err(GroupError::NotSubgroupMember);
        }
        Ok(GroupElement { value, params_id: self.id })
    }

    /// Canonical wire form: fixed-length big-endian, zero-padded to
    /// `encoded_len` bytes.
    pub fn encode_element(&self, e: &GroupElement) -> Vec<u8> {
        debug_assert_eq!(e.params_id, self.id, "element from another group");
        let mut out = vec![0u8; self.encoded_len()];
        let bytes = e.value.to_bytes_be();
        let pad = out.len() - bytes.len();
        out[pad..].copy_from_slice(&bytes);
        out
    }

    /// Decode and verify an untrusted canonical encoding. Rejects values
    /// outside `[1, p-1]` and non-members of the subgroup.
    pub fn decode_element(&self, bytes: &[u8]) -> Result<GroupElement, GroupError> {
        if bytes.len() != self.encoded_len() {
            return Err(GroupError::BadEncodingLength {
                got: bytes.len(),
                expected: self.encoded_len(),
            });
        }
        self.element_from_biguint(BigUint::from_bytes_be(bytes))
    }

    pub fn scalar_from_biguint(&self, value: BigUint) -> Result<Scalar, GroupError> {
        if value.is_zero() || value >= self.q {
            return Err(GroupError::ScalarOutOfRange);
        }
        Ok(Scalar { value })
    }

    /// All subgroup members `g^0 .. g^(q-1)`, for exhaustive desk-scale
    /// checks and the regression-vector listing.
    pub fn enumerate_subgroup(&self) -> Result<Vec<GroupElement>, GroupError> {
        if self.q.bits() > 20 {
            return Err(GroupError::SubgroupTooLarge);
        }
        let mut members = Vec::new();
        let mut v = BigUint::one();
        loop {
            members.push(GroupElement { value: v.clone(), params_id: self.id });
            v = (v * &self.g) % &self.p;
            if v.is_one() {
                break;
            }
        }
        Ok(members)
    }

    /// Decimal config record, `(p, q, g, s_bits)`.
    pub fn to_decimal_parts(&self) -> (String, String, String, u32) {
        (
            self.p.to_str_radix(10),
            self.q.to_str_radix(10),
            self.g.to_str_radix(10),
            self.s_bits,
        )
    }

    /// Parse a decimal config record.
    pub fn from_decimal_parts(
        p: &str,
        q: &str,
        g: &str,
        s_bits: u32,
    ) -> Result<GroupParams, GroupError> {
        let parse = |s: &str| {
            BigUint::parse_bytes(s.as_bytes(), 10)
                .ok_or_else(|| GroupError::InvalidParams(format!("bad decimal integer: {s}")))
        };
        GroupParams::from_parts(parse(p)?, parse(q)?, parse(g)?, s_bits)
    }

    pub(crate) fn id(&self) -> u64 {
        self.id
    }
}

impl GroupElement {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub(crate) fn params_id(&self) -> u64 {
        self.params_id
    }

    /// Fault-injection support: the same element with one bit of its
    /// value flipped. The result deliberately need not be a subgroup
    /// member.
    pub(crate) fn with_flipped_bit(&self, bit: u64) -> GroupElement {
        let mut value = self.value.clone();
        value.set_bit(bit, !value.bit(bit));
        GroupElement { value, params_id: self.params_id }
    }
}

impl Scalar {
    pub fn value(&self) -> &BigUint {
        &self.value
    }
}

fn fingerprint(p: &BigUint, q: &BigUint, g: &BigUint) -> u64 {
    let mut h = Sha256::new();
    h.update(b"group-params");
    h.update(p.to_bytes_be());
    h.update(q.to_bytes_be());
    h.update(g.to_bytes_be());
    let d = h.finalize();
    u64::from_be_bytes(d[..8].try_into().unwrap())
}

/// RFC 3526 group 14 modulus (2048-bit MODP group).
const RFC3526_2048_HEX: &str = "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74\
020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437\
4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED\
EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05\
98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB\
9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B\
E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718\
3995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF";
