//! The password-keyed key-exchange building block invoked by the
//! protocols that run over a private channel, instantiated as a
//! Diffie-Hellman exchange with password-masked shares:
//!
//! 1. each side broadcasts its share `g^x` XOR-masked with a stream
//!    derived from the shared short password (`0x10`),
//! 2. the client confirms with `h4` of the DH secret (`0x11`), the
//!    server with `h5` (`0x12`),
//! 3. both output `h3` of the secret.
//!
//! A sender re-draws its exponent until the masked encoding lands in
//! `[1, p-1]`, so the wire value never reveals whether a candidate
//! password decodes to a valid encoding. Every run gets a fresh
//! password; the type has no persistence.

use num_bigint::BigUint;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::group::{GroupElement, Scalar};
use crate::protocols::{AbortReason, Action, Incoming, Role};
use crate::roh::{HashConfig, SessionKey};
use crate::seeding::SimRng;

/// Broadcast message tags.
pub const TAG_MASKED_SHARE: u8 = 0x10;
pub const TAG_CONFIRM_CLIENT: u8 = 0x11;
pub const TAG_CONFIRM_SERVER: u8 = 0x12;

/// A `t`-bit one-shot password.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Password {
    value: u64,
    t_bits: u32,
}

impl Password {
    pub fn new(value: u64, t_bits: u32) -> Password {
        assert!((1..=64).contains(&t_bits), "t out of range");
        assert!(t_bits == 64 || value >> t_bits == 0, "password wider than t");
        Password { value, t_bits }
    }

    /// Uniform over `[0, 2^t - 1]`.
    pub fn random<R: Rng>(t_bits: u32, rng: &mut R) -> Password {
        let raw: u64 = rng.gen();
        let value = if t_bits == 64 { raw } else { raw & ((1u64 << t_bits) - 1) };
        Password { value, t_bits }
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn t_bits(&self) -> u32 {
        self.t_bits
    }

    pub fn xor(&self, other: &Password) -> Password {
        assert_eq!(self.t_bits, other.t_bits, "xor of mismatched password widths");
        Password { value: self.value ^ other.value, t_bits: self.t_bits }
    }

    pub fn to_short_string(&self) -> crate::channels::ShortString {
        crate::channels::ShortString::new(self.value, self.t_bits)
    }

    pub fn from_short_string(s: &crate::channels::ShortString) -> Password {
        Password { value: s.value(), t_bits: s.bits() }
    }
}

/// Digest-stretch of the password under a fixed domain tag; the mask is
/// as long as the canonical element encoding. Mask bits at or above the
/// bit width of `p` are cleared: otherwise a mask with such a bit set
/// could push every possible masked encoding outside `[1, p-1]` and the
/// sender's in-range re-draw loop would never terminate.
pub fn derive_pw_key(cfg: &HashConfig, pw: &Password) -> Vec<u8> {
    let need = cfg.params().encoded_len();
    let mut out = Vec::with_capacity(need + 32);
    let mut counter = 0u32;
    while out.len() < need {
        let mut h = Sha256::new();
        h.update(b"eke-pw-mask");
        h.update([pw.t_bits as u8]);
        h.update(pw.value.to_be_bytes());
        h.update(counter.to_be_bytes());
        out.extend_from_slice(&h.finalize());
        counter += 1;
    }
    out.truncate(need);
    let spare = (need as u64) * 8 - cfg.params().p().bits();
    out[0] &= 0xffu8 >> spare;
    out
}

fn xor_bytes(a: &[u8], b: &[u8]) -> Vec<u8> {
    a.iter().zip(b).map(|(x, y)| x ^ y).collect()
}

#[derive(Debug)]
enum EkeState {
    Start,
    WaitShare,
    WaitConfirm,
    Done,
    Aborted,
}

/// One endpoint of the masked-share exchange, driven one message at a
/// time. All messages travel on the broadcast channel.
#[derive(Debug)]
pub struct EkeMachine {
    cfg: HashConfig,
    role: Role,
    mask: Vec<u8>,
    rng: SimRng,
    x: Option<Scalar>,
    secret: Option<GroupElement>,
    key: Option<SessionKey>,
    abort: Option<AbortReason>,
    state: EkeState,
}

impl EkeMachine {
    pub fn new(cfg: HashConfig, role: Role, pw: Password, rng: SimRng) -> EkeMachine {
        let mask = derive_pw_key(&cfg, &pw);
        EkeMachine {
            cfg,
            role,
            mask,
            rng,
            x: None,
            secret: None,
            key: None,
            abort: None,
            state: EkeState::Start,
        }
    }

    pub fn is_done(&self) -> bool {
        matches!(self.state, EkeState::Done | EkeState::Aborted)
    }

    pub fn accepted(&self) -> bool {
        self.key.is_some()
    }

    pub fn key(&self) -> Option<&SessionKey> {
        self.key.as_ref()
    }

    pub fn abort_reason(&self) -> Option<AbortReason> {
        self.abort
    }

    /// Draw a fresh exponent until the masked encoding is in range.
    fn pick_masked_share(&mut self) -> (Scalar, Vec<u8>) {
        let params = self.cfg.params().clone();
        loop {
            let x = params.random_scalar(&mut self.rng);
            let share = params.exp_scalar(&params.generator(), &x);
            let masked = xor_bytes(&params.encode_element(&share), &self.mask);
            let as_int = BigUint::from_bytes_be(&masked);
            if as_int >= BigUint::from(1u32) && &as_int < params.p() {
                return (x, masked);
            }
        }
    }

    fn fail(&mut self, reason: AbortReason) -> Result<Vec<Action>, AbortReason> {
        self.state = EkeState::Aborted;
        self.abort = Some(reason);
        Err(reason)
    }

    pub fn advance(&mut self, incoming: Option<Incoming>) -> Result<Vec<Action>, AbortReason> {
        match (&self.state, incoming) {
            (EkeState::Start, None) => {
                let (x, masked) = self.pick_masked_share();
                self.x = Some(x);
                let mut payload = vec![TAG_MASKED_SHARE];
                payload.extend_from_slice(&masked);
                self.state = EkeState::WaitShare;
                Ok(vec![Action::Broadcast(payload)])
            }
            (EkeState::WaitShare, Some(Incoming::Broadcast(msg))) => {
                let enc_len = self.cfg.params().encoded_len();
                if msg.len() != 1 + enc_len || msg[0] != TAG_MASKED_SHARE {
                    return self.fail(AbortReason::Malformed);
                }
                let unmasked = xor_bytes(&msg[1..], &self.mask);
                let peer_share = match self.cfg.params().decode_element(&unmasked) {
                    Ok(e) => e,
                    Err(_) => return self.fail(AbortReason::Malformed),
                };
                let x = self.x.as_ref().expect("share sent before receive");
                let secret = self.cfg.params().exp_scalar(&peer_share, x);
                let (tag, confirm) = match self.role {
                    Role::Client => (TAG_CONFIRM_CLIENT, self.cfg.h4(&secret)),
                    Role::Server => (TAG_CONFIRM_SERVER, self.cfg.h5(&secret)),
                };
                self.secret = Some(secret);
                let mut payload = vec![tag];
                payload.extend_from_slice(confirm.as_bytes());
                self.state = EkeState::WaitConfirm;
                Ok(vec![Action::Broadcast(payload)])
            }
            (EkeState::WaitConfirm, Some(Incoming::Broadcast(msg))) => {
                let secret = self.secret.as_ref().expect("secret set in WaitShare");
                let (expect_tag, expected) = match self.role {
                    Role::Client => (TAG_CONFIRM_SERVER, self.cfg.h5(secret)),
                    Role::Server => (TAG_CONFIRM_CLIENT, self.cfg.h4(secret)),
                };
                if msg.len() != 1 + expected.as_bytes().len() || msg[0] != expect_tag {
                    return self.fail(AbortReason::Malformed);
                }
                if msg[1..] != *expected.as_bytes() {
                    return self.fail(AbortReason::ConfirmationFailed);
                }
                self.key = Some(self.cfg.h3(secret));
                self.state = EkeState::Done;
                Ok(Vec::new())
            }
            (EkeState::Done | EkeState::Aborted, _) => Ok(Vec::new()),
            // Channel traffic or out-of-phase input is a protocol error.
            _ => self.fail(AbortReason::Malformed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::GroupParams;
    use crate::seeding::{derive_seed, seed_rng};

    fn cfg(t: u32) -> HashConfig {
        let params = GroupParams::generate(16, &mut seed_rng(1)).unwrap();
        HashConfig::new(params, t, 128).unwrap()
    }

    /// Pump two machines against each other until both finish.
    fn run_pair(cfg: &HashConfig, pw_c: Password, pw_s: Password, seed: u64) -> (EkeMachine, EkeMachine) {
        let mut client = EkeMachine::new(cfg.clone(), Role::Client, pw_c, seed_rng(derive_seed(seed, 0)));
        let mut server = EkeMachine::new(cfg.clone(), Role::Server, pw_s, seed_rng(derive_seed(seed, 1)));
        let mut to_server: Vec<Vec<u8>> = Vec::new();
        let mut to_client: Vec<Vec<u8>> = Vec::new();
        let collect = |actions: Result<Vec<Action>, AbortReason>, queue: &mut Vec<Vec<u8>>| {
            if let Ok(actions) = actions {
                for a in actions {
                    let Action::Broadcast(p) = a else { panic!("eke uses broadcast only") };
                    queue.push(p);
                }
            }
        };
        collect(client.advance(None), &mut to_server);
        collect(server.advance(None), &mut to_client);
        for _ in 0..8 {
            if client.is_done() && server.is_done() {
                break;
            }
            if !to_client.is_empty() && !client.is_done() {
                let m = to_client.remove(0);
                collect(client.advance(Some(Incoming::Broadcast(m))), &mut to_server);
            }
            if !to_server.is_empty() && !server.is_done() {
                let m = to_server.remove(0);
                collect(server.advance(Some(Incoming::Broadcast(m))), &mut to_client);
            }
        }
        (client, server)
    }

    #[test]
    fn equal_passwords_agree() {
        let cfg = cfg(4);
        for seed in 0..50 {
            let pw = Password::new(5, 4);
            let (c, s) = run_pair(&cfg, pw, pw, seed);
            assert!(c.accepted() && s.accepted(), "seed {seed}");
            assert_eq!(c.key(), s.key());
            assert_eq!(c.key().unwrap().bits(), 128);
        }
    }

    #[test]
    fn unequal_passwords_abort_exhaustively_at_t4() {
        let cfg = cfg(4);
        for p in 0..16u64 {
            for q in 0..16u64 {
                if p == q {
                    continue;
                }
                let (c, s) = run_pair(&cfg, Password::new(p, 4), Password::new(q, 4), p * 16 + q);
                assert!(!c.accepted() && !s.accepted(), "pw {p} vs {q} accepted");
                assert!(c.abort_reason().is_some());
                assert!(s.abort_reason().is_some());
            }
        }
    }

    #[test]
    fn mask_derivation_contract() {
        let cfg = cfg(4);
        let a = derive_pw_key(&cfg, &Password::new(0, 4));
        let b = derive_pw_key(&cfg, &Password::new(0, 4));
        let c = derive_pw_key(&cfg, &Password::new(1, 4));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), cfg.params().encoded_len());
    }

    #[test]
    fn password_random_respects_width_and_seed() {
        let mut r1 = seed_rng(9);
        let mut r2 = seed_rng(9);
        let a = Password::random(4, &mut r1);
        let b = Password::random(4, &mut r2);
        assert_eq!(a, b);
        assert!(a.value() < 16);
    }

    #[test]
    fn xor_examples() {
        let p = Password::new(0b1010, 4);
        let q = Password::new(0b0110, 4);
        assert_eq!(p.xor(&q).value(), 0b1100);
        assert_eq!(p.xor(&p).value(), 0);
    }

    #[test]
    fn masked_share_is_in_range() {
        // p=23 leaves only 22 of 256 byte values valid, so the re-draw
        // loop is exercised heavily here.
        let params = GroupParams::from_parts(
            BigUint::from(23u32),
            BigUint::from(11u32),
            BigUint::from(2u32),
            2,
        )
        .unwrap();
        let cfg = HashConfig::new(params.clone(), 4, 128).unwrap();
        for seed in 0..30 {
            let mut m = EkeMachine::new(
                cfg.clone(),
                Role::Client,
                Password::new(seed % 16, 4),
                seed_rng(seed),
            );
            let actions = m.advance(None).unwrap();
            let Action::Broadcast(p) = &actions[0] else { panic!() };
            let v = BigUint::from_bytes_be(&p[1..]);
            assert!(v >= BigUint::from(1u32) && &v < params.p());
        }
    }

    #[test]
    fn rejects_malformed_and_out_of_phase() {
        let cfg = cfg(4);
        let mut m = EkeMachine::new(cfg.clone(), Role::Client, Password::new(1, 4), seed_rng(3));
        m.advance(None).unwrap();
        let err = m.advance(Some(Incoming::Broadcast(vec![0x7f, 0x00]))).unwrap_err();
        assert_eq!(err, AbortReason::Malformed);
        assert!(m.is_done() && !m.accepted());
    }
}
