//! The three ephemeral key-exchange protocols.
//!
//! - Protocol 1 (unidirectional private and authentic channel): the
//!   client sends a fresh `t`-bit password over the channel, then both
//!   sides run the EKE building block with it.
//! - Protocol 2 (bidirectional private channel): each side sends its own
//!   `t`-bit password over the channel and the EKE password is the XOR
//!   of the two.
//! - Protocol 3 (bidirectional authentic channel): a four-phase
//!   commit / authenticate / key-exchange / key-validation flow around a
//!   plain Diffie-Hellman exchange, detailed on [`Prot3Machine`].
//!
//! Machines are pure message-in/actions-out state machines; the
//! [`ProtocolParty`] adapter drives one over the simulated world, and
//! [`run_session`] wires up a complete two-party session.

use rand::Rng;
use serde::Serialize;

use crate::channels::{
    run_schedule, AdversaryHooks, ChannelSpec, DeliveredRecord, Direction, Medium, NodeId,
    PairChannel, Party, PartyIo, ShortString, TraceDir, TraceEvent, Transcript, World,
};
use crate::eke::{EkeMachine, Password};
use crate::group::{GroupElement, Scalar};
use crate::roh::{HashConfig, SessionKey};
use crate::seeding::{derive_seed, seed_rng, SimRng};

/// Broadcast message tags for Protocol 3.
pub const TAG_COMMIT: u8 = 0x01;
pub const TAG_SHARE: u8 = 0x02;
pub const TAG_VALIDATOR: u8 = 0x03;

/// Which protocol a session runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Prot1,
    Prot2,
    Prot3,
}

impl Protocol {
    pub fn as_str(&self) -> &'static str {
        match self {
            Protocol::Prot1 => "p1",
            Protocol::Prot2 => "p2",
            Protocol::Prot3 => "p3",
        }
    }

    /// The channel each protocol assumes, at capacity `cap_bits`.
    pub fn channel_spec(&self, cap_bits: u32) -> ChannelSpec {
        match self {
            Protocol::Prot1 => ChannelSpec {
                cap_bits,
                direction: Direction::OneWay,
                authentic: true,
                private: true,
            },
            Protocol::Prot2 => ChannelSpec {
                cap_bits,
                direction: Direction::TwoWay,
                authentic: false,
                private: true,
            },
            Protocol::Prot3 => ChannelSpec {
                cap_bits,
                direction: Direction::TwoWay,
                authentic: true,
                private: false,
            },
        }
    }
}

/// Client uses validator index 4 (`j = 0`), server index 5 (`j = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Client,
    Server,
}

impl Role {
    pub fn j(&self) -> u8 {
        match self {
            Role::Client => 0,
            Role::Server => 1,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Client => "client",
            Role::Server => "server",
        }
    }
}

/// Terminal failure of a protocol instance. Abort is unilateral; no
/// notification is sent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbortReason {
    /// Received share fails the `h1` commitment check.
    CommitMismatch,
    /// Received share fails the `h2` authenticator check.
    AuthenticatorMismatch,
    /// Key-validation digest did not match.
    ValidationFailed,
    /// EKE key-confirmation digest did not match.
    ConfirmationFailed,
    /// Undecodable, duplicate or phase-inconsistent message.
    Malformed,
    /// The low-bandwidth channel rejected a send.
    ChannelViolation,
}

impl AbortReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            AbortReason::CommitMismatch => "commit-mismatch",
            AbortReason::AuthenticatorMismatch => "authenticator-mismatch",
            AbortReason::ValidationFailed => "validation-failed",
            AbortReason::ConfirmationFailed => "confirmation-failed",
            AbortReason::Malformed => "malformed",
            AbortReason::ChannelViolation => "channel-violation",
        }
    }
}

/// A message handed to a machine.
#[derive(Debug, Clone)]
pub enum Incoming {
    Broadcast(Vec<u8>),
    Channel(ShortString),
}

/// A message a machine wants sent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Broadcast(Vec<u8>),
    Channel(ShortString),
}

/// Protocol 3 phase. Transitions are strictly forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prot3Phase {
    Commit,
    Authenticate,
    KeyExchange,
    KeyValidation,
    Accepted,
    Aborted,
}

/// Per-party state machine of Protocol 3.
///
/// Commit: pick random `x`, broadcast `h1(g^x)`; the peer's commitment
/// lands in `alpha`. Authenticate: send the `cap`-bit `h2(g^x)` on the
/// authentic channel; the peer's lands in `beta`. Key exchange:
/// broadcast `g^x`; accept a received share `m` as `u` only if
/// `h1(m) = alpha` and `h2(m) = beta`. Key validation: broadcast
/// `h_{4+j}(u^x)`, require `h_{5-j}(u^x)` back, then the session key is
/// `h3(u^x)`. Committing strictly before revealing either the share or
/// the authenticator is what denies the adversary a free-choice share.
#[derive(Debug)]
pub struct Prot3Machine {
    cfg: HashConfig,
    role: Role,
    rng: SimRng,
    phase: Prot3Phase,
    x: Option<Scalar>,
    own_share: Option<GroupElement>,
    alpha: Option<GroupElement>,
    beta: Option<ShortString>,
    u: Option<GroupElement>,
    key: Option<SessionKey>,
    abort: Option<AbortReason>,
}

impl Prot3Machine {
    pub fn new(cfg: HashConfig, role: Role, rng: SimRng) -> Prot3Machine {
        Prot3Machine {
            cfg,
            role,
            rng,
            phase: Prot3Phase::Commit,
            x: None,
            own_share: None,
            alpha: None,
            beta: None,
            u: None,
            key: None,
            abort: None,
        }
    }

    /// Deterministic construction with an explicit secret exponent, for
    /// replaying a session with chosen `x` and `y`.
    pub fn with_secret(cfg: HashConfig, role: Role, x: Scalar) -> Prot3Machine {
        let mut m = Prot3Machine::new(cfg, role, seed_rng(0));
        m.x = Some(x);
        m
    }

    pub fn phase(&self) -> Prot3Phase {
        self.phase
    }

    pub fn accepted(&self) -> bool {
        self.phase == Prot3Phase::Accepted
    }

    pub fn is_done(&self) -> bool {
        matches!(self.phase, Prot3Phase::Accepted | Prot3Phase::Aborted)
    }

    pub fn key(&self) -> Option<&SessionKey> {
        self.key.as_ref()
    }

    pub fn abort_reason(&self) -> Option<AbortReason> {
        self.abort
    }

    /// On acceptance: `u` passed both checks and `key = h3(u^x)`.
    /// Assertable from outside for transcript audits.
    pub fn check_acceptance_invariants(&self) -> bool {
        if self.phase != Prot3Phase::Accepted {
            return false;
        }
        let (Some(u), Some(alpha), Some(beta), Some(x), Some(key)) =
            (&self.u, &self.alpha, &self.beta, &self.x, &self.key)
        else {
            return false;
        };
        self.cfg.h1(u) == *alpha
            && self.cfg.h2(u) == *beta
            && self.cfg.h3(&self.cfg.params().exp_scalar(u, x)) == *key
    }

    /// Fault injection for the key-validation experiments: flip one bit
    /// of the accepted peer share after the key-exchange phase.
    pub(crate) fn corrupt_accepted_share(&mut self, bit: u64) {
        let u = self.u.as_mut().expect("no accepted share to corrupt");
        *u = u.with_flipped_bit(bit);
    }

    fn fail(&mut self, reason: AbortReason) -> Result<Vec<Action>, AbortReason> {
        self.phase = Prot3Phase::Aborted;
        self.abort = Some(reason);
        Err(reason)
    }

    fn validator_payload(&self) -> Vec<u8> {
        let x = self.x.as_ref().expect("x drawn at commit");
        let u = self.u.as_ref().expect("share accepted");
        let secret = self.cfg.params().exp_scalar(u, x);
        let mut payload = vec![TAG_VALIDATOR];
        payload.extend_from_slice(self.cfg.validator_hash(self.role.j(), &secret).as_bytes());
        payload
    }

    pub fn advance(&mut self, incoming: Option<Incoming>) -> Result<Vec<Action>, AbortReason> {
        match (self.phase, incoming) {
            (Prot3Phase::Commit, None) => {
                if self.x.is_none() {
                    self.x = Some(self.cfg.params().random_scalar(&mut self.rng));
                }
                let x = self.x.as_ref().unwrap();
                let share = self.cfg.params().exp_scalar(&self.cfg.params().generator(), x);
                let commitment = self.cfg.h1(&share);
                self.own_share = Some(share);
                let mut payload = vec![TAG_COMMIT];
                payload.extend_from_slice(&self.cfg.params().encode_element(&commitment));
                Ok(vec![Action::Broadcast(payload)])
            }
            (Prot3Phase::Commit, Some(Incoming::Broadcast(msg))) => {
                let enc_len = self.cfg.params().encoded_len();
                if msg.len() != 1 + enc_len || msg[0] != TAG_COMMIT {
                    return self.fail(AbortReason::Malformed);
                }
                let alpha = match self.cfg.params().decode_element(&msg[1..]) {
                    Ok(e) => e,
                    Err(_) => return self.fail(AbortReason::Malformed),
                };
                self.alpha = Some(alpha);
                self.phase = Prot3Phase::Authenticate;
                let own = self.own_share.as_ref().expect("committed before receiving");
                Ok(vec![Action::Channel(self.cfg.h2(own))])
            }
            (Prot3Phase::Authenticate, Some(Incoming::Channel(s))) => {
                if s.bits() != self.cfg.cap_bits() {
                    return self.fail(AbortReason::Malformed);
                }
                self.beta = Some(s);
                self.phase = Prot3Phase::KeyExchange;
                let own = self.own_share.as_ref().unwrap();
                let mut payload = vec![TAG_SHARE];
                payload.extend_from_slice(&self.cfg.params().encode_element(own));
                Ok(vec![Action::Broadcast(payload)])
            }
            (Prot3Phase::KeyExchange, Some(Incoming::Broadcast(msg))) => {
                let enc_len = self.cfg.params().encoded_len();
                if msg.len() != 1 + enc_len || msg[0] != TAG_SHARE {
                    return self.fail(AbortReason::Malformed);
                }
                let m = match self.cfg.params().decode_element(&msg[1..]) {
                    Ok(e) => e,
                    Err(_) => return self.fail(AbortReason::Malformed),
                };
                if self.cfg.h1(&m) != *self.alpha.as_ref().expect("alpha before share") {
                    return self.fail(AbortReason::CommitMismatch);
                }
                if self.cfg.h2(&m) != *self.beta.as_ref().expect("beta before share") {
                    return self.fail(AbortReason::AuthenticatorMismatch);
                }
                self.u = Some(m);
                self.phase = Prot3Phase::KeyValidation;
                Ok(vec![Action::Broadcast(self.validator_payload())])
            }
            (Prot3Phase::KeyValidation, Some(Incoming::Broadcast(msg))) => {
                let x = self.x.as_ref().unwrap();
                let u = self.u.as_ref().unwrap();
                let secret = self.cfg.params().exp_scalar(u, x);
                let expected = self.cfg.validator_hash(1 - self.role.j(), &secret);
                if msg.len() != 1 + expected.as_bytes().len() || msg[0] != TAG_VALIDATOR {
                    return self.fail(AbortReason::Malformed);
                }
                if msg[1..] != *expected.as_bytes() {
                    return self.fail(AbortReason::ValidationFailed);
                }
                self.key = Some(self.cfg.h3(&secret));
                self.phase = Prot3Phase::Accepted;
                Ok(Vec::new())
            }
            (Prot3Phase::Accepted | Prot3Phase::Aborted, _) => Ok(Vec::new()),
            _ => self.fail(AbortReason::Malformed),
        }
    }
}

#[derive(Debug)]
enum WrapperPhase {
    PasswordExchange,
    Eke,
}

/// Protocol 1: client draws a fresh password, sends it over the
/// (private and authentic) one-way channel, then both run EKE with it.
#[derive(Debug)]
pub struct Prot1Machine {
    cfg: HashConfig,
    role: Role,
    rng: SimRng,
    phase: WrapperPhase,
    eke: Option<EkeMachine>,
    abort: Option<AbortReason>,
}

impl Prot1Machine {
    pub fn new(cfg: HashConfig, role: Role, rng: SimRng) -> Prot1Machine {
        Prot1Machine { cfg, role, rng, phase: WrapperPhase::PasswordExchange, eke: None, abort: None }
    }

    fn start_eke(&mut self, pw: Password) -> Result<Vec<Action>, AbortReason> {
        let child = seed_rng(self.rng.gen());
        let mut eke = EkeMachine::new(self.cfg.clone(), self.role, pw, child);
        let actions = eke.advance(None)?;
        self.eke = Some(eke);
        self.phase = WrapperPhase::Eke;
        Ok(actions)
    }

    fn fail(&mut self, reason: AbortReason) -> Result<Vec<Action>, AbortReason> {
        self.abort = Some(reason);
        Err(reason)
    }

    pub fn advance(&mut self, incoming: Option<Incoming>) -> Result<Vec<Action>, AbortReason> {
        match (&self.phase, self.role, incoming) {
            (WrapperPhase::PasswordExchange, Role::Client, None) => {
                let pw = Password::random(self.cfg.cap_bits(), &mut self.rng);
                let mut actions = vec![Action::Channel(pw.to_short_string())];
                actions.extend(self.start_eke(pw)?);
                Ok(actions)
            }
            (WrapperPhase::PasswordExchange, Role::Server, None) => Ok(Vec::new()),
            (WrapperPhase::PasswordExchange, Role::Server, Some(Incoming::Channel(s))) => {
                if s.bits() != self.cfg.cap_bits() {
                    return self.fail(AbortReason::Malformed);
                }
                self.start_eke(Password::from_short_string(&s))
            }
            (WrapperPhase::Eke, _, incoming @ Some(Incoming::Broadcast(_))) => {
                self.eke.as_mut().expect("eke started").advance(incoming)
            }
            (WrapperPhase::Eke, _, None) => Ok(Vec::new()),
            (_, _, _) => self.fail(AbortReason::Malformed),
        }
    }

    pub fn is_done(&self) -> bool {
        self.abort.is_some() || self.eke.as_ref().is_some_and(|e| e.is_done())
    }

    pub fn accepted(&self) -> bool {
        self.abort.is_none() && self.eke.as_ref().is_some_and(|e| e.accepted())
    }

    pub fn key(&self) -> Option<&SessionKey> {
        self.eke.as_ref().and_then(|e| e.key())
    }

    pub fn abort_reason(&self) -> Option<AbortReason> {
        self.abort.or_else(|| self.eke.as_ref().and_then(|e| e.abort_reason()))
    }
}

/// Protocol 2: both sides draw a password, exchange them over the
/// (private) two-way channel, and run EKE with the XOR.
#[derive(Debug)]
pub struct Prot2Machine {
    cfg: HashConfig,
    role: Role,
    rng: SimRng,
    phase: WrapperPhase,
    own_pw: Option<Password>,
    eke: Option<EkeMachine>,
    abort: Option<AbortReason>,
}

impl Prot2Machine {
    pub fn new(cfg: HashConfig, role: Role, rng: SimRng) -> Prot2Machine {
        Prot2Machine {
            cfg,
            role,
            rng,
            phase: WrapperPhase::PasswordExchange,
            own_pw: None,
            eke: None,
            abort: None,
        }
    }

    fn fail(&mut self, reason: AbortReason) -> Result<Vec<Action>, AbortReason> {
        self.abort = Some(reason);
        Err(reason)
    }

    pub fn advance(&mut self, incoming: Option<Incoming>) -> Result<Vec<Action>, AbortReason> {
        match (&self.phase, incoming) {
            (WrapperPhase::PasswordExchange, None) => {
                if self.own_pw.is_some() {
                    return Ok(Vec::new());
                }
                let pw = Password::random(self.cfg.cap_bits(), &mut self.rng);
                self.own_pw = Some(pw);
                Ok(vec![Action::Channel(pw.to_short_string())])
            }
            (WrapperPhase::PasswordExchange, Some(Incoming::Channel(s))) => {
                if s.bits() != self.cfg.cap_bits() {
                    return self.fail(AbortReason::Malformed);
                }
                let own = self.own_pw.expect("own password drawn before receive");
                let shared = own.xor(&Password::from_short_string(&s));
                let child = seed_rng(self.rng.gen());
                let mut eke = EkeMachine::new(self.cfg.clone(), self.role, shared, child);
                let actions = eke.advance(None)?;
                self.eke = Some(eke);
                self.phase = WrapperPhase::Eke;
                Ok(actions)
            }
            (WrapperPhase::Eke, incoming @ Some(Incoming::Broadcast(_))) => {
                self.eke.as_mut().expect("eke started").advance(incoming)
            }
            (WrapperPhase::Eke, None) => Ok(Vec::new()),
            (_, _) => self.fail(AbortReason::Malformed),
        }
    }

    pub fn is_done(&self) -> bool {
        self.abort.is_some() || self.eke.as_ref().is_some_and(|e| e.is_done())
    }

    pub fn accepted(&self) -> bool {
        self.abort.is_none() && self.eke.as_ref().is_some_and(|e| e.accepted())
    }

    pub fn key(&self) -> Option<&SessionKey> {
        self.eke.as_ref().and_then(|e| e.key())
    }

    pub fn abort_reason(&self) -> Option<AbortReason> {
        self.abort.or_else(|| self.eke.as_ref().and_then(|e| e.abort_reason()))
    }
}

/// Any protocol endpoint, for drivers that are protocol-agnostic.
#[derive(Debug)]
pub enum Machine {
    P1(Prot1Machine),
    P2(Prot2Machine),
    P3(Prot3Machine),
    Eke(EkeMachine),
}

impl Machine {
    pub fn new(protocol: Protocol, cfg: &HashConfig, role: Role, rng: SimRng) -> Machine {
        match protocol {
            Protocol::Prot1 => Machine::P1(Prot1Machine::new(cfg.clone(), role, rng)),
            Protocol::Prot2 => Machine::P2(Prot2Machine::new(cfg.clone(), role, rng)),
            Protocol::Prot3 => Machine::P3(Prot3Machine::new(cfg.clone(), role, rng)),
        }
    }

    pub fn advance(&mut self, incoming: Option<Incoming>) -> Result<Vec<Action>, AbortReason> {
        match self {
            Machine::P1(m) => m.advance(incoming),
            Machine::P2(m) => m.advance(incoming),
            Machine::P3(m) => m.advance(incoming),
            Machine::Eke(m) => m.advance(incoming),
        }
    }

    pub fn is_done(&self) -> bool {
        match self {
            Machine::P1(m) => m.is_done(),
            Machine::P2(m) => m.is_done(),
            Machine::P3(m) => m.is_done(),
            Machine::Eke(m) => m.is_done(),
        }
    }

    pub fn accepted(&self) -> bool {
        match self {
            Machine::P1(m) => m.accepted(),
            Machine::P2(m) => m.accepted(),
            Machine::P3(m) => m.accepted(),
            Machine::Eke(m) => m.accepted(),
        }
    }

    pub fn key(&self) -> Option<&SessionKey> {
        match self {
            Machine::P1(m) => m.key(),
            Machine::P2(m) => m.key(),
            Machine::P3(m) => m.key(),
            Machine::Eke(m) => m.key(),
        }
    }

    pub fn abort_reason(&self) -> Option<AbortReason> {
        match self {
            Machine::P1(m) => m.abort_reason(),
            Machine::P2(m) => m.abort_reason(),
            Machine::P3(m) => m.abort_reason(),
            Machine::Eke(m) => m.abort_reason(),
        }
    }
}

/// Drives a machine over the simulated world and keeps its trace.
/// Within a step, channel messages are drained before broadcasts,
/// matching the per-phase medium order of every protocol here.
pub struct ProtocolParty {
    node: NodeId,
    peer: NodeId,
    machine: Machine,
    trace: Transcript,
    started: bool,
    abort: Option<AbortReason>,
}

impl ProtocolParty {
    pub fn new(node: NodeId, peer: NodeId, machine: Machine) -> ProtocolParty {
        ProtocolParty { node, peer, machine, trace: Transcript::default(), started: false, abort: None }
    }

    pub fn machine(&self) -> &Machine {
        &self.machine
    }

    pub fn machine_mut(&mut self) -> &mut Machine {
        &mut self.machine
    }

    pub fn trace(&self) -> &Transcript {
        &self.trace
    }

    pub fn outcome(&self) -> PairingOutcome {
        PairingOutcome {
            accepted: self.machine.accepted(),
            key: self.machine.key().cloned(),
            abort: self.machine.abort_reason().or(self.abort),
            trace: self.trace.clone(),
        }
    }

    fn feed(&mut self, incoming: Option<Incoming>, io: &mut PartyIo<'_>) {
        let actions = match self.machine.advance(incoming) {
            Ok(actions) => actions,
            Err(_) => return,
        };
        for action in actions {
            match action {
                Action::Broadcast(payload) => {
                    self.trace.push(TraceEvent {
                        medium: Medium::Broadcast,
                        dir: TraceDir::Sent,
                        header: Some((self.node, self.peer)),
                        payload: payload.clone(),
                    });
                    io.broadcast(self.peer, payload);
                }
                Action::Channel(s) => {
                    self.trace.push(TraceEvent {
                        medium: Medium::Channel,
                        dir: TraceDir::Sent,
                        header: None,
                        payload: s.canonical_bytes(),
                    });
                    if io.send_channel(s).is_err() {
                        self.abort = Some(AbortReason::ChannelViolation);
                    }
                }
            }
        }
    }

    fn done(&self) -> bool {
        self.machine.is_done() || self.abort.is_some()
    }
}

impl Party for ProtocolParty {
    fn node(&self) -> NodeId {
        self.node
    }

    fn finished(&self) -> bool {
        self.done()
    }

    fn step(&mut self, io: &mut PartyIo<'_>) {
        if !self.started {
            self.started = true;
            self.feed(None, io);
        }
        while !self.done() {
            let Some(msg) = io.recv_channel() else { break };
            self.trace.push(TraceEvent {
                medium: Medium::Channel,
                dir: TraceDir::Received,
                header: None,
                payload: msg.payload.canonical_bytes(),
            });
            self.feed(Some(Incoming::Channel(msg.payload)), io);
        }
        while !self.done() {
            let Some(msg) = io.recv_broadcast() else { break };
            self.trace.push(TraceEvent {
                medium: Medium::Broadcast,
                dir: TraceDir::Received,
                header: Some((msg.sender, msg.receiver)),
                payload: msg.payload.clone(),
            });
            self.feed(Some(Incoming::Broadcast(msg.payload)), io);
        }
    }
}

/// What one party got out of a pairing attempt.
#[derive(Debug, Clone)]
pub struct PairingOutcome {
    pub accepted: bool,
    pub key: Option<SessionKey>,
    pub abort: Option<AbortReason>,
    pub trace: Transcript,
}

/// Two instances are paired when their traces are equal with directions
/// mirrored: everything one sent, the other received, in the same order
/// and on the same medium, and vice versa.
pub fn pairing_check(t1: &Transcript, t2: &Transcript) -> bool {
    t1.side(TraceDir::Sent) == t2.side(TraceDir::Received)
        && t2.side(TraceDir::Sent) == t1.side(TraceDir::Received)
}

/// Node and scheduling choices for a session.
#[derive(Debug, Clone)]
pub struct SessionOptions {
    pub client_node: NodeId,
    pub server_node: NodeId,
    /// The channel sender endpoint on a one-way channel is always the
    /// client; for the one-sided master/slave configuration run the
    /// client role on the slave node.
    pub round_budget: u32,
}

impl Default for SessionOptions {
    fn default() -> SessionOptions {
        SessionOptions { client_node: NodeId(0), server_node: NodeId(1), round_budget: 16 }
    }
}

/// A finished two-party session.
#[derive(Debug)]
pub struct SessionOutcome {
    pub client: PairingOutcome,
    pub server: PairingOutcome,
    pub world_log: Vec<DeliveredRecord>,
    pub rounds: u32,
    pub budget_exceeded: bool,
}

/// Run one complete session of `protocol` between two honest parties
/// under the given adversary. Deterministic per seed.
pub fn run_session(
    protocol: Protocol,
    cfg: &HashConfig,
    seed: u64,
    adversary: &mut dyn AdversaryHooks,
    opts: &SessionOptions,
) -> SessionOutcome {
    let channel = PairChannel::new(
        protocol.channel_spec(cfg.cap_bits()),
        opts.client_node,
        opts.server_node,
    )
    .expect("protocol channel specs are valid");
    let mut world = World::new(channel);
    let mut client = ProtocolParty::new(
        opts.client_node,
        opts.server_node,
        Machine::new(protocol, cfg, Role::Client, seed_rng(derive_seed(seed, 0))),
    );
    let mut server = ProtocolParty::new(
        opts.server_node,
        opts.client_node,
        Machine::new(protocol, cfg, Role::Server, seed_rng(derive_seed(seed, 1))),
    );
    let result = run_schedule(
        &mut world,
        adversary,
        &mut [&mut client, &mut server],
        opts.round_budget,
    );
    let (rounds, budget_exceeded) = match result {
        Ok(r) => (r, false),
        Err(_) => (opts.round_budget, true),
    };
    SessionOutcome {
        client: client.outcome(),
        server: server.outcome(),
        world_log: world.log,
        rounds,
        budget_exceeded,
    }
}

/// JSON outcome record for one party.
#[derive(Debug, Serialize)]
pub struct OutcomeRecord {
    pub protocol: &'static str,
    pub role: &'static str,
    pub accepted: bool,
    pub abort_reason: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key_hex: Option<String>,
    pub rounds: u32,
}

impl OutcomeRecord {
    pub fn new(
        protocol: Protocol,
        role: Role,
        outcome: &PairingOutcome,
        rounds: u32,
        budget_exceeded: bool,
    ) -> OutcomeRecord {
        let abort_reason = outcome.abort.map(|a| a.as_str()).or(if budget_exceeded && !outcome.accepted {
            Some("round-budget-exceeded")
        } else {
            None
        });
        OutcomeRecord {
            protocol: protocol.as_str(),
            role: role.as_str(),
            accepted: outcome.accepted,
            abort_reason,
            key_hex: outcome.key.as_ref().map(|k| k.to_hex()),
            rounds,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::PassiveAdversary;
    use crate::group::GroupParams;
    use num_bigint::BigUint;

    fn desk_cfg(q_bits: u32, t: u32, sigma: u32, seed: u64) -> HashConfig {
        let params = GroupParams::generate(q_bits, &mut seed_rng(seed)).unwrap();
        HashConfig::new(params, t, sigma).unwrap()
    }

    fn cfg23(t: u32, sigma: u32) -> HashConfig {
        let params = GroupParams::from_parts(
            BigUint::from(23u32),
            BigUint::from(11u32),
            BigUint::from(2u32),
            2,
        )
        .unwrap();
        HashConfig::new(params, t, sigma).unwrap()
    }

    fn honest(protocol: Protocol, cfg: &HashConfig, seed: u64) -> SessionOutcome {
        run_session(protocol, cfg, seed, &mut PassiveAdversary, &SessionOptions::default())
    }

    #[test]
    fn prot1_honest_run_accepts_with_equal_keys() {
        let cfg = desk_cfg(16, 4, 128, 2);
        for seed in 0..20 {
            let out = honest(Protocol::Prot1, &cfg, seed);
            assert!(out.client.accepted && out.server.accepted, "seed {seed}");
            assert_eq!(out.client.key, out.server.key);
            assert_eq!(out.client.key.as_ref().unwrap().bits(), 128);
            assert!(pairing_check(&out.client.trace, &out.server.trace));
        }
    }

    #[test]
    fn prot1_master_slave_direction() {
        // Channel runs from the slave to the master: the slave is the
        // client role, on node 1.
        let cfg = desk_cfg(16, 4, 128, 2);
        let opts = SessionOptions { client_node: NodeId(1), server_node: NodeId(0), round_budget: 16 };
        let out = run_session(Protocol::Prot1, &cfg, 77, &mut PassiveAdversary, &opts);
        assert!(out.client.accepted && out.server.accepted);
        assert_eq!(out.client.key, out.server.key);
    }

    #[test]
    fn prot2_honest_and_identical_passwords_still_complete() {
        let cfg = desk_cfg(16, 4, 128, 2);
        let mut saw_equal_pw = false;
        for seed in 0..64 {
            let out = honest(Protocol::Prot2, &cfg, seed);
            assert!(out.client.accepted && out.server.accepted, "seed {seed}");
            assert_eq!(out.client.key, out.server.key);
            // p = q makes r = 0, which is a valid password.
            let pw_records: Vec<_> = out
                .world_log
                .iter()
                .filter(|r| r.medium == Medium::Channel)
                .collect();
            assert_eq!(pw_records.len(), 2);
            if pw_records[0].payload_hex == pw_records[1].payload_hex {
                saw_equal_pw = true;
            }
        }
        // With t=4 and 64 seeds, equal passwords occur with overwhelming
        // probability (P[never] = (15/16)^64 ~ 1.6%); the frozen seeds
        // above do contain such a run.
        assert!(saw_equal_pw, "no equal-password run in corpus");
    }

    #[test]
    fn prot3_honest_run_accepts_within_8_rounds() {
        let cfg = desk_cfg(32, 4, 128, 3);
        for seed in 0..20 {
            let out = honest(Protocol::Prot3, &cfg, seed);
            assert!(out.client.accepted && out.server.accepted, "seed {seed}");
            assert_eq!(out.client.key, out.server.key);
            assert!(out.rounds <= 8, "took {} rounds", out.rounds);
            assert!(pairing_check(&out.client.trace, &out.server.trace));
        }
    }

    #[test]
    fn prot3_key_matches_brute_force_dh_oracle() {
        // x=3, y=4 in the p=23 desk group: the shared group secret is
        // g^(12 mod 11) = 2, by brute-force multiplication.
        let cfg = cfg23(4, 128);
        let params = cfg.params().clone();
        let x = params.scalar_from_biguint(BigUint::from(3u32)).unwrap();
        let y = params.scalar_from_biguint(BigUint::from(4u32)).unwrap();
        let mut client = ProtocolParty::new(
            NodeId(0),
            NodeId(1),
            Machine::P3(Prot3Machine::with_secret(cfg.clone(), Role::Client, x)),
        );
        let mut server = ProtocolParty::new(
            NodeId(1),
            NodeId(0),
            Machine::P3(Prot3Machine::with_secret(cfg.clone(), Role::Server, y)),
        );
        let channel = PairChannel::new(Protocol::Prot3.channel_spec(4), NodeId(0), NodeId(1)).unwrap();
        let mut world = World::new(channel);
        run_schedule(&mut world, &mut PassiveAdversary, &mut [&mut client, &mut server], 16).unwrap();
        assert!(client.machine().accepted() && server.machine().accepted());

        let mut secret = 1u64;
        for _ in 0..(3 * 4 % 11) {
            secret = secret * 2 % 23;
        }
        assert_eq!(secret, 2);
        let oracle = params.element_from_biguint(BigUint::from(secret)).unwrap();
        assert_eq!(client.machine().key(), Some(&cfg.h3(&oracle)));
        assert_eq!(client.machine().key(), server.machine().key());
    }

    #[test]
    fn prot3_acceptance_invariants_hold() {
        let cfg = desk_cfg(32, 4, 128, 3);
        let out = honest(Protocol::Prot3, &cfg, 5);
        assert!(out.client.accepted);
        // Re-run with direct machine access to assert invariants.
        let channel = PairChannel::new(Protocol::Prot3.channel_spec(4), NodeId(0), NodeId(1)).unwrap();
        let mut world = World::new(channel);
        let mut client = ProtocolParty::new(
            NodeId(0),
            NodeId(1),
            Machine::new(Protocol::Prot3, &cfg, Role::Client, seed_rng(derive_seed(5, 0))),
        );
        let mut server = ProtocolParty::new(
            NodeId(1),
            NodeId(0),
            Machine::new(Protocol::Prot3, &cfg, Role::Server, seed_rng(derive_seed(5, 1))),
        );
        run_schedule(&mut world, &mut PassiveAdversary, &mut [&mut client, &mut server], 16).unwrap();
        let Machine::P3(c) = client.machine() else { unreachable!() };
        let Machine::P3(s) = server.machine() else { unreachable!() };
        assert!(c.check_acceptance_invariants());
        assert!(s.check_acceptance_invariants());
    }

    #[test]
    fn prot3_rejects_forged_share_without_matching_commitment() {
        let cfg = cfg23(4, 128);
        let params = cfg.params().clone();
        let x = params.scalar_from_biguint(BigUint::from(3u32)).unwrap();
        let mut m = Prot3Machine::with_secret(cfg.clone(), Role::Client, x);
        m.advance(None).unwrap();
        // Peer commitment for share g^4 = 16.
        let peer_share = params.exp(&params.generator(), &BigUint::from(4u32));
        let mut commit = vec![TAG_COMMIT];
        commit.extend_from_slice(&params.encode_element(&cfg.h1(&peer_share)));
        m.advance(Some(Incoming::Broadcast(commit))).unwrap();
        m.advance(Some(Incoming::Channel(cfg.h2(&peer_share)))).unwrap();
        // Substitute a different share: fails the h1 check first.
        let forged = params.exp(&params.generator(), &BigUint::from(7u32));
        let mut share = vec![TAG_SHARE];
        share.extend_from_slice(&params.encode_element(&forged));
        assert_eq!(
            m.advance(Some(Incoming::Broadcast(share))).unwrap_err(),
            AbortReason::CommitMismatch
        );
    }

    #[test]
    fn prot3_rejects_commit_matching_share_with_wrong_authenticator() {
        let cfg = cfg23(4, 128);
        let params = cfg.params().clone();
        let x = params.scalar_from_biguint(BigUint::from(3u32)).unwrap();
        // Find an adversary share whose h2 differs from the honest
        // peer's authenticator; then commit to it honestly.
        let honest_peer = params.exp(&params.generator(), &BigUint::from(4u32));
        let beta = cfg.h2(&honest_peer);
        let forged = (1u32..=10)
            .map(|e| params.exp(&params.generator(), &BigUint::from(e)))
            .find(|s| cfg.h2(s) != beta)
            .expect("some share differs in h2");
        let mut m = Prot3Machine::with_secret(cfg.clone(), Role::Client, x);
        m.advance(None).unwrap();
        let mut commit = vec![TAG_COMMIT];
        commit.extend_from_slice(&params.encode_element(&cfg.h1(&forged)));
        m.advance(Some(Incoming::Broadcast(commit))).unwrap();
        // The authentic channel delivered the honest peer's beta.
        m.advance(Some(Incoming::Channel(beta))).unwrap();
        let mut share = vec![TAG_SHARE];
        share.extend_from_slice(&params.encode_element(&forged));
        assert_eq!(
            m.advance(Some(Incoming::Broadcast(share))).unwrap_err(),
            AbortReason::AuthenticatorMismatch
        );
    }

    #[test]
    fn prot3_rejects_reflected_validator() {
        // A party's own validator echoed back must not validate: the
        // expected index is 5-j, not 4+j.
        let cfg = desk_cfg(16, 4, 128, 4);
        let mut client = Prot3Machine::new(cfg.clone(), Role::Client, seed_rng(8));
        let mut server = Prot3Machine::new(cfg.clone(), Role::Server, seed_rng(9));
        let c_commit = client.advance(None).unwrap().remove(0);
        let s_commit = server.advance(None).unwrap().remove(0);
        let (Action::Broadcast(cc), Action::Broadcast(sc)) = (c_commit, s_commit) else { panic!() };
        let c_auth = client.advance(Some(Incoming::Broadcast(sc))).unwrap().remove(0);
        let s_auth = server.advance(Some(Incoming::Broadcast(cc))).unwrap().remove(0);
        let (Action::Channel(ca), Action::Channel(sa)) = (c_auth, s_auth) else { panic!() };
        let c_share = client.advance(Some(Incoming::Channel(sa))).unwrap().remove(0);
        let s_share = server.advance(Some(Incoming::Channel(ca))).unwrap().remove(0);
        let (Action::Broadcast(cs), Action::Broadcast(ss)) = (c_share, s_share) else { panic!() };
        let c_val = client.advance(Some(Incoming::Broadcast(ss))).unwrap().remove(0);
        server.advance(Some(Incoming::Broadcast(cs))).unwrap();
        let Action::Broadcast(cv) = c_val else { panic!() };
        // Reflect the client's own validator back to it.
        assert_eq!(
            client.advance(Some(Incoming::Broadcast(cv))).unwrap_err(),
            AbortReason::ValidationFailed
        );
    }

    #[test]
    fn prot3_aborts_on_phase_inconsistent_and_duplicate_messages() {
        let cfg = desk_cfg(16, 4, 128, 4);
        // Channel message during commit.
        let mut m = Prot3Machine::new(cfg.clone(), Role::Client, seed_rng(1));
        m.advance(None).unwrap();
        assert_eq!(
            m.advance(Some(Incoming::Channel(ShortString::new(1, 4)))).unwrap_err(),
            AbortReason::Malformed
        );
        // Duplicate commit.
        let mut a = Prot3Machine::new(cfg.clone(), Role::Client, seed_rng(2));
        let mut b = Prot3Machine::new(cfg.clone(), Role::Server, seed_rng(3));
        a.advance(None).unwrap();
        let Action::Broadcast(bc) = b.advance(None).unwrap().remove(0) else { panic!() };
        a.advance(Some(Incoming::Broadcast(bc.clone()))).unwrap();
        assert_eq!(
            a.advance(Some(Incoming::Broadcast(bc))).unwrap_err(),
            AbortReason::Malformed
        );
    }

    #[test]
    fn paired_false_when_header_forged_but_both_accept() {
        // The adversary rewrites the sender identity on one delivered
        // commitment; contents are untouched so both parties accept,
        // but the traces no longer mirror.
        struct RelabelFirst {
            done: bool,
        }
        impl AdversaryHooks for RelabelFirst {
            fn on_broadcast(&mut self, mut msg: crate::channels::BroadcastMsg) -> Vec<crate::channels::BroadcastMsg> {
                if !self.done {
                    self.done = true;
                    msg.sender = NodeId(9);
                }
                vec![msg]
            }
        }
        let cfg = desk_cfg(16, 4, 128, 4);
        let mut adv = RelabelFirst { done: false };
        let out = run_session(Protocol::Prot3, &cfg, 21, &mut adv, &SessionOptions::default());
        assert!(out.client.accepted && out.server.accepted);
        assert_eq!(out.client.key, out.server.key);
        assert!(!pairing_check(&out.client.trace, &out.server.trace));
    }

    #[test]
    fn paired_vacuously_on_empty_transcripts() {
        assert!(pairing_check(&Transcript::default(), &Transcript::default()));
    }

    #[test]
    fn drop_all_broadcasts_exhausts_budget() {
        struct DropAll;
        impl AdversaryHooks for DropAll {
            fn on_broadcast(&mut self, _m: crate::channels::BroadcastMsg) -> Vec<crate::channels::BroadcastMsg> {
                Vec::new()
            }
        }
        let cfg = desk_cfg(16, 4, 128, 4);
        let out = run_session(Protocol::Prot3, &cfg, 3, &mut DropAll, &SessionOptions::default());
        assert!(out.budget_exceeded);
        assert!(!out.client.accepted && !out.server.accepted);
        let rec = OutcomeRecord::new(Protocol::Prot3, Role::Client, &out.client, out.rounds, true);
        assert_eq!(rec.abort_reason, Some("round-budget-exceeded"));
    }

    #[test]
    fn outcome_record_schema() {
        let cfg = desk_cfg(16, 4, 128, 2);
        let out = honest(Protocol::Prot1, &cfg, 1);
        let rec = OutcomeRecord::new(Protocol::Prot1, Role::Client, &out.client, out.rounds, false);
        let json = serde_json::to_string(&rec).unwrap();
        assert!(json.contains("\"protocol\":\"p1\""));
        assert!(json.contains("\"role\":\"client\""));
        assert!(json.contains("\"key_hex\""));
        assert!(json.contains("\"rounds\""));
    }

    #[test]
    fn session_is_deterministic_per_seed() {
        let cfg = desk_cfg(16, 4, 128, 2);
        for protocol in [Protocol::Prot1, Protocol::Prot2, Protocol::Prot3] {
            let a = honest(protocol, &cfg, 12);
            let b = honest(protocol, &cfg, 12);
            assert_eq!(
                crate::channels::to_jsonl(&a.world_log),
                crate::channels::to_jsonl(&b.world_log)
            );
            assert_eq!(a.client.key, b.client.key);
        }
    }
}
