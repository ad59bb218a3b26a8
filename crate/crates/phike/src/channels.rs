//! The communication substrate: an adversary-controlled broadcast network
//! whose messages carry forgeable sender/receiver identity headers, and a
//! reliable point-to-point channel that moves at most `cap_bits` bits per
//! message and is authentic and/or private.
//!
//! Everything runs inside a single-threaded, deterministic `World` driven
//! by a synchronous round scheduler: fixed seed, fixed transcript.

use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;
use thiserror::Error;

/// A node on the broadcast network. Unique within a world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct NodeId(pub u32);

/// A value of at most 64 bits with an explicit bit width, the only thing
/// the low-bandwidth channel carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShortString {
    value: u64,
    bits: u32,
}

impl ShortString {
    /// `value` must fit in `bits`, with `1 <= bits <= 64`.
    pub fn new(value: u64, bits: u32) -> ShortString {
        assert!((1..=64).contains(&bits), "bit width out of range");
        assert!(bits == 64 || value >> bits == 0, "value wider than declared");
        ShortString { value, bits }
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn xor(&self, other: &ShortString) -> ShortString {
        assert_eq!(self.bits, other.bits, "xor of mismatched widths");
        ShortString { value: self.value ^ other.value, bits: self.bits }
    }

    /// Canonical byte form: one width byte followed by the value in
    /// minimal-width big-endian (`ceil(bits/8)` bytes).
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let n = ((self.bits + 7) / 8) as usize;
        let mut out = Vec::with_capacity(1 + n);
        out.push(self.bits as u8);
        out.extend_from_slice(&self.value.to_be_bytes()[8 - n..]);
        out
    }
}

/// What the channel guarantees and in which direction it runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Only the `a` endpoint may send.
    OneWay,
    TwoWay,
}

/// The low-bandwidth channel contract: per-message capacity in bits plus
/// the authentic / private attribute pair (at least one must hold).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelSpec {
    pub cap_bits: u32,
    pub direction: Direction,
    pub authentic: bool,
    pub private: bool,
}

impl ChannelSpec {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !self.authentic && !self.private {
            return Err(ChannelError::NoGuarantee);
        }
        if self.cap_bits == 0 || self.cap_bits > 64 {
            return Err(ChannelError::BadCapacity(self.cap_bits));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChannelError {
    #[error("payload of {got} bits exceeds channel capacity of {cap} bits")]
    CapacityExceeded { got: u32, cap: u32 },
    #[error("node {0:?} may not send in this direction")]
    DirectionViolation(NodeId),
    #[error("node {0:?} is not an endpoint of this channel")]
    NotAnEndpoint(NodeId),
    #[error("injection is disabled on an authentic channel")]
    InjectionDisabled,
    #[error("channel must be authentic or private")]
    NoGuarantee,
    #[error("channel capacity {0} out of range [1, 64]")]
    BadCapacity(u32),
}

/// A message sitting in a channel queue. `from` is `None` when the
/// adversary injected it: the receiver of a non-authentic channel has no
/// idea who sent a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelMsg {
    pub payload: ShortString,
    pub from: Option<NodeId>,
    pub tampered: bool,
}

/// The point-to-point channel between the two pairing endpoints.
/// Delivery is reliable and ordered; loss is a usability concern of the
/// physical realization, not part of the adversary model.
#[derive(Debug)]
pub struct PairChannel {
    spec: ChannelSpec,
    a: NodeId,
    b: NodeId,
    to_a: VecDeque<ChannelMsg>,
    to_b: VecDeque<ChannelMsg>,
    eavesdrop: Vec<(NodeId, NodeId, ShortString)>,
}

impl PairChannel {
    pub fn new(spec: ChannelSpec, a: NodeId, b: NodeId) -> Result<PairChannel, ChannelError> {
        spec.validate()?;
        Ok(PairChannel { spec, a, b, to_a: VecDeque::new(), to_b: VecDeque::new(), eavesdrop: Vec::new() })
    }

    pub fn spec(&self) -> &ChannelSpec {
        &self.spec
    }

    pub fn endpoints(&self) -> (NodeId, NodeId) {
        (self.a, self.b)
    }

    fn peer_of(&self, me: NodeId) -> Result<NodeId, ChannelError> {
        if me == self.a {
            Ok(self.b)
        } else if me == self.b {
            Ok(self.a)
        } else {
            Err(ChannelError::NotAnEndpoint(me))
        }
    }

    fn check_capacity(&self, payload: &ShortString) -> Result<(), ChannelError> {
        if payload.bits() > self.spec.cap_bits {
            return Err(ChannelError::CapacityExceeded {
                got: payload.bits(),
                cap: self.spec.cap_bits,
            });
        }
        Ok(())
    }

    /// Send by a legitimate endpoint. Enforces endpoint, direction and
    /// capacity; logs to the eavesdrop record unless the channel is
    /// private.
    pub fn send(&mut self, from: NodeId, payload: ShortString) -> Result<(), ChannelError> {
        let to = self.peer_of(from)?;
        if self.spec.direction == Direction::OneWay && from != self.a {
            return Err(ChannelError::DirectionViolation(from));
        }
        self.check_capacity(&payload)?;
        if !self.spec.private {
            self.eavesdrop.push((from, to, payload));
        }
        let msg = ChannelMsg { payload, from: Some(from), tampered: false };
        self.queue_for_mut(to).push_back(msg);
        Ok(())
    }

    /// Adversarial injection toward one endpoint. Structurally impossible
    /// on an authentic channel.
    pub fn inject(&mut self, toward: NodeId, payload: ShortString) -> Result<(), ChannelError> {
        if self.spec.authentic {
            return Err(ChannelError::InjectionDisabled);
        }
        self.peer_of(toward)?; // just an endpoint check
        self.check_capacity(&payload)?;
        let msg = ChannelMsg { payload, from: None, tampered: true };
        self.queue_for_mut(toward).push_back(msg);
        Ok(())
    }

    pub fn recv(&mut self, me: NodeId) -> Option<ChannelMsg> {
        if me != self.a && me != self.b {
            return None;
        }
        self.queue_for_mut(me).pop_front()
    }

    /// Everything the adversary has seen on the channel. Empty forever on
    /// a private channel: the observer is disabled, not just unqueried.
    pub fn eavesdropped(&self) -> &[(NodeId, NodeId, ShortString)] {
        &self.eavesdrop
    }

    fn queue_for_mut(&mut self, me: NodeId) -> &mut VecDeque<ChannelMsg> {
        if me == self.a {
            &mut self.to_a
        } else {
            &mut self.to_b
        }
    }
}

/// A broadcast-network message. The header is plain data: the adversary
/// has full control over both identity fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BroadcastMsg {
    pub sender: NodeId,
    pub receiver: NodeId,
    pub payload: Vec<u8>,
}

/// Per-node FIFO delivery queues for the broadcast network.
#[derive(Debug, Default)]
pub struct BroadcastNet {
    queues: BTreeMap<NodeId, VecDeque<BroadcastMsg>>,
}

impl BroadcastNet {
    pub fn new() -> BroadcastNet {
        BroadcastNet::default()
    }

    /// Place a message in the addressed receiver's queue. Callers that
    /// model an adversary go through [`AdversaryHooks::on_broadcast`]
    /// first; this is raw delivery.
    pub fn deliver(&mut self, msg: BroadcastMsg) {
        self.queues.entry(msg.receiver).or_default().push_back(msg);
    }

    pub fn recv(&mut self, me: NodeId) -> Option<BroadcastMsg> {
        self.queues.get_mut(&me).and_then(|q| q.pop_front())
    }
}

/// The adversary's handles on the substrate.
///
/// Broadcast interception is unconditional. Channel observation only
/// happens when the channel is not private, and channel injection is only
/// reachable when it is not authentic (`PairChannel::inject` refuses
/// otherwise); the capability gating is structural, not a convention.
pub trait AdversaryHooks {
    /// Decide what the network delivers for one sent message: the
    /// original, a modified copy, extra injected messages, or nothing.
    fn on_broadcast(&mut self, msg: BroadcastMsg) -> Vec<BroadcastMsg> {
        vec![msg]
    }

    /// Called for every channel send on a non-private channel.
    fn observe_channel(&mut self, _from: NodeId, _to: NodeId, _payload: &ShortString) {}

    /// Runs once at the start of every round, before any party steps.
    fn step(&mut self, _round: u32, _io: &mut AdversaryIo<'_>) {}
}

/// An adversary that faithfully forwards everything and observes nothing.
#[derive(Debug, Default)]
pub struct PassiveAdversary;

impl AdversaryHooks for PassiveAdversary {}

/// One delivered message in the world transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeliveredRecord {
    pub round: u32,
    pub medium: Medium,
    pub header: Header,
    #[serde(rename = "payload-hex")]
    pub payload_hex: String,
    pub tampered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Medium {
    #[serde(rename = "bc")]
    Broadcast,
    #[serde(rename = "ch")]
    Channel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Header {
    pub from: Option<NodeId>,
    pub to: NodeId,
}

/// World transcript as JSON-lines, one record per delivered message.
pub fn to_jsonl(records: &[DeliveredRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Direction of a trace event relative to the instance that logged it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceDir {
    Sent,
    Received,
}

/// One event in an instance trace. Broadcast events keep the identity
/// header as sent or as delivered; channel events carry none (the wire
/// has no header). Channel payloads use their canonical byte form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub medium: Medium,
    pub dir: TraceDir,
    pub header: Option<(NodeId, NodeId)>,
    pub payload: Vec<u8>,
}

/// Append-only record of all messages sent and received by one protocol
/// instance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    events: Vec<TraceEvent>,
}

impl Transcript {
    pub fn push(&mut self, ev: TraceEvent) {
        self.events.push(ev);
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// `(medium, header, payload)` triples of one direction, in order.
    pub fn side(&self, dir: TraceDir) -> Vec<(Medium, Option<(NodeId, NodeId)>, Vec<u8>)> {
        self.events
            .iter()
            .filter(|e| e.dir == dir)
            .map(|e| (e.medium, e.header, e.payload.clone()))
            .collect()
    }
}

/// The simulated world: one broadcast network, one pairing channel, and
/// the delivered-message log.
#[derive(Debug)]
pub struct World {
    pub net: BroadcastNet,
    pub channel: PairChannel,
    pub log: Vec<DeliveredRecord>,
    round: u32,
}

impl World {
    pub fn new(channel: PairChannel) -> World {
        World { net: BroadcastNet::new(), channel, log: Vec::new(), round: 0 }
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    fn log_broadcast(&mut self, msg: &BroadcastMsg, tampered: bool) {
        self.log.push(DeliveredRecord {
            round: self.round,
            medium: Medium::Broadcast,
            header: Header { from: Some(msg.sender), to: msg.receiver },
            payload_hex: hex::encode(&msg.payload),
            tampered,
        });
    }

    fn log_channel(&mut self, from: Option<NodeId>, to: NodeId, payload: &ShortString, tampered: bool) {
        self.log.push(DeliveredRecord {
            round: self.round,
            medium: Medium::Channel,
            header: Header { from, to },
            payload_hex: hex::encode(payload.canonical_bytes()),
            tampered,
        });
    }
}

/// What a party sees when the scheduler steps it.
pub struct PartyIo<'a> {
    me: NodeId,
    world: &'a mut World,
    adversary: &'a mut dyn AdversaryHooks,
}

impl<'a> PartyIo<'a> {
    /// Broadcast a message addressed to `to`. The adversary decides what
    /// the network actually delivers.
    pub fn broadcast(&mut self, to: NodeId, payload: Vec<u8>) {
        let original = BroadcastMsg { sender: self.me, receiver: to, payload };
        for delivered in self.adversary.on_broadcast(original.clone()) {
            let tampered = delivered != original;
            self.world.log_broadcast(&delivered, tampered);
            self.world.net.deliver(delivered);
        }
    }

    pub fn recv_broadcast(&mut self) -> Option<BroadcastMsg> {
        self.world.net.recv(self.me)
    }

    pub fn send_channel(&mut self, payload: ShortString) -> Result<(), ChannelError> {
        self.world.channel.send(self.me, payload)?;
        if !self.world.channel.spec().private {
            let (a, b) = self.world.channel.endpoints();
            let to = if self.me == a { b } else { a };
            self.adversary.observe_channel(self.me, to, &payload);
        }
        let (a, b) = self.world.channel.endpoints();
        let to = if self.me == a { b } else { a };
        self.world.log_channel(Some(self.me), to, &payload, false);
        Ok(())
    }

    pub fn recv_channel(&mut self) -> Option<ChannelMsg> {
        self.world.channel.recv(self.me)
    }
}

/// What the adversary sees at the start of each round.
pub struct AdversaryIo<'a> {
    world: &'a mut World,
}

impl<'a> AdversaryIo<'a> {
    /// Inject a broadcast message with an arbitrary (forged) header.
    pub fn inject_broadcast(&mut self, msg: BroadcastMsg) {
        self.world.log_broadcast(&msg, true);
        self.world.net.deliver(msg);
    }

    /// Inject on the channel; fails on an authentic channel.
    pub fn inject_channel(&mut self, toward: NodeId, payload: ShortString) -> Result<(), ChannelError> {
        self.world.channel.inject(toward, payload)?;
        self.world.log_channel(None, toward, &payload, true);
        Ok(())
    }

    pub fn channel_spec(&self) -> &ChannelSpec {
        self.world.channel.spec()
    }
}

/// A protocol endpoint driven by the round scheduler.
pub trait Party {
    fn node(&self) -> NodeId;
    /// True once the party accepted or aborted.
    fn finished(&self) -> bool;
    fn step(&mut self, io: &mut PartyIo<'_>);
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("round budget of {0} exceeded; parties are livelocked")]
    RoundBudgetExceeded(u32),
}

/// Step all parties round-robin until everyone finished or the budget
/// runs out. Within a round the adversary steps first, then parties in
/// registration order; a message sent by party `i` is visible to party
/// `j > i` in the same round. Returns the number of rounds used.
pub fn run_schedule(
    world: &mut World,
    adversary: &mut dyn AdversaryHooks,
    parties: &mut [&mut dyn Party],
    round_budget: u32,
) -> Result<u32, ScheduleError> {
    for round in 0..round_budget {
        world.round = round;
        adversary.step(round, &mut AdversaryIo { world });
        for party in parties.iter_mut() {
            if !party.finished() {
                let me = party.node();
                party.step(&mut PartyIo { me, world, adversary });
            }
        }
        if parties.iter().all(|p| p.finished()) {
            return Ok(round + 1);
        }
    }
    Err(ScheduleError::RoundBudgetExceeded(round_budget))
}
