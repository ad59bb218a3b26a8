//! Ephemeral key exchange (φKE): pairing two physically identified devices
//! that share no prior secret, given only a low-bandwidth authentic and/or
//! private side channel next to an adversary-controlled broadcast network.
//!
//! The crate provides the three φKE protocol variants, the simulated
//! communication substrate they run over, and a security harness that
//! measures attack success rates against the analytic bounds.
//!
//! Layout:
//! - [`group`] — prime-order subgroup arithmetic modulo a safe prime
//! - [`roh`] — the domain-separated hash family `h1..h5`
//! - [`channels`] — broadcast network, capacity-limited channel, scheduler
//! - [`eke`] — the password-keyed key-exchange building block
//! - [`protocols`] — the φKE protocols themselves
//! - [`harness`] — instance oracles, adversary strategies, experiments

pub mod channels;
pub mod eke;
pub mod group;
pub mod harness;
pub mod protocols;
pub mod roh;
pub mod seeding;

pub use group::{GroupParams, GroupElement, Scalar};
pub use roh::{HashConfig, SessionKey};
pub use channels::{ChannelSpec, Direction, NodeId, ShortString};
pub use protocols::{PairingOutcome, Protocol, Role};
pub use harness::ExperimentReport;
