//! Three-layer traffic policing for volumetric DDoS defense.
//!
//! The crate is organized along the defense pipeline:
//!
//! * [`model`] holds the per-sender flow table and the policer tunables.
//! * [`policer`] enforces congestion accountability: per-sender rate limiting
//!   windows that are halved for senders who keep transmitting through losses
//!   and rebalanced proportionally for everyone else.
//! * [`scheduler`] implements static flood classification and the weighted fair
//!   queuing link used both for amplification floods and victim-defined
//!   (premium) queues.
//! * [`traffic`] generates offered load for legitimate and adversarial senders.
//! * [`sim`] wires everything into a deterministic tick-driven flow-level
//!   simulator, and [`config`] / [`presets`] describe experiments.
//! * [`bench`] measures per-packet policing cost against table size.

pub mod bench;
pub mod config;
mod error;
pub mod model;
pub mod policer;
pub mod presets;
pub mod queue;
pub mod scheduler;
pub mod sim;
pub mod traffic;

pub use error::{Error, Result, ValidationError};
pub use model::{FlowEntry, FlowId, FlowTable, PacketKind, PacketRecord, PolicerParams, Tick};
pub use policer::{DecisionOutcome, PacketOutcome, Policer};
pub use queue::{CongestionQueue, PacketQueue};
