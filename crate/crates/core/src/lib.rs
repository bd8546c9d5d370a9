//! Flow-aware medium access for time-domain wavelength interleaved metro
//! networks.
//!
//! Destinations poll their sources with grants sized from per-flow reports;
//! sources serve grants with a few tunable transmitters and fill each burst
//! with priority traffic first and round-robin quanta of backlogged flows
//! after.
//! The crate holds the protocol pieces, a deterministic discrete-event
//! simulator built from them, the closed-form performance model it is
//! checked against, and a small polling model used to probe stability.

pub mod analytics;
pub mod clock;
pub mod error;
pub mod experiments;
pub mod grant;
pub mod oracle;
pub mod scenario;
pub mod sim;
pub mod source;
pub mod time;
pub mod topology;
pub mod traffic;

pub use error::{Error, Result};
pub use time::{LineRate, TimePoint, TimeSpan};
pub use topology::{NodeId, Topology};
