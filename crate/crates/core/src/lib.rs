//! frameside: a deterministic, desk-scale simulator of the Wi-Fi
//! frame-size side channel against off-path TCP.
//!
//! An attacker on the same WLAN cannot read encrypted frames, but it can
//! read their lengths. TCP's control responses (RST, duplicate ACK,
//! challenge ACK, SACK-tagged ACK) have distinct IP lengths, so after
//! link-layer encapsulation they appear as distinct frame sizes. That
//! turns a blind off-path attacker into one with a response oracle:
//! enough to find an active four-tuple, then the exact expected sequence
//! number, then a usable acknowledgment number, and finally to reset or
//! poison the connection.
//!
//! The crate is split by responsibility:
//! - [`seqspace`]: modular sequence-number intervals, parameterized by
//!   width so exhaustive checks run in a reduced space;
//! - [`tcp`]: the victim endpoint's segment-classification behavior;
//! - [`wifi`]: encapsulation, lossy channel timing, background traffic
//!   and A-MSDU aggregation;
//! - [`attacker`]: the inference engine, which only ever sees frame
//!   lengths, addresses and timestamps through [`attacker::ProbeTransport`];
//! - [`defenses`]: padding and response-uniformization countermeasures
//!   plus their evaluation;
//! - [`harness`]: scenario configs, the simulated world, sweep drivers;
//! - [`trace`]: versioned artifact formats (traces, probe logs,
//!   summaries, sweep tables).

pub mod attacker;
pub mod defenses;
pub mod harness;
pub mod seqspace;
pub mod tcp;
pub mod trace;
pub mod wifi;

pub use attacker::{
    full_attack, AttackAction, AttackReport, InferenceConfig, Outcome, Phase, ProbeTransport,
};
pub use harness::{run_scenario, run_sweep, ScenarioConfig, ScenarioRun, World};
pub use seqspace::ModSpace;
pub use tcp::{ServerConnState, TcpEndpoint, TcpResponse};
pub use wifi::{FrameObservation, Mac, VirtualTime};
