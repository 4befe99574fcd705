//! Link-level simulation and analysis of blind signal classification for
//! two-user downlink power-domain NOMA.
//!
//! A base station serves a far and a near terminal on the same resource by
//! superposing their symbols with unequal power, or falls back to serving a
//! single user. A terminal that is not told the transmission mode must
//! classify it blindly before demodulating. This crate implements the
//! transmit/channel/receive chain, two blind classifiers (maximum-likelihood
//! over composite constellations and pilot-phase signalling), successive
//! interference cancellation, SINR/capacity analysis of misclassification,
//! and a deterministic Monte Carlo driver that compares the schemes.
//!
//! Modules:
//! - [`modes`]: modulation mode tables and composite constellations
//! - [`channel`]: frame synthesis, Rayleigh fading, AWGN
//! - [`mlc`]: likelihood-based classification
//! - [`prc`]: pilot-rotation signalling and classification
//! - [`receiver`]: detection, interference cancellation, frame scoring
//! - [`analysis`]: SINR, misclassification probability, capacity, rotation search
//! - [`sim`]: paired Monte Carlo sweeps
//! - [`stats`]: small numeric helpers shared by the above

pub mod analysis;
pub mod channel;
pub mod mlc;
pub mod modes;
pub mod prc;
pub mod receiver;
pub mod sim;
pub mod stats;

pub use modes::{case1, case2, case3, ModeTable, ModulationMode};
pub use sim::{run_sweep, Scheme, SimConfig, SweepResult};
