//! Simulation library for single-DPD linearization of an active antenna
//! array with mutually different nonlinear power amplifiers.
//!
//! The signal chain mirrors a combined-feedback transmitter: a 5G-NR-like
//! CP-OFDM carrier ([`waveform`]) drives a bank of generalized memory
//! polynomial PAs behind unit-modulus beam weights ([`pa`], [`array`]); the
//! phase-aligned combined observation feeds indirect-learning least-squares
//! DPD estimation ([`dpd`]); ACLR/EVM/PSD metrology and drive sweeps live in
//! [`metrics`].

pub mod array;
pub mod dpd;
pub mod error;
mod fft;
pub mod lsq;
pub mod metrics;
pub mod pa;
pub mod signal;
#[doc(hidden)]
pub mod testsupport;
pub mod waveform;

pub use error::{Error, Result};
pub use signal::ComplexSignal;
