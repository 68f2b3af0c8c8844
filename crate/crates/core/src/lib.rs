//! NB-IoT link-level simulator.
//!
//! The crate models one 180 kHz NB-IoT carrier end to end: downlink and
//! uplink physical channels, LTE in-band coexistence on the resource grid,
//! the UE cell-search chain, random access and the single-process HARQ
//! timeline. The [`scenario`] module drives Monte Carlo runs of the chains
//! and writes plain CSV results.
//!
//! Layering, bottom up:
//!
//! - [`numerology`]: timing constants, raster arithmetic, frame counters
//! - [`sequences`]: Zadoff-Chu, NPSS/NSSS, Gold-sequence DMRS and scrambling
//! - [`coding`]: CRC, TBCC, turbo, repetition, rate matching, modulation
//! - [`grid`]: subframe resource grids and LTE-aware mapping
//! - [`phy_dl`] / [`phy_ul`]: transmit chains producing [`Waveform`]s
//! - [`channel`]: AWGN, CFO, delay, sampling drift, coupling loss
//! - [`receiver`]: cell search, NPBCH acquisition, NPRACH and data decoding
//! - [`mac`]: coverage classes, random access, HARQ timeline, calculators

pub mod channel;
pub mod coding;
mod error;
pub mod grid;
pub mod mac;
pub mod numerology;
pub mod ofdm;
pub mod phy_dl;
pub mod phy_ul;
pub mod receiver;
pub mod scenario;
pub mod sequences;
pub mod waveform;

pub use error::{Error, Result};
pub use waveform::Waveform;

pub use num_complex::Complex64;

/// Hard bit, always 0 or 1.
pub type Bit = u8;
