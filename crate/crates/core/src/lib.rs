//! Three-layer message passing (TLMP) for SPARC-coded unsourced random
//! access over a massive-MIMO block-fading channel.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! at the bottom of this file fix the scalar to `f64`, which is what the
//! simulator uses.

// Negated comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bigamp;
pub mod channel;
pub mod engine;
pub mod error;
pub mod scalar;
pub mod sparc;
pub mod special;
pub mod vegamp;
pub mod vmp;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Codebook64 = sparc::Codebook<f64>;
pub type GmParams64 = channel::GmParams<f64>;
pub type Observation64 = channel::Observation<f64>;
pub type EqualizerState64 = bigamp::EqualizerState<f64>;
pub type DecoderState64 = vegamp::DecoderState<f64>;
pub type DpHyper64 = vmp::DpHyper<f64>;
pub type GmPosterior64 = vmp::GmPosterior<f64>;
pub type EngineConfig64 = engine::EngineConfig<f64>;
pub type TlmpState64 = engine::TlmpState<f64>;
