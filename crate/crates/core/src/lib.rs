//! Test bench for model extraction attacks against representation-serving
//! speech APIs.
//!
//! A seeded synthetic victim serves per-layer frame representations behind a
//! query budget measured in seconds of audio. The attacker side selects clips
//! under that budget ([`selection`]), queries the victim, and trains per-layer
//! prediction heads on top of a frozen backbone ([`extraction`]); the
//! [`evaluation`] module then measures how closely the surrogate tracks the
//! victim.

pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod extraction;
pub mod features;
pub mod framing;
pub mod matrix;
pub mod rng;
pub mod selection;
pub mod victim;

pub use error::{Error, Result};
pub use matrix::Matrix;
