//! Simulation and equalization lab for 56 GBaud PAM4 upstream PON links.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure
//! function of its inputs and seeds; file formats, the sweep driver and the
//! command line live in the companion `ponlab` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod channel;
pub mod dataset;
pub mod fconvnet;
mod error;
pub mod metrics;
pub mod numerics;
pub mod seeds;
pub mod training;
pub mod txrx;

pub use error::{Error, Result};
