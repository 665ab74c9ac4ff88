//! Frequency-resolved quantum-jump simulation of a driven two-level emitter
//! seen through Lorentzian filters, with exact master-equation references.

pub mod clickstats;
pub mod error;
pub mod hilbert;
pub mod models;
pub mod reconstruct;

pub use error::{Error, Result};
pub mod mastereq;
pub mod mcjump;
