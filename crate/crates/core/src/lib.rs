//! Transmission-line cochlear model with a level-dependent pressure
//! focusing correction learned from a 2-D WKB reference.

pub mod error;
pub mod filter;
pub mod harness;
pub mod lut;
pub mod params;
pub mod rbf;
pub mod tl;
pub mod wkb;

pub use error::{Error, Result};
pub use params::ModelParams;
