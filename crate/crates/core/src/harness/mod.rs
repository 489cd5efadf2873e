//! Stimuli, analyses and experiments on top of the TL model.

pub mod acceptance;
pub mod analysis;
pub mod experiments;
pub mod io;
pub mod stimulus;
