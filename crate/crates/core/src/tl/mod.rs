//! Time-domain transmission-line model of the cochlea.

pub mod calibrate;
pub mod config;
pub mod envelope;
pub mod interp;
pub mod nonlinear;
pub mod solver;
pub mod oracle;
pub mod tridiag;

pub use calibrate::{calibrate_knees, Calibration};
pub use config::{Geometry, SectionConstants, TlConfig};
pub use nonlinear::{g_strength, Knees, PolePair, Triplet};
pub use solver::{Filters, Mechanics, RunOptions, Simulator, TlModel, TlState, Traces};
