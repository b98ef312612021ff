//! Waveform-relaxation co-simulation of a field device coupled to a lumped circuit.
//!
//! The crate covers the whole pipeline: netlist parsing, the CV-connectivity
//! convergence prediction, field and circuit subsystem solvers, the relaxation
//! driver, a monolithic reference solver and the numerical studies built on top.

pub mod circuit;
pub mod cosim;
pub mod error;
pub mod field;
pub mod netlist;
pub mod oracle;
pub mod solver;
pub mod studies;
pub mod topology;
pub mod waveform;

/// The two reference circuits shipped with the crate.
pub mod corpus {
    /// Field attached across `L1`/`L2`, away from every capacitor/source path.
    pub const CIRCUIT_A: &str = include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../netlists/circuit_a.net"));
    /// Field in parallel with the series `C`/`Vs` branch.
    pub const CIRCUIT_B: &str = include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../netlists/circuit_b.net"));
}

pub use circuit::{assemble_mna, circuit_solve_window, CircuitState, MnaSystem};
pub use cosim::{wr_solve, wr_window, Rates, Scheme, Verdict, WrConfig, WrReport, WrSolution};
pub use error::{Error, Result};
pub use field::{field_solve_window, FieldModel, FieldState};
pub use oracle::{monolithic_solve, CoupledSystem, MonoSolution};
pub use netlist::{parse_netlist, CircuitGraph, Element, ElementKind, ElementParams, NodeId};
pub use topology::{cv_connected, predict, CvVerdict, Prediction};
pub use waveform::Waveform;
