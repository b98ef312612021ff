//! Fixtures shared by the benchmarks.

use wrcosim::{corpus, CoupledSystem, WrConfig};

/// The convergent corpus circuit.
pub fn circuit_a() -> CoupledSystem {
    CoupledSystem::from_netlist(corpus::CIRCUIT_A).expect("corpus netlist is valid")
}

/// Corpus settings shortened to `t_end` seconds.
pub fn config(t_end: f64) -> WrConfig {
    WrConfig { t_end, ..WrConfig::default() }
}
