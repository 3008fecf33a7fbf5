//! Dual-hop amplify-and-forward relay network and MMSE transceiver design.

pub mod bcd;
pub mod blocks;
pub mod network;
pub mod signal;

pub use bcd::{
    bcd_sweep, initial_state, run_design, run_design_from, Block, ConvergenceTrace, Design,
    DesignSettings, InitPolicy, SourceUpdate, TraceRecord,
};
pub use blocks::{qm_for_equalizer, qm_for_relay, qm_for_source};
pub use network::{
    generate_network, NetworkDims, Preset, RelayNetwork, ScalarChain, ScenarioConfig,
    TransceiverState,
};
pub use signal::{relay_input_covariance, simulate, total_mse};
