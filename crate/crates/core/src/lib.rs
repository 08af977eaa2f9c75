//! Tip dynamics of a DAG ledger as a level-dependent quasi-birth-and-death
//! process.
//!
//! * [`model`]: parameters and generator blocks of the tip-count chain and of
//!   the tagged-tip absorbing chain.
//! * [`qbd`]: drift diagnostics, RG-factorization, stationary distribution and
//!   a brute-force oracle.
//! * [`measures`]: mean internal/boundary tips, throughput, conservation checks.
//! * [`sojourn`]: phase-type sojourn time of an arriving tip (mean by two
//!   routes, distribution by uniformization).
//! * [`sim`]: Gillespie simulation used as an independent oracle.
//! * [`sweep`]: parameter grids and CSV output.

pub mod error;
pub mod linalg;
pub mod measures;
pub mod model;
pub mod qbd;
pub mod sim;
pub mod sojourn;
pub mod stats;
pub mod sweep;

pub use error::{Error, Result};
pub use measures::{conservation_report, ConservationReport, Measures};
pub use model::{ModelParams, TaggedState};
pub use qbd::{direct_solve_oracle, drift_diagnostics, rg_factorize, stationary, StationaryResult};
pub use sim::{simulate, simulate_tagged, SimConfig, SimResult};
pub use sojourn::{
    mean_sojourn_linear, mean_sojourn_rg, pasta_initial, sojourn_cdf, InitialVector, PhResult,
    SojournOptions,
};
