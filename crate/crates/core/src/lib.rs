//! Relational fuzzing of a simulated out-of-order core for speculative leaks.
//!
//! Random programs are run on an executable leakage contract and on a
//! microarchitectural simulator. Inputs that the contract cannot tell apart
//! but the simulator's cache state can form a violation.

pub mod isa;
pub mod gen;
pub mod contract;
pub mod deps;
pub mod dut;
pub mod boost;
pub mod filters;
pub mod analyzer;
pub mod minimize;
pub mod campaign;
pub mod fixtures;
