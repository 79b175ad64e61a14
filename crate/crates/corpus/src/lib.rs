//! Fixture contracts, a concrete EVM interpreter used as a ground-truth
//! oracle, and helpers shared by the test suites.

pub mod interp;
pub mod sets;
pub mod closure;
pub mod audit;
