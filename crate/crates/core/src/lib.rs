//! Static detection of reentrancy attacker contracts from EVM bytecode.

pub mod analysis;
pub mod asm;
pub mod chain;
pub mod detect;
pub mod diag;
pub mod disasm;
pub mod error;
pub mod flow;
pub mod lift;
pub mod taint;
pub mod types;
pub mod xgraph;

pub use analysis::{AnalysisConfig, Analyzer, ContractAnalysis, SummaryCache};
pub use chain::{ChainBackend, ChainClient, FixtureStore};
pub use detect::{detect, AttackType, DetectOptions, DetectionReport, EntryInput, Verdict};
pub use diag::Diagnostic;
pub use error::{AnalysisError, FetchError, ParseError};
pub use types::{ContractId, FunctionSig, Selector, Word};
