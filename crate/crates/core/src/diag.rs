//! Non-fatal findings about the analysis itself (unresolved jumps, dropped
//! paths, fetch failures). They travel into the final report.

use serde::{Deserialize, Serialize};

use crate::types::{ContractId, FunctionSig};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Diagnostic {
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contract: Option<ContractId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function: Option<FunctionSig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pc: Option<usize>,
    pub message: String,
}

impl Diagnostic {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Diagnostic {
            code: code.to_string(),
            contract: None,
            function: None,
            pc: None,
            message: message.into(),
        }
    }

    pub fn at_pc(mut self, pc: usize) -> Self {
        self.pc = Some(pc);
        self
    }

    pub fn in_contract(mut self, contract: ContractId) -> Self {
        self.contract = Some(contract);
        self
    }

    pub fn in_function(mut self, function: FunctionSig) -> Self {
        self.function = Some(function);
        self
    }
}

/// Diagnostic codes emitted by the pipeline.
pub mod codes {
    pub const TRUNCATED_PUSH: &str = "truncated-push";
    pub const CREATION_UNRESOLVED: &str = "creation-unresolved";
    pub const CREATION_STRIPPED: &str = "creation-stripped";
    pub const UNRESOLVED_JUMP: &str = "unresolved-jump";
    pub const INVALID_JUMP: &str = "invalid-jump-target";
    pub const NO_DISPATCHER: &str = "no-dispatcher";
    pub const PATH_INFEASIBLE: &str = "path-infeasible";
    pub const PATH_CAP: &str = "path-cap";
    pub const VISIT_CAP: &str = "visit-cap";
    pub const STORAGE_TAINT_DROPPED: &str = "storage-taint-dropped";
    pub const FETCH_ERROR: &str = "fetch-error";
    pub const UNRESOLVED_CALL: &str = "unresolved-call";
    pub const FANOUT_CAP: &str = "fanout-cap";
    pub const DFS_BUDGET: &str = "dfs-budget";
    pub const TAINT_STOPPED: &str = "taint-stopped";
    pub const READ_ONLY_REENTRY: &str = "read-only-reentry";
    pub const SENDER_GUARD: &str = "sender-guard";
    pub const CALLBACK_UNKNOWN_SELECTOR: &str = "callback-unknown-selector";
}
