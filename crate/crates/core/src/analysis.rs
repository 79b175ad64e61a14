//! Per-contract lifting and summarization, memoized across analyses.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, RwLock};

use serde::Serialize;

use crate::chain::ChainClient;
use crate::diag::Diagnostic;
use crate::disasm::{disassemble, runtime_view, Bytecode};
use crate::error::FetchError;
use crate::flow::{summarize, FunctionSummary, HookRegistry};
use crate::lift::{build_cfg, explore_function, identify_functions, FunctionTable};
use crate::types::{ContractId, FunctionSig};

pub const DEFAULT_DEPTH_LIMIT: usize = 21;
pub const DEFAULT_FANOUT_CAP: usize = 64;
/// Call chains enumerated per entry function before giving up.
pub const DEFAULT_CHAIN_BUDGET: usize = 4096;

#[derive(Clone, Debug)]
pub struct AnalysisConfig {
    pub depth_limit: usize,
    pub fanout_cap: usize,
    pub chain_budget: usize,
    pub registry: HookRegistry,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            depth_limit: DEFAULT_DEPTH_LIMIT,
            fanout_cap: DEFAULT_FANOUT_CAP,
            chain_budget: DEFAULT_CHAIN_BUDGET,
            registry: HookRegistry::default(),
        }
    }
}

/// Function table and summaries of one contract's runtime code.
#[derive(Clone, Debug, Serialize)]
pub struct ContractAnalysis {
    pub id: ContractId,
    pub code_size: usize,
    pub table: FunctionTable,
    pub summaries: BTreeMap<FunctionSig, FunctionSummary>,
    #[serde(skip)]
    pub diagnostics: Vec<Diagnostic>,
}

impl ContractAnalysis {
    pub fn has_code(&self) -> bool {
        self.code_size > 0
    }

    pub fn summary(&self, sig: FunctionSig) -> Option<&FunctionSummary> {
        self.summaries.get(&sig)
    }

    /// Public functions containing at least one external call.
    pub fn functions_with_calls(&self) -> Vec<FunctionSig> {
        self.summaries
            .values()
            .filter(|s| s.has_external_calls())
            .map(|s| s.selector)
            .collect()
    }
}

pub fn analyze_code(id: ContractId, code: &Bytecode, registry: &HookRegistry) -> ContractAnalysis {
    let (runtime, mut diagnostics) = runtime_view(code);
    let stream = disassemble(&runtime);
    diagnostics.extend(stream.diagnostics.iter().cloned());
    let cfg = build_cfg(stream);
    diagnostics.extend(cfg.diagnostics.iter().cloned());
    let table = identify_functions(&cfg, id);
    diagnostics.extend(table.diagnostics.iter().cloned());
    let mut summaries = BTreeMap::new();
    if !runtime.bytes.is_empty() {
        for entry in &table.functions {
            let exploration = explore_function(&cfg, &table, entry);
            let summary = summarize(entry, &exploration, registry);
            diagnostics.extend(summary.diagnostics.iter().cloned());
            summaries.insert(entry.sig, summary);
        }
    }
    for d in &mut diagnostics {
        d.contract.get_or_insert(id);
    }
    diagnostics.sort();
    diagnostics.dedup();
    ContractAnalysis {
        id,
        code_size: runtime.bytes.len(),
        table,
        summaries,
        diagnostics,
    }
}

/// Contract analyses keyed by address, shareable between concurrent runs.
#[derive(Debug, Default)]
pub struct SummaryCache {
    entries: RwLock<HashMap<ContractId, Arc<ContractAnalysis>>>,
    disabled: bool,
}

impl SummaryCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// A cache that never stores anything.
    pub fn disabled() -> Self {
        SummaryCache {
            entries: RwLock::default(),
            disabled: true,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("summary cache").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_analyze(
        &self,
        client: &ChainClient,
        id: ContractId,
        registry: &HookRegistry,
    ) -> Result<Arc<ContractAnalysis>, FetchError> {
        if let Some(a) = self.entries.read().expect("summary cache").get(&id) {
            return Ok(Arc::clone(a));
        }
        let code = client.get_code(id)?;
        let analysis = Arc::new(analyze_code(id, &code, registry));
        if !self.disabled {
            self.entries
                .write()
                .expect("summary cache")
                .insert(id, Arc::clone(&analysis));
        }
        Ok(analysis)
    }
}

/// Shared state for analyzing one or more entry contracts.
#[derive(Clone, Copy)]
pub struct Analyzer<'a> {
    pub client: &'a ChainClient,
    pub cache: &'a SummaryCache,
    pub config: &'a AnalysisConfig,
}

impl<'a> Analyzer<'a> {
    pub fn new(client: &'a ChainClient, cache: &'a SummaryCache, config: &'a AnalysisConfig) -> Self {
        Analyzer { client, cache, config }
    }

    pub fn analysis(&self, id: ContractId) -> Result<Arc<ContractAnalysis>, FetchError> {
        self.cache.get_or_analyze(self.client, id, &self.config.registry)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{Assembler, CallSpec, Operand};
    use crate::chain::FixtureStore;

    #[test]
    fn empty_code_has_no_summaries() {
        let a = analyze_code(ContractId::ZERO, &Bytecode::runtime(Vec::new()), &HookRegistry::default());
        assert!(!a.has_code());
        assert!(a.functions_with_calls().is_empty());
    }

    #[test]
    fn functions_with_calls_lists_callers_only() {
        let callee = ContractId::synthetic(0x10, 1);
        let call = |a: &mut Assembler| {
            a.call(&CallSpec::call(Operand::Addr(callee), 0x11111111, vec![]), None);
        };
        let nop = |_: &mut Assembler| {};
        let code = Assembler::contract(&[(0xaaaaaaaa, &call), (0xbbbbbbbb, &nop)], None).build();
        let a = analyze_code(ContractId::ZERO, &Bytecode::runtime(code), &HookRegistry::default());
        assert_eq!(a.functions_with_calls(), vec![FunctionSig::Selector(crate::Selector::from_u32(0xaaaaaaaa))]);
    }

    #[test]
    fn cache_memoizes_unless_disabled() {
        let id = ContractId::synthetic(0x10, 2);
        let mut store = FixtureStore::new();
        store.insert_code(id, vec![0x00]);
        let client = ChainClient::new(store);
        let reg = HookRegistry::default();
        let cache = SummaryCache::new();
        let a = cache.get_or_analyze(&client, id, &reg).unwrap();
        let b = cache.get_or_analyze(&client, id, &reg).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        let off = SummaryCache::disabled();
        off.get_or_analyze(&client, id, &reg).unwrap();
        assert!(off.is_empty());
    }
}
