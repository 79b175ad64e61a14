//! The reentrancy condition over reach results, and the JSON report.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::analysis::{analyze_code, Analyzer, ContractAnalysis};
use crate::diag::{codes, Diagnostic};
use crate::disasm::Bytecode;
use crate::error::AnalysisError;
use crate::flow::{CallOpcode, CallSiteId, HookRegistry};
use crate::taint::{propagate, seed_sources, ReachResult, SinkSite, TaintLabel, WitnessStep};
use crate::types::{ContractId, FunctionSig};
use crate::xgraph::{build_xgraph, enumerate_call_chains_with_budget, CallChain, FnRef, Resolution, Resolver, Truncation, XGraph};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackType {
    Fallback,
    ErcHook,
    UserDefined,
}

impl AttackType {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackType::Fallback => "fallback",
            AttackType::ErcHook => "erc-hook",
            AttackType::UserDefined => "user-defined",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Attacker,
    Benign,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HookInfo {
    pub selector: FunctionSig,
    pub name: Option<String>,
}

/// A call in the hook that re-enters a function already on the chain.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct ReenteringCall {
    pub callsite: CallSiteId,
    pub pc: usize,
    pub call_opcode: CallOpcode,
    pub target: FnRef,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub attack_type: AttackType,
    pub hook: HookInfo,
    pub chain: CallChain,
    pub sink: SinkSite,
    pub source: TaintLabel,
    pub witness: Vec<WitnessStep>,
    pub reentered_targets: Vec<FnRef>,
    pub reentering_calls: Vec<ReenteringCall>,
    pub victims: Vec<ContractId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Stats {
    pub contracts: usize,
    pub edges: usize,
    pub chains: usize,
    /// Chains cut at the depth limit.
    pub depth_capped: usize,
    /// Chains ending in a call that could not be resolved.
    pub unresolved_tail: usize,
    pub reach_results: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Timing {
    pub analysis_ms: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DetectionReport {
    pub schema_version: u32,
    pub entry: ContractId,
    pub verdict: Verdict,
    /// Every public function of the entry contract.
    pub public_functions: Vec<FunctionSig>,
    /// Entry functions that make external calls.
    pub functions_with_calls: Vec<FunctionSig>,
    pub findings: Vec<Finding>,
    pub diagnostics: Vec<Diagnostic>,
    pub stats: Stats,
    pub timing: Timing,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xgraph: Option<XGraph>,
}

impl DetectionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// The report as JSON with the timing field zeroed, for comparisons.
    pub fn to_json_untimed(&self) -> String {
        let mut r = self.clone();
        r.timing = Timing::default();
        r.to_json()
    }

    pub fn attack_types(&self) -> BTreeSet<AttackType> {
        self.findings.iter().map(|f| f.attack_type).collect()
    }
}

/// Attack class of a hook function.
pub fn classify_attack_type(hook: FunctionSig, registry: &HookRegistry) -> AttackType {
    match hook {
        FunctionSig::Fallback => AttackType::Fallback,
        FunctionSig::Selector(s) if registry.lookup(s).is_some() => AttackType::ErcHook,
        FunctionSig::Selector(_) => AttackType::UserDefined,
    }
}

pub enum EntryInput {
    Address(ContractId),
    /// Bytecode analyzed as if deployed at `id`.
    Code { id: ContractId, code: Bytecode },
}

impl EntryInput {
    pub fn id(&self) -> ContractId {
        match self {
            EntryInput::Address(id) | EntryInput::Code { id, .. } => *id,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct DetectOptions {
    pub emit_xgraph: bool,
}

struct Detection<'r, 'a> {
    resolver: &'r Resolver<'a>,
    g: &'r XGraph,
    entry: &'r ContractAnalysis,
    /// One finding per (hook, sink).
    findings: BTreeMap<(FunctionSig, SinkSite), Finding>,
    diagnostics: Vec<Diagnostic>,
}

/// Chain ranking among findings for the same hook and sink: roots other
/// than the hook first, then shorter chains, then edge order.
fn chain_rank(f: &Finding) -> (bool, usize, &[crate::xgraph::CallEdge]) {
    (f.chain.root.function == f.hook.selector, f.chain.len(), &f.chain.edges)
}

impl Detection<'_, '_> {
    fn check(&mut self, r: &ReachResult) {
        // Step 1: the tainted callee is the entry contract itself.
        if !r.label.marks_self {
            return;
        }
        let Some(target) = r.resolved_callback_target else {
            self.diagnostics.push(
                Diagnostic::new(codes::CALLBACK_UNKNOWN_SELECTOR, "callback selector is not a constant")
                    .in_contract(r.sink.contract)
                    .in_function(r.sink.function)
                    .at_pc(r.sink.pc),
            );
            return;
        };
        // Step 2: the entry implements the callback (unmatched selectors
        // reach its fallback).
        let hook = self.entry.table.dispatch(target.function.selector());
        let Some(hook_summary) = self.entry.summary(hook) else { return };

        // Step 3: the hook calls back into a function visited on the chain.
        let contexts = r.chain.contexts();
        let caller = *contexts.last().expect("non-empty");
        let mut calls = Vec::new();
        for site in &hook_summary.call_sites {
            if let Resolution::Resolved(t) = self.resolver.resolve(site, self.entry.id, Some(caller)) {
                if t.contract != self.entry.id && r.chain.visited.contains(&t) {
                    calls.push(ReenteringCall {
                        callsite: site.id,
                        pc: site.pc,
                        call_opcode: site.call_opcode,
                        target: t,
                    });
                }
            }
        }
        if calls.is_empty() {
            return;
        }
        if calls.iter().all(|c| c.call_opcode == CallOpcode::StaticCall) {
            self.diagnostics.push(
                Diagnostic::new(
                    codes::READ_ONLY_REENTRY,
                    format!("hook only reads {} through STATICCALL", calls[0].target),
                )
                .in_contract(self.entry.id)
                .in_function(hook),
            );
            return;
        }
        if hook_summary.uses_sender {
            self.diagnostics.push(
                Diagnostic::new(codes::SENDER_GUARD, "hook inspects msg.sender; may be a guarded callback")
                    .in_contract(self.entry.id)
                    .in_function(hook),
            );
        }
        calls.sort();
        let reentered: BTreeSet<FnRef> = calls.iter().map(|c| c.target).collect();
        let edge_targets: BTreeSet<ContractId> = r.chain.edges.iter().map(|e| e.target_contract).collect();
        let mut victims: BTreeSet<ContractId> = reentered
            .iter()
            .map(|t| t.contract)
            .filter(|c| edge_targets.contains(c))
            .collect();
        victims.insert(r.sink.contract);
        let registry = &self.resolver.analyzer.config.registry;
        let finding = Finding {
            attack_type: classify_attack_type(hook, registry),
            hook: HookInfo {
                selector: hook,
                name: hook.selector().and_then(|s| registry.lookup(s)).map(|e| e.name.clone()),
            },
            chain: r.chain.clone(),
            sink: r.sink,
            source: r.label,
            witness: r.witness.clone(),
            reentered_targets: reentered.into_iter().collect(),
            reentering_calls: calls,
            victims: victims.into_iter().collect(),
        };
        match self.findings.entry((hook, r.sink)) {
            Entry::Vacant(v) => {
                v.insert(finding);
            }
            Entry::Occupied(mut o) => {
                if chain_rank(&finding) < chain_rank(o.get()) {
                    o.insert(finding);
                }
            }
        }
    }
}

/// Runs the full pipeline for one entry contract.
pub fn detect(analyzer: Analyzer<'_>, input: EntryInput, options: &DetectOptions) -> Result<DetectionReport, AnalysisError> {
    let started = Instant::now();
    let entry: Arc<ContractAnalysis> = match input {
        EntryInput::Address(id) => analyzer.analysis(id)?,
        EntryInput::Code { id, code } => Arc::new(analyze_code(id, &code, &analyzer.config.registry)),
    };
    let resolver = Resolver::new(analyzer, Arc::clone(&entry));
    let g = build_xgraph(&resolver, analyzer.config.depth_limit);
    let labels = seed_sources(&entry);

    let mut d = Detection {
        resolver: &resolver,
        g: &g,
        entry: &entry,
        findings: BTreeMap::new(),
        diagnostics: g.diagnostics.clone(),
    };
    let mut stats = Stats {
        contracts: g.contracts.len(),
        edges: g.edges.len(),
        ..Stats::default()
    };
    for f in &g.entry_functions {
        let chains = enumerate_call_chains_with_budget(d.g, *f, analyzer.config.chain_budget);
        if chains.exhausted {
            d.diagnostics.push(
                Diagnostic::new(codes::DFS_BUDGET, format!("stopped after {} chains", chains.chains.len()))
                    .in_contract(entry.id)
                    .in_function(*f),
            );
        }
        stats.chains += chains.chains.len();
        for chain in &chains.chains {
            match chain.truncation {
                Truncation::DepthCapped => stats.depth_capped += 1,
                Truncation::UnresolvedTail => stats.unresolved_tail += 1,
                Truncation::Complete => {}
            }
            for hop in 1..=chain.len() {
                let func = chain.frame(hop);
                if d.g.summary(func).is_none() {
                    d.diagnostics.push(
                        Diagnostic::new(codes::TAINT_STOPPED, "no summary for a function on the chain")
                            .in_contract(func.contract)
                            .in_function(func.function),
                    );
                }
            }
            let results = propagate(d.g, chain, &labels);
            stats.reach_results += results.len();
            for r in &results {
                d.check(r);
            }
        }
    }
    let Detection {
        findings,
        mut diagnostics,
        ..
    } = d;
    let findings: Vec<Finding> = findings.into_values().collect();
    diagnostics.sort();
    diagnostics.dedup();
    Ok(DetectionReport {
        schema_version: SCHEMA_VERSION,
        entry: entry.id,
        verdict: if findings.is_empty() { Verdict::Benign } else { Verdict::Attacker },
        public_functions: entry.table.sigs().collect(),
        functions_with_calls: g.entry_functions.clone(),
        findings,
        diagnostics,
        stats,
        timing: Timing {
            analysis_ms: started.elapsed().as_millis() as u64,
        },
        xgraph: options.emit_xgraph.then_some(g),
    })
}
