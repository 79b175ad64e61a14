//! Cross-contract call graph: call-site resolution, depth-first expansion
//! from the entry contract, and call-chain enumeration.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Serialize, Serializer};

use crate::analysis::{Analyzer, ContractAnalysis};
use crate::diag::{codes, Diagnostic};
use crate::error::FetchError;
use crate::flow::{CallOpcode, CallSite, CallSiteId, FunctionSummary};
use crate::lift::AbstractValue;
use crate::types::{ContractId, FunctionSig};

/// A public function of a specific contract.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct FnRef {
    pub contract: ContractId,
    pub function: FunctionSig,
}

impl FnRef {
    pub fn new(contract: ContractId, function: FunctionSig) -> Self {
        FnRef { contract, function }
    }
}

impl fmt::Display for FnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.contract, self.function)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "detail", rename_all = "kebab-case")]
pub enum UnresolvedReason {
    /// The callee is computed from inputs or call results.
    Dynamic,
    /// Non-empty calldata whose selector is not a constant.
    UnknownSelector,
    FetchError(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Resolution {
    Resolved(FnRef),
    Unresolved(UnresolvedReason),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct CallEdge {
    pub callsite: CallSiteId,
    pub pc: usize,
    pub caller_address: ContractId,
    #[serde(rename = "caller_funcSign")]
    pub caller_function: FunctionSig,
    pub target_contract: ContractId,
    #[serde(rename = "target_funcSign")]
    pub target_function: FunctionSig,
    pub call_opcode: CallOpcode,
}

impl CallEdge {
    pub fn caller(&self) -> FnRef {
        FnRef::new(self.caller_address, self.caller_function)
    }

    pub fn target(&self) -> FnRef {
        FnRef::new(self.target_contract, self.target_function)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct UnresolvedCall {
    pub caller: FnRef,
    pub callsite: CallSiteId,
    pub pc: usize,
    pub reason: UnresolvedReason,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Truncation {
    Complete,
    DepthCapped,
    UnresolvedTail,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CallChain {
    pub root: FnRef,
    pub edges: Vec<CallEdge>,
    pub visited: BTreeSet<FnRef>,
    pub truncation: Truncation,
    /// The function entered a second time by the last edge, if any.
    pub revisit: Option<FnRef>,
}

impl CallChain {
    pub fn new(root: FnRef) -> Self {
        CallChain {
            root,
            edges: Vec::new(),
            visited: BTreeSet::from([root]),
            truncation: Truncation::Complete,
            revisit: None,
        }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Function executing at hop `i` (0 is the root).
    pub fn frame(&self, i: usize) -> FnRef {
        if i == 0 {
            self.root
        } else {
            self.edges[i - 1].target()
        }
    }

    /// The first `hops` edges, with visited recomputed.
    pub fn prefix(&self, hops: usize) -> CallChain {
        let edges = self.edges[..hops].to_vec();
        let mut visited = BTreeSet::from([self.root]);
        let mut revisit = None;
        for e in &edges {
            if !visited.insert(e.target()) {
                revisit = Some(e.target());
            }
        }
        let truncation = if hops == self.edges.len() {
            self.truncation
        } else {
            Truncation::Complete
        };
        CallChain {
            root: self.root,
            edges,
            visited,
            truncation,
            revisit,
        }
    }

    /// Address whose storage and `ADDRESS` apply at each hop: the callee's
    /// own, or the caller's through `DELEGATECALL` / `CALLCODE`.
    pub fn contexts(&self) -> Vec<ContractId> {
        let mut out = vec![self.root.contract];
        for e in &self.edges {
            let prev = *out.last().expect("non-empty");
            out.push(if e.call_opcode.shares_context() { prev } else { e.target_contract });
        }
        out
    }

    /// Checks edge continuity and that `visited` matches the edges.
    pub fn validate(&self) -> Result<(), String> {
        let mut at = self.root;
        let mut visited = BTreeSet::from([self.root]);
        for (i, e) in self.edges.iter().enumerate() {
            if e.caller() != at {
                return Err(format!("edge {i} starts at {} but the chain is at {at}", e.caller()));
            }
            at = e.target();
            visited.insert(at);
        }
        if visited != self.visited {
            return Err("visited set does not match the edges".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct XNode {
    #[serde(flatten)]
    pub func: FnRef,
    /// Storage and self address used when resolving this node's calls.
    pub context: ContractId,
    /// Smallest depth at which the node was reached.
    pub depth: usize,
    /// Call sites were resolved (false past the depth limit).
    pub expanded: bool,
}

fn serialize_values<S: Serializer, K, V: Serialize>(map: &BTreeMap<K, V>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(map.values())
}

#[derive(Clone, Debug, Serialize)]
pub struct XGraph {
    pub entry: ContractId,
    /// Entry functions containing external calls.
    pub entry_functions: Vec<FunctionSig>,
    pub depth_limit: usize,
    pub contracts: BTreeMap<ContractId, Arc<ContractAnalysis>>,
    #[serde(serialize_with = "serialize_values")]
    pub nodes: BTreeMap<FnRef, XNode>,
    /// Sorted by caller, call-site pc, then target.
    pub edges: Vec<CallEdge>,
    pub unresolved: Vec<UnresolvedCall>,
    /// Contracts that could not be fetched.
    pub external_unresolved: BTreeSet<ContractId>,
    #[serde(skip)]
    pub diagnostics: Vec<Diagnostic>,
}

impl XGraph {
    pub fn contract(&self, id: ContractId) -> Option<&ContractAnalysis> {
        self.contracts.get(&id).map(Arc::as_ref)
    }

    pub fn entry_analysis(&self) -> &ContractAnalysis {
        self.contract(self.entry).expect("entry is always analyzed")
    }

    pub fn summary(&self, f: FnRef) -> Option<&FunctionSummary> {
        self.contract(f.contract)?.summary(f.function)
    }

    pub fn out_edges(&self, from: FnRef) -> impl Iterator<Item = &CallEdge> + '_ {
        let start = self.edges.partition_point(|e| e.caller() < from);
        self.edges[start..].iter().take_while(move |e| e.caller() == from)
    }

    /// Resolved edge leaving `from` at `site`, if any.
    pub fn edge_at(&self, from: FnRef, site: CallSiteId) -> Option<&CallEdge> {
        self.out_edges(from).find(|e| e.callsite == site)
    }

    fn has_unresolved_tail(&self, at: FnRef) -> bool {
        self.unresolved
            .iter()
            .any(|u| u.caller == at && u.reason != UnresolvedReason::Dynamic)
    }
}

/// Resolves call sites to concrete functions, reading storage and code
/// through the analyzer.
pub struct Resolver<'a> {
    pub analyzer: Analyzer<'a>,
    pub entry: Arc<ContractAnalysis>,
}

impl<'a> Resolver<'a> {
    pub fn new(analyzer: Analyzer<'a>, entry: Arc<ContractAnalysis>) -> Self {
        Resolver { analyzer, entry }
    }

    pub fn analysis(&self, id: ContractId) -> Result<Arc<ContractAnalysis>, FetchError> {
        if id == self.entry.id {
            return Ok(Arc::clone(&self.entry));
        }
        self.analyzer.analysis(id)
    }

    /// Callee address of `callee` evaluated with `context` as the executing
    /// contract and `sender` as `msg.sender`, when known.
    pub fn callee_address(
        &self,
        callee: &AbstractValue,
        context: ContractId,
        sender: Option<ContractId>,
    ) -> Result<ContractId, UnresolvedReason> {
        match callee {
            AbstractValue::Const(w) => Ok(ContractId::from_word(w)),
            AbstractValue::StorageLoad(slot) => self
                .analyzer
                .client
                .get_storage(context, *slot)
                .map(|w| ContractId::from_word(&w))
                .map_err(|e| UnresolvedReason::FetchError(e.to_string())),
            AbstractValue::EnvSelf => Ok(context),
            AbstractValue::EnvSender => sender.ok_or(UnresolvedReason::Dynamic),
            AbstractValue::CallData(_) | AbstractValue::CallReturn(_) | AbstractValue::Top => {
                Err(UnresolvedReason::Dynamic)
            }
        }
    }

    /// Function of `target` that `site` invokes.
    pub fn target_function(&self, site: &CallSite, target: ContractId) -> Result<FunctionSig, UnresolvedReason> {
        if site.empty_input {
            return Ok(FunctionSig::Fallback);
        }
        let Some(selector) = site.target_selector else {
            return Err(UnresolvedReason::UnknownSelector);
        };
        let analysis = self
            .analysis(target)
            .map_err(|e| UnresolvedReason::FetchError(e.to_string()))?;
        if !analysis.has_code() {
            return Ok(FunctionSig::Selector(selector));
        }
        Ok(analysis.table.dispatch(Some(selector)))
    }

    pub fn resolve(&self, site: &CallSite, context: ContractId, sender: Option<ContractId>) -> Resolution {
        let target = match self.callee_address(&site.callee, context, sender) {
            Ok(t) => t,
            Err(r) => return Resolution::Unresolved(r),
        };
        match self.target_function(site, target) {
            Ok(f) => Resolution::Resolved(FnRef::new(target, f)),
            Err(r) => Resolution::Unresolved(r),
        }
    }
}

/// Resolves one call site of `host` in its own storage context.
pub fn resolve_call_target(resolver: &Resolver<'_>, site: &CallSite, host: ContractId) -> Resolution {
    resolver.resolve(site, host, None)
}

struct Builder<'r, 'a> {
    resolver: &'r Resolver<'a>,
    depth_limit: usize,
    fanout_cap: usize,
    contracts: BTreeMap<ContractId, Arc<ContractAnalysis>>,
    nodes: BTreeMap<FnRef, XNode>,
    edges: BTreeSet<CallEdge>,
    unresolved: Vec<UnresolvedCall>,
    external_unresolved: BTreeSet<ContractId>,
    diagnostics: Vec<Diagnostic>,
}

impl Builder<'_, '_> {
    fn analysis(&mut self, id: ContractId) -> Option<Arc<ContractAnalysis>> {
        if let Some(a) = self.contracts.get(&id) {
            return Some(Arc::clone(a));
        }
        match self.resolver.analysis(id) {
            Ok(a) => {
                self.diagnostics.extend(a.diagnostics.iter().cloned());
                self.contracts.insert(id, Arc::clone(&a));
                Some(a)
            }
            Err(e) => {
                if self.external_unresolved.insert(id) {
                    self.diagnostics
                        .push(Diagnostic::new(codes::FETCH_ERROR, e.to_string()).in_contract(id));
                }
                None
            }
        }
    }

    fn note_unresolved(&mut self, caller: FnRef, site: &CallSite, reason: UnresolvedReason) {
        let u = UnresolvedCall {
            caller,
            callsite: site.id,
            pc: site.pc,
            reason,
        };
        if !self.unresolved.contains(&u) {
            if u.reason != UnresolvedReason::Dynamic {
                self.diagnostics.push(
                    Diagnostic::new(codes::UNRESOLVED_CALL, format!("{:?}", u.reason))
                        .in_contract(caller.contract)
                        .in_function(caller.function)
                        .at_pc(site.pc),
                );
            }
            self.unresolved.push(u);
        }
    }

    fn expand(&mut self, at: FnRef, context: ContractId, depth: usize, path: &mut Vec<FnRef>) {
        let context = match self.nodes.get_mut(&at) {
            Some(node) if node.depth <= depth => return,
            Some(node) => {
                node.depth = depth;
                node.context
            }
            None => {
                self.nodes.insert(
                    at,
                    XNode {
                        func: at,
                        context,
                        depth,
                        expanded: false,
                    },
                );
                context
            }
        };
        let Some(analysis) = self.analysis(at.contract) else { return };
        if depth >= self.depth_limit {
            return;
        }
        let Some(summary) = analysis.summary(at.function) else { return };
        self.nodes.get_mut(&at).expect("inserted above").expanded = true;
        let mut resolved = 0usize;
        for site in &summary.call_sites {
            let target = match self.resolver.resolve(site, context, None) {
                Resolution::Resolved(t) => t,
                Resolution::Unresolved(r) => {
                    self.note_unresolved(at, site, r);
                    continue;
                }
            };
            resolved += 1;
            if resolved > self.fanout_cap {
                self.diagnostics.push(
                    Diagnostic::new(codes::FANOUT_CAP, format!("more than {} resolved calls", self.fanout_cap))
                        .in_contract(at.contract)
                        .in_function(at.function)
                        .at_pc(site.pc),
                );
                break;
            }
            self.edges.insert(CallEdge {
                callsite: site.id,
                pc: site.pc,
                caller_address: at.contract,
                caller_function: at.function,
                target_contract: target.contract,
                target_function: target.function,
                call_opcode: site.call_opcode,
            });
            if path.contains(&target) {
                continue;
            }
            let next_context = if site.call_opcode.shares_context() { context } else { target.contract };
            path.push(target);
            self.expand(target, next_context, depth + 1, path);
            path.pop();
        }
    }
}

/// Builds the call graph reachable from the entry functions that contain
/// external calls.
pub fn build_xgraph(resolver: &Resolver<'_>, depth_limit: usize) -> XGraph {
    let entry = Arc::clone(&resolver.entry);
    let mut b = Builder {
        resolver,
        depth_limit,
        fanout_cap: resolver.analyzer.config.fanout_cap,
        contracts: BTreeMap::from([(entry.id, Arc::clone(&entry))]),
        nodes: BTreeMap::new(),
        edges: BTreeSet::new(),
        unresolved: Vec::new(),
        external_unresolved: BTreeSet::new(),
        diagnostics: entry.diagnostics.clone(),
    };
    let entry_functions = entry.functions_with_calls();
    for f in &entry_functions {
        let root = FnRef::new(entry.id, *f);
        let mut path = vec![root];
        b.expand(root, entry.id, 0, &mut path);
    }
    let mut edges: Vec<CallEdge> = b.edges.into_iter().collect();
    edges.sort_by_key(|e| (e.caller(), e.pc, e.target(), e.callsite, e.call_opcode));
    b.unresolved.sort_by_key(|u| (u.caller, u.pc, u.callsite));
    b.diagnostics.sort();
    b.diagnostics.dedup();
    XGraph {
        entry: entry.id,
        entry_functions,
        depth_limit,
        contracts: b.contracts,
        nodes: b.nodes,
        edges,
        unresolved: b.unresolved,
        external_unresolved: b.external_unresolved,
        diagnostics: b.diagnostics,
    }
}

/// Chains rooted at one entry function, and whether the budget ran out.
#[derive(Clone, Debug, Default)]
pub struct ChainEnumeration {
    pub chains: Vec<CallChain>,
    pub exhausted: bool,
}

struct Enumerator<'g> {
    g: &'g XGraph,
    budget: usize,
    out: ChainEnumeration,
}

impl Enumerator<'_> {
    fn emit(&mut self, chain: &CallChain, truncation: Truncation, revisit: Option<FnRef>) {
        if self.out.chains.len() >= self.budget {
            self.out.exhausted = true;
            return;
        }
        let mut c = chain.clone();
        c.truncation = truncation;
        c.revisit = revisit;
        self.out.chains.push(c);
    }

    fn dfs(&mut self, chain: &mut CallChain, at: FnRef) {
        if self.out.exhausted {
            return;
        }
        let out: Vec<&CallEdge> = self.g.out_edges(at).collect();
        if chain.len() >= self.g.depth_limit {
            let capped = !out.is_empty()
                || self.g.nodes.get(&at).is_some_and(|n| !n.expanded)
                    && self.g.summary(at).is_some_and(FunctionSummary::has_external_calls);
            let t = if capped { Truncation::DepthCapped } else { self.tail(at) };
            self.emit(chain, t, None);
            return;
        }
        if out.is_empty() {
            if !chain.is_empty() {
                let t = self.tail(at);
                self.emit(chain, t, None);
            }
            return;
        }
        for e in out {
            let target = e.target();
            chain.edges.push(e.clone());
            if chain.visited.contains(&target) {
                self.emit(chain, Truncation::Complete, Some(target));
            } else {
                chain.visited.insert(target);
                self.dfs(chain, target);
                chain.visited.remove(&target);
            }
            chain.edges.pop();
        }
    }

    fn tail(&self, at: FnRef) -> Truncation {
        if self.g.has_unresolved_tail(at) || self.g.external_unresolved.contains(&at.contract) {
            Truncation::UnresolvedTail
        } else {
            Truncation::Complete
        }
    }
}

/// All maximal chains rooted at `(entry, f)`, in edge order. A function may
/// be entered twice on one chain; the second entry ends it.
pub fn enumerate_call_chains_with_budget(g: &XGraph, f: FunctionSig, budget: usize) -> ChainEnumeration {
    let root = FnRef::new(g.entry, f);
    let mut e = Enumerator {
        g,
        budget,
        out: ChainEnumeration::default(),
    };
    let mut chain = CallChain::new(root);
    e.dfs(&mut chain, root);
    e.out
}

pub fn enumerate_call_chains(g: &XGraph, f: FunctionSig) -> Vec<CallChain> {
    enumerate_call_chains_with_budget(g, f, usize::MAX).chains
}
