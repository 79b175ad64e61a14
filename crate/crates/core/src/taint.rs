//! Taint propagation along call chains: labels start at the entry
//! contract's call arguments and move through flow facts, across call edges
//! and back through return values, until they reach a callee slot.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::Serialize;

use crate::analysis::ContractAnalysis;
use crate::flow::{ArgSlot, CallOpcode, CallSiteId, Endpoint, FlowFact, FunctionSummary};
use crate::lift::AbstractValue;
use crate::types::{ContractId, FunctionSig};
use crate::xgraph::{CallChain, FnRef, XGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct TaintLabel {
    pub entry: ContractId,
    pub function: FunctionSig,
    pub callsite: CallSiteId,
    /// Argument of the call, or `Sender` for the callee's `msg.sender`.
    pub position: ArgSlot,
    /// The tainted value is the entry contract's own address.
    pub marks_self: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SinkKind {
    Callee,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SinkSite {
    pub contract: ContractId,
    pub function: FunctionSig,
    pub callsite: CallSiteId,
    pub pc: usize,
    pub sink_kind: SinkKind,
}

/// One flow fact used by a witness. `through` is set when the fact belongs
/// to a function called off the chain from call site `through` of `hop`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WitnessStep {
    pub hop: usize,
    pub contract: ContractId,
    pub function: FunctionSig,
    pub fact: FlowFact,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub through: Option<CallSiteId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReachResult {
    /// The chain up to the function hosting the sink.
    pub chain: CallChain,
    pub sink: SinkSite,
    pub label: TaintLabel,
    pub witness: Vec<WitnessStep>,
    /// Entry function the tainted call invokes, when the label marks the
    /// entry itself and the call's selector is known.
    pub resolved_callback_target: Option<FnRef>,
}

/// A point in the product of chain hops and function endpoints.
pub type Point = (usize, Endpoint);

/// One function on a chain as seen by the propagation rules.
#[derive(Clone, Debug)]
pub struct Frame<'a> {
    pub func: FnRef,
    pub summary: &'a FunctionSummary,
    /// The frame's `msg.sender` is the entry contract.
    pub sender_is_entry: bool,
    /// Summaries of resolved callees, by call site.
    pub callees: BTreeMap<CallSiteId, &'a FunctionSummary>,
}

/// Frames joined by `links[i]`, the call site of frame `i` that enters
/// frame `i + 1`.
#[derive(Clone, Debug, Default)]
pub struct ChainView<'a> {
    pub frames: Vec<Frame<'a>>,
    pub links: Vec<(CallSiteId, CallOpcode)>,
}

/// Moves out of `p` within the first `last + 1` hops of `view`.
pub fn moves(view: &ChainView<'_>, last: usize, p: &Point) -> Vec<(Point, Option<WitnessStep>)> {
    let (hop, ep) = *p;
    let frame = &view.frames[hop];
    let mut out = Vec::new();
    for fact in &frame.summary.flow_facts {
        if fact.source() == ep {
            let step = WitnessStep {
                hop,
                contract: frame.func.contract,
                function: frame.func.function,
                fact: *fact,
                through: None,
            };
            out.push(((hop, fact.sink()), Some(step)));
        }
    }
    let link = (hop < last).then(|| view.links[hop]);
    match ep {
        Endpoint::CallArg { site, position } => {
            if link.is_some_and(|(s, _)| s == site) {
                out.push(((hop + 1, Endpoint::FuncArg { arg: ArgSlot::Arg(position) }), None));
            } else if let Some(callee) = frame.callees.get(&site) {
                for fact in &callee.flow_facts {
                    if let FlowFact::FuncArgToFuncRet { arg: ArgSlot::Arg(k), .. } = fact {
                        if *k == position {
                            let step = WitnessStep {
                                hop,
                                contract: frame.func.contract,
                                function: callee.selector,
                                fact: *fact,
                                through: Some(site),
                            };
                            out.push(((hop, Endpoint::CallRet { site }), Some(step)));
                        }
                    }
                }
            }
        }
        Endpoint::FuncArg { arg: ArgSlot::Sender } => {
            if link.is_some_and(|(_, op)| op == CallOpcode::DelegateCall) {
                out.push(((hop + 1, ep), None));
            }
        }
        Endpoint::FuncRet { .. } if hop > 0 => {
            out.push(((hop - 1, Endpoint::CallRet { site: view.links[hop - 1].0 }), None));
        }
        _ => {}
    }
    out
}

pub fn seed_point(label: &TaintLabel, hop: usize) -> Point {
    match label.position {
        ArgSlot::Arg(k) => (0, Endpoint::CallArg { site: label.callsite, position: k }),
        ArgSlot::Sender => (hop, Endpoint::FuncArg { arg: ArgSlot::Sender }),
    }
}

/// Breadth-first search from `start`; returns the parent map.
fn search(view: &ChainView<'_>, last: usize, start: Point) -> HashMap<Point, Option<(Point, Option<WitnessStep>)>> {
    let mut parent = HashMap::from([(start, None)]);
    let mut queue = VecDeque::from([start]);
    while let Some(p) = queue.pop_front() {
        for (q, step) in moves(view, last, &p) {
            if let std::collections::hash_map::Entry::Vacant(e) = parent.entry(q) {
                e.insert(Some((p, step)));
                queue.push_back(q);
            }
        }
    }
    parent
}

fn witness_to(parent: &HashMap<Point, Option<(Point, Option<WitnessStep>)>>, target: Point) -> Vec<WitnessStep> {
    let mut steps = Vec::new();
    let mut at = target;
    while let Some(Some((prev, step))) = parent.get(&at) {
        if let Some(s) = step {
            steps.push(s.clone());
        }
        at = *prev;
    }
    steps.reverse();
    steps
}

/// Whether `sink` is reachable from `source` within hops `0..=last`, with
/// the facts used on a shortest route.
pub fn is_reachable(view: &ChainView<'_>, last: usize, source: Point, sink: Point) -> Option<Vec<WitnessStep>> {
    let parent = search(view, last, source);
    parent.contains_key(&sink).then(|| witness_to(&parent, sink))
}

/// Every point reachable from `source` within hops `0..=last`.
pub fn reachable_points(view: &ChainView<'_>, last: usize, source: Point) -> Vec<Point> {
    let mut v: Vec<Point> = search(view, last, source).into_keys().collect();
    v.sort();
    v
}

/// Re-applies `witness` from `source`, allowing fact-free edge crossings
/// between steps; returns where it ends.
pub fn replay_witness(view: &ChainView<'_>, last: usize, source: Point, witness: &[WitnessStep]) -> Option<Point> {
    let mut at = source;
    for step in witness {
        // crossing-only closure of the current point
        let mut reach = vec![at];
        let mut i = 0;
        while i < reach.len() {
            for (q, s) in moves(view, last, &reach[i]) {
                if s.is_none() && !reach.contains(&q) {
                    reach.push(q);
                }
            }
            i += 1;
        }
        let next = reach.iter().find_map(|p| {
            moves(view, last, p)
                .into_iter()
                .find(|(_, s)| s.as_ref() == Some(step))
                .map(|(q, _)| q)
        })?;
        at = next;
    }
    Some(at)
}

/// Sender labels are seeded where the caller runs as the entry contract.
pub fn sender_seed_hops(view: &ChainView<'_>) -> Vec<usize> {
    (1..view.frames.len()).filter(|&i| view.frames[i].sender_is_entry).collect()
}

/// One label per argument of every call site in the entry functions that
/// make external calls.
pub fn seed_sources(entry: &ContractAnalysis) -> Vec<TaintLabel> {
    let mut out = Vec::new();
    for f in entry.functions_with_calls() {
        let summary = entry.summary(f).expect("listed function has a summary");
        for site in &summary.call_sites {
            for (k, v) in site.arg_values.iter().enumerate() {
                let marks_self = match v {
                    AbstractValue::EnvSelf => true,
                    AbstractValue::Const(w) => *w == entry.id.to_word(),
                    _ => false,
                };
                out.push(TaintLabel {
                    entry: entry.id,
                    function: f,
                    callsite: site.id,
                    position: ArgSlot::Arg(k as u32),
                    marks_self,
                });
            }
        }
    }
    out
}

/// Owned backing for views built from a graph (functions without code get
/// an empty summary).
pub struct ViewStore {
    empties: Vec<FunctionSummary>,
}

impl ViewStore {
    pub fn for_chain(chain: &CallChain) -> Self {
        ViewStore {
            empties: (0..=chain.len()).map(|i| FunctionSummary::empty(chain.frame(i).function)).collect(),
        }
    }

    pub fn view<'a>(&'a self, g: &'a XGraph, chain: &CallChain) -> ChainView<'a> {
        let contexts = chain.contexts();
        let mut frames = Vec::new();
        for i in 0..=chain.len() {
            let func = chain.frame(i);
            let summary = g.summary(func).unwrap_or(&self.empties[i]);
            let sender_is_entry = i > 0
                && chain.edges[i - 1].call_opcode != CallOpcode::DelegateCall
                && contexts[i - 1] == g.entry;
            let callees = summary
                .call_sites
                .iter()
                .filter_map(|s| {
                    let e = g.edge_at(func, s.id)?;
                    Some((s.id, g.summary(e.target())?))
                })
                .collect();
            frames.push(Frame {
                func,
                summary,
                sender_is_entry,
                callees,
            });
        }
        ChainView {
            frames,
            links: chain.edges.iter().map(|e| (e.callsite, e.call_opcode)).collect(),
        }
    }
}

/// Sinks `(hop, site)` reachable from `label` on `view`; each sink at hop
/// `j` is searched on the first `j` links only.
pub fn reachable_sinks(view: &ChainView<'_>, label: &TaintLabel) -> Vec<(usize, CallSiteId, Vec<WitnessStep>)> {
    let mut out = Vec::new();
    let seeds: Vec<usize> = match label.position {
        ArgSlot::Arg(_) => vec![0],
        ArgSlot::Sender => sender_seed_hops(view),
    };
    for j in 1..view.frames.len() {
        let mut found: BTreeMap<CallSiteId, Vec<WitnessStep>> = BTreeMap::new();
        for &h in seeds.iter().filter(|&&h| h <= j) {
            let parent = search(view, j, seed_point(label, h));
            for site in &view.frames[j].summary.call_sites {
                let sink = (j, Endpoint::Callee { site: site.id });
                if !found.contains_key(&site.id) && parent.contains_key(&sink) {
                    found.insert(site.id, witness_to(&parent, sink));
                }
            }
        }
        out.extend(found.into_iter().map(|(s, w)| (j, s, w)));
    }
    out
}

/// Labels of `labels` rooted at this chain's entry function, propagated to
/// every callee slot they reach.
pub fn propagate(g: &XGraph, chain: &CallChain, labels: &[TaintLabel]) -> Vec<ReachResult> {
    let store = ViewStore::for_chain(chain);
    let view = store.view(g, chain);
    let mut labels: Vec<TaintLabel> = labels
        .iter()
        .filter(|l| l.function == chain.root.function && l.entry == g.entry)
        .copied()
        .collect();
    if !sender_seed_hops(&view).is_empty() {
        if let Some(first) = chain.edges.first() {
            labels.push(TaintLabel {
                entry: g.entry,
                function: chain.root.function,
                callsite: first.callsite,
                position: ArgSlot::Sender,
                marks_self: true,
            });
        }
    }
    let mut out = Vec::new();
    for label in &labels {
        for (hop, site_id, witness) in reachable_sinks(&view, label) {
            let frame = &view.frames[hop];
            let site = frame.summary.site(site_id).expect("sink site exists");
            let resolved_callback_target = if !label.marks_self {
                None
            } else if site.empty_input {
                Some(FnRef::new(g.entry, FunctionSig::Fallback))
            } else {
                site.target_selector.map(|s| FnRef::new(g.entry, FunctionSig::Selector(s)))
            };
            out.push(ReachResult {
                chain: chain.prefix(hop),
                sink: SinkSite {
                    contract: frame.func.contract,
                    function: frame.func.function,
                    callsite: site_id,
                    pc: site.pc,
                    sink_kind: SinkKind::Callee,
                },
                label: *label,
                witness,
                resolved_callback_target,
            });
        }
    }
    out
}
