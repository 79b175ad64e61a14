//! Random per-chain fact graphs and an explicit transitive-closure oracle
//! for checking the propagation search.

use std::collections::BTreeMap;

use hookwatch_core::flow::{
    ArgSlot, CallOpcode, CallSite, CallSiteId, Endpoint, FlowFact, FunctionSummary, Tristate,
};
use hookwatch_core::lift::AbstractValue;
use hookwatch_core::taint::{ChainView, Frame, Point};
use hookwatch_core::xgraph::FnRef;
use hookwatch_core::{ContractId, FunctionSig, Selector};
use rand::Rng;

pub const ARGS: u32 = 2;
pub const POSITIONS: u32 = 2;

/// Owned data behind a random [`ChainView`].
#[derive(Clone, Debug)]
pub struct RandomChain {
    pub summaries: Vec<FunctionSummary>,
    /// Off-chain callee summaries per frame, by call site.
    pub callees: Vec<BTreeMap<CallSiteId, FunctionSummary>>,
    pub links: Vec<(CallSiteId, CallOpcode)>,
    pub sender_is_entry: Vec<bool>,
}

const OPCODES: [CallOpcode; 4] = [
    CallOpcode::Call,
    CallOpcode::StaticCall,
    CallOpcode::DelegateCall,
    CallOpcode::CallCode,
];

fn sig(n: u32) -> FunctionSig {
    Selector::from_u32(n).into()
}

fn random_slot(rng: &mut impl Rng) -> ArgSlot {
    if rng.gen_bool(0.2) {
        ArgSlot::Sender
    } else {
        ArgSlot::Arg(rng.gen_range(0..ARGS))
    }
}

pub fn random_fact(rng: &mut impl Rng, sites: u32) -> FlowFact {
    let site = CallSiteId(rng.gen_range(0..sites));
    let position = rng.gen_range(0..POSITIONS);
    match rng.gen_range(0..5) {
        0 => FlowFact::FuncArgToCallArg { arg: random_slot(rng), site, position },
        1 => FlowFact::FuncArgToFuncRet { arg: random_slot(rng), position },
        2 => FlowFact::FuncArgToCallee { arg: random_slot(rng), site },
        3 => FlowFact::CallRetToCallArg {
            from: CallSiteId(rng.gen_range(0..sites)),
            site,
            position,
        },
        _ => FlowFact::CallRetToFuncRet {
            from: CallSiteId(rng.gen_range(0..sites)),
            position,
        },
    }
}

fn summary(selector: FunctionSig, sites: u32, facts: impl IntoIterator<Item = FlowFact>) -> FunctionSummary {
    let mut s = FunctionSummary::empty(selector);
    s.call_sites = (0..sites)
        .map(|i| CallSite {
            id: CallSiteId(i),
            pc: i as usize,
            host_function: selector,
            call_opcode: CallOpcode::Call,
            callee: AbstractValue::Top,
            target_selector: None,
            empty_input: false,
            arg_values: vec![AbstractValue::Top; POSITIONS as usize],
            sends_value: Tristate::Unknown,
        })
        .collect();
    s.flow_facts = facts.into_iter().collect();
    s
}

impl RandomChain {
    /// Up to five frames, up to four facts per function.
    pub fn generate(rng: &mut impl Rng) -> Self {
        let frames = rng.gen_range(1..=5usize);
        let mut summaries = Vec::new();
        let mut callees = Vec::new();
        let mut links = Vec::new();
        let mut sender_is_entry = Vec::new();
        for i in 0..frames {
            let sites = rng.gen_range(1..=3u32);
            let n = rng.gen_range(0..=4);
            let facts: Vec<FlowFact> = (0..n).map(|_| random_fact(rng, sites)).collect();
            summaries.push(summary(sig(0x1000 + i as u32), sites, facts));
            let mut by_site = BTreeMap::new();
            for s in 0..sites {
                if rng.gen_bool(0.4) {
                    let n = rng.gen_range(0..=2);
                    let facts: Vec<FlowFact> = (0..n)
                        .map(|_| FlowFact::FuncArgToFuncRet {
                            arg: ArgSlot::Arg(rng.gen_range(0..POSITIONS)),
                            position: rng.gen_range(0..POSITIONS),
                        })
                        .collect();
                    by_site.insert(CallSiteId(s), summary(sig(0x2000 + s), 0, facts));
                }
            }
            callees.push(by_site);
            if i + 1 < frames {
                links.push((CallSiteId(rng.gen_range(0..sites)), OPCODES[rng.gen_range(0..4)]));
            }
            sender_is_entry.push(i > 0 && rng.gen_bool(0.5));
        }
        RandomChain {
            summaries,
            callees,
            links,
            sender_is_entry,
        }
    }

    pub fn view(&self) -> ChainView<'_> {
        let frames = self
            .summaries
            .iter()
            .enumerate()
            .map(|(i, s)| Frame {
                func: FnRef {
                    contract: ContractId::synthetic(0x77, i as u8),
                    function: s.selector,
                },
                summary: s,
                sender_is_entry: self.sender_is_entry[i],
                callees: self.callees[i].iter().map(|(k, v)| (*k, v)).collect(),
            })
            .collect();
        ChainView {
            frames,
            links: self.links.clone(),
        }
    }
}

/// Reachability matrix over every endpoint of hops `0..=last`, closed with
/// Warshall's algorithm.
pub struct Closure {
    points: Vec<Point>,
    index: BTreeMap<Point, usize>,
    reach: Vec<Vec<bool>>,
}

impl Closure {
    pub fn new(chain: &RandomChain, last: usize) -> Self {
        let mut points = Vec::new();
        for (h, s) in chain.summaries.iter().enumerate().take(last + 1) {
            for a in 0..ARGS {
                points.push((h, Endpoint::FuncArg { arg: ArgSlot::Arg(a) }));
            }
            points.push((h, Endpoint::FuncArg { arg: ArgSlot::Sender }));
            for p in 0..POSITIONS {
                points.push((h, Endpoint::FuncRet { position: p }));
            }
            for site in &s.call_sites {
                points.push((h, Endpoint::Callee { site: site.id }));
                points.push((h, Endpoint::CallRet { site: site.id }));
                for p in 0..POSITIONS {
                    points.push((h, Endpoint::CallArg { site: site.id, position: p }));
                }
            }
        }
        let index: BTreeMap<Point, usize> = points.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        let n = points.len();
        let mut reach = vec![vec![false; n]; n];
        for (i, row) in reach.iter_mut().enumerate() {
            row[i] = true;
        }
        let mut edge = |a: Point, b: Point| {
            reach[index[&a]][index[&b]] = true;
        };
        for (h, s) in chain.summaries.iter().enumerate().take(last + 1) {
            for f in &s.flow_facts {
                edge((h, f.source()), (h, f.sink()));
            }
            let link = chain.links.get(h).copied().filter(|_| h < last);
            for site in &s.call_sites {
                if let Some((l, op)) = link.filter(|(l, _)| *l == site.id) {
                    for p in 0..POSITIONS {
                        edge((h, Endpoint::CallArg { site: l, position: p }), (h + 1, Endpoint::FuncArg { arg: ArgSlot::Arg(p) }));
                        edge((h + 1, Endpoint::FuncRet { position: p }), (h, Endpoint::CallRet { site: l }));
                    }
                    if op == CallOpcode::DelegateCall {
                        edge((h, Endpoint::FuncArg { arg: ArgSlot::Sender }), (h + 1, Endpoint::FuncArg { arg: ArgSlot::Sender }));
                    }
                } else if let Some(callee) = chain.callees[h].get(&site.id) {
                    for f in &callee.flow_facts {
                        if let FlowFact::FuncArgToFuncRet { arg: ArgSlot::Arg(k), .. } = f {
                            edge(
                                (h, Endpoint::CallArg { site: site.id, position: *k }),
                                (h, Endpoint::CallRet { site: site.id }),
                            );
                        }
                    }
                }
            }
        }
        for k in 0..n {
            for i in 0..n {
                if reach[i][k] {
                    let via = reach[k].clone();
                    for (dst, r) in reach[i].iter_mut().zip(via) {
                        *dst |= r;
                    }
                }
            }
        }
        Closure { points, index, reach }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn reaches(&self, from: Point, to: Point) -> bool {
        match (self.index.get(&from), self.index.get(&to)) {
            (Some(&i), Some(&j)) => self.reach[i][j],
            _ => false,
        }
    }

    /// Sorted points reachable from `from`.
    pub fn reachable_from(&self, from: Point) -> Vec<Point> {
        let mut v: Vec<Point> = self.points.iter().copied().filter(|p| self.reaches(from, *p)).collect();
        v.sort();
        v
    }
}
