mod common;

use std::collections::BTreeSet;

use common::*;
use hookwatch_core::asm::{Assembler, CallSpec, Operand, RET_BUFFER};
use hookwatch_core::disasm::{disassemble, Bytecode, Opcode};
use hookwatch_core::flow::{ArgSlot, CallSiteId, FlowFact};
use hookwatch_core::lift::build_cfg;
use hookwatch_core::xgraph::{enumerate_call_chains, FnRef};
use hookwatch_core::{detect, ContractId, DetectOptions, EntryInput, FixtureStore, Selector, SummaryCache};
use proptest::prelude::*;

proptest! {
    #[test]
    fn disassembly_round_trips(bytes in proptest::collection::vec(any::<u8>(), 0..2048)) {
        let s = disassemble(&Bytecode::runtime(bytes.clone()));
        prop_assert_eq!(s.serialize(), bytes.clone());
        prop_assert_eq!(s, disassemble(&Bytecode::runtime(bytes)));
    }

    #[test]
    fn offsets_follow_widths(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
        let s = disassemble(&Bytecode::runtime(bytes));
        let mut next = 0;
        for ins in &s.instructions {
            prop_assert_eq!(ins.offset, next);
            let imm = ins.immediate.as_ref().map_or(0, Vec::len);
            prop_assert!(imm <= ins.opcode.push_width());
            prop_assert_eq!(ins.immediate.is_some(), ins.opcode.is_push());
            next = ins.offset + 1 + imm;
        }
    }

    #[test]
    fn blocks_partition_stream(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
        let s = disassemble(&Bytecode::runtime(bytes));
        let n = s.len();
        let cfg = build_cfg(s);
        let total: usize = cfg.blocks.iter().map(|b| b.range.len()).sum();
        prop_assert_eq!(total, n);
    }
}

#[derive(Clone, Debug)]
enum Arg {
    Const,
    Input(u32),
    Sender,
    SelfAddr,
    LastReturn,
}

#[derive(Clone, Debug)]
struct RandomCall {
    opcode: u8,
    callee: Arg,
    args: Vec<Arg>,
}

fn arg_strategy() -> impl Strategy<Value = Arg> {
    prop_oneof![
        Just(Arg::Const),
        (0u32..3).prop_map(Arg::Input),
        Just(Arg::Sender),
        Just(Arg::SelfAddr),
        Just(Arg::LastReturn),
    ]
}

fn call_strategy() -> impl Strategy<Value = RandomCall> {
    (0u8..3, arg_strategy(), proptest::collection::vec(arg_strategy(), 0..3))
        .prop_map(|(opcode, callee, args)| RandomCall { opcode, callee, args })
}

fn operand(a: &Arg, has_prev: bool) -> Operand {
    match a {
        Arg::Const => Operand::int(7),
        Arg::Input(k) => Operand::Arg(*k),
        Arg::Sender => Operand::Sender,
        Arg::SelfAddr => Operand::SelfAddr,
        Arg::LastReturn if has_prev => Operand::Mem(RET_BUFFER),
        Arg::LastReturn => Operand::int(9),
    }
}

fn slot(a: &Arg) -> Option<ArgSlot> {
    match a {
        Arg::Input(k) => Some(ArgSlot::Arg(*k)),
        Arg::Sender => Some(ArgSlot::Sender),
        _ => None,
    }
}

/// Facts derived by hand from the call list.
fn expected_facts(calls: &[RandomCall]) -> BTreeSet<FlowFact> {
    let mut out = BTreeSet::new();
    for (i, c) in calls.iter().enumerate() {
        let site = CallSiteId(i as u32);
        let prev = (i > 0).then(|| CallSiteId(i as u32 - 1));
        if let Some(arg) = slot(&c.callee) {
            out.insert(FlowFact::FuncArgToCallee { arg, site });
        }
        for (p, a) in c.args.iter().enumerate() {
            let position = p as u32;
            if let Some(arg) = slot(a) {
                out.insert(FlowFact::FuncArgToCallArg { arg, site, position });
            } else if let (Arg::LastReturn, Some(from)) = (a, prev) {
                out.insert(FlowFact::CallRetToCallArg { from, site, position });
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn facts_match_hand_derivation(calls in proptest::collection::vec(call_strategy(), 0..4)) {
        let body = |a: &mut Assembler| {
            for (i, c) in calls.iter().enumerate() {
                let callee = operand(&c.callee, i > 0);
                let args = c.args.iter().map(|x| operand(x, i > 0)).collect();
                let spec = match c.opcode {
                    0 => CallSpec::call(callee, 0x11223344, args),
                    1 => CallSpec::staticcall(callee, 0x11223344, args),
                    _ => CallSpec::delegatecall(callee, 0x11223344, args),
                };
                a.call(&spec, None);
            }
        };
        let code = contract(&[(0x0badf00d, &body)]);
        let a = analyze(ContractId::synthetic(0x90, 1), &code);
        let s = a.summary(Selector::from_u32(0x0badf00d).into()).unwrap();
        prop_assert_eq!(s.call_sites.len(), calls.len());
        s.validate().map_err(TestCaseError::fail)?;
        prop_assert_eq!(&s.flow_facts, &expected_facts(&calls));
    }
}

/// Contracts `0..n`, contract `i` calling every contract in `targets[i]`
/// through its single function.
fn call_graph(targets: &[Vec<usize>]) -> (Vec<ContractId>, FixtureStore) {
    let ids: Vec<ContractId> = (0..targets.len()).map(|i| ContractId::synthetic(0x91, i as u8 + 1)).collect();
    let mut store = FixtureStore::new();
    for (i, ts) in targets.iter().enumerate() {
        let body = |a: &mut Assembler| {
            for t in ts {
                a.call(&CallSpec::call(Operand::Addr(ids[*t]), 0x7000_0000 + *t as u32, vec![]), None);
            }
        };
        store.insert_code(ids[i], contract(&[(0x7000_0000 + i as u32, &body)]));
    }
    (ids, store)
}

fn graph_strategy() -> impl Strategy<Value = Vec<Vec<usize>>> {
    (2usize..5).prop_flat_map(|n| proptest::collection::vec(proptest::collection::vec(0..n, 0..3), n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chains_agree_with_graph(targets in graph_strategy()) {
        let (ids, store) = call_graph(&targets);
        let env = Env::new(store.clone());
        let g = env.graph(ids[0], 21);
        let edges: BTreeSet<_> = g.edges.iter().cloned().collect();
        let mut covered = BTreeSet::new();
        for f in &g.entry_functions {
            for chain in enumerate_call_chains(&g, *f) {
                chain.validate().map_err(TestCaseError::fail)?;
                let mut seen = std::collections::BTreeMap::<FnRef, usize>::new();
                *seen.entry(chain.root).or_default() += 1;
                for e in &chain.edges {
                    prop_assert!(edges.contains(e));
                    covered.insert(e.clone());
                    *seen.entry(e.target()).or_default() += 1;
                }
                prop_assert!(seen.values().all(|&n| n <= 2));
            }
        }
        prop_assert_eq!(covered, edges);

        let mut cold = Env::new(store);
        cold.cache = SummaryCache::disabled();
        prop_assert_eq!(serde_json::to_string(&g).unwrap(), serde_json::to_string(&cold.graph(ids[0], 21)).unwrap());
    }

    #[test]
    fn reports_are_deterministic(targets in graph_strategy()) {
        let (ids, store) = call_graph(&targets);
        let env = Env::new(store);
        let run = || detect(env.analyzer(), EntryInput::Address(ids[0]), &DetectOptions { emit_xgraph: true })
            .unwrap()
            .to_json_untimed();
        let first = run();
        prop_assert_eq!(first, run());
    }
}

#[test]
fn last_return_callee_has_no_fact() {
    let body = |a: &mut Assembler| {
        a.call(&CallSpec::call(Operand::int(1), 0x01010101, vec![]), None);
        a.call(&CallSpec::call(Operand::Mem(RET_BUFFER), 0x02020202, vec![]), None);
        a.op(Opcode::STOP);
    };
    let a = analyze(ContractId::synthetic(0x92, 1), &contract(&[(0x0c0c0c0c, &body)]));
    assert!(a.summary(Selector::from_u32(0x0c0c0c0c).into()).unwrap().flow_facts.is_empty());
}
