mod common;

use common::*;
use hookwatch_core::asm::{Assembler, CallSpec, Operand};
use hookwatch_core::flow::{CallOpcode, CallSite, CallSiteId, Tristate};
use hookwatch_core::lift::{AbstractValue, CallDataRef};
use hookwatch_core::xgraph::{enumerate_call_chains, FnRef, Resolution, Truncation, UnresolvedReason};
use hookwatch_core::{ContractId, FixtureStore, FunctionSig, Selector, Word};

fn site(callee: AbstractValue, selector: Option<u32>) -> CallSite {
    CallSite {
        id: CallSiteId(0),
        pc: 0,
        host_function: FunctionSig::Fallback,
        call_opcode: CallOpcode::Call,
        callee,
        target_selector: selector.map(Selector::from_u32),
        empty_input: selector.is_none(),
        arg_values: Vec::new(),
        sends_value: Tristate::No,
    }
}

fn world() -> (ContractId, ContractId, FixtureStore) {
    let entry = ContractId::synthetic(0x60, 1);
    let victim = ContractId::synthetic(0x60, 2);
    let mut store = FixtureStore::new();
    store.insert_code(entry, vec![0x00]);
    let body = |_: &mut Assembler| {};
    store.insert_code(victim, contract(&[(0x150b7a02, &body)]));
    store.insert_storage(entry, Word::ZERO, victim.to_word());
    (entry, victim, store)
}

#[test]
fn constant_callee_resolves() {
    let (entry, victim, store) = world();
    let env = Env::new(store);
    let r = env.resolver(entry);
    let got = r.resolve(&site(AbstractValue::Const(victim.to_word()), Some(0x150b7a02)), entry, None);
    assert_eq!(got, Resolution::Resolved(FnRef::new(victim, Selector::from_u32(0x150b7a02).into())));
}

#[test]
fn storage_callee_reads_fixture_slot() {
    let (entry, victim, store) = world();
    let env = Env::new(store);
    let r = env.resolver(entry);
    let got = r.resolve(&site(AbstractValue::StorageLoad(Word::ZERO), Some(0x150b7a02)), entry, None);
    assert_eq!(got, Resolution::Resolved(FnRef::new(victim, Selector::from_u32(0x150b7a02).into())));
}

#[test]
fn calldata_callee_is_dynamic() {
    let (entry, _, store) = world();
    let env = Env::new(store);
    let r = env.resolver(entry);
    let got = r.resolve(&site(AbstractValue::CallData(CallDataRef::Arg(1)), Some(0x150b7a02)), entry, None);
    assert_eq!(got, Resolution::Unresolved(UnresolvedReason::Dynamic));
}

#[test]
fn entry_without_calls_has_no_edges() {
    let (entry, _, store) = world();
    let g = Env::new(store).graph(entry, 21);
    assert_eq!(g.contracts.len(), 1);
    assert!(g.edges.is_empty());
}

#[test]
fn bounce_topology() {
    let f = bounce();
    let g = Env::new(f.store).graph(f.from, 21);
    let bar = FnRef::new(f.from, sig("bar(uint256)"));
    let foo = FnRef::new(f.target, sig("foo(address,uint256)"));
    let from_bar: Vec<_> = g.out_edges(bar).collect();
    assert_eq!(from_bar.len(), 1);
    assert_eq!(from_bar[0].target(), foo);
    let dynamic: Vec<_> = g.unresolved.iter().filter(|u| u.caller == foo).collect();
    assert_eq!(dynamic.len(), 1);
    assert_eq!(dynamic[0].reason, UnresolvedReason::Dynamic);
}

#[test]
fn linear_three_contracts() {
    let (ids, sels, store) = linear(2);
    let g = Env::new(store).graph(ids[0], 21);
    assert_eq!(g.edges.len(), 2);
    let chains = enumerate_call_chains(&g, Selector::from_u32(sels[0]).into());
    assert_eq!(chains.len(), 1);
    assert_eq!(chains[0].len(), 2);
    assert_eq!(chains[0].truncation, Truncation::Complete);
    chains[0].validate().unwrap();
}

#[test]
fn single_edge_gives_one_chain() {
    let (ids, sels, store) = linear(1);
    let g = Env::new(store).graph(ids[0], 21);
    let chains = enumerate_call_chains(&g, Selector::from_u32(sels[0]).into());
    assert_eq!(chains.len(), 1);
    assert_eq!(chains[0].len(), 1);
}

#[test]
fn diamond_gives_two_chains() {
    let [a, b, c, d] = [1, 2, 3, 4].map(|i| ContractId::synthetic(0x70, i));
    let (f, g_, h, k) = (0xf0f0f0f0, 0x0a0a0a0a, 0x0b0b0b0b, 0x0c0c0c0c);
    let mut store = FixtureStore::new();
    let a_body = |x: &mut Assembler| {
        x.call(&CallSpec::call(Operand::Addr(b), g_, vec![]), None);
        x.call(&CallSpec::call(Operand::Addr(c), h, vec![]), None);
    };
    let to_d = |x: &mut Assembler| {
        x.call(&CallSpec::call(Operand::Addr(d), k, vec![]), None);
    };
    let leaf = |_: &mut Assembler| {};
    store.insert_code(a, contract(&[(f, &a_body)]));
    store.insert_code(b, contract(&[(g_, &to_d)]));
    store.insert_code(c, contract(&[(h, &to_d)]));
    store.insert_code(d, contract(&[(k, &leaf)]));
    let g = Env::new(store).graph(a, 21);
    let chains = enumerate_call_chains(&g, Selector::from_u32(f).into());
    assert_eq!(chains.len(), 2);
    assert!(chains.iter().all(|c| c.len() == 2 && c.frame(2).contract == d));
}

#[test]
fn depth_limit_caps_chain() {
    let (ids, sels, store) = linear(3);
    let g = Env::new(store).graph(ids[0], 2);
    let chains = enumerate_call_chains(&g, Selector::from_u32(sels[0]).into());
    assert_eq!(chains.len(), 1);
    assert_eq!(chains[0].len(), 2);
    assert_eq!(chains[0].truncation, Truncation::DepthCapped);
}

#[test]
fn cache_does_not_change_graph() {
    let f = bounce();
    let env = Env::new(f.store.clone());
    let first = serde_json::to_string(&env.graph(f.from, 21)).unwrap();
    let again = serde_json::to_string(&env.graph(f.from, 21)).unwrap();
    let mut cold = Env::new(f.store);
    cold.cache = hookwatch_core::SummaryCache::disabled();
    let uncached = serde_json::to_string(&cold.graph(f.from, 21)).unwrap();
    assert_eq!(first, again);
    assert_eq!(first, uncached);
}
