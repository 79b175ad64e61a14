#![allow(dead_code)]

use std::sync::Arc;

use hookwatch_core::asm::{Assembler, Body, CallSpec, Operand};
use hookwatch_core::disasm::Bytecode;
use hookwatch_core::flow::HookRegistry;
use hookwatch_core::xgraph::{build_xgraph, Resolver, XGraph};
use hookwatch_core::{
    analysis::analyze_code, AnalysisConfig, Analyzer, ChainClient, ContractAnalysis, ContractId, FixtureStore, FunctionSig,
    Selector, SummaryCache,
};

pub fn sel(signature: &str) -> u32 {
    Selector::from_signature(signature).as_u32()
}

pub fn sig(signature: &str) -> FunctionSig {
    Selector::from_signature(signature).into()
}

pub fn contract(functions: &[(u32, Body<'_>)]) -> Vec<u8> {
    Assembler::contract(functions, None).build()
}

pub fn analyze(id: ContractId, code: &[u8]) -> ContractAnalysis {
    analyze_code(id, &Bytecode::runtime(code.to_vec()), &HookRegistry::default())
}

/// `from.bar(v2)` calls `target.foo(address(this), v2)`,
/// `target.foo(v1, v2)` calls `v1.hook(v2)`, and `from.hook` calls
/// `target.foo` again.
pub struct Bounce {
    pub from: ContractId,
    pub target: ContractId,
    pub store: FixtureStore,
}

pub fn bounce() -> Bounce {
    let from = ContractId::synthetic(0x40, 1);
    let target = ContractId::synthetic(0x40, 2);
    let (bar, foo, hook) = (sel("bar(uint256)"), sel("foo(address,uint256)"), sel("hook(uint256)"));
    let mut store = FixtureStore::new();
    let bar_body = |a: &mut Assembler| {
        a.call(&CallSpec::call(Operand::Addr(target), foo, vec![Operand::SelfAddr, Operand::Arg(0)]), None);
    };
    let hook_body = |a: &mut Assembler| {
        a.call(&CallSpec::call(Operand::Addr(target), foo, vec![Operand::SelfAddr, Operand::Arg(0)]), None);
    };
    store.insert_code(from, contract(&[(bar, &bar_body), (hook, &hook_body)]));
    let foo_body = |a: &mut Assembler| {
        a.call(&CallSpec::call(Operand::Arg(0), hook, vec![Operand::Arg(1)]), None);
    };
    store.insert_code(target, contract(&[(foo, &foo_body)]));
    Bounce { from, target, store }
}

/// `n + 1` contracts, `C_i.f_i` calling `C_{i+1}.f_{i+1}`.
pub fn linear(n: u8) -> (Vec<ContractId>, Vec<u32>, FixtureStore) {
    let ids: Vec<ContractId> = (0..=n).map(|i| ContractId::synthetic(0x50, i + 1)).collect();
    let sels: Vec<u32> = (0..=n).map(|i| 0x5000_0000 + i as u32).collect();
    let mut store = FixtureStore::new();
    for i in 0..=n as usize {
        let body = |a: &mut Assembler| {
            if i < n as usize {
                a.call(&CallSpec::call(Operand::Addr(ids[i + 1]), sels[i + 1], vec![]), None);
            }
        };
        store.insert_code(ids[i], contract(&[(sels[i], &body)]));
    }
    (ids, sels, store)
}

pub struct Env {
    pub client: ChainClient,
    pub cache: SummaryCache,
    pub config: AnalysisConfig,
}

impl Env {
    pub fn new(store: FixtureStore) -> Self {
        Env {
            client: ChainClient::new(store),
            cache: SummaryCache::new(),
            config: AnalysisConfig::default(),
        }
    }

    pub fn analyzer(&self) -> Analyzer<'_> {
        Analyzer::new(&self.client, &self.cache, &self.config)
    }

    pub fn graph(&self, entry: ContractId, depth_limit: usize) -> XGraph {
        let analyzer = self.analyzer();
        let resolver = Resolver::new(analyzer, analyzer.analysis(entry).expect("entry"));
        build_xgraph(&resolver, depth_limit)
    }

    pub fn resolver(&self, entry: ContractId) -> Resolver<'_> {
        let analyzer = self.analyzer();
        Resolver::new(analyzer, Arc::clone(&analyzer.analysis(entry).expect("entry")))
    }
}
