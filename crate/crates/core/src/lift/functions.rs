//! Public function recovery from the selector dispatcher.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::diag::{codes, Diagnostic};
use crate::disasm::Opcode;
use crate::lift::cfg::{BlockId, Cfg, JumpTarget};
use crate::lift::emulate::{step, StepOutcome};
use crate::lift::state::MachineState;
use crate::lift::value::{AbstractValue, CallDataRef};
use crate::types::{ContractId, FunctionSig, Selector};

/// One public entry point.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FunctionEntry {
    pub sig: FunctionSig,
    pub entry_block: BlockId,
    pub entry_offset: usize,
    /// Payability is not recovered; always `None`.
    pub payable: Option<bool>,
    /// Abstract state when control reaches `entry_block` from the dispatcher.
    #[serde(skip)]
    pub entry_state: MachineState,
}

/// A dispatcher branch taken when the selector matches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct DispatchEdge {
    pub jumpi_pc: usize,
    pub to: BlockId,
}

/// The contract's public function set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FunctionTable {
    pub contract: ContractId,
    /// Sorted by signature; `Fallback` is always present and last.
    pub functions: Vec<FunctionEntry>,
    #[serde(skip)]
    pub dispatch_edges: Vec<DispatchEdge>,
    #[serde(skip)]
    pub diagnostics: Vec<Diagnostic>,
}

impl FunctionTable {
    pub fn get(&self, sig: FunctionSig) -> Option<&FunctionEntry> {
        self.functions.iter().find(|f| f.sig == sig)
    }

    pub fn contains(&self, sig: FunctionSig) -> bool {
        self.get(sig).is_some()
    }

    pub fn sigs(&self) -> impl Iterator<Item = FunctionSig> + '_ {
        self.functions.iter().map(|f| f.sig)
    }

    /// The function a call with this selector lands in: the matching entry,
    /// or the fallback path.
    pub fn dispatch(&self, selector: Option<Selector>) -> FunctionSig {
        match selector {
            Some(s) if self.contains(FunctionSig::Selector(s)) => FunctionSig::Selector(s),
            _ => FunctionSig::Fallback,
        }
    }

    /// Whether the dispatcher edge `jumpi_pc -> to` is a selector match.
    pub fn is_dispatch_edge(&self, jumpi_pc: usize, to: BlockId) -> bool {
        self.dispatch_edges.binary_search(&DispatchEdge { jumpi_pc, to }).is_ok()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Shadow {
    None,
    /// Nonzero iff the selector equals (`eq`) or differs from (`!eq`) `sel`.
    Cmp { eq: bool, sel: u32 },
}

fn selector_compare(a: &AbstractValue, b: &AbstractValue) -> Option<u32> {
    let sel = AbstractValue::CallData(CallDataRef::Selector);
    let other = if *a == sel {
        b
    } else if *b == sel {
        a
    } else {
        return None;
    };
    other
        .as_const()
        .and_then(|w| Selector::from_word(&w))
        .map(Selector::as_u32)
}

/// Re-runs a block that ends in `JUMPI`, tracking which stack slots hold a
/// selector comparison. Returns the condition's shadow and the exit state.
fn dispatch_condition(cfg: &Cfg, id: BlockId, entry: &MachineState) -> Option<(Shadow, MachineState, usize, AbstractValue)> {
    let mut state = entry.clone();
    let mut shadow = vec![Shadow::None; state.stack.len()];
    let mut events = Vec::new();
    for ins in cfg.instructions(id) {
        let op = ins.opcode;
        let len = state.stack.len();
        let before = state.stack.clone();
        let cond_shadow = (op == Opcode::JUMPI && len >= 2).then(|| shadow[len - 2]);
        let outcome = step(&mut state, ins, &mut events).ok()?;
        match op {
            Opcode(0x80..=0x8f) => {
                let n = (op.0 - 0x7f) as usize;
                shadow.push(shadow[len - n]);
            }
            Opcode(0x90..=0x9f) => {
                let n = (op.0 - 0x8f) as usize;
                shadow.swap(len - 1, len - 1 - n);
            }
            Opcode::EQ | Opcode::XOR | Opcode::SUB => {
                let found = selector_compare(&before[len - 1], &before[len - 2]);
                shadow.truncate(len - 2);
                shadow.push(match found {
                    Some(sel) => Shadow::Cmp { eq: op == Opcode::EQ, sel },
                    None => Shadow::None,
                });
            }
            Opcode::ISZERO => {
                let top = shadow.pop().unwrap_or(Shadow::None);
                shadow.push(match top {
                    Shadow::Cmp { eq, sel } => Shadow::Cmp { eq: !eq, sel },
                    Shadow::None => Shadow::None,
                });
            }
            _ => {
                let keep = len.saturating_sub(op.stack_io().0);
                shadow.truncate(keep);
                shadow.resize(state.stack.len(), Shadow::None);
            }
        }
        if let StepOutcome::JumpI { target, .. } = outcome {
            return Some((cond_shadow.unwrap_or(Shadow::None), state, ins.offset, target));
        }
        if outcome != StepOutcome::Continue {
            return None;
        }
    }
    None
}

/// Recovers the public functions of a contract from its dispatcher.
pub fn identify_functions(cfg: &Cfg, contract: ContractId) -> FunctionTable {
    let mut found: BTreeMap<Selector, FunctionEntry> = BTreeMap::new();
    let mut dispatch_edges = Vec::new();
    for (id, block) in cfg.blocks.iter().enumerate() {
        let last = match cfg.instructions(id).last() {
            Some(ins) => ins,
            None => continue,
        };
        if last.opcode != Opcode::JUMPI {
            continue;
        }
        let Some(entry) = &cfg.entry_states[id] else {
            continue;
        };
        let Some((Shadow::Cmp { eq, sel }, exit, jumpi_pc, target)) = dispatch_condition(cfg, id, entry) else {
            continue;
        };
        let taken = match cfg.resolve_jump(&target) {
            JumpTarget::Block(b) => b,
            _ => continue,
        };
        let matched = if eq { Some(taken) } else { cfg.fallthrough(block.id) };
        let Some(matched) = matched else { continue };
        dispatch_edges.push(DispatchEdge { jumpi_pc, to: matched });
        let selector = Selector::from_u32(sel);
        found.entry(selector).or_insert_with(|| FunctionEntry {
            sig: FunctionSig::Selector(selector),
            entry_block: matched,
            entry_offset: cfg.blocks[matched].start_offset,
            payable: None,
            entry_state: exit,
        });
    }
    dispatch_edges.sort();
    dispatch_edges.dedup();

    let mut diagnostics = Vec::new();
    if found.is_empty() {
        diagnostics.push(
            Diagnostic::new(codes::NO_DISPATCHER, "no selector dispatcher found; only the fallback path is analyzed")
                .in_contract(contract),
        );
    }
    let mut functions: Vec<FunctionEntry> = found.into_values().collect();
    functions.push(FunctionEntry {
        sig: FunctionSig::Fallback,
        entry_block: 0,
        entry_offset: 0,
        payable: None,
        entry_state: MachineState::default(),
    });
    FunctionTable {
        contract,
        functions,
        dispatch_edges,
        diagnostics,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::Assembler;
    use crate::disasm::{disassemble, Bytecode};
    use crate::lift::cfg::build_cfg;

    fn table_of(code: Vec<u8>) -> FunctionTable {
        let cfg = build_cfg(disassemble(&Bytecode::runtime(code)));
        identify_functions(&cfg, ContractId::ZERO)
    }

    fn dispatcher(selectors: &[u32]) -> Vec<u8> {
        let mut a = Assembler::new();
        a.selector_dispatch(selectors.iter().map(|s| (*s, format!("f{s:x}"))).collect::<Vec<_>>().as_slice(), "fallback");
        a.label("fallback").op(Opcode::STOP);
        for s in selectors {
            a.label(&format!("f{s:x}")).op(Opcode::STOP);
        }
        a.build()
    }

    #[test]
    fn stop_only_has_fallback() {
        let table = table_of(vec![0x00]);
        assert_eq!(table.sigs().collect::<Vec<_>>(), vec![FunctionSig::Fallback]);
        assert_eq!(table.diagnostics[0].code, codes::NO_DISPATCHER);
    }

    #[test]
    fn recovers_erc721_receiver() {
        let table = table_of(dispatcher(&[0x150b7a02]));
        assert!(table.contains(FunctionSig::Selector(Selector::from_u32(0x150b7a02))));
        assert!(table.contains(FunctionSig::Fallback));
    }

    #[test]
    fn recovers_several_hooks() {
        let table = table_of(dispatcher(&[0xf23a6e61, 0x0023de29]));
        let sigs: Vec<_> = table.sigs().collect();
        assert_eq!(
            sigs,
            vec![
                FunctionSig::Selector(Selector::from_u32(0x0023de29)),
                FunctionSig::Selector(Selector::from_u32(0xf23a6e61)),
                FunctionSig::Fallback
            ]
        );
    }

    #[test]
    fn inequality_style_dispatch() {
        // selector != 0x12345678 jumps away; the fallthrough is the function
        let mut a = Assembler::new();
        a.push(0).op(Opcode::CALLDATALOAD).push(0xe0).op(Opcode::SHR);
        a.push(0x12345678).op(Opcode::XOR).push_label("fallback").op(Opcode::JUMPI);
        a.op(Opcode::STOP);
        a.label("fallback").op(Opcode::STOP);
        let table = table_of(a.build());
        let f = table.get(FunctionSig::Selector(Selector::from_u32(0x12345678))).unwrap();
        assert_eq!(f.entry_block, 1);
    }
}
