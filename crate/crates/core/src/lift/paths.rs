//! Path-sensitive exploration of one public function.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::hash::{Hash, Hasher};

use crate::diag::{codes, Diagnostic};
use crate::lift::cfg::{BlockId, Cfg, JumpTarget, VISIT_CAP};
use crate::lift::emulate::{step, EmulationError, Event, StepOutcome};
use crate::lift::functions::{FunctionEntry, FunctionTable};
use crate::lift::state::MachineState;
use crate::lift::value::AbstractValue;

/// Complete paths explored per function before falling back to joined states.
pub const PATH_CAP: usize = 256;
/// Instructions emulated per function across all paths.
const STEP_BUDGET: usize = 400_000;
/// Times one block may occur on a single path.
const BLOCK_REPEAT_CAP: u8 = VISIT_CAP as u8;

/// Everything observed while exploring a function.
#[derive(Clone, Debug, Default)]
pub struct Exploration {
    /// Events in discovery order, deduplicated.
    pub events: Vec<Event>,
    pub paths: usize,
    /// The path cap or step budget was hit and joined states were used.
    pub joined: bool,
    pub diagnostics: Vec<Diagnostic>,
}

fn state_hash(state: &MachineState) -> u64 {
    let mut h = DefaultHasher::new();
    state.stack.hash(&mut h);
    h.finish()
}

struct Frame {
    block: BlockId,
    state: MachineState,
    counts: HashMap<BlockId, u8>,
    seen: HashSet<(BlockId, u64)>,
}

#[derive(Default)]
struct Collector {
    events: Vec<Event>,
    seen: HashSet<Event>,
    unresolved: BTreeSet<usize>,
    invalid: BTreeSet<(usize, usize)>,
    infeasible: BTreeSet<usize>,
}

impl Collector {
    fn add(&mut self, events: Vec<Event>) {
        for e in events {
            if self.seen.insert(e.clone()) {
                self.events.push(e);
            }
        }
    }
}

/// Successors of a block run under path conditions: a constant `JUMPI`
/// condition selects one branch, and dispatcher matches are skipped when
/// exploring the fallback.
fn next_blocks(
    cfg: &Cfg,
    table: &FunctionTable,
    skip_dispatch: bool,
    id: BlockId,
    outcome: &StepOutcome,
    last_pc: usize,
    out: &mut Collector,
) -> Vec<BlockId> {
    let mut next = Vec::new();
    let push_target = |t: &AbstractValue, out: &mut Collector, next: &mut Vec<BlockId>| match cfg.resolve_jump(t) {
        JumpTarget::Block(b) => next.push(b),
        JumpTarget::Invalid(to) => {
            out.invalid.insert((last_pc, to));
        }
        JumpTarget::Unresolved => {
            out.unresolved.insert(last_pc);
        }
    };
    match outcome {
        StepOutcome::Continue => next.extend(cfg.fallthrough(id)),
        StepOutcome::Jump(t) => push_target(t, out, &mut next),
        StepOutcome::JumpI { target, condition } => {
            let known = condition.as_const().map(|c| !c.is_zero());
            if known != Some(false) {
                push_target(target, out, &mut next);
            }
            if known != Some(true) {
                next.extend(cfg.fallthrough(id));
            }
        }
        StepOutcome::Halt => {}
    }
    if skip_dispatch {
        next.retain(|b| !table.is_dispatch_edge(last_pc, *b));
    }
    next
}

/// Explores acyclic-in-state paths from `entry` (a block may recur on a path
/// only with a different stack, at most `VISIT_CAP` times). Falls back to a
/// joined fixpoint over the function's blocks when the path cap or step
/// budget is exceeded.
pub fn explore_function(cfg: &Cfg, table: &FunctionTable, entry: &FunctionEntry) -> Exploration {
    let skip_dispatch = entry.sig.is_fallback();
    let mut out = Collector::default();
    let mut paths = 0usize;
    let mut steps = 0usize;
    let mut overflow = false;
    if cfg.blocks.is_empty() {
        return Exploration::default();
    }
    let mut stack = vec![Frame {
        block: entry.entry_block,
        state: entry.entry_state.clone(),
        counts: HashMap::new(),
        seen: HashSet::new(),
    }];
    while let Some(mut frame) = stack.pop() {
        let key = (frame.block, state_hash(&frame.state));
        let count = frame.counts.entry(frame.block).or_insert(0);
        *count += 1;
        if *count > BLOCK_REPEAT_CAP || !frame.seen.insert(key) {
            paths += 1;
            continue;
        }
        steps += cfg.block(frame.block).range.len();
        if steps > STEP_BUDGET {
            overflow = true;
            break;
        }
        let run = match cfg.run_block(frame.block, &frame.state) {
            Ok(run) => run,
            Err(EmulationError::Underflow { pc }) | Err(EmulationError::Overflow { pc }) => {
                out.infeasible.insert(pc);
                paths += 1;
                continue;
            }
        };
        out.add(run.events.clone());
        let next = next_blocks(cfg, table, skip_dispatch, frame.block, &run.outcome, run.last_pc, &mut out);
        if next.is_empty() {
            paths += 1;
            if paths > PATH_CAP {
                overflow = true;
                break;
            }
            continue;
        }
        for b in next.into_iter().rev() {
            stack.push(Frame {
                block: b,
                state: run.exit.clone(),
                counts: frame.counts.clone(),
                seen: frame.seen.clone(),
            });
        }
    }

    let mut diagnostics = Vec::new();
    if overflow {
        diagnostics.push(
            Diagnostic::new(
                codes::PATH_CAP,
                format!("more than {PATH_CAP} paths; using joined block states"),
            )
            .in_function(entry.sig),
        );
        out.events.clear();
        out.seen.clear();
        joined_fixpoint(cfg, table, entry, &mut out);
    }
    if !out.unresolved.is_empty() {
        diagnostics.push(
            Diagnostic::new(
                codes::UNRESOLVED_JUMP,
                format!("{} jump(s) with non-constant targets", out.unresolved.len()),
            )
            .in_function(entry.sig),
        );
    }
    for (pc, to) in &out.invalid {
        diagnostics.push(
            Diagnostic::new(codes::INVALID_JUMP, format!("jump to {to:#x}, which is not a JUMPDEST"))
                .at_pc(*pc)
                .in_function(entry.sig),
        );
    }
    for pc in &out.infeasible {
        diagnostics.push(
            Diagnostic::new(codes::PATH_INFEASIBLE, "stack underflow; path dropped")
                .at_pc(*pc)
                .in_function(entry.sig),
        );
    }
    Exploration {
        events: out.events,
        paths,
        joined: overflow,
        diagnostics,
    }
}

/// Block-level worklist from the function entry; events are collected from
/// one final run of every reached block.
fn joined_fixpoint(cfg: &Cfg, table: &FunctionTable, entry: &FunctionEntry, out: &mut Collector) {
    let n = cfg.blocks.len();
    let mut states: Vec<Option<MachineState>> = vec![None; n];
    let mut visits = vec![0u32; n];
    let mut queued = vec![false; n];
    let mut work = VecDeque::new();
    states[entry.entry_block] = Some(entry.entry_state.clone());
    work.push_back(entry.entry_block);
    queued[entry.entry_block] = true;
    let skip_dispatch = entry.sig.is_fallback();
    while let Some(id) = work.pop_front() {
        queued[id] = false;
        let state = states[id].clone().expect("queued blocks have a state");
        let Ok(run) = cfg.run_block(id, &state) else { continue };
        for succ in next_blocks(cfg, table, skip_dispatch, id, &run.outcome, run.last_pc, out) {
            let merged = match &states[succ] {
                None => run.exit.clone(),
                Some(old) => {
                    let joined = old.join(&run.exit);
                    if joined == *old {
                        continue;
                    }
                    visits[succ] += 1;
                    if visits[succ] >= VISIT_CAP {
                        joined.widen()
                    } else {
                        joined
                    }
                }
            };
            if states[succ].as_ref() == Some(&merged) {
                continue;
            }
            states[succ] = Some(merged);
            if !queued[succ] {
                queued[succ] = true;
                work.push_back(succ);
            }
        }
    }
    for (id, state) in states.iter().enumerate() {
        if let Some(state) = state {
            if let Ok(run) = cfg.run_block(id, state) {
                out.add(run.events);
            }
        }
    }
}

/// Abstract stack before each instruction along an explicit block path.
/// An underflow anywhere makes the path infeasible.
pub fn emulate_path(
    cfg: &Cfg,
    path: &[BlockId],
    initial: MachineState,
) -> Result<Vec<(usize, Vec<AbstractValue>)>, EmulationError> {
    let mut state = initial;
    let mut out = Vec::new();
    let mut events = Vec::new();
    for &id in path {
        for ins in cfg.instructions(id) {
            out.push((ins.offset, state.stack.clone()));
            if step(&mut state, ins, &mut events)? != StepOutcome::Continue {
                break;
            }
        }
    }
    Ok(out)
}

/// Convenience for tests: the stack just before the first instruction at
/// `pc` along `path`.
pub fn stack_at(trace: &[(usize, Vec<AbstractValue>)], pc: usize) -> Option<&[AbstractValue]> {
    trace.iter().find(|(p, _)| *p == pc).map(|(_, s)| s.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::Assembler;
    use crate::disasm::{disassemble, Bytecode, Opcode};
    use crate::lift::cfg::build_cfg;
    use crate::lift::functions::identify_functions;
    use crate::lift::value::CallDataRef;
    use crate::types::{ContractId, Word};

    fn call_callees(code: Vec<u8>) -> Vec<AbstractValue> {
        let cfg = build_cfg(disassemble(&Bytecode::runtime(code)));
        let table = identify_functions(&cfg, ContractId::ZERO);
        let fallback = table.functions.last().unwrap();
        explore_function(&cfg, &table, fallback)
            .events
            .into_iter()
            .filter_map(|e| match e {
                Event::Call(c) => Some(c.callee),
                _ => None,
            })
            .collect()
    }

    fn plain_call(a: &mut Assembler) {
        // out len, out off, in len, in off, value; callee already pushed below gas
        a.push(0).push(0).push(0).push(0).push(0);
        a.op(Opcode::swap(5)).op(Opcode::GAS).op(Opcode::CALL).op(Opcode::POP);
    }

    #[test]
    fn constant_callee() {
        let victim = ContractId::synthetic(0xaa, 1);
        let mut a = Assembler::new();
        a.push_addr(victim);
        plain_call(&mut a);
        a.op(Opcode::STOP);
        assert_eq!(call_callees(a.build()), vec![AbstractValue::address(victim)]);
    }

    #[test]
    fn storage_callee() {
        let mut a = Assembler::new();
        a.push(0).op(Opcode::SLOAD);
        plain_call(&mut a);
        a.op(Opcode::STOP);
        assert_eq!(call_callees(a.build()), vec![AbstractValue::StorageLoad(Word::ZERO)]);
    }

    #[test]
    fn argument_callee() {
        let mut a = Assembler::new();
        a.push(4).op(Opcode::CALLDATALOAD);
        plain_call(&mut a);
        a.op(Opcode::STOP);
        assert_eq!(call_callees(a.build()), vec![AbstractValue::CallData(CallDataRef::Arg(0))]);
    }

    #[test]
    fn memory_routed_callee_degrades() {
        let mut a = Assembler::new();
        a.push(4).op(Opcode::CALLDATALOAD).push(0x80).op(Opcode::MSTORE);
        a.push(0x20).op(Opcode::CALLDATALOAD).push(0xa0).op(Opcode::MSTORE);
        a.push(0x80).op(Opcode::MLOAD);
        plain_call(&mut a);
        a.op(Opcode::STOP);
        assert_eq!(call_callees(a.build()), vec![AbstractValue::Top]);
    }

    #[test]
    fn branches_are_explored_separately() {
        // if calldatasize: call slot 0 else call slot 1
        let mut a = Assembler::new();
        a.op(Opcode::CALLDATASIZE).push_label("other").op(Opcode::JUMPI);
        a.push(0).op(Opcode::SLOAD).push_label("join").op(Opcode::JUMP);
        a.label("other").push(1).op(Opcode::SLOAD);
        a.label("join");
        plain_call(&mut a);
        a.op(Opcode::STOP);
        let mut callees = call_callees(a.build());
        callees.sort();
        assert_eq!(
            callees,
            vec![AbstractValue::StorageLoad(Word::ZERO), AbstractValue::StorageLoad(Word::from(1u8))]
        );
    }

    #[test]
    fn internal_function_returns_resolve_per_path() {
        // two calls into a shared helper that returns to different sites
        let mut a = Assembler::new();
        a.push_label("r1").push_label("helper").op(Opcode::JUMP);
        a.label("r1").push_label("r2").push_label("helper").op(Opcode::JUMP);
        a.label("r2").op(Opcode::STOP);
        a.label("helper").op(Opcode::JUMP);
        let cfg = build_cfg(disassemble(&Bytecode::runtime(a.build())));
        let table = identify_functions(&cfg, ContractId::ZERO);
        let ex = explore_function(&cfg, &table, table.functions.last().unwrap());
        assert!(!ex.joined);
        assert!(ex.diagnostics.iter().all(|d| d.code != codes::UNRESOLVED_JUMP));
    }

    #[test]
    fn path_trace_reports_callee_slot() {
        let victim = ContractId::synthetic(0xbb, 2);
        let mut a = Assembler::new();
        a.push_addr(victim);
        plain_call(&mut a);
        a.op(Opcode::STOP);
        let cfg = build_cfg(disassemble(&Bytecode::runtime(a.build())));
        let call_pc = cfg.stream.instructions.iter().find(|i| i.opcode == Opcode::CALL).unwrap().offset;
        let trace = emulate_path(&cfg, &[0], MachineState::default()).unwrap();
        let stack = stack_at(&trace, call_pc).unwrap();
        assert_eq!(stack[stack.len() - 2], AbstractValue::address(victim));
    }

    #[test]
    fn underflowing_path_is_infeasible() {
        let cfg = build_cfg(disassemble(&Bytecode::runtime(vec![0x50])));
        assert!(emulate_path(&cfg, &[0], MachineState::default()).is_err());
    }
}
