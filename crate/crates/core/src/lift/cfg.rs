//! Basic blocks and jump edges.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::ops::Range;

use crate::diag::{codes, Diagnostic};
use crate::disasm::{Instruction, InstructionStream, Opcode};
use crate::lift::emulate::{step, EmulationError, Event, StepOutcome};
use crate::lift::state::MachineState;
use crate::lift::value::AbstractValue;

/// Abstract visits of one block before its entry state is widened.
pub const VISIT_CAP: u32 = 8;

pub type BlockId = usize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BasicBlock {
    pub id: BlockId,
    pub start_offset: usize,
    /// Indices into the instruction stream.
    pub range: Range<usize>,
    pub successors: Vec<BlockId>,
    /// A jump out of this block had a non-constant target.
    pub unresolved: bool,
}

/// Where a jump leads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JumpTarget {
    Block(BlockId),
    /// Constant target that is not a `JUMPDEST`.
    Invalid(usize),
    Unresolved,
}

/// Result of running one block from an entry state.
#[derive(Clone, Debug)]
pub struct BlockRun {
    pub exit: MachineState,
    pub events: Vec<Event>,
    pub outcome: StepOutcome,
    /// Offset of the last executed instruction.
    pub last_pc: usize,
}

#[derive(Clone, Debug)]
pub struct Cfg {
    pub stream: InstructionStream,
    pub blocks: Vec<BasicBlock>,
    /// Joined entry state per block after the fixpoint; `None` if unreached.
    pub entry_states: Vec<Option<MachineState>>,
    pub diagnostics: Vec<Diagnostic>,
    block_at: HashMap<usize, BlockId>,
}

impl Cfg {
    pub fn block(&self, id: BlockId) -> &BasicBlock {
        &self.blocks[id]
    }

    pub fn instructions(&self, id: BlockId) -> &[Instruction] {
        &self.stream.instructions[self.blocks[id].range.clone()]
    }

    /// Block starting at byte offset `offset`.
    pub fn block_at(&self, offset: usize) -> Option<BlockId> {
        self.block_at.get(&offset).copied()
    }

    /// Block that execution falls into after `id`, if any.
    pub fn fallthrough(&self, id: BlockId) -> Option<BlockId> {
        (id + 1 < self.blocks.len()).then_some(id + 1)
    }

    pub fn resolve_jump(&self, target: &AbstractValue) -> JumpTarget {
        match target.as_const() {
            Some(w) => {
                let offset = if w.bit_len() <= 32 { w.to::<usize>() } else { usize::MAX };
                match self.block_at(offset) {
                    Some(b) if self.instructions(b)[0].opcode == Opcode::JUMPDEST => JumpTarget::Block(b),
                    _ => JumpTarget::Invalid(offset),
                }
            }
            None => JumpTarget::Unresolved,
        }
    }

    /// Emulates block `id` from `entry`.
    pub fn run_block(&self, id: BlockId, entry: &MachineState) -> Result<BlockRun, EmulationError> {
        let mut state = entry.clone();
        let mut events = Vec::new();
        let mut outcome = StepOutcome::Continue;
        let mut last_pc = self.blocks[id].start_offset;
        for ins in self.instructions(id) {
            last_pc = ins.offset;
            outcome = step(&mut state, ins, &mut events)?;
            if outcome != StepOutcome::Continue {
                break;
            }
        }
        Ok(BlockRun {
            exit: state,
            events,
            outcome,
            last_pc,
        })
    }

    /// Successor blocks for a finished block run.
    pub fn successors_of(&self, id: BlockId, run: &BlockRun) -> (Vec<JumpTarget>, Option<BlockId>) {
        match &run.outcome {
            StepOutcome::Continue => (Vec::new(), self.fallthrough(id)),
            StepOutcome::Jump(t) => (vec![self.resolve_jump(t)], None),
            StepOutcome::JumpI { target, .. } => (vec![self.resolve_jump(target)], self.fallthrough(id)),
            StepOutcome::Halt => (Vec::new(), None),
        }
    }
}

fn partition(stream: &InstructionStream) -> (Vec<BasicBlock>, HashMap<usize, BlockId>) {
    let ins = &stream.instructions;
    let mut leaders = BTreeSet::new();
    if !ins.is_empty() {
        leaders.insert(0);
    }
    for (i, instr) in ins.iter().enumerate() {
        if instr.opcode == Opcode::JUMPDEST {
            leaders.insert(i);
        }
        if instr.opcode.ends_block() && i + 1 < ins.len() {
            leaders.insert(i + 1);
        }
    }
    let starts: Vec<usize> = leaders.into_iter().collect();
    let mut blocks = Vec::with_capacity(starts.len());
    let mut block_at = HashMap::with_capacity(starts.len());
    for (id, &start) in starts.iter().enumerate() {
        let end = starts.get(id + 1).copied().unwrap_or(ins.len());
        block_at.insert(ins[start].offset, id);
        blocks.push(BasicBlock {
            id,
            start_offset: ins[start].offset,
            range: start..end,
            successors: Vec::new(),
            unresolved: false,
        });
    }
    (blocks, block_at)
}

/// Splits the stream into blocks and resolves jump edges by abstract
/// emulation to a fixpoint from offset 0.
pub fn build_cfg(stream: InstructionStream) -> Cfg {
    let (blocks, block_at) = partition(&stream);
    let n = blocks.len();
    let mut cfg = Cfg {
        stream,
        blocks,
        entry_states: vec![None; n],
        diagnostics: Vec::new(),
        block_at,
    };
    if n == 0 {
        return cfg;
    }
    let mut successors: Vec<BTreeSet<BlockId>> = vec![BTreeSet::new(); n];
    let mut unresolved: BTreeSet<usize> = BTreeSet::new();
    let mut invalid: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut underflow: BTreeSet<usize> = BTreeSet::new();
    let mut capped: BTreeSet<BlockId> = BTreeSet::new();
    let mut visits = vec![0u32; n];
    let mut queued = vec![false; n];
    let mut work = VecDeque::new();
    cfg.entry_states[0] = Some(MachineState::default());
    work.push_back(0);
    queued[0] = true;

    while let Some(id) = work.pop_front() {
        queued[id] = false;
        let entry = cfg.entry_states[id].clone().expect("queued blocks have a state");
        let run = match cfg.run_block(id, &entry) {
            Ok(run) => run,
            Err(EmulationError::Underflow { pc }) | Err(EmulationError::Overflow { pc }) => {
                underflow.insert(pc);
                continue;
            }
        };
        let (jumps, fall) = cfg.successors_of(id, &run);
        let mut next = Vec::new();
        for j in jumps {
            match j {
                JumpTarget::Block(b) => next.push(b),
                JumpTarget::Invalid(t) => {
                    invalid.insert((run.last_pc, t));
                }
                JumpTarget::Unresolved => {
                    unresolved.insert(run.last_pc);
                    cfg.blocks[id].unresolved = true;
                }
            }
        }
        next.extend(fall);
        for succ in next {
            successors[id].insert(succ);
            let merged = match &cfg.entry_states[succ] {
                None => run.exit.clone(),
                Some(old) => {
                    let joined = old.join(&run.exit);
                    if joined == *old {
                        continue;
                    }
                    visits[succ] += 1;
                    if visits[succ] >= VISIT_CAP {
                        capped.insert(succ);
                        joined.widen()
                    } else {
                        joined
                    }
                }
            };
            if cfg.entry_states[succ].as_ref() == Some(&merged) {
                continue;
            }
            cfg.entry_states[succ] = Some(merged);
            if !queued[succ] {
                queued[succ] = true;
                work.push_back(succ);
            }
        }
    }

    for (block, succ) in cfg.blocks.iter_mut().zip(successors) {
        block.successors = succ.into_iter().collect();
    }
    if !unresolved.is_empty() {
        cfg.diagnostics.push(Diagnostic::new(
            codes::UNRESOLVED_JUMP,
            format!("{} jump(s) with non-constant targets", unresolved.len()),
        ));
    }
    for (pc, target) in invalid {
        cfg.diagnostics.push(
            Diagnostic::new(codes::INVALID_JUMP, format!("jump to {target:#x}, which is not a JUMPDEST")).at_pc(pc),
        );
    }
    for pc in underflow {
        cfg.diagnostics
            .push(Diagnostic::new(codes::PATH_INFEASIBLE, "stack underflow during emulation").at_pc(pc));
    }
    for b in capped {
        cfg.diagnostics.push(
            Diagnostic::new(codes::VISIT_CAP, "block state widened after visit cap").at_pc(cfg.blocks[b].start_offset),
        );
    }
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disasm::{disassemble, Bytecode};

    fn cfg_of(code: &[u8]) -> Cfg {
        build_cfg(disassemble(&Bytecode::runtime(code.to_vec())))
    }

    #[test]
    fn direct_jump_gives_one_edge() {
        // PUSH1 0x03 JUMP JUMPDEST STOP
        let cfg = cfg_of(&[0x60, 0x03, 0x56, 0x5b, 0x00]);
        assert_eq!(cfg.blocks.len(), 2);
        assert_eq!(cfg.blocks[0].successors, vec![1]);
        assert!(cfg.blocks[1].successors.is_empty());
        assert!(cfg.diagnostics.is_empty());
    }

    #[test]
    fn straight_line_is_one_block() {
        let cfg = cfg_of(&[0x60, 0x01, 0x60, 0x02, 0x01, 0x00]);
        assert_eq!(cfg.blocks.len(), 1);
        assert!(cfg.blocks[0].successors.is_empty());
    }

    #[test]
    fn jumpi_has_two_successors() {
        // CALLDATASIZE PUSH1 0x06 JUMPI STOP STOP JUMPDEST STOP
        let cfg = cfg_of(&[0x36, 0x60, 0x06, 0x57, 0x00, 0x00, 0x5b, 0x00]);
        assert_eq!(cfg.blocks[0].successors.len(), 2);
    }

    #[test]
    fn non_constant_target_is_unresolved() {
        // CALLDATASIZE JUMP
        let cfg = cfg_of(&[0x36, 0x56]);
        assert!(cfg.blocks[0].unresolved);
        assert!(cfg.blocks[0].successors.is_empty());
        assert_eq!(cfg.diagnostics[0].code, codes::UNRESOLVED_JUMP);
    }

    #[test]
    fn loops_terminate() {
        // 0: JUMPDEST PUSH1 1 ADD PUSH1 0 JUMP  -- counter grows forever
        let cfg = cfg_of(&[0x60, 0x00, 0x5b, 0x60, 0x01, 0x01, 0x60, 0x02, 0x56]);
        assert_eq!(cfg.blocks.len(), 2);
        assert_eq!(cfg.blocks[1].successors, vec![1]);
        assert_eq!(cfg.entry_states[1].as_ref().unwrap().stack, vec![AbstractValue::Top]);
    }

    #[test]
    fn blocks_partition_the_stream() {
        let cfg = cfg_of(&[0x36, 0x60, 0x06, 0x57, 0x00, 0x00, 0x5b, 0x00, 0xfe, 0x5b]);
        let total: usize = cfg.blocks.iter().map(|b| b.range.len()).sum();
        assert_eq!(total, cfg.stream.len());
    }
}
