//! Single-instruction abstract transfer over [`MachineState`].

use thiserror::Error;

use crate::disasm::{Instruction, Opcode};
use crate::lift::state::MachineState;
use crate::lift::value::{transfer, AbstractValue, CallDataRef};
use crate::types::Word;

const STACK_LIMIT: usize = 1024;
/// Words decoded from a call input or return payload of unknown length.
const MAX_PAYLOAD_WORDS: u64 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
pub enum EmulationError {
    #[error("stack underflow at pc {pc:#x}")]
    Underflow { pc: usize },
    #[error("stack overflow at pc {pc:#x}")]
    Overflow { pc: usize },
}

/// How control leaves an instruction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Continue,
    Jump(AbstractValue),
    JumpI {
        target: AbstractValue,
        condition: AbstractValue,
    },
    Halt,
}

/// A decoded external call.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CallEvent {
    pub pc: usize,
    pub opcode: Opcode,
    pub callee: AbstractValue,
    /// `None` for opcodes without a value operand.
    pub value: Option<AbstractValue>,
    /// First four input bytes.
    pub selector: AbstractValue,
    /// The input length is the constant 0.
    pub empty_input: bool,
    /// ABI head words following the selector.
    pub args: Vec<AbstractValue>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Event {
    Call(CallEvent),
    Return { pc: usize, payload: Vec<AbstractValue> },
    SStore { pc: usize, slot: AbstractValue, value: AbstractValue },
    /// `CALLER` took part in an equality test.
    SenderCompare { pc: usize },
}

fn pop(state: &mut MachineState, pc: usize) -> Result<AbstractValue, EmulationError> {
    state.stack.pop().ok_or(EmulationError::Underflow { pc })
}

fn pop_n(state: &mut MachineState, n: usize, pc: usize) -> Result<Vec<AbstractValue>, EmulationError> {
    if state.stack.len() < n {
        return Err(EmulationError::Underflow { pc });
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(state.stack.pop().expect("checked height"));
    }
    Ok(out)
}

fn push(state: &mut MachineState, v: AbstractValue, pc: usize) -> Result<(), EmulationError> {
    if state.stack.len() >= STACK_LIMIT {
        return Err(EmulationError::Overflow { pc });
    }
    state.stack.push(v);
    Ok(())
}

fn words(state: &MachineState, offset: u64, len: Option<u64>) -> Vec<AbstractValue> {
    let count = match len {
        Some(n) => n / 32,
        None => 0,
    };
    (0..count.min(MAX_PAYLOAD_WORDS))
        .map(|k| state.memory.read(offset + 32 * k, 32))
        .collect()
}

fn decode_call(
    state: &MachineState,
    pc: usize,
    opcode: Opcode,
    callee: AbstractValue,
    value: Option<AbstractValue>,
    in_offset: &AbstractValue,
    in_len: &AbstractValue,
) -> CallEvent {
    let len = in_len.as_u64();
    let empty_input = len == Some(0);
    let (selector, args) = match in_offset.as_u64() {
        Some(o) if !empty_input && len.is_none_or(|n| n >= 4) => {
            let selector = state.memory.read(o, 4);
            let args = words(state, o + 4, len.map(|n| n - 4));
            (selector, args)
        }
        _ => (AbstractValue::Top, Vec::new()),
    };
    CallEvent {
        pc,
        opcode,
        callee,
        value,
        selector,
        empty_input,
        args,
    }
}

/// Executes one instruction abstractly, appending any observable event.
pub fn step(
    state: &mut MachineState,
    ins: &Instruction,
    events: &mut Vec<Event>,
) -> Result<StepOutcome, EmulationError> {
    use AbstractValue::*;
    let pc = ins.offset;
    let op = ins.opcode;
    if let Some(v) = ins.push_value() {
        push(state, Const(v), pc)?;
        return Ok(StepOutcome::Continue);
    }
    if !op.is_known() {
        return Ok(StepOutcome::Halt);
    }
    match op {
        Opcode::PUSH0 => push(state, Const(Word::ZERO), pc)?,
        Opcode(0x80..=0x8f) => {
            let n = (op.0 - 0x7f) as usize;
            if state.stack.len() < n {
                return Err(EmulationError::Underflow { pc });
            }
            let v = state.stack[state.stack.len() - n].clone();
            push(state, v, pc)?;
        }
        Opcode(0x90..=0x9f) => {
            let n = (op.0 - 0x8f) as usize;
            if state.stack.len() <= n {
                return Err(EmulationError::Underflow { pc });
            }
            let top = state.stack.len() - 1;
            state.stack.swap(top, top - n);
        }
        Opcode::POP => {
            pop(state, pc)?;
        }
        Opcode::ADDRESS => push(state, EnvSelf, pc)?,
        Opcode::CALLER => push(state, EnvSender, pc)?,
        Opcode::CALLDATALOAD => {
            let off = pop(state, pc)?;
            let v = match off.as_u64() {
                Some(o) => CallData(CallDataRef::from_offset(o)),
                None => Top,
            };
            push(state, v, pc)?;
        }
        Opcode::CALLDATACOPY => {
            let args = pop_n(state, 3, pc)?;
            let v = match args[1].as_u64() {
                Some(src) => CallData(CallDataRef::Raw(src as u32)),
                None => Top,
            };
            state.memory.fill(&args[0], &args[2], v);
        }
        Opcode::CODECOPY | Opcode::MCOPY => {
            let args = pop_n(state, 3, pc)?;
            state.memory.fill(&args[0], &args[2], Top);
        }
        Opcode::EXTCODECOPY => {
            let args = pop_n(state, 4, pc)?;
            state.memory.fill(&args[1], &args[3], Top);
        }
        Opcode::RETURNDATACOPY => {
            let args = pop_n(state, 3, pc)?;
            let v = state.last_call.map_or(Top, CallReturn);
            state.memory.fill(&args[0], &args[2], v);
        }
        Opcode::SLOAD => {
            let slot = pop(state, pc)?;
            let v = match slot {
                Const(s) => StorageLoad(s),
                _ => Top,
            };
            push(state, v, pc)?;
        }
        Opcode::SSTORE => {
            let args = pop_n(state, 2, pc)?;
            let mut args = args.into_iter();
            let slot = args.next().expect("two operands");
            let value = args.next().expect("two operands");
            events.push(Event::SStore { pc, slot, value });
        }
        Opcode::MLOAD => {
            let off = pop(state, pc)?;
            let v = state.memory.mload(&off);
            push(state, v, pc)?;
        }
        Opcode::MSTORE => {
            let args = pop_n(state, 2, pc)?;
            state.memory.store(&args[0], 32, args[1].clone());
        }
        Opcode::MSTORE8 => {
            let args = pop_n(state, 2, pc)?;
            let byte = match &args[1] {
                Const(w) => Const(*w & Word::from(0xffu8)),
                _ => Top,
            };
            state.memory.store(&args[0], 1, byte);
        }
        Opcode::CALL | Opcode::CALLCODE => {
            let args = pop_n(state, 7, pc)?;
            let event = decode_call(state, pc, op, args[1].clone(), Some(args[2].clone()), &args[3], &args[4]);
            events.push(Event::Call(event));
            state.memory.fill(&args[5], &args[6], CallReturn(pc));
            state.last_call = Some(pc);
            push(state, CallReturn(pc), pc)?;
        }
        Opcode::DELEGATECALL | Opcode::STATICCALL => {
            let args = pop_n(state, 6, pc)?;
            let event = decode_call(state, pc, op, args[1].clone(), None, &args[2], &args[3]);
            events.push(Event::Call(event));
            state.memory.fill(&args[4], &args[5], CallReturn(pc));
            state.last_call = Some(pc);
            push(state, CallReturn(pc), pc)?;
        }
        Opcode::RETURN => {
            let args = pop_n(state, 2, pc)?;
            let payload = match args[0].as_u64() {
                Some(o) => words(state, o, args[1].as_u64()),
                None => Vec::new(),
            };
            events.push(Event::Return { pc, payload });
            return Ok(StepOutcome::Halt);
        }
        Opcode::JUMP => {
            let target = pop(state, pc)?;
            return Ok(StepOutcome::Jump(target));
        }
        Opcode::JUMPI => {
            let args = pop_n(state, 2, pc)?;
            let mut args = args.into_iter();
            let target = args.next().expect("two operands");
            let condition = args.next().expect("two operands");
            return Ok(StepOutcome::JumpI { target, condition });
        }
        _ => {
            let (inputs, outputs) = op.stack_io();
            let args = pop_n(state, inputs, pc)?;
            if op == Opcode::EQ && args.contains(&EnvSender) {
                events.push(Event::SenderCompare { pc });
            }
            if outputs == 1 {
                push(state, transfer(op, &args), pc)?;
            } else {
                for _ in 0..outputs {
                    push(state, Top, pc)?;
                }
            }
            if op.is_terminator() {
                return Ok(StepOutcome::Halt);
            }
        }
    }
    Ok(StepOutcome::Continue)
}
