//! A concrete interpreter for the opcode subset the fixtures use. It runs a
//! transaction against a fixture store and records every message call, so
//! tests can check what a fixture actually does independently of the
//! static analysis.

use std::fmt;

use hookwatch_core::chain::FixtureStore;
use hookwatch_core::disasm::Opcode;
use hookwatch_core::{ContractId, FunctionSig, Selector, Word};

const MAX_DEPTH: usize = 64;
const STEP_LIMIT: usize = 2_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InterpError {
    Unsupported { pc: usize, opcode: u8 },
    StepLimit,
}

impl fmt::Display for InterpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InterpError::Unsupported { pc, opcode } => write!(f, "unsupported opcode {opcode:#04x} at {pc}"),
            InterpError::StepLimit => f.write_str("step limit reached"),
        }
    }
}

impl std::error::Error for InterpError {}

/// One message call made during execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallRecord {
    pub depth: usize,
    pub caller: ContractId,
    /// Contract whose code runs.
    pub code: ContractId,
    /// Contract whose storage and address apply.
    pub context: ContractId,
    pub opcode: Opcode,
    pub function: FunctionSig,
    pub input: Vec<u8>,
    /// `(code, function)` was already executing when this call started.
    pub reentered: bool,
}

#[derive(Debug, Clone)]
pub struct Execution {
    pub success: bool,
    pub output: Vec<u8>,
    pub calls: Vec<CallRecord>,
    pub state: FixtureStore,
}

impl Execution {
    /// Functions entered while already active, excluding read-only
    /// (`STATICCALL`) entries.
    pub fn reentered(&self) -> Vec<(ContractId, FunctionSig)> {
        let mut v: Vec<_> = self
            .calls
            .iter()
            .filter(|c| c.reentered && c.opcode != Opcode::STATICCALL)
            .map(|c| (c.code, c.function))
            .collect();
        v.sort();
        v.dedup();
        v
    }
}

pub fn function_of(input: &[u8]) -> FunctionSig {
    if input.len() < 4 {
        FunctionSig::Fallback
    } else {
        FunctionSig::Selector(Selector::from_u32(u32::from_be_bytes(input[..4].try_into().expect("4 bytes"))))
    }
}

/// ABI calldata: selector followed by 32-byte words.
pub fn calldata(selector: u32, words: &[Word]) -> Vec<u8> {
    let mut out = selector.to_be_bytes().to_vec();
    for w in words {
        out.extend_from_slice(&w.to_be_bytes::<32>());
    }
    out
}

struct Machine {
    state: FixtureStore,
    calls: Vec<CallRecord>,
    active: Vec<(ContractId, FunctionSig)>,
    steps: usize,
}

fn word_at(data: &[u8], offset: Word) -> Word {
    let mut buf = [0u8; 32];
    if let Ok(o) = usize::try_from(offset) {
        for (i, b) in buf.iter_mut().enumerate() {
            if let Some(x) = o.checked_add(i).and_then(|j| data.get(j)) {
                *b = *x;
            }
        }
    }
    Word::from_be_bytes(buf)
}

fn as_usize(w: Word) -> usize {
    usize::try_from(w).unwrap_or(usize::MAX)
}

fn ensure(mem: &mut Vec<u8>, offset: usize, len: usize) {
    if len > 0 && offset + len > mem.len() {
        mem.resize((offset + len).div_ceil(32) * 32, 0);
    }
}

fn copy_into(mem: &mut Vec<u8>, dst: usize, src: &[u8], src_off: usize, len: usize) {
    ensure(mem, dst, len);
    for i in 0..len {
        mem[dst + i] = src_off.checked_add(i).and_then(|j| src.get(j)).copied().unwrap_or(0);
    }
}

impl Machine {
    #[allow(clippy::too_many_arguments)]
    fn call(
        &mut self,
        caller: ContractId,
        code_addr: ContractId,
        context: ContractId,
        opcode: Opcode,
        input: Vec<u8>,
        value: Word,
        depth: usize,
    ) -> Result<(bool, Vec<u8>), InterpError> {
        let function = function_of(&input);
        let reentered = self.active.contains(&(code_addr, function));
        self.calls.push(CallRecord {
            depth,
            caller,
            code: code_addr,
            context,
            opcode,
            function,
            input: input.clone(),
            reentered,
        });
        if depth > MAX_DEPTH {
            return Ok((false, Vec::new()));
        }
        let code = self.state.code_of(code_addr).to_vec();
        if code.is_empty() {
            return Ok((true, Vec::new()));
        }
        let snapshot = self.state.clone();
        self.active.push((code_addr, function));
        let result = self.run(&code, caller, context, &input, value, depth);
        self.active.pop();
        match result {
            Ok((true, out)) => Ok((true, out)),
            Ok((false, out)) => {
                self.state = snapshot;
                Ok((false, out))
            }
            Err(e) => Err(e),
        }
    }

    fn run(
        &mut self,
        code: &[u8],
        caller: ContractId,
        this: ContractId,
        input: &[u8],
        value: Word,
        depth: usize,
    ) -> Result<(bool, Vec<u8>), InterpError> {
        let mut stack: Vec<Word> = Vec::new();
        let mut mem: Vec<u8> = Vec::new();
        let mut ret: Vec<u8> = Vec::new();
        let mut pc = 0usize;
        macro_rules! pop {
            () => {
                match stack.pop() {
                    Some(v) => v,
                    None => return Ok((false, Vec::new())),
                }
            };
        }
        let bool_word = |b: bool| if b { Word::from(1u64) } else { Word::ZERO };
        while pc < code.len() {
            self.steps += 1;
            if self.steps > STEP_LIMIT {
                return Err(InterpError::StepLimit);
            }
            let op = Opcode(code[pc]);
            let mut next = pc + 1;
            match op {
                Opcode::STOP => return Ok((true, Vec::new())),
                Opcode::ADD => {
                    let (a, b) = (pop!(), pop!());
                    stack.push(a.wrapping_add(b));
                }
                Opcode::MUL => {
                    let (a, b) = (pop!(), pop!());
                    stack.push(a.wrapping_mul(b));
                }
                Opcode::SUB => {
                    let (a, b) = (pop!(), pop!());
                    stack.push(a.wrapping_sub(b));
                }
                Opcode::DIV => {
                    let (a, b) = (pop!(), pop!());
                    stack.push(if b.is_zero() { Word::ZERO } else { a / b });
                }
                Opcode::LT => {
                    let (a, b) = (pop!(), pop!());
                    stack.push(bool_word(a < b));
                }
                Opcode::GT => {
                    let (a, b) = (pop!(), pop!());
                    stack.push(bool_word(a > b));
                }
                Opcode::EQ => {
                    let (a, b) = (pop!(), pop!());
                    stack.push(bool_word(a == b));
                }
                Opcode::ISZERO => {
                    let a = pop!();
                    stack.push(bool_word(a.is_zero()));
                }
                Opcode::AND => {
                    let (a, b) = (pop!(), pop!());
                    stack.push(a & b);
                }
                Opcode::OR => {
                    let (a, b) = (pop!(), pop!());
                    stack.push(a | b);
                }
                Opcode::XOR => {
                    let (a, b) = (pop!(), pop!());
                    stack.push(a ^ b);
                }
                Opcode::NOT => {
                    let a = pop!();
                    stack.push(!a);
                }
                Opcode::SHL => {
                    let (s, v) = (pop!(), pop!());
                    stack.push(if s >= Word::from(256u64) { Word::ZERO } else { v << as_usize(s) });
                }
                Opcode::SHR => {
                    let (s, v) = (pop!(), pop!());
                    stack.push(if s >= Word::from(256u64) { Word::ZERO } else { v >> as_usize(s) });
                }
                Opcode::ADDRESS => stack.push(this.to_word()),
                Opcode::CALLER => stack.push(caller.to_word()),
                Opcode::CALLVALUE => stack.push(value),
                Opcode::CALLDATALOAD => {
                    let o = pop!();
                    stack.push(word_at(input, o));
                }
                Opcode::CALLDATASIZE => stack.push(Word::from(input.len())),
                Opcode::CALLDATACOPY => {
                    let (dst, src, len) = (as_usize(pop!()), as_usize(pop!()), as_usize(pop!()));
                    copy_into(&mut mem, dst, input, src, len);
                }
                Opcode::RETURNDATASIZE => stack.push(Word::from(ret.len())),
                Opcode::RETURNDATACOPY => {
                    let (dst, src, len) = (as_usize(pop!()), as_usize(pop!()), as_usize(pop!()));
                    let data = ret.clone();
                    copy_into(&mut mem, dst, &data, src, len);
                }
                Opcode::EXTCODESIZE => {
                    let a = ContractId::from_word(&pop!());
                    stack.push(Word::from(self.state.code_of(a).len()));
                }
                Opcode::POP => {
                    pop!();
                }
                Opcode::MLOAD => {
                    let o = as_usize(pop!());
                    ensure(&mut mem, o, 32);
                    stack.push(word_at(&mem, Word::from(o)));
                }
                Opcode::MSTORE => {
                    let (o, v) = (as_usize(pop!()), pop!());
                    ensure(&mut mem, o, 32);
                    mem[o..o + 32].copy_from_slice(&v.to_be_bytes::<32>());
                }
                Opcode::MSTORE8 => {
                    let (o, v) = (as_usize(pop!()), pop!());
                    ensure(&mut mem, o, 1);
                    mem[o] = v.to_be_bytes::<32>()[31];
                }
                Opcode::SLOAD => {
                    let s = pop!();
                    stack.push(self.state.storage_of(this, s));
                }
                Opcode::SSTORE => {
                    let (s, v) = (pop!(), pop!());
                    self.state.insert_storage(this, s, v);
                }
                Opcode::JUMP => {
                    let t = as_usize(pop!());
                    if code.get(t) != Some(&Opcode::JUMPDEST.0) {
                        return Ok((false, Vec::new()));
                    }
                    next = t;
                }
                Opcode::JUMPI => {
                    let (t, c) = (as_usize(pop!()), pop!());
                    if !c.is_zero() {
                        if code.get(t) != Some(&Opcode::JUMPDEST.0) {
                            return Ok((false, Vec::new()));
                        }
                        next = t;
                    }
                }
                Opcode::JUMPDEST => {}
                Opcode::GAS => stack.push(Word::from(1_000_000u64)),
                Opcode::CALL | Opcode::CALLCODE | Opcode::DELEGATECALL | Opcode::STATICCALL => {
                    let _gas = pop!();
                    let to = ContractId::from_word(&pop!());
                    let v = if matches!(op, Opcode::CALL | Opcode::CALLCODE) { pop!() } else { Word::ZERO };
                    let (in_off, in_len, out_off, out_len) =
                        (as_usize(pop!()), as_usize(pop!()), as_usize(pop!()), as_usize(pop!()));
                    ensure(&mut mem, in_off, in_len);
                    let data = if in_len == 0 { Vec::new() } else { mem[in_off..in_off + in_len].to_vec() };
                    let (code_addr, ctx, from, v) = match op {
                        Opcode::DELEGATECALL => (to, this, caller, value),
                        Opcode::CALLCODE => (to, this, this, v),
                        _ => (to, to, this, v),
                    };
                    let (ok, out) = self.call(from, code_addr, ctx, op, data, v, depth + 1)?;
                    copy_into(&mut mem, out_off, &out, 0, out_len.min(out.len()));
                    ret = out;
                    stack.push(bool_word(ok));
                }
                Opcode::RETURN | Opcode::REVERT => {
                    let (o, len) = (as_usize(pop!()), as_usize(pop!()));
                    ensure(&mut mem, o, len);
                    let out = if len == 0 { Vec::new() } else { mem[o..o + len].to_vec() };
                    return Ok((op == Opcode::RETURN, out));
                }
                Opcode::INVALID => return Ok((false, Vec::new())),
                _ if op.is_push() => {
                    let w = op.push_width();
                    let mut buf = [0u8; 32];
                    for i in 0..w {
                        buf[32 - w + i] = code.get(pc + 1 + i).copied().unwrap_or(0);
                    }
                    stack.push(Word::from_be_bytes(buf));
                    next = pc + 1 + w;
                }
                _ if (0x80..=0x8f).contains(&op.0) => {
                    let n = (op.0 - 0x7f) as usize;
                    if stack.len() < n {
                        return Ok((false, Vec::new()));
                    }
                    stack.push(stack[stack.len() - n]);
                }
                _ if (0x90..=0x9f).contains(&op.0) => {
                    let n = (op.0 - 0x8f) as usize;
                    let len = stack.len();
                    if len < n + 1 {
                        return Ok((false, Vec::new()));
                    }
                    stack.swap(len - 1, len - 1 - n);
                }
                _ => return Err(InterpError::Unsupported { pc, opcode: op.0 }),
            }
            pc = next;
        }
        Ok((true, Vec::new()))
    }
}

/// Runs one transaction from `origin` to `to`.
pub fn execute(store: &FixtureStore, origin: ContractId, to: ContractId, input: Vec<u8>, value: Word) -> Result<Execution, InterpError> {
    let mut m = Machine {
        state: store.clone(),
        calls: Vec::new(),
        active: Vec::new(),
        steps: 0,
    };
    let (success, output) = m.call(origin, to, to, Opcode::CALL, input, value, 0)?;
    Ok(Execution {
        success,
        output,
        calls: m.calls,
        state: m.state,
    })
}
