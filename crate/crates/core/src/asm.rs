//! A small label-resolving assembler for building test and fixture bytecode.

use std::collections::HashMap;

use crate::disasm::Opcode;
use crate::types::{ContractId, Word};

/// A value pushed onto the stack by a short instruction sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Operand {
    Const(Word),
    Addr(ContractId),
    /// ABI head argument `k` of the current call.
    Arg(u32),
    /// `SLOAD` of a constant slot.
    Slot(u64),
    /// `ADDRESS`
    SelfAddr,
    /// `CALLER`
    Sender,
    /// `MLOAD` of a constant offset, e.g. a previous call's output word.
    Mem(u64),
}

impl Operand {
    pub fn int(v: u64) -> Self {
        Operand::Const(Word::from(v))
    }
}

/// Output buffer used by [`Assembler::call`]; `Operand::Mem(RET_BUFFER)`
/// reads the return word of the most recent call.
pub const RET_BUFFER: u64 = 0x00;
const IN_BUFFER: u64 = 0x80;

/// An external call with its input laid out at a constant memory offset.
#[derive(Clone, Debug)]
pub struct CallSpec {
    pub opcode: Opcode,
    pub callee: Operand,
    /// `None` with no args sends empty calldata.
    pub selector: Option<u32>,
    pub args: Vec<Operand>,
    /// Only used by `CALL` / `CALLCODE`.
    pub value: Operand,
    /// Leave the success flag on the stack instead of popping it.
    pub keep_status: bool,
}

impl CallSpec {
    pub fn call(callee: Operand, selector: u32, args: Vec<Operand>) -> Self {
        CallSpec {
            opcode: Opcode::CALL,
            callee,
            selector: Some(selector),
            args,
            value: Operand::int(0),
            keep_status: false,
        }
    }

    pub fn staticcall(callee: Operand, selector: u32, args: Vec<Operand>) -> Self {
        CallSpec {
            opcode: Opcode::STATICCALL,
            ..Self::call(callee, selector, args)
        }
    }

    pub fn delegatecall(callee: Operand, selector: u32, args: Vec<Operand>) -> Self {
        CallSpec {
            opcode: Opcode::DELEGATECALL,
            ..Self::call(callee, selector, args)
        }
    }

    /// Plain value transfer with empty calldata.
    pub fn send(callee: Operand, value: Operand) -> Self {
        CallSpec {
            opcode: Opcode::CALL,
            callee,
            selector: None,
            args: Vec::new(),
            value,
            keep_status: false,
        }
    }
}

/// Code generator for one function body.
pub type Body<'a> = &'a dyn Fn(&mut Assembler);

#[derive(Clone, Debug, Default)]
pub struct Assembler {
    code: Vec<u8>,
    labels: HashMap<String, usize>,
    marks: HashMap<String, usize>,
    /// (position of the 2-byte immediate, label)
    fixups: Vec<(usize, String)>,
}

impl Assembler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Current byte offset.
    pub fn here(&self) -> usize {
        self.code.len()
    }

    pub fn op(&mut self, op: Opcode) -> &mut Self {
        self.code.push(op.0);
        self
    }

    pub fn ops(&mut self, ops: &[Opcode]) -> &mut Self {
        for op in ops {
            self.op(*op);
        }
        self
    }

    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.code.extend_from_slice(bytes);
        self
    }

    /// Shortest `PUSHn` (n >= 1) holding `value`.
    pub fn push_word(&mut self, value: Word) -> &mut Self {
        let bytes = value.to_be_bytes::<32>();
        let skip = bytes.iter().take_while(|b| **b == 0).count().min(31);
        let imm = &bytes[skip..];
        self.op(Opcode::push(imm.len()));
        self.code.extend_from_slice(imm);
        self
    }

    pub fn push(&mut self, value: u64) -> &mut Self {
        self.push_word(Word::from(value))
    }

    /// Always `PUSH20`, like compiled address literals.
    pub fn push_addr(&mut self, id: ContractId) -> &mut Self {
        self.op(Opcode::PUSH20);
        self.code.extend_from_slice(&id.0);
        self
    }

    /// `PUSH2` of a label's offset, patched by [`Assembler::build`].
    pub fn push_label(&mut self, name: &str) -> &mut Self {
        self.op(Opcode::PUSH2);
        self.fixups.push((self.code.len(), name.to_string()));
        self.code.extend_from_slice(&[0, 0]);
        self
    }

    /// Defines `name` here and emits a `JUMPDEST`.
    pub fn label(&mut self, name: &str) -> &mut Self {
        let prev = self.labels.insert(name.to_string(), self.code.len());
        assert!(prev.is_none(), "label {name} defined twice");
        self.op(Opcode::JUMPDEST)
    }

    /// Records the offset of the next instruction under `name` without
    /// emitting anything.
    pub fn mark(&mut self, name: &str) -> &mut Self {
        self.marks.insert(name.to_string(), self.code.len());
        self
    }

    pub fn mark_offset(&self, name: &str) -> Option<usize> {
        self.marks.get(name).copied()
    }

    pub fn label_offset(&self, name: &str) -> Option<usize> {
        self.labels.get(name).copied()
    }

    /// Selector dispatcher in the shape compilers emit: short calldata goes to
    /// `fallback`; otherwise the selector is compared against each entry.
    /// The selector stays on the stack in each function body.
    pub fn selector_dispatch<S: AsRef<str>>(&mut self, entries: &[(u32, S)], fallback: &str) -> &mut Self {
        self.push(4).op(Opcode::CALLDATASIZE).op(Opcode::LT).push_label(fallback).op(Opcode::JUMPI);
        self.push(0).op(Opcode::CALLDATALOAD).push(0xe0).op(Opcode::SHR);
        for (selector, label) in entries {
            self.op(Opcode::DUP1)
                .op(Opcode::PUSH4)
                .raw(&selector.to_be_bytes())
                .op(Opcode::EQ)
                .push_label(label.as_ref())
                .op(Opcode::JUMPI);
        }
        self.push_label(fallback).op(Opcode::JUMP)
    }

    pub fn operand(&mut self, v: &Operand) -> &mut Self {
        match v {
            Operand::Const(w) => self.push_word(*w),
            Operand::Addr(id) => self.push_addr(*id),
            Operand::Arg(k) => self.push(4 + 32 * *k as u64).op(Opcode::CALLDATALOAD),
            Operand::Slot(s) => self.push(*s).op(Opcode::SLOAD),
            Operand::SelfAddr => self.op(Opcode::ADDRESS),
            Operand::Sender => self.op(Opcode::CALLER),
            Operand::Mem(o) => self.push(*o).op(Opcode::MLOAD),
        }
    }

    /// Emits `spec`; if `mark` is given, the call instruction's offset is
    /// recorded under it.
    pub fn call(&mut self, spec: &CallSpec, mark: Option<&str>) -> &mut Self {
        if let Some(sel) = spec.selector {
            self.push_word(Word::from(sel) << 224usize).push(IN_BUFFER).op(Opcode::MSTORE);
        }
        for (k, arg) in spec.args.iter().enumerate() {
            self.operand(arg).push(IN_BUFFER + 4 + 32 * k as u64).op(Opcode::MSTORE);
        }
        let in_len = match spec.selector {
            Some(_) => 4 + 32 * spec.args.len() as u64,
            None => 32 * spec.args.len() as u64,
        };
        let in_off = if spec.selector.is_some() { IN_BUFFER } else { IN_BUFFER + 4 };
        self.push(0x20).push(RET_BUFFER).push(in_len).push(in_off);
        if matches!(spec.opcode, Opcode::CALL | Opcode::CALLCODE) {
            self.operand(&spec.value);
        }
        self.operand(&spec.callee).op(Opcode::GAS);
        if let Some(name) = mark {
            self.mark(name);
        }
        self.op(spec.opcode);
        if !spec.keep_status {
            self.op(Opcode::POP);
        }
        self
    }

    /// `RETURN` of the given words, ABI-encoded at a constant offset.
    pub fn ret(&mut self, words: &[Operand]) -> &mut Self {
        for (k, w) in words.iter().enumerate() {
            self.operand(w).push(IN_BUFFER + 32 * k as u64).op(Opcode::MSTORE);
        }
        self.push(32 * words.len() as u64).push(IN_BUFFER).op(Opcode::RETURN)
    }

    /// Emits a complete contract: dispatcher, one body per selector, and a
    /// fallback body. Bodies are followed by `STOP`.
    pub fn contract(functions: &[(u32, Body<'_>)], fallback: Option<Body<'_>>) -> Assembler {
        let mut a = Assembler::new();
        let entries: Vec<(u32, String)> = functions.iter().map(|(s, _)| (*s, format!("fn_{s:08x}"))).collect();
        if functions.is_empty() {
            a.push_label("fallback").op(Opcode::JUMP);
        } else {
            a.selector_dispatch(&entries, "fallback");
        }
        for ((_, body), (_, label)) in functions.iter().zip(&entries) {
            a.label(label);
            body(&mut a);
            a.op(Opcode::STOP);
        }
        a.label("fallback");
        match fallback {
            Some(body) => {
                body(&mut a);
                a.op(Opcode::STOP);
            }
            None => {
                a.push(0).push(0).op(Opcode::REVERT);
            }
        }
        a
    }

    /// Resolves label references.
    pub fn build(&self) -> Vec<u8> {
        let mut code = self.code.clone();
        for (at, name) in &self.fixups {
            let target = *self
                .labels
                .get(name)
                .unwrap_or_else(|| panic!("undefined label {name}"));
            let target = u16::try_from(target).expect("label offset fits PUSH2");
            code[*at..*at + 2].copy_from_slice(&target.to_be_bytes());
        }
        code
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_resolve_forward_and_back() {
        let mut a = Assembler::new();
        a.label("top").push_label("end").op(Opcode::JUMP);
        a.label("end").push_label("top").op(Opcode::JUMP);
        assert_eq!(a.build(), vec![0x5b, 0x61, 0x00, 0x05, 0x56, 0x5b, 0x61, 0x00, 0x00, 0x56]);
    }

    #[test]
    fn call_spec_layout() {
        let mut a = Assembler::new();
        a.call(&CallSpec::call(Operand::Arg(0), 0x150b7a02, vec![Operand::SelfAddr]), Some("c"));
        let code = a.build();
        let at = a.mark_offset("c").unwrap();
        assert_eq!(code[at], Opcode::CALL.0);
        assert_eq!(code[at + 1], Opcode::POP.0);
    }

    #[test]
    fn minimal_push_width() {
        let mut a = Assembler::new();
        a.push(0).push(0x1234).push_word(Word::MAX);
        let code = a.build();
        assert_eq!(&code[..5], &[0x60, 0x00, 0x61, 0x12, 0x34]);
        assert_eq!(code[5], 0x7f);
        assert_eq!(code.len(), 5 + 33);
    }
}
