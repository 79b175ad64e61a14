//! Bytecode decoding.
//!
//! [`disassemble`] turns raw bytes into an [`InstructionStream`]. Every input
//! byte ends up in exactly one place: an opcode, a push immediate, or the
//! stripped metadata trailer, so [`InstructionStream::serialize`] reproduces
//! the input. Nothing here fails; oddities are reported as diagnostics.

mod opcode;

use std::io::Cursor;

use serde::{Deserialize, Serialize};

pub use opcode::Opcode;

use crate::diag::{codes, Diagnostic};
use crate::error::ParseError;
use crate::types::decode_hex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CodeKind {
    Runtime,
    Creation,
    #[default]
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Bytecode {
    pub bytes: Vec<u8>,
    pub kind: CodeKind,
}

impl Bytecode {
    pub fn new(bytes: Vec<u8>, kind: CodeKind) -> Self {
        Bytecode { bytes, kind }
    }

    pub fn runtime(bytes: Vec<u8>) -> Self {
        Bytecode::new(bytes, CodeKind::Runtime)
    }

    /// Hex text with or without `0x`; the kind is left `Unknown`.
    pub fn from_hex(text: &str) -> Result<Self, ParseError> {
        Ok(Bytecode::new(decode_hex(text)?, CodeKind::Unknown))
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub offset: usize,
    pub opcode: Opcode,
    /// Present iff the opcode is PUSH1..PUSH32. Shorter than the push width
    /// only for a truncated final push.
    pub immediate: Option<Vec<u8>>,
}

impl Instruction {
    /// Encoded size in bytes.
    pub fn size(&self) -> usize {
        1 + self.immediate.as_ref().map_or(0, Vec::len)
    }

    pub fn next_offset(&self) -> usize {
        self.offset + self.size()
    }

    /// Immediate as a word; a truncated push reads as if zero-padded on the
    /// right, which is what the EVM does with code past the end.
    pub fn push_value(&self) -> Option<crate::types::Word> {
        let imm = self.immediate.as_ref()?;
        let width = self.opcode.push_width();
        let mut buf = vec![0u8; width];
        buf[..imm.len()].copy_from_slice(imm);
        Some(crate::types::Word::from_be_slice(&buf))
    }
}

impl std::fmt::Debug for Instruction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.immediate {
            Some(imm) => write!(f, "{:#06x} {} 0x{}", self.offset, self.opcode, hex::encode(imm)),
            None => write!(f, "{:#06x} {}", self.offset, self.opcode),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InstructionStream {
    pub instructions: Vec<Instruction>,
    /// Metadata blob plus its two length bytes, if one was split off.
    pub trailer: Vec<u8>,
    pub diagnostics: Vec<Diagnostic>,
}

impl InstructionStream {
    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    /// Length of the decoded code region (excluding the trailer).
    pub fn code_len(&self) -> usize {
        self.instructions.last().map_or(0, Instruction::next_offset)
    }

    /// Opcode bytes and immediates, followed by the trailer.
    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.code_len() + self.trailer.len());
        for ins in &self.instructions {
            out.push(ins.opcode.0);
            if let Some(imm) = &ins.immediate {
                out.extend_from_slice(imm);
            }
        }
        out.extend_from_slice(&self.trailer);
        out
    }

    /// Index of the instruction starting at `offset`.
    pub fn index_of(&self, offset: usize) -> Option<usize> {
        self.instructions
            .binary_search_by_key(&offset, |i| i.offset)
            .ok()
    }
}

/// Splits a trailing length-suffixed CBOR metadata map off `code`.
///
/// Returns `(code, trailer)`; the trailer is empty unless the last two bytes
/// give a length `n` such that the `n` bytes before them decode as exactly one
/// CBOR map.
pub fn strip_metadata(code: &[u8]) -> (&[u8], &[u8]) {
    let none = (code, &code[code.len()..]);
    if code.len() < 2 {
        return none;
    }
    let n = u16::from_be_bytes([code[code.len() - 2], code[code.len() - 1]]) as usize;
    if n == 0 || n + 2 > code.len() {
        return none;
    }
    let split = code.len() - 2 - n;
    let blob = &code[split..code.len() - 2];
    // a CBOR map header is major type 5
    if blob[0] >> 5 != 5 {
        return none;
    }
    let mut cursor = Cursor::new(blob);
    match ciborium::de::from_reader::<ciborium::value::Value, _>(&mut cursor) {
        Ok(ciborium::value::Value::Map(_)) if cursor.position() as usize == blob.len() => {
            (&code[..split], &code[split..])
        }
        _ => none,
    }
}

/// Decodes `code` into instructions after splitting off any metadata trailer.
pub fn disassemble(code: &Bytecode) -> InstructionStream {
    let (body, trailer) = strip_metadata(&code.bytes);
    let mut stream = decode(body);
    stream.trailer = trailer.to_vec();
    stream
}

fn decode(body: &[u8]) -> InstructionStream {
    let mut instructions = Vec::with_capacity(body.len());
    let mut diagnostics = Vec::new();
    let mut pc = 0;
    while pc < body.len() {
        let opcode = Opcode(body[pc]);
        let width = opcode.push_width();
        let immediate = if width > 0 {
            let end = (pc + 1 + width).min(body.len());
            let imm = body[pc + 1..end].to_vec();
            if imm.len() < width {
                diagnostics.push(
                    Diagnostic::new(
                        codes::TRUNCATED_PUSH,
                        format!("{} has {} of {} immediate bytes", opcode, imm.len(), width),
                    )
                    .at_pc(pc),
                );
            }
            Some(imm)
        } else {
            None
        };
        let ins = Instruction {
            offset: pc,
            opcode,
            immediate,
        };
        pc = ins.next_offset();
        instructions.push(ins);
    }
    InstructionStream {
        instructions,
        trailer: Vec::new(),
        diagnostics,
    }
}

/// Byte range of the runtime segment inside creation code, found by the
/// constructor tail `CODECOPY(dest, offset, size) ... RETURN(dest, size)` with
/// constant operands.
pub fn locate_runtime(code: &[u8]) -> Option<std::ops::Range<usize>> {
    use crate::lift::value::AbstractValue;
    let stream = decode(code);
    // straight-line constant tracking; anything unknown is Top
    let mut stack: Vec<AbstractValue> = Vec::new();
    let mut copies: Vec<(crate::types::Word, usize, usize)> = Vec::new();
    let pop = |stack: &mut Vec<AbstractValue>| stack.pop().unwrap_or(AbstractValue::Top);
    for ins in &stream.instructions {
        let op = ins.opcode;
        if let Some(v) = ins.push_value() {
            stack.push(AbstractValue::Const(v));
            continue;
        }
        match op {
            Opcode::PUSH0 => stack.push(AbstractValue::Const(crate::types::Word::ZERO)),
            Opcode::CODECOPY => {
                let dest = pop(&mut stack);
                let offset = pop(&mut stack);
                let size = pop(&mut stack);
                if let (Some(d), Some(o), Some(s)) = (dest.as_const(), offset.as_usize(), size.as_usize()) {
                    copies.push((d, o, s));
                }
            }
            Opcode::RETURN => {
                let dest = pop(&mut stack);
                let size = pop(&mut stack);
                if let (Some(d), Some(s)) = (dest.as_const(), size.as_usize()) {
                    if let Some(&(_, o, _)) = copies.iter().rev().find(|(cd, _, cs)| *cd == d && *cs == s) {
                        if o > 0 && s > 0 && o + s <= code.len() {
                            return Some(o..o + s);
                        }
                    }
                }
            }
            _ if op.is_known() => {
                let (inputs, outputs) = op.stack_io();
                match op.0 {
                    0x80..=0x8f => {
                        let n = (op.0 - 0x7f) as usize;
                        let v = if stack.len() >= n { stack[stack.len() - n].clone() } else { AbstractValue::Top };
                        stack.push(v);
                    }
                    0x90..=0x9f => {
                        let n = (op.0 - 0x8f) as usize;
                        if stack.len() > n {
                            let top = stack.len() - 1;
                            stack.swap(top, top - n);
                        }
                    }
                    _ => {
                        let args: Vec<_> = (0..inputs).map(|_| pop(&mut stack)).collect();
                        let folded = if outputs == 1 {
                            crate::lift::value::fold_const(op, &args)
                        } else {
                            None
                        };
                        for _ in 0..outputs {
                            stack.push(folded.clone().unwrap_or(AbstractValue::Top));
                        }
                    }
                }
            }
            _ => {}
        }
    }
    None
}

/// Picks the bytes to analyze: the runtime segment of creation code, or the
/// input unchanged. `Unknown` inputs are treated as creation code only when
/// the constructor tail is found.
pub fn runtime_view(code: &Bytecode) -> (Bytecode, Vec<Diagnostic>) {
    match code.kind {
        CodeKind::Runtime => (code.clone(), Vec::new()),
        CodeKind::Creation | CodeKind::Unknown => match locate_runtime(&code.bytes) {
            Some(range) => (
                Bytecode::runtime(code.bytes[range.clone()].to_vec()),
                vec![Diagnostic::new(
                    codes::CREATION_STRIPPED,
                    format!(
                        "analyzing runtime segment {}..{} of creation code",
                        range.start, range.end
                    ),
                )],
            ),
            None if code.kind == CodeKind::Creation => (
                Bytecode::runtime(code.bytes.clone()),
                vec![Diagnostic::new(
                    codes::CREATION_UNRESOLVED,
                    "no CODECOPY/RETURN constructor tail found; analyzing whole blob",
                )],
            ),
            None => (Bytecode::runtime(code.bytes.clone()), Vec::new()),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ops(stream: &InstructionStream) -> Vec<(Opcode, Option<Vec<u8>>)> {
        stream
            .instructions
            .iter()
            .map(|i| (i.opcode, i.immediate.clone()))
            .collect()
    }

    #[test]
    fn empty_input_gives_empty_stream() {
        let s = disassemble(&Bytecode::default());
        assert!(s.is_empty());
        assert!(s.trailer.is_empty());
        assert!(s.diagnostics.is_empty());
    }

    #[test]
    fn decodes_push_add_stop() {
        let s = disassemble(&Bytecode::from_hex("600160020100").unwrap());
        assert_eq!(
            ops(&s),
            vec![
                (Opcode::PUSH1, Some(vec![0x01])),
                (Opcode::PUSH1, Some(vec![0x02])),
                (Opcode::ADD, None),
                (Opcode::STOP, None),
            ]
        );
        let offsets: Vec<_> = s.instructions.iter().map(|i| i.offset).collect();
        assert_eq!(offsets, vec![0, 2, 4, 5]);
    }

    #[test]
    fn truncated_push_is_flagged_not_padded() {
        let s = disassemble(&Bytecode::from_hex("0x6001620102").unwrap());
        assert_eq!(s.instructions[1].immediate.as_deref(), Some(&[0x01, 0x02][..]));
        assert_eq!(s.diagnostics.len(), 1);
        assert_eq!(s.diagnostics[0].code, codes::TRUNCATED_PUSH);
        assert_eq!(s.serialize(), decode_hex("6001620102").unwrap());
    }

    #[test]
    fn unknown_opcode_is_single_byte() {
        let s = disassemble(&Bytecode::from_hex("0c0d00").unwrap());
        assert_eq!(s.len(), 3);
        assert!(!s.instructions[0].opcode.is_known());
    }

    fn metadata_blob() -> Vec<u8> {
        // {"solc": h'000814'} encoded as CBOR
        let mut blob = vec![0xa1, 0x64];
        blob.extend_from_slice(b"solc");
        blob.extend_from_slice(&[0x43, 0x00, 0x08, 0x14]);
        blob
    }

    #[test]
    fn no_trailer_returns_code_unchanged() {
        let code = decode_hex("6080604052").unwrap();
        let (body, trailer) = strip_metadata(&code);
        assert_eq!(body, &code[..]);
        assert!(trailer.is_empty());
    }

    #[test]
    fn splits_cbor_trailer() {
        let code = decode_hex("6080604052600080fd").unwrap();
        let blob = metadata_blob();
        let mut full = code.clone();
        full.extend_from_slice(&blob);
        full.extend_from_slice(&(blob.len() as u16).to_be_bytes());
        let (body, trailer) = strip_metadata(&full);
        assert_eq!(body, &code[..]);
        assert_eq!(trailer.len(), blob.len() + 2);
        assert_eq!(&trailer[..blob.len()], &blob[..]);

        let s = disassemble(&Bytecode::runtime(full.clone()));
        assert_eq!(s.code_len(), code.len());
        assert_eq!(s.serialize(), full);
    }

    #[test]
    fn oversized_length_is_not_a_trailer() {
        let code = vec![0x60, 0x01, 0xff, 0xff];
        let (body, trailer) = strip_metadata(&code);
        assert_eq!(body.len(), 4);
        assert!(trailer.is_empty());
    }

    #[test]
    fn non_map_blob_is_code() {
        // 0x01 is a CBOR unsigned int, not a map
        let code = vec![0x00, 0x01, 0x00, 0x01];
        assert!(strip_metadata(&code).1.is_empty());
    }

    #[test]
    fn locates_runtime_in_constructor() {
        let runtime = decode_hex("6001600101").unwrap();
        // PUSH1 len DUP1 PUSH1 off PUSH0 CODECOPY PUSH0 RETURN INVALID
        let mut ctor = vec![0x60, runtime.len() as u8, 0x80, 0x60, 0x0b, 0x5f, 0x39, 0x5f, 0xf3, 0xfe];
        // runtime starts right after the 10-byte constructor; patch offset
        ctor[4] = ctor.len() as u8;
        let mut code = ctor.clone();
        code.extend_from_slice(&runtime);
        let range = locate_runtime(&code).unwrap();
        assert_eq!(&code[range], &runtime[..]);

        let (view, diags) = runtime_view(&Bytecode::new(code, CodeKind::Unknown));
        assert_eq!(view.bytes, runtime);
        assert_eq!(diags[0].code, codes::CREATION_STRIPPED);
    }

    #[test]
    fn creation_without_tail_is_flagged() {
        let (view, diags) = runtime_view(&Bytecode::new(vec![0x00], CodeKind::Creation));
        assert_eq!(view.bytes, vec![0x00]);
        assert_eq!(diags[0].code, codes::CREATION_UNRESOLVED);
    }
}
