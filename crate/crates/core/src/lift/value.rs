use std::fmt;

use serde::{Deserialize, Serialize};

use crate::disasm::Opcode;
use crate::types::{word_serde, ContractId, Word};

/// Where a calldata word came from.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallDataRef {
    /// ABI head word `k`, loaded from offset `4 + 32k`.
    Arg(u32),
    /// Any other constant offset.
    Raw(u32),
    /// The 4-byte function selector (offset 0 shifted down by 224 bits).
    Selector,
}

impl CallDataRef {
    pub fn from_offset(offset: u64) -> CallDataRef {
        if offset >= 4 && (offset - 4).is_multiple_of(32) && (offset - 4) / 32 < u32::MAX as u64 {
            CallDataRef::Arg(((offset - 4) / 32) as u32)
        } else {
            CallDataRef::Raw(offset.min(u32::MAX as u64) as u32)
        }
    }
}

/// Flat lattice of stack-slot provenance. Two different non-Top values join
/// to `Top`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum AbstractValue {
    Const(#[serde(with = "word_serde")] Word),
    /// Word read by `SLOAD` from a constant slot.
    StorageLoad(#[serde(with = "word_serde")] Word),
    CallData(CallDataRef),
    /// Status or return data of the external call at this pc.
    CallReturn(usize),
    /// `ADDRESS`
    EnvSelf,
    /// `CALLER`
    EnvSender,
    Top,
}

impl AbstractValue {
    pub fn constant(value: u64) -> Self {
        AbstractValue::Const(Word::from(value))
    }

    pub fn address(id: ContractId) -> Self {
        AbstractValue::Const(id.to_word())
    }

    pub fn join(&self, other: &AbstractValue) -> AbstractValue {
        if self == other {
            self.clone()
        } else {
            AbstractValue::Top
        }
    }

    pub fn is_top(&self) -> bool {
        matches!(self, AbstractValue::Top)
    }

    pub fn as_const(&self) -> Option<Word> {
        match self {
            AbstractValue::Const(w) => Some(*w),
            _ => None,
        }
    }

    /// Constant that fits comfortably in memory-offset range.
    pub fn as_usize(&self) -> Option<usize> {
        self.as_u64().map(|v| v as usize)
    }

    pub fn as_u64(&self) -> Option<u64> {
        match self {
            AbstractValue::Const(w) if w.bit_len() <= 32 => Some(w.to::<u64>()),
            _ => None,
        }
    }

    /// The function-argument index this value was read from, if any.
    pub fn arg_index(&self) -> Option<u32> {
        match self {
            AbstractValue::CallData(CallDataRef::Arg(k)) => Some(*k),
            _ => None,
        }
    }
}

impl fmt::Debug for AbstractValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AbstractValue::Const(w) => write!(f, "Const({w:#x})"),
            AbstractValue::StorageLoad(w) => write!(f, "StorageLoad({w:#x})"),
            AbstractValue::CallData(r) => write!(f, "CallData({r:?})"),
            AbstractValue::CallReturn(pc) => write!(f, "CallReturn({pc:#x})"),
            AbstractValue::EnvSelf => f.write_str("EnvSelf"),
            AbstractValue::EnvSender => f.write_str("EnvSender"),
            AbstractValue::Top => f.write_str("Top"),
        }
    }
}

fn bool_word(b: bool) -> Word {
    if b {
        Word::from(1u8)
    } else {
        Word::ZERO
    }
}

fn shift_amount(w: Word) -> usize {
    if w.bit_len() > 16 {
        256
    } else {
        w.to::<usize>()
    }
}

/// Constant folding. `args[0]` is the top of the stack.
pub fn fold_const(op: Opcode, args: &[AbstractValue]) -> Option<AbstractValue> {
    let c: Vec<Word> = args.iter().map(AbstractValue::as_const).collect::<Option<_>>()?;
    let v = match op {
        Opcode::ADD => c[0].wrapping_add(c[1]),
        Opcode::MUL => c[0].wrapping_mul(c[1]),
        Opcode::SUB => c[0].wrapping_sub(c[1]),
        Opcode::DIV => c[0].checked_div(c[1]).unwrap_or(Word::ZERO),
        Opcode::MOD => c[0].checked_rem(c[1]).unwrap_or(Word::ZERO),
        Opcode::ADDMOD => {
            if c[2].is_zero() {
                Word::ZERO
            } else {
                c[0].add_mod(c[1], c[2])
            }
        }
        Opcode::MULMOD => {
            if c[2].is_zero() {
                Word::ZERO
            } else {
                c[0].mul_mod(c[1], c[2])
            }
        }
        Opcode::EXP => c[0].wrapping_pow(c[1]),
        Opcode::LT => bool_word(c[0] < c[1]),
        Opcode::GT => bool_word(c[0] > c[1]),
        Opcode::EQ => bool_word(c[0] == c[1]),
        Opcode::ISZERO => bool_word(c[0].is_zero()),
        Opcode::AND => c[0] & c[1],
        Opcode::OR => c[0] | c[1],
        Opcode::XOR => c[0] ^ c[1],
        Opcode::NOT => !c[0],
        Opcode::BYTE => {
            let i = shift_amount(c[0]);
            if i >= 32 {
                Word::ZERO
            } else {
                Word::from(c[1].to_be_bytes::<32>()[i])
            }
        }
        Opcode::SHL => {
            let s = shift_amount(c[0]);
            if s >= 256 {
                Word::ZERO
            } else {
                c[1] << s
            }
        }
        Opcode::SHR => {
            let s = shift_amount(c[0]);
            if s >= 256 {
                Word::ZERO
            } else {
                c[1] >> s
            }
        }
        _ => return None,
    };
    Some(AbstractValue::Const(v))
}

/// Is `w` of the form 2^k - 1 with k >= `min_bits`?
fn is_low_mask(w: &Word, min_bits: usize) -> bool {
    let bits = w.bit_len();
    bits >= min_bits && w.count_ones() == bits
}

fn carries_identity(v: &AbstractValue) -> bool {
    matches!(
        v,
        AbstractValue::CallData(CallDataRef::Arg(_))
            | AbstractValue::StorageLoad(_)
            | AbstractValue::EnvSelf
            | AbstractValue::EnvSender
            | AbstractValue::CallReturn(_)
    )
}

/// Result of a pure stack operation over abstract operands (`args[0]` is the
/// top of the stack). Folds constants, keeps provenance through identity
/// operations and address masks, and recognizes selector extraction.
pub fn transfer(op: Opcode, args: &[AbstractValue]) -> AbstractValue {
    use AbstractValue::*;
    if let Some(v) = fold_const(op, args) {
        return v;
    }
    let zero = Word::ZERO;
    let one = Word::from(1u8);
    match (op, args) {
        (Opcode::ADD | Opcode::OR | Opcode::XOR, [Const(z), x] | [x, Const(z)]) if *z == zero => {
            x.clone()
        }
        (Opcode::SUB, [x, Const(z)]) if *z == zero => x.clone(),
        (Opcode::MUL, [Const(o), x] | [x, Const(o)]) if *o == one => x.clone(),
        (Opcode::MUL | Opcode::AND, [Const(z), _] | [_, Const(z)]) if *z == zero => Const(zero),
        (Opcode::DIV, [x, Const(o)]) if *o == one => x.clone(),
        (Opcode::SHL | Opcode::SHR, [Const(z), x]) if *z == zero => x.clone(),
        (Opcode::SHR, [Const(s), CallData(CallDataRef::Raw(0))]) if *s == Word::from(224u16) => {
            CallData(CallDataRef::Selector)
        }
        (Opcode::DIV, [CallData(CallDataRef::Raw(0)), Const(d)])
            if *d == Word::from(1u8) << 224usize =>
        {
            CallData(CallDataRef::Selector)
        }
        (Opcode::AND, [Const(m), sel @ CallData(CallDataRef::Selector)] | [sel @ CallData(CallDataRef::Selector), Const(m)])
            if is_low_mask(m, 32) =>
        {
            sel.clone()
        }
        (Opcode::AND, [Const(m), x] | [x, Const(m)]) if is_low_mask(m, 160) && carries_identity(x) => {
            x.clone()
        }
        _ => Top,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_value() -> impl Strategy<Value = AbstractValue> {
        prop_oneof![
            (0u64..4).prop_map(AbstractValue::constant),
            (0u64..3).prop_map(|s| AbstractValue::StorageLoad(Word::from(s))),
            (0u32..3).prop_map(|k| AbstractValue::CallData(CallDataRef::Arg(k))),
            Just(AbstractValue::CallData(CallDataRef::Selector)),
            (0usize..3).prop_map(AbstractValue::CallReturn),
            Just(AbstractValue::EnvSelf),
            Just(AbstractValue::EnvSender),
            Just(AbstractValue::Top),
        ]
    }

    proptest! {
        #[test]
        fn join_is_idempotent(a in arb_value()) {
            prop_assert_eq!(a.join(&a), a);
        }

        #[test]
        fn join_is_commutative(a in arb_value(), b in arb_value()) {
            prop_assert_eq!(a.join(&b), b.join(&a));
        }

        #[test]
        fn join_is_associative(a in arb_value(), b in arb_value(), c in arb_value()) {
            prop_assert_eq!(a.join(&b).join(&c), a.join(&b.join(&c)));
        }

        #[test]
        fn unequal_non_top_join_to_top(a in arb_value(), b in arb_value()) {
            prop_assume!(a != b);
            prop_assert!(a.join(&b).is_top());
        }
    }

    #[test]
    fn folds_arithmetic_in_stack_order() {
        // SUB pops a then b and computes a - b
        let r = transfer(Opcode::SUB, &[AbstractValue::constant(10), AbstractValue::constant(3)]);
        assert_eq!(r, AbstractValue::constant(7));
        let r = transfer(Opcode::SHL, &[AbstractValue::constant(224), AbstractValue::constant(0x12345678)]);
        assert_eq!(r, AbstractValue::Const(Word::from(0x12345678u64) << 224usize));
    }

    #[test]
    fn selector_extraction_both_styles() {
        let raw0 = AbstractValue::CallData(CallDataRef::Raw(0));
        let sel = AbstractValue::CallData(CallDataRef::Selector);
        assert_eq!(transfer(Opcode::SHR, &[AbstractValue::constant(224), raw0.clone()]), sel);
        let div = AbstractValue::Const(Word::from(1u8) << 224usize);
        let q = transfer(Opcode::DIV, &[raw0, div]);
        assert_eq!(q, sel);
        assert_eq!(transfer(Opcode::AND, &[AbstractValue::constant(0xffff_ffff), q]), sel);
    }

    #[test]
    fn address_mask_keeps_provenance() {
        let mask = AbstractValue::Const((Word::from(1u8) << 160usize) - Word::from(1u8));
        let arg = AbstractValue::CallData(CallDataRef::Arg(1));
        assert_eq!(transfer(Opcode::AND, &[mask.clone(), arg.clone()]), arg);
        let slot = AbstractValue::StorageLoad(Word::ZERO);
        assert_eq!(transfer(Opcode::AND, &[slot.clone(), mask.clone()]), slot);
        // a narrower mask is a real computation
        let narrow = AbstractValue::constant(0xff);
        assert!(transfer(Opcode::AND, &[narrow, AbstractValue::EnvSender]).is_top());
    }

    #[test]
    fn calldata_offsets_map_to_head_words() {
        assert_eq!(CallDataRef::from_offset(4), CallDataRef::Arg(0));
        assert_eq!(CallDataRef::from_offset(68), CallDataRef::Arg(2));
        assert_eq!(CallDataRef::from_offset(0), CallDataRef::Raw(0));
        assert_eq!(CallDataRef::from_offset(5), CallDataRef::Raw(5));
    }
}
