use std::fmt;

/// A raw opcode byte. Bytes outside the canonical table are kept as-is and
/// behave like `INVALID`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Opcode(pub u8);

struct Info {
    name: &'static str,
    inputs: u8,
    outputs: u8,
}

const fn op(name: &'static str, inputs: u8, outputs: u8) -> Option<Info> {
    Some(Info {
        name,
        inputs,
        outputs,
    })
}

const fn info(byte: u8) -> Option<Info> {
    match byte {
        0x00 => op("STOP", 0, 0),
        0x01 => op("ADD", 2, 1),
        0x02 => op("MUL", 2, 1),
        0x03 => op("SUB", 2, 1),
        0x04 => op("DIV", 2, 1),
        0x05 => op("SDIV", 2, 1),
        0x06 => op("MOD", 2, 1),
        0x07 => op("SMOD", 2, 1),
        0x08 => op("ADDMOD", 3, 1),
        0x09 => op("MULMOD", 3, 1),
        0x0a => op("EXP", 2, 1),
        0x0b => op("SIGNEXTEND", 2, 1),
        0x10 => op("LT", 2, 1),
        0x11 => op("GT", 2, 1),
        0x12 => op("SLT", 2, 1),
        0x13 => op("SGT", 2, 1),
        0x14 => op("EQ", 2, 1),
        0x15 => op("ISZERO", 1, 1),
        0x16 => op("AND", 2, 1),
        0x17 => op("OR", 2, 1),
        0x18 => op("XOR", 2, 1),
        0x19 => op("NOT", 1, 1),
        0x1a => op("BYTE", 2, 1),
        0x1b => op("SHL", 2, 1),
        0x1c => op("SHR", 2, 1),
        0x1d => op("SAR", 2, 1),
        0x20 => op("KECCAK256", 2, 1),
        0x30 => op("ADDRESS", 0, 1),
        0x31 => op("BALANCE", 1, 1),
        0x32 => op("ORIGIN", 0, 1),
        0x33 => op("CALLER", 0, 1),
        0x34 => op("CALLVALUE", 0, 1),
        0x35 => op("CALLDATALOAD", 1, 1),
        0x36 => op("CALLDATASIZE", 0, 1),
        0x37 => op("CALLDATACOPY", 3, 0),
        0x38 => op("CODESIZE", 0, 1),
        0x39 => op("CODECOPY", 3, 0),
        0x3a => op("GASPRICE", 0, 1),
        0x3b => op("EXTCODESIZE", 1, 1),
        0x3c => op("EXTCODECOPY", 4, 0),
        0x3d => op("RETURNDATASIZE", 0, 1),
        0x3e => op("RETURNDATACOPY", 3, 0),
        0x3f => op("EXTCODEHASH", 1, 1),
        0x40 => op("BLOCKHASH", 1, 1),
        0x41 => op("COINBASE", 0, 1),
        0x42 => op("TIMESTAMP", 0, 1),
        0x43 => op("NUMBER", 0, 1),
        0x44 => op("PREVRANDAO", 0, 1),
        0x45 => op("GASLIMIT", 0, 1),
        0x46 => op("CHAINID", 0, 1),
        0x47 => op("SELFBALANCE", 0, 1),
        0x48 => op("BASEFEE", 0, 1),
        0x49 => op("BLOBHASH", 1, 1),
        0x4a => op("BLOBBASEFEE", 0, 1),
        0x50 => op("POP", 1, 0),
        0x51 => op("MLOAD", 1, 1),
        0x52 => op("MSTORE", 2, 0),
        0x53 => op("MSTORE8", 2, 0),
        0x54 => op("SLOAD", 1, 1),
        0x55 => op("SSTORE", 2, 0),
        0x56 => op("JUMP", 1, 0),
        0x57 => op("JUMPI", 2, 0),
        0x58 => op("PC", 0, 1),
        0x59 => op("MSIZE", 0, 1),
        0x5a => op("GAS", 0, 1),
        0x5b => op("JUMPDEST", 0, 0),
        0x5c => op("TLOAD", 1, 1),
        0x5d => op("TSTORE", 2, 0),
        0x5e => op("MCOPY", 3, 0),
        0x5f => op("PUSH0", 0, 1),
        0x60..=0x7f => op(PUSH_NAMES[(byte - 0x60) as usize], 0, 1),
        0x80..=0x8f => op(DUP_NAMES[(byte - 0x80) as usize], byte - 0x80 + 1, byte - 0x80 + 2),
        0x90..=0x9f => op(SWAP_NAMES[(byte - 0x90) as usize], byte - 0x90 + 2, byte - 0x90 + 2),
        0xa0 => op("LOG0", 2, 0),
        0xa1 => op("LOG1", 3, 0),
        0xa2 => op("LOG2", 4, 0),
        0xa3 => op("LOG3", 5, 0),
        0xa4 => op("LOG4", 6, 0),
        0xf0 => op("CREATE", 3, 1),
        0xf1 => op("CALL", 7, 1),
        0xf2 => op("CALLCODE", 7, 1),
        0xf3 => op("RETURN", 2, 0),
        0xf4 => op("DELEGATECALL", 6, 1),
        0xf5 => op("CREATE2", 4, 1),
        0xfa => op("STATICCALL", 6, 1),
        0xfd => op("REVERT", 2, 0),
        0xfe => op("INVALID", 0, 0),
        0xff => op("SELFDESTRUCT", 1, 0),
        _ => None,
    }
}

const PUSH_NAMES: [&str; 32] = [
    "PUSH1", "PUSH2", "PUSH3", "PUSH4", "PUSH5", "PUSH6", "PUSH7", "PUSH8", "PUSH9", "PUSH10",
    "PUSH11", "PUSH12", "PUSH13", "PUSH14", "PUSH15", "PUSH16", "PUSH17", "PUSH18", "PUSH19",
    "PUSH20", "PUSH21", "PUSH22", "PUSH23", "PUSH24", "PUSH25", "PUSH26", "PUSH27", "PUSH28",
    "PUSH29", "PUSH30", "PUSH31", "PUSH32",
];
const DUP_NAMES: [&str; 16] = [
    "DUP1", "DUP2", "DUP3", "DUP4", "DUP5", "DUP6", "DUP7", "DUP8", "DUP9", "DUP10", "DUP11",
    "DUP12", "DUP13", "DUP14", "DUP15", "DUP16",
];
const SWAP_NAMES: [&str; 16] = [
    "SWAP1", "SWAP2", "SWAP3", "SWAP4", "SWAP5", "SWAP6", "SWAP7", "SWAP8", "SWAP9", "SWAP10",
    "SWAP11", "SWAP12", "SWAP13", "SWAP14", "SWAP15", "SWAP16",
];

impl Opcode {
    pub const STOP: Opcode = Opcode(0x00);
    pub const ADD: Opcode = Opcode(0x01);
    pub const MUL: Opcode = Opcode(0x02);
    pub const SUB: Opcode = Opcode(0x03);
    pub const DIV: Opcode = Opcode(0x04);
    pub const SDIV: Opcode = Opcode(0x05);
    pub const MOD: Opcode = Opcode(0x06);
    pub const SMOD: Opcode = Opcode(0x07);
    pub const ADDMOD: Opcode = Opcode(0x08);
    pub const MULMOD: Opcode = Opcode(0x09);
    pub const EXP: Opcode = Opcode(0x0a);
    pub const SIGNEXTEND: Opcode = Opcode(0x0b);
    pub const LT: Opcode = Opcode(0x10);
    pub const GT: Opcode = Opcode(0x11);
    pub const SLT: Opcode = Opcode(0x12);
    pub const SGT: Opcode = Opcode(0x13);
    pub const EQ: Opcode = Opcode(0x14);
    pub const ISZERO: Opcode = Opcode(0x15);
    pub const AND: Opcode = Opcode(0x16);
    pub const OR: Opcode = Opcode(0x17);
    pub const XOR: Opcode = Opcode(0x18);
    pub const NOT: Opcode = Opcode(0x19);
    pub const BYTE: Opcode = Opcode(0x1a);
    pub const SHL: Opcode = Opcode(0x1b);
    pub const SHR: Opcode = Opcode(0x1c);
    pub const SAR: Opcode = Opcode(0x1d);
    pub const KECCAK256: Opcode = Opcode(0x20);
    pub const ADDRESS: Opcode = Opcode(0x30);
    pub const BALANCE: Opcode = Opcode(0x31);
    pub const ORIGIN: Opcode = Opcode(0x32);
    pub const CALLER: Opcode = Opcode(0x33);
    pub const CALLVALUE: Opcode = Opcode(0x34);
    pub const CALLDATALOAD: Opcode = Opcode(0x35);
    pub const CALLDATASIZE: Opcode = Opcode(0x36);
    pub const CALLDATACOPY: Opcode = Opcode(0x37);
    pub const CODESIZE: Opcode = Opcode(0x38);
    pub const CODECOPY: Opcode = Opcode(0x39);
    pub const GASPRICE: Opcode = Opcode(0x3a);
    pub const EXTCODESIZE: Opcode = Opcode(0x3b);
    pub const EXTCODECOPY: Opcode = Opcode(0x3c);
    pub const RETURNDATASIZE: Opcode = Opcode(0x3d);
    pub const RETURNDATACOPY: Opcode = Opcode(0x3e);
    pub const EXTCODEHASH: Opcode = Opcode(0x3f);
    pub const SELFBALANCE: Opcode = Opcode(0x47);
    pub const POP: Opcode = Opcode(0x50);
    pub const MLOAD: Opcode = Opcode(0x51);
    pub const MSTORE: Opcode = Opcode(0x52);
    pub const MSTORE8: Opcode = Opcode(0x53);
    pub const SLOAD: Opcode = Opcode(0x54);
    pub const SSTORE: Opcode = Opcode(0x55);
    pub const JUMP: Opcode = Opcode(0x56);
    pub const JUMPI: Opcode = Opcode(0x57);
    pub const PC: Opcode = Opcode(0x58);
    pub const MSIZE: Opcode = Opcode(0x59);
    pub const GAS: Opcode = Opcode(0x5a);
    pub const JUMPDEST: Opcode = Opcode(0x5b);
    pub const MCOPY: Opcode = Opcode(0x5e);
    pub const PUSH0: Opcode = Opcode(0x5f);
    pub const PUSH1: Opcode = Opcode(0x60);
    pub const PUSH2: Opcode = Opcode(0x61);
    pub const PUSH4: Opcode = Opcode(0x63);
    pub const PUSH20: Opcode = Opcode(0x73);
    pub const PUSH32: Opcode = Opcode(0x7f);
    pub const DUP1: Opcode = Opcode(0x80);
    pub const DUP2: Opcode = Opcode(0x81);
    pub const DUP3: Opcode = Opcode(0x82);
    pub const DUP4: Opcode = Opcode(0x83);
    pub const SWAP1: Opcode = Opcode(0x90);
    pub const SWAP2: Opcode = Opcode(0x91);
    pub const SWAP3: Opcode = Opcode(0x92);
    pub const LOG0: Opcode = Opcode(0xa0);
    pub const LOG4: Opcode = Opcode(0xa4);
    pub const CREATE: Opcode = Opcode(0xf0);
    pub const CALL: Opcode = Opcode(0xf1);
    pub const CALLCODE: Opcode = Opcode(0xf2);
    pub const RETURN: Opcode = Opcode(0xf3);
    pub const DELEGATECALL: Opcode = Opcode(0xf4);
    pub const CREATE2: Opcode = Opcode(0xf5);
    pub const STATICCALL: Opcode = Opcode(0xfa);
    pub const REVERT: Opcode = Opcode(0xfd);
    pub const INVALID: Opcode = Opcode(0xfe);
    pub const SELFDESTRUCT: Opcode = Opcode(0xff);

    /// `PUSHn` for `n` in 1..=32.
    pub fn push(width: usize) -> Opcode {
        assert!((1..=32).contains(&width), "push width out of range");
        Opcode(0x5f + width as u8)
    }

    pub fn dup(n: usize) -> Opcode {
        assert!((1..=16).contains(&n));
        Opcode(0x7f + n as u8)
    }

    pub fn swap(n: usize) -> Opcode {
        assert!((1..=16).contains(&n));
        Opcode(0x8f + n as u8)
    }

    pub fn is_known(self) -> bool {
        info(self.0).is_some()
    }

    pub fn name(self) -> &'static str {
        match info(self.0) {
            Some(i) => i.name,
            None => "INVALID",
        }
    }

    /// Immediate width in bytes; 0 for everything but PUSH1..PUSH32.
    pub fn push_width(self) -> usize {
        match self.0 {
            0x60..=0x7f => (self.0 - 0x5f) as usize,
            _ => 0,
        }
    }

    /// PUSH1..PUSH32 (PUSH0 carries no immediate and is not included).
    pub fn is_push(self) -> bool {
        self.push_width() > 0
    }

    /// `(items popped, items pushed)`; unknown bytes act like INVALID.
    pub fn stack_io(self) -> (usize, usize) {
        match info(self.0) {
            Some(i) => (i.inputs as usize, i.outputs as usize),
            None => (0, 0),
        }
    }

    /// Instructions after which execution never falls through.
    pub fn is_terminator(self) -> bool {
        !self.is_known()
            || matches!(
                self,
                Opcode::STOP
                    | Opcode::RETURN
                    | Opcode::REVERT
                    | Opcode::INVALID
                    | Opcode::SELFDESTRUCT
                    | Opcode::JUMP
            )
    }

    /// Instructions that end a basic block.
    pub fn ends_block(self) -> bool {
        self.is_terminator() || self == Opcode::JUMPI
    }

    pub fn is_call(self) -> bool {
        matches!(
            self,
            Opcode::CALL | Opcode::CALLCODE | Opcode::DELEGATECALL | Opcode::STATICCALL
        )
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_known() {
            f.write_str(self.name())
        } else {
            write!(f, "INVALID(0x{:02x})", self.0)
        }
    }
}

impl fmt::Debug for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_widths() {
        assert_eq!(Opcode::PUSH0.push_width(), 0);
        assert_eq!(Opcode::PUSH1.push_width(), 1);
        assert_eq!(Opcode::PUSH32.push_width(), 32);
        assert_eq!(Opcode::push(20), Opcode::PUSH20);
    }

    #[test]
    fn dup_swap_arity() {
        assert_eq!(Opcode::DUP1.stack_io(), (1, 2));
        assert_eq!(Opcode::dup(16).stack_io(), (16, 17));
        assert_eq!(Opcode::SWAP1.stack_io(), (2, 2));
        assert_eq!(Opcode::swap(16).stack_io(), (17, 17));
    }

    #[test]
    fn unknown_bytes_are_invalid_class() {
        let op = Opcode(0x0c);
        assert!(!op.is_known());
        assert!(op.is_terminator());
        assert_eq!(op.to_string(), "INVALID(0x0c)");
    }

    #[test]
    fn known_opcode_count() {
        // 149 assigned opcodes in the Cancun table (incl. PUSH0, TLOAD/TSTORE, MCOPY, blob ops)
        let known = (0..=255u8).filter(|b| Opcode(*b).is_known()).count();
        assert_eq!(known, 149);
    }
}
