use crate::lift::value::{AbstractValue, CallDataRef};
use crate::types::Word;

/// Writes kept in the precise log before it is abandoned.
const MAX_WRITES: usize = 96;
const FREE_POINTER_SLOT: u64 = 0x40;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct MemWrite {
    offset: u64,
    len: u64,
    value: AbstractValue,
}

/// Abstract memory.
///
/// `MLOAD` sees a single summarizing cell (the join of everything stored), so
/// values routed through memory generally degrade to `Top`. Two reads are
/// precise: the free-memory pointer at 0x40 and return-data buffers of
/// earlier calls. Separately, a write log at constant offsets lets call
/// input buffers and `RETURN` payloads be decoded word by word.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Memory {
    writes: Vec<MemWrite>,
    /// The log no longer describes all of memory.
    clobbered: bool,
    summary: Option<AbstractValue>,
}

impl Memory {
    /// Memory about which nothing is known.
    pub fn unknown() -> Memory {
        Memory {
            writes: Vec::new(),
            clobbered: true,
            summary: Some(AbstractValue::Top),
        }
    }

    fn push(&mut self, write: MemWrite) {
        if self.writes.len() >= MAX_WRITES {
            self.writes.remove(0);
            self.clobbered = true;
        }
        self.writes.push(write);
    }

    fn summarize(&mut self, value: &AbstractValue) {
        self.summary = Some(match &self.summary {
            Some(s) => s.join(value),
            None => value.clone(),
        });
    }

    /// `MSTORE` (len 32) or `MSTORE8` (len 1).
    pub fn store(&mut self, offset: &AbstractValue, len: u64, value: AbstractValue) {
        match offset.as_u64() {
            Some(o) => {
                if o != FREE_POINTER_SLOT {
                    self.summarize(&value);
                }
                self.push(MemWrite { offset: o, len, value });
            }
            None => {
                self.summarize(&value);
                self.writes.clear();
                self.clobbered = true;
            }
        }
    }

    /// A bulk copy into memory (`*COPY` opcodes, call output buffers).
    pub fn fill(&mut self, offset: &AbstractValue, len: &AbstractValue, value: AbstractValue) {
        match (offset.as_u64(), len.as_u64()) {
            (_, Some(0)) => {}
            (Some(o), Some(n)) => {
                self.summarize(&AbstractValue::Top);
                self.push(MemWrite { offset: o, len: n, value });
            }
            _ => {
                self.summarize(&AbstractValue::Top);
                self.writes.clear();
                self.clobbered = true;
            }
        }
    }

    /// Precise read of `n` bytes at `o` from the write log.
    pub fn read(&self, o: u64, n: u64) -> AbstractValue {
        for w in self.writes.iter().rev() {
            let overlaps = w.offset < o + n && o < w.offset + w.len;
            if !overlaps {
                continue;
            }
            let covers = w.offset <= o && o + n <= w.offset + w.len;
            if !covers {
                return AbstractValue::Top;
            }
            let rel = o - w.offset;
            return match &w.value {
                AbstractValue::Const(c) => {
                    let src = c.to_be_bytes::<32>();
                    let start = (32 - w.len.min(32)) as usize + rel as usize;
                    match src.get(start..start + n as usize) {
                        Some(bytes) if n <= 32 => AbstractValue::Const(Word::from_be_slice(bytes)),
                        _ => AbstractValue::Top,
                    }
                }
                // region copied from calldata starting at raw offset `src`
                AbstractValue::CallData(CallDataRef::Raw(src)) => {
                    if n == 32 {
                        AbstractValue::CallData(CallDataRef::from_offset(*src as u64 + rel))
                    } else {
                        AbstractValue::Top
                    }
                }
                AbstractValue::CallReturn(pc) if n == 32 && rel.is_multiple_of(32) => AbstractValue::CallReturn(*pc),
                v if rel == 0 && n == w.len => v.clone(),
                _ => AbstractValue::Top,
            };
        }
        if self.clobbered {
            AbstractValue::Top
        } else {
            AbstractValue::Const(Word::ZERO)
        }
    }

    pub fn mload(&self, offset: &AbstractValue) -> AbstractValue {
        if let Some(o) = offset.as_u64() {
            let precise = self.read(o, 32);
            if o == FREE_POINTER_SLOT || matches!(precise, AbstractValue::CallReturn(_)) {
                return precise;
            }
        }
        self.summary.clone().unwrap_or(AbstractValue::Top)
    }

    pub fn join(&self, other: &Memory) -> Memory {
        if self == other {
            return self.clone();
        }
        // keep the common prefix of the logs
        let common = self
            .writes
            .iter()
            .zip(&other.writes)
            .take_while(|(a, b)| a == b)
            .count();
        let summary = match (&self.summary, &other.summary) {
            (Some(a), Some(b)) => Some(a.join(b)),
            (Some(a), None) | (None, Some(a)) => Some(a.clone()),
            (None, None) => None,
        };
        Memory {
            writes: self.writes[..common].to_vec(),
            clobbered: true,
            summary,
        }
    }
}

/// Abstract machine state at a program point.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct MachineState {
    /// Bottom first; the top of the EVM stack is the last element.
    pub stack: Vec<AbstractValue>,
    pub memory: Memory,
    /// pc of the most recent external call, for `RETURNDATA*`.
    pub last_call: Option<usize>,
}

impl MachineState {
    pub fn with_stack(stack: Vec<AbstractValue>) -> Self {
        MachineState {
            stack,
            ..Default::default()
        }
    }

    /// Slot-wise join, aligned at the top of the stack. A height mismatch
    /// keeps only the shorter stack's depth.
    pub fn join(&self, other: &MachineState) -> MachineState {
        let n = self.stack.len().min(other.stack.len());
        let a = &self.stack[self.stack.len() - n..];
        let b = &other.stack[other.stack.len() - n..];
        MachineState {
            stack: a.iter().zip(b).map(|(x, y)| x.join(y)).collect(),
            memory: self.memory.join(&other.memory),
            last_call: if self.last_call == other.last_call {
                self.last_call
            } else {
                None
            },
        }
    }

    /// Same stack height, every slot `Top`, memory forgotten. Used once a
    /// block exceeds its visit cap.
    pub fn widen(&self) -> MachineState {
        MachineState {
            stack: vec![AbstractValue::Top; self.stack.len()],
            memory: Memory::unknown(),
            last_call: None,
        }
    }
}
