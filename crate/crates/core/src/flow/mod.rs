//! Per-function external call sites and intra-procedural flow facts.

pub mod hooks;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

pub use hooks::{classify_hook, HookClass, HookEntry, HookRegistry};

use crate::diag::{codes, Diagnostic};
use crate::disasm::Opcode;
use crate::lift::emulate::{CallEvent, Event};
use crate::lift::functions::FunctionEntry;
use crate::lift::paths::Exploration;
use crate::lift::value::{AbstractValue, CallDataRef};
use crate::types::{FunctionSig, Selector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CallOpcode {
    Call,
    StaticCall,
    DelegateCall,
    CallCode,
}

impl CallOpcode {
    pub fn from_opcode(op: Opcode) -> Option<Self> {
        match op {
            Opcode::CALL => Some(CallOpcode::Call),
            Opcode::STATICCALL => Some(CallOpcode::StaticCall),
            Opcode::DELEGATECALL => Some(CallOpcode::DelegateCall),
            Opcode::CALLCODE => Some(CallOpcode::CallCode),
            _ => None,
        }
    }

    /// The callee runs with the caller's storage (and, for `DELEGATECALL`,
    /// the caller's `msg.sender`).
    pub fn shares_context(self) -> bool {
        matches!(self, CallOpcode::DelegateCall | CallOpcode::CallCode)
    }
}

impl fmt::Display for CallOpcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CallOpcode::Call => "CALL",
            CallOpcode::StaticCall => "STATICCALL",
            CallOpcode::DelegateCall => "DELEGATECALL",
            CallOpcode::CallCode => "CALLCODE",
        })
    }
}

/// Index of a call site within its function summary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct CallSiteId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Tristate {
    Yes,
    No,
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct CallSite {
    pub id: CallSiteId,
    pub pc: usize,
    pub host_function: FunctionSig,
    pub call_opcode: CallOpcode,
    pub callee: AbstractValue,
    /// Set iff the first four input bytes are a constant.
    pub target_selector: Option<Selector>,
    pub empty_input: bool,
    pub arg_values: Vec<AbstractValue>,
    pub sends_value: Tristate,
}

impl CallSite {
    pub fn is_static(&self) -> bool {
        self.call_opcode == CallOpcode::StaticCall
    }
}

/// A function input: an ABI head argument or the implicit `msg.sender`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ArgSlot {
    Arg(u32),
    Sender,
}

impl fmt::Display for ArgSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArgSlot::Arg(k) => write!(f, "arg{k}"),
            ArgSlot::Sender => f.write_str("sender"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum FactKind {
    FuncArgToCallArg,
    FuncArgToFuncRet,
    FuncArgToCallee,
    CallRetToCallArg,
    CallRetToFuncRet,
}

/// One end of a flow fact inside a function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(tag = "at", rename_all = "snake_case")]
pub enum Endpoint {
    FuncArg { arg: ArgSlot },
    CallArg { site: CallSiteId, position: u32 },
    Callee { site: CallSiteId },
    CallRet { site: CallSiteId },
    FuncRet { position: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(tag = "kind")]
pub enum FlowFact {
    FuncArgToCallArg { arg: ArgSlot, site: CallSiteId, position: u32 },
    FuncArgToFuncRet { arg: ArgSlot, position: u32 },
    FuncArgToCallee { arg: ArgSlot, site: CallSiteId },
    CallRetToCallArg { from: CallSiteId, site: CallSiteId, position: u32 },
    CallRetToFuncRet { from: CallSiteId, position: u32 },
}

impl FlowFact {
    pub fn kind(&self) -> FactKind {
        match self {
            FlowFact::FuncArgToCallArg { .. } => FactKind::FuncArgToCallArg,
            FlowFact::FuncArgToFuncRet { .. } => FactKind::FuncArgToFuncRet,
            FlowFact::FuncArgToCallee { .. } => FactKind::FuncArgToCallee,
            FlowFact::CallRetToCallArg { .. } => FactKind::CallRetToCallArg,
            FlowFact::CallRetToFuncRet { .. } => FactKind::CallRetToFuncRet,
        }
    }

    pub fn source(&self) -> Endpoint {
        match *self {
            FlowFact::FuncArgToCallArg { arg, .. }
            | FlowFact::FuncArgToFuncRet { arg, .. }
            | FlowFact::FuncArgToCallee { arg, .. } => Endpoint::FuncArg { arg },
            FlowFact::CallRetToCallArg { from, .. } | FlowFact::CallRetToFuncRet { from, .. } => {
                Endpoint::CallRet { site: from }
            }
        }
    }

    pub fn sink(&self) -> Endpoint {
        match *self {
            FlowFact::FuncArgToCallArg { site, position, .. } | FlowFact::CallRetToCallArg { site, position, .. } => {
                Endpoint::CallArg { site, position }
            }
            FlowFact::FuncArgToFuncRet { position, .. } | FlowFact::CallRetToFuncRet { position, .. } => {
                Endpoint::FuncRet { position }
            }
            FlowFact::FuncArgToCallee { site, .. } => Endpoint::Callee { site },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FunctionSummary {
    pub selector: FunctionSig,
    /// Sorted by pc; ids are positions in this list.
    pub call_sites: Vec<CallSite>,
    pub flow_facts: BTreeSet<FlowFact>,
    pub is_hook: Option<HookClass>,
    /// `msg.sender` is compared for equality somewhere in the function.
    pub uses_sender: bool,
    #[serde(skip)]
    pub diagnostics: Vec<Diagnostic>,
}

impl FunctionSummary {
    pub fn empty(selector: FunctionSig) -> Self {
        FunctionSummary {
            selector,
            call_sites: Vec::new(),
            flow_facts: BTreeSet::new(),
            is_hook: None,
            uses_sender: false,
            diagnostics: Vec::new(),
        }
    }

    pub fn site(&self, id: CallSiteId) -> Option<&CallSite> {
        self.call_sites.get(id.0 as usize)
    }

    pub fn has_external_calls(&self) -> bool {
        !self.call_sites.is_empty()
    }

    /// Every fact endpoint names an existing call site and argument position.
    pub fn validate(&self) -> Result<(), String> {
        for (i, site) in self.call_sites.iter().enumerate() {
            if site.id.0 as usize != i {
                return Err(format!("call site {} stored at index {i}", site.id.0));
            }
        }
        let check = |e: Endpoint| -> Result<(), String> {
            match e {
                Endpoint::CallArg { site, position } => {
                    let s = self.site(site).ok_or_else(|| format!("unknown call site {}", site.0))?;
                    if position as usize >= s.arg_values.len() {
                        return Err(format!("call site {} has no argument {position}", site.0));
                    }
                    Ok(())
                }
                Endpoint::Callee { site } | Endpoint::CallRet { site } => {
                    self.site(site).map(|_| ()).ok_or_else(|| format!("unknown call site {}", site.0))
                }
                Endpoint::FuncArg { .. } | Endpoint::FuncRet { .. } => Ok(()),
            }
        };
        for fact in &self.flow_facts {
            check(fact.source())?;
            check(fact.sink())?;
        }
        Ok(())
    }
}

/// The function input a value was read from, if any.
fn arg_slot(v: &AbstractValue) -> Option<ArgSlot> {
    match v {
        AbstractValue::CallData(CallDataRef::Arg(k)) => Some(ArgSlot::Arg(*k)),
        AbstractValue::EnvSender => Some(ArgSlot::Sender),
        _ => None,
    }
}

fn sends_value(event: &CallEvent) -> Tristate {
    match &event.value {
        None => Tristate::No,
        Some(v) => match v.as_const() {
            Some(w) if w.is_zero() => Tristate::No,
            Some(_) => Tristate::Yes,
            None => Tristate::Unknown,
        },
    }
}

/// pc, opcode, callee, selector, empty input, arguments, value.
type RawSite = (usize, CallOpcode, AbstractValue, Option<Selector>, bool, Vec<AbstractValue>, Tristate);

/// Builds the call-site list and flow facts of one function from the events
/// its exploration produced.
pub fn summarize(function: &FunctionEntry, exploration: &Exploration, registry: &HookRegistry) -> FunctionSummary {
    let sig = function.sig;
    let mut raw: BTreeSet<RawSite> = BTreeSet::new();
    for event in &exploration.events {
        if let Event::Call(c) = event {
            let Some(op) = CallOpcode::from_opcode(c.opcode) else { continue };
            let selector = c.selector.as_const().and_then(|w| Selector::from_word(&w));
            raw.insert((c.pc, op, c.callee.clone(), selector, c.empty_input, c.args.clone(), sends_value(c)));
        }
    }
    let call_sites: Vec<CallSite> = raw
        .into_iter()
        .enumerate()
        .map(|(i, (pc, call_opcode, callee, target_selector, empty_input, arg_values, sends_value))| CallSite {
            id: CallSiteId(i as u32),
            pc,
            host_function: sig,
            call_opcode,
            callee,
            target_selector,
            empty_input,
            arg_values,
            sends_value,
        })
        .collect();
    let mut by_pc: BTreeMap<usize, Vec<CallSiteId>> = BTreeMap::new();
    for s in &call_sites {
        by_pc.entry(s.pc).or_default().push(s.id);
    }
    let returns_of = |v: &AbstractValue| -> Vec<CallSiteId> {
        match v {
            AbstractValue::CallReturn(pc) => by_pc.get(pc).cloned().unwrap_or_default(),
            _ => Vec::new(),
        }
    };

    let mut facts = BTreeSet::new();
    for site in &call_sites {
        for (position, v) in site.arg_values.iter().enumerate() {
            let position = position as u32;
            if let Some(arg) = arg_slot(v) {
                facts.insert(FlowFact::FuncArgToCallArg { arg, site: site.id, position });
            }
            for from in returns_of(v) {
                facts.insert(FlowFact::CallRetToCallArg { from, site: site.id, position });
            }
        }
        if let Some(arg) = arg_slot(&site.callee) {
            facts.insert(FlowFact::FuncArgToCallee { arg, site: site.id });
        }
    }

    let mut diagnostics = exploration.diagnostics.clone();
    let mut uses_sender = false;
    for event in &exploration.events {
        match event {
            Event::Return { payload, .. } => {
                for (position, v) in payload.iter().enumerate() {
                    let position = position as u32;
                    if let Some(arg) = arg_slot(v) {
                        facts.insert(FlowFact::FuncArgToFuncRet { arg, position });
                    }
                    for from in returns_of(v) {
                        facts.insert(FlowFact::CallRetToFuncRet { from, position });
                    }
                }
            }
            Event::SStore { pc, value, .. } => {
                if arg_slot(value).is_some() || matches!(value, AbstractValue::CallReturn(_)) {
                    diagnostics.push(
                        Diagnostic::new(
                            codes::STORAGE_TAINT_DROPPED,
                            format!("{value:?} written to storage is not tracked"),
                        )
                        .at_pc(*pc)
                        .in_function(sig),
                    );
                }
            }
            Event::SenderCompare { .. } => uses_sender = true,
            Event::Call(_) => {}
        }
    }
    if call_sites.iter().any(|s| s.callee == AbstractValue::EnvSender) {
        uses_sender = true;
    }

    let class = registry.classify(sig);
    let is_hook = match class {
        HookClass::Candidate if call_sites.is_empty() => None,
        c => Some(c),
    };
    FunctionSummary {
        selector: sig,
        call_sites,
        flow_facts: facts,
        is_hook,
        uses_sender,
        diagnostics,
    }
}
