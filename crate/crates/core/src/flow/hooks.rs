use std::fmt;
use std::path::Path;

use serde::Serialize;

use crate::error::{AnalysisError, ParseError};
use crate::types::{FunctionSig, Selector};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HookEntry {
    pub selector: Selector,
    pub name: String,
    /// Where the entry comes from, e.g. `eip` or `keccak`.
    pub kind: String,
}

/// Selectors of functions that token standards call on counterparties.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HookRegistry {
    entries: Vec<HookEntry>,
}

const BUILTIN: &[(u32, &str, &str)] = &[
    (0x01c6adc3, "transferFrom", "eip"),
    (0x23b872dd, "transferFrom", "keccak"),
    (0x150b7a02, "onERC721Received", "eip"),
    (0xf23a6e61, "onERC1155Received", "eip"),
    (0x75ab9782, "tokensToSend", "eip"),
    (0x0023de29, "tokensReceived", "eip"),
    (0x249cb3fa, "canImplementInterfaceForAddress", "eip"),
];

impl Default for HookRegistry {
    fn default() -> Self {
        HookRegistry {
            entries: BUILTIN
                .iter()
                .map(|(sel, name, kind)| HookEntry {
                    selector: Selector::from_u32(*sel),
                    name: name.to_string(),
                    kind: kind.to_string(),
                })
                .collect(),
        }
    }
}

impl HookRegistry {
    pub fn empty() -> Self {
        HookRegistry { entries: Vec::new() }
    }

    pub fn entries(&self) -> &[HookEntry] {
        &self.entries
    }

    pub fn insert(&mut self, entry: HookEntry) {
        self.entries.retain(|e| e.selector != entry.selector);
        self.entries.push(entry);
    }

    pub fn lookup(&self, selector: Selector) -> Option<&HookEntry> {
        self.entries.iter().find(|e| e.selector == selector)
    }

    /// Parses `selector name kind` lines (whitespace or comma separated,
    /// `#` comments) and adds them on top of the built-in entries.
    pub fn extend_from_str(&mut self, text: &str) -> Result<(), ParseError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|f| !f.is_empty())
                .collect();
            if fields.len() < 2 || fields.len() > 3 {
                return Err(ParseError::Line {
                    line: i + 1,
                    message: "expected `selector name [kind]`".into(),
                });
            }
            let selector = fields[0].parse().map_err(|e: ParseError| ParseError::Line {
                line: i + 1,
                message: e.to_string(),
            })?;
            self.insert(HookEntry {
                selector,
                name: fields[1].to_string(),
                kind: fields.get(2).unwrap_or(&"user").to_string(),
            });
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AnalysisError> {
        let text = std::fs::read_to_string(path).map_err(|source| AnalysisError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut registry = HookRegistry::default();
        registry.extend_from_str(&text)?;
        Ok(registry)
    }

    pub fn classify(&self, sig: FunctionSig) -> HookClass {
        match sig {
            FunctionSig::Fallback => HookClass::Fallback,
            FunctionSig::Selector(s) => match self.lookup(s) {
                Some(e) => HookClass::KnownEipHook(e.name.clone()),
                None => HookClass::Candidate,
            },
        }
    }
}

/// How a public function can be re-entered.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "class", content = "name", rename_all = "kebab-case")]
pub enum HookClass {
    KnownEipHook(String),
    Fallback,
    /// Any other public function; a user-defined callback interface.
    Candidate,
}

impl fmt::Display for HookClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HookClass::KnownEipHook(name) => write!(f, "known-eip-hook({name})"),
            HookClass::Fallback => f.write_str("fallback"),
            HookClass::Candidate => f.write_str("candidate"),
        }
    }
}

/// Classification with the built-in registry.
pub fn classify_hook(sig: FunctionSig) -> HookClass {
    HookRegistry::default().classify(sig)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_classification() {
        assert_eq!(
            classify_hook(FunctionSig::Selector(Selector::from_u32(0x150b7a02))),
            HookClass::KnownEipHook("onERC721Received".into())
        );
        assert_eq!(classify_hook(FunctionSig::Fallback), HookClass::Fallback);
        let user = Selector::from_signature("delegatedTransferERC20(address,address,uint256)");
        assert_eq!(classify_hook(FunctionSig::Selector(user)), HookClass::Candidate);
    }

    #[test]
    fn both_transfer_from_selectors_are_known() {
        let r = HookRegistry::default();
        assert_eq!(r.lookup(Selector::from_u32(0x01c6adc3)).unwrap().kind, "eip");
        let derived = Selector::from_signature("transferFrom(address,address,uint256)");
        assert_eq!(r.lookup(derived).unwrap().kind, "keccak");
    }

    #[test]
    fn registry_file_extends_builtins() {
        let mut r = HookRegistry::default();
        r.extend_from_str("# extra\n0x10d1e85c, uniswapV2Call, user\n0xfa461e33 uniswapV3SwapCallback\n")
            .unwrap();
        assert_eq!(r.lookup(Selector::from_u32(0x10d1e85c)).unwrap().name, "uniswapV2Call");
        assert_eq!(r.lookup(Selector::from_u32(0xfa461e33)).unwrap().kind, "user");
        assert!(r.lookup(Selector::from_u32(0x150b7a02)).is_some());
        assert!(r.extend_from_str("nonsense").is_err());
    }
}
