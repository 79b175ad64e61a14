//! Identifiers shared by every stage: machine words, addresses, selectors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use tiny_keccak::{Hasher, Keccak};

use crate::error::ParseError;

/// A 256-bit EVM machine word.
pub type Word = ruint::aliases::U256;

/// keccak-256 of `data`.
pub fn keccak256(data: &[u8]) -> [u8; 32] {
    let mut out = [0u8; 32];
    let mut hasher = Keccak::v256();
    hasher.update(data);
    hasher.finalize(&mut out);
    out
}

/// Parses `0x`-prefixed (or bare) hex, tolerating surrounding whitespace and an
/// odd digit count.
pub fn decode_hex(text: &str) -> Result<Vec<u8>, ParseError> {
    let text = text.trim();
    let digits = text
        .strip_prefix("0x")
        .or_else(|| text.strip_prefix("0X"))
        .unwrap_or(text);
    let digits: String = digits.chars().filter(|c| !c.is_whitespace()).collect();
    let padded = if digits.len() % 2 == 1 {
        format!("0{digits}")
    } else {
        digits
    };
    hex::decode(&padded).map_err(|e| ParseError::Hex(e.to_string()))
}

/// Minimal `0x` quantity rendering (`0x0`, `0x1f`, ...), as used for JSON-RPC
/// quantities and storage slot keys.
pub fn word_to_quantity(word: &Word) -> String {
    format!("{word:#x}")
}

/// Full-width 32-byte rendering.
pub fn word_to_hex32(word: &Word) -> String {
    format!("0x{}", hex::encode(word.to_be_bytes::<32>()))
}

pub fn word_from_hex(text: &str) -> Result<Word, ParseError> {
    let bytes = decode_hex(text)?;
    if bytes.len() > 32 {
        return Err(ParseError::Length {
            what: "word",
            expected: 32,
            found: bytes.len(),
        });
    }
    Ok(Word::from_be_slice(&bytes))
}

pub(crate) mod word_serde {
    use super::{word_to_quantity, Serializer, Word};

    pub fn serialize<S: Serializer>(word: &Word, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&word_to_quantity(word))
    }
}

/// A 20-byte account address. Always rendered as lowercase `0x` hex.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ContractId(pub [u8; 20]);

impl ContractId {
    pub const ZERO: ContractId = ContractId([0u8; 20]);

    /// Low 160 bits of a word.
    pub fn from_word(word: &Word) -> Self {
        let bytes = word.to_be_bytes::<32>();
        let mut out = [0u8; 20];
        out.copy_from_slice(&bytes[12..]);
        ContractId(out)
    }

    pub fn to_word(self) -> Word {
        Word::from_be_slice(&self.0)
    }

    /// Deterministic test/fixture address: `0x` followed by `tag` repeated to
    /// fill 20 bytes, last byte replaced with `index`.
    pub fn synthetic(tag: u8, index: u8) -> Self {
        let mut out = [tag; 20];
        out[19] = index;
        ContractId(out)
    }
}

impl fmt::Display for ContractId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for ContractId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for ContractId {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let digits = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")).unwrap_or(s);
        if digits.len() != 40 {
            return Err(ParseError::Length {
                what: "address",
                expected: 20,
                found: digits.len() / 2,
            });
        }
        let bytes = hex::decode(digits).map_err(|e| ParseError::Hex(e.to_string()))?;
        let mut out = [0u8; 20];
        out.copy_from_slice(&bytes);
        Ok(ContractId(out))
    }
}

impl Serialize for ContractId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ContractId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// A 4-byte function selector.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Selector(pub [u8; 4]);

impl Selector {
    pub const fn from_u32(value: u32) -> Self {
        Selector(value.to_be_bytes())
    }

    pub fn as_u32(self) -> u32 {
        u32::from_be_bytes(self.0)
    }

    /// First four bytes of keccak-256 of a canonical signature such as
    /// `transfer(address,uint256)`.
    pub fn from_signature(signature: &str) -> Self {
        let hash = keccak256(signature.as_bytes());
        Selector([hash[0], hash[1], hash[2], hash[3]])
    }

    /// `Some` when the word fits in 32 bits.
    pub fn from_word(word: &Word) -> Option<Self> {
        if word.bit_len() > 32 {
            return None;
        }
        Some(Selector::from_u32(word.to::<u32>()))
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Selector {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = decode_hex(s)?;
        if bytes.len() != 4 {
            return Err(ParseError::Length {
                what: "selector",
                expected: 4,
                found: bytes.len(),
            });
        }
        Ok(Selector([bytes[0], bytes[1], bytes[2], bytes[3]]))
    }
}

impl Serialize for Selector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Selector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// A public entry point: a dispatched selector or the fallback path.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FunctionSig {
    Selector(Selector),
    Fallback,
}

impl FunctionSig {
    pub fn selector(self) -> Option<Selector> {
        match self {
            FunctionSig::Selector(s) => Some(s),
            FunctionSig::Fallback => None,
        }
    }

    pub fn is_fallback(self) -> bool {
        matches!(self, FunctionSig::Fallback)
    }
}

impl From<Selector> for FunctionSig {
    fn from(s: Selector) -> Self {
        FunctionSig::Selector(s)
    }
}

impl fmt::Display for FunctionSig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FunctionSig::Selector(s) => fmt::Display::fmt(s, f),
            FunctionSig::Fallback => f.write_str("fallback"),
        }
    }
}

impl fmt::Debug for FunctionSig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for FunctionSig {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case("fallback") {
            Ok(FunctionSig::Fallback)
        } else {
            s.parse().map(FunctionSig::Selector)
        }
    }
}

impl Serialize for FunctionSig {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FunctionSig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn address_renders_lowercase() {
        let id: ContractId = "0xABCDEF0123456789abcdef0123456789ABCDEF01".parse().unwrap();
        assert_eq!(id.to_string(), "0xabcdef0123456789abcdef0123456789abcdef01");
    }

    #[test]
    fn address_is_low_160_bits() {
        let mut bytes = [0xffu8; 32];
        bytes[12..].copy_from_slice(&[0x11; 20]);
        let id = ContractId::from_word(&Word::from_be_bytes(bytes));
        assert_eq!(id, ContractId([0x11; 20]));
    }

    #[test]
    fn known_selectors() {
        assert_eq!(
            Selector::from_signature("transfer(address,uint256)"),
            Selector::from_u32(0xa9059cbb)
        );
        assert_eq!(
            Selector::from_signature("transferFrom(address,address,uint256)"),
            Selector::from_u32(0x23b872dd)
        );
    }

    #[test]
    fn function_sig_text_forms() {
        assert_eq!("fallback".parse::<FunctionSig>().unwrap(), FunctionSig::Fallback);
        assert_eq!(
            "0x150b7a02".parse::<FunctionSig>().unwrap(),
            FunctionSig::Selector(Selector::from_u32(0x150b7a02))
        );
        assert!("0x150b7a".parse::<FunctionSig>().is_err());
    }

    #[test]
    fn hex_tolerates_prefix_and_odd_length() {
        assert_eq!(decode_hex("0x1").unwrap(), vec![1]);
        assert_eq!(decode_hex(" 6001 \n").unwrap(), vec![0x60, 0x01]);
        assert!(decode_hex("0xzz").is_err());
    }
}
