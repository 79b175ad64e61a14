use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::chain::ChainBackend;
use crate::error::{AnalysisError, FetchError};
use crate::types::{decode_hex, word_from_hex, word_to_hex32, word_to_quantity, ContractId, Word};

pub const STORAGE_FILE: &str = "storage.json";

/// Code and storage kept in memory, loadable from and writable to a fixture
/// directory: one `<address>.hex` per contract plus a `storage.json` mapping
/// address to slot to word.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FixtureStore {
    code: BTreeMap<ContractId, Vec<u8>>,
    storage: BTreeMap<ContractId, BTreeMap<Word, Word>>,
}

fn io_err(path: &Path, source: std::io::Error) -> AnalysisError {
    AnalysisError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl FixtureStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_code(&mut self, id: ContractId, code: Vec<u8>) {
        if code.is_empty() {
            self.code.remove(&id);
        } else {
            self.code.insert(id, code);
        }
    }

    pub fn insert_storage(&mut self, id: ContractId, slot: Word, value: Word) {
        if value.is_zero() {
            if let Some(m) = self.storage.get_mut(&id) {
                m.remove(&slot);
                if m.is_empty() {
                    self.storage.remove(&id);
                }
            }
        } else {
            self.storage.entry(id).or_default().insert(slot, value);
        }
    }

    pub fn code_of(&self, id: ContractId) -> &[u8] {
        self.code.get(&id).map_or(&[], Vec::as_slice)
    }

    pub fn storage_of(&self, id: ContractId, slot: Word) -> Word {
        self.storage
            .get(&id)
            .and_then(|m| m.get(&slot))
            .copied()
            .unwrap_or(Word::ZERO)
    }

    pub fn addresses(&self) -> impl Iterator<Item = ContractId> + '_ {
        self.code.keys().copied()
    }

    /// First address whose stored code equals `code`.
    pub fn find_by_code(&self, code: &[u8]) -> Option<ContractId> {
        self.code.iter().find(|(_, c)| c.as_slice() == code).map(|(id, _)| *id)
    }

    pub fn open(dir: &Path) -> Result<Self, AnalysisError> {
        let mut store = FixtureStore::new();
        let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "hex"))
            .collect();
        paths.sort();
        for path in paths {
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            // files not named after an address (e.g. loose inputs) are ignored
            let Ok(id) = stem.parse::<ContractId>() else { continue };
            let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            store.insert_code(id, decode_hex(&text)?);
        }
        let storage_path = dir.join(STORAGE_FILE);
        if storage_path.exists() {
            let text = fs::read_to_string(&storage_path).map_err(|e| io_err(&storage_path, e))?;
            let raw: BTreeMap<String, BTreeMap<String, String>> =
                serde_json::from_str(&text).map_err(|e| AnalysisError::Io {
                    path: storage_path.display().to_string(),
                    source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
                })?;
            for (addr, slots) in raw {
                let id: ContractId = addr.parse()?;
                for (slot, value) in slots {
                    store.insert_storage(id, word_from_hex(&slot)?, word_from_hex(&value)?);
                }
            }
        }
        Ok(store)
    }

    /// Writes the fixture directory layout, creating `dir` if needed.
    pub fn write(&self, dir: &Path) -> Result<(), AnalysisError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        for (id, code) in &self.code {
            let path = dir.join(format!("{id}.hex"));
            fs::write(&path, format!("0x{}\n", hex::encode(code))).map_err(|e| io_err(&path, e))?;
        }
        let raw: BTreeMap<String, BTreeMap<String, String>> = self
            .storage
            .iter()
            .map(|(id, slots)| {
                (
                    id.to_string(),
                    slots
                        .iter()
                        .map(|(s, v)| (word_to_quantity(s), word_to_hex32(v)))
                        .collect(),
                )
            })
            .collect();
        let path = dir.join(STORAGE_FILE);
        let text = serde_json::to_string_pretty(&raw).expect("string maps serialize");
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
        Ok(())
    }

    /// Merges `other` into `self`, `other` winning on conflicts.
    pub fn merge(&mut self, other: &FixtureStore) {
        for (id, code) in &other.code {
            self.code.insert(*id, code.clone());
        }
        for (id, slots) in &other.storage {
            for (s, v) in slots {
                self.insert_storage(*id, *s, *v);
            }
        }
    }
}

impl ChainBackend for FixtureStore {
    fn code(&self, id: ContractId) -> Result<Vec<u8>, FetchError> {
        Ok(self.code_of(id).to_vec())
    }

    fn storage(&self, id: ContractId, slot: Word) -> Result<Word, FetchError> {
        Ok(self.storage_of(id, slot))
    }

    fn describe(&self) -> String {
        format!("fixtures({} contracts)", self.code.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_address_is_empty_account() {
        let store = FixtureStore::new();
        assert!(store.code(ContractId::synthetic(1, 1)).unwrap().is_empty());
        assert_eq!(store.storage(ContractId::synthetic(1, 1), Word::ZERO).unwrap(), Word::ZERO);
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = ContractId::synthetic(0xaa, 1);
        let victim = ContractId::synthetic(0xbb, 2);
        let mut store = FixtureStore::new();
        store.insert_code(a, vec![0x60, 0x00, 0x54, 0x00]);
        store.insert_storage(a, Word::ZERO, victim.to_word());
        store.write(dir.path()).unwrap();
        let back = FixtureStore::open(dir.path()).unwrap();
        assert_eq!(back, store);
        assert_eq!(ContractId::from_word(&back.storage_of(a, Word::ZERO)), victim);
        let json = fs::read_to_string(dir.path().join(STORAGE_FILE)).unwrap();
        assert!(json.contains(&a.to_string()));
        assert!(json.contains("\"0x0\""));
    }

    #[test]
    fn non_address_hex_files_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("input.hex"), "0x00").unwrap();
        let store = FixtureStore::open(dir.path()).unwrap();
        assert_eq!(store.addresses().count(), 0);
    }
}
