//! Read-only access to contract code and storage, from a node or from
//! fixture files, behind a shared cache.

pub mod fixtures;
pub mod mock;
pub mod rpc;

use std::collections::HashMap;
use std::sync::{Mutex, RwLock};
use std::time::Duration;

pub use fixtures::FixtureStore;
pub use mock::MockRpcServer;
pub use rpc::RpcBackend;

use crate::disasm::Bytecode;
use crate::error::FetchError;
use crate::types::{ContractId, Word};

pub const RPC_URL_ENV: &str = "ETH_RPC_URL";

pub trait ChainBackend: Send + Sync {
    /// Runtime code; empty for accounts without code.
    fn code(&self, id: ContractId) -> Result<Vec<u8>, FetchError>;
    fn storage(&self, id: ContractId, slot: Word) -> Result<Word, FetchError>;
    fn describe(&self) -> String;
}

/// A backend that fails every read, for analyses of standalone bytecode.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoBackend;

impl ChainBackend for NoBackend {
    fn code(&self, _: ContractId) -> Result<Vec<u8>, FetchError> {
        Err(FetchError::NoBackend)
    }

    fn storage(&self, _: ContractId, _: Word) -> Result<Word, FetchError> {
        Err(FetchError::NoBackend)
    }

    fn describe(&self) -> String {
        "none".into()
    }
}

/// Caching, retrying front end over a [`ChainBackend`]. Safe to share
/// between threads; every successful read can also be recorded into a
/// [`FixtureStore`] for later replay.
pub struct ChainClient {
    backend: Box<dyn ChainBackend>,
    code: RwLock<HashMap<ContractId, Vec<u8>>>,
    storage: RwLock<HashMap<(ContractId, Word), Word>>,
    recorder: Option<Mutex<FixtureStore>>,
    attempts: u32,
    backoff: Duration,
}

impl ChainClient {
    pub fn new(backend: impl ChainBackend + 'static) -> Self {
        ChainClient {
            backend: Box::new(backend),
            code: RwLock::default(),
            storage: RwLock::default(),
            recorder: None,
            attempts: 3,
            backoff: Duration::from_millis(50),
        }
    }

    pub fn offline() -> Self {
        Self::new(NoBackend)
    }

    pub fn with_retries(mut self, attempts: u32, backoff: Duration) -> Self {
        self.attempts = attempts.max(1);
        self.backoff = backoff;
        self
    }

    pub fn recording(mut self) -> Self {
        self.recorder = Some(Mutex::new(FixtureStore::new()));
        self
    }

    /// Everything read so far, when recording.
    pub fn recorded(&self) -> Option<FixtureStore> {
        self.recorder.as_ref().map(|r| r.lock().expect("recorder lock").clone())
    }

    pub fn describe(&self) -> String {
        self.backend.describe()
    }

    fn retry<T>(&self, mut f: impl FnMut() -> Result<T, FetchError>) -> Result<T, FetchError> {
        let mut attempt = 1;
        loop {
            match f() {
                Err(e) if e.is_retryable() && attempt < self.attempts => {
                    std::thread::sleep(self.backoff * attempt);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    pub fn code_bytes(&self, id: ContractId) -> Result<Vec<u8>, FetchError> {
        if let Some(c) = self.code.read().expect("code cache").get(&id) {
            return Ok(c.clone());
        }
        let code = self.retry(|| self.backend.code(id))?;
        if let Some(r) = &self.recorder {
            r.lock().expect("recorder lock").insert_code(id, code.clone());
        }
        self.code.write().expect("code cache").insert(id, code.clone());
        Ok(code)
    }

    pub fn get_code(&self, id: ContractId) -> Result<Bytecode, FetchError> {
        self.code_bytes(id).map(Bytecode::runtime)
    }

    pub fn get_storage(&self, id: ContractId, slot: Word) -> Result<Word, FetchError> {
        if let Some(v) = self.storage.read().expect("storage cache").get(&(id, slot)) {
            return Ok(*v);
        }
        let value = self.retry(|| self.backend.storage(id, slot))?;
        if let Some(r) = &self.recorder {
            r.lock().expect("recorder lock").insert_storage(id, slot, value);
        }
        self.storage.write().expect("storage cache").insert((id, slot), value);
        Ok(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> (FixtureStore, ContractId) {
        let id = ContractId::synthetic(0x11, 1);
        let mut s = FixtureStore::new();
        s.insert_code(id, vec![0x60, 0x01, 0x00]);
        s.insert_storage(id, Word::from(3u64), Word::from(0xbeefu64));
        (s, id)
    }

    #[test]
    fn rpc_backend_reads_mock_node() {
        let (s, id) = store();
        let server = MockRpcServer::start(s).unwrap();
        let rpc = RpcBackend::connect(&server.url()).unwrap();
        assert_eq!(rpc.block(), format!("{:#x}", mock::MOCK_BLOCK));
        assert_eq!(rpc.code(id).unwrap(), vec![0x60, 0x01, 0x00]);
        assert_eq!(rpc.storage(id, Word::from(3u64)).unwrap(), Word::from(0xbeefu64));
        assert!(rpc.code(ContractId::synthetic(0x11, 9)).unwrap().is_empty());
    }

    #[test]
    fn client_caches_reads() {
        let (s, id) = store();
        let server = MockRpcServer::start(s).unwrap();
        let client = ChainClient::new(RpcBackend::connect(&server.url()).unwrap());
        let before = server.requests();
        for _ in 0..3 {
            client.get_code(id).unwrap();
            client.get_storage(id, Word::from(3u64)).unwrap();
        }
        assert_eq!(server.requests() - before, 2);
    }

    #[test]
    fn transient_failures_are_retried() {
        let (s, id) = store();
        let server = MockRpcServer::start(s).unwrap();
        let rpc = RpcBackend::connect(&server.url()).unwrap();
        let client = ChainClient::new(rpc).with_retries(3, Duration::from_millis(1));
        server.fail_next(2);
        assert_eq!(client.code_bytes(id).unwrap(), vec![0x60, 0x01, 0x00]);
        server.fail_next(5);
        let other = ContractId::synthetic(0x11, 2);
        assert!(matches!(client.code_bytes(other), Err(FetchError::Transport(_))));
    }

    #[test]
    fn rpc_errors_are_not_retried() {
        let err = FetchError::Rpc { code: -32602, message: "bad".into() };
        assert!(!err.is_retryable());
    }

    #[test]
    fn recording_replays_identically() {
        let (s, id) = store();
        let client = ChainClient::new(s.clone()).recording();
        client.get_code(id).unwrap();
        client.get_storage(id, Word::from(3u64)).unwrap();
        client.get_storage(id, Word::from(4u64)).unwrap();
        assert_eq!(client.recorded().unwrap(), s);
    }

    #[test]
    fn offline_client_reports_no_backend() {
        let c = ChainClient::offline();
        assert!(matches!(c.get_code(ContractId::ZERO), Err(FetchError::NoBackend)));
    }
}
