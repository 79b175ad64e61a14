use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde_json::{json, Value};

use crate::chain::ChainBackend;
use crate::error::FetchError;
use crate::types::{decode_hex, word_from_hex, word_to_quantity, ContractId, Word};

/// JSON-RPC 2.0 over HTTP. The block height is resolved once, at
/// construction, and used for every read.
pub struct RpcBackend {
    url: String,
    block: String,
    agent: ureq::Agent,
    next_id: AtomicU64,
}

impl RpcBackend {
    /// Connects and pins the current block number.
    pub fn connect(url: &str) -> Result<Self, FetchError> {
        let mut backend = RpcBackend {
            url: url.to_string(),
            block: "latest".into(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(30)).build(),
            next_id: AtomicU64::new(1),
        };
        let number = backend.request("eth_blockNumber", json!([]))?;
        let number = number
            .as_str()
            .ok_or_else(|| FetchError::Decode(format!("block number {number}")))?;
        backend.block = word_to_quantity(&word_from_hex(number).map_err(|e| FetchError::Decode(e.to_string()))?);
        Ok(backend)
    }

    /// Uses `block` (a quantity or tag) without querying the node.
    pub fn at_block(url: &str, block: &str) -> Self {
        RpcBackend {
            url: url.to_string(),
            block: block.to_string(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(30)).build(),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn block(&self) -> &str {
        &self.block
    }

    fn request(&self, method: &str, params: Value) -> Result<Value, FetchError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let body = json!({"jsonrpc": "2.0", "id": id, "method": method, "params": params});
        let response = match self.agent.post(&self.url).set("Content-Type", "application/json")
            .send_string(&body.to_string())
        {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                return Err(FetchError::Transport(format!(
                    "HTTP {code}: {}",
                    r.into_string().unwrap_or_default()
                )))
            }
            Err(e) => return Err(FetchError::Transport(e.to_string())),
        };
        let text = response
            .into_string()
            .map_err(|e| FetchError::Transport(e.to_string()))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| FetchError::Decode(e.to_string()))?;
        if let Some(err) = value.get("error") {
            return Err(FetchError::Rpc {
                code: err.get("code").and_then(Value::as_i64).unwrap_or(0),
                message: err
                    .get("message")
                    .and_then(Value::as_str)
                    .unwrap_or("")
                    .to_string(),
            });
        }
        value
            .get("result")
            .cloned()
            .ok_or_else(|| FetchError::Decode("response without result".into()))
    }

    fn hex_result(&self, method: &str, params: Value) -> Result<Vec<u8>, FetchError> {
        let result = self.request(method, params)?;
        let text = result
            .as_str()
            .ok_or_else(|| FetchError::Decode(format!("{method} result {result}")))?;
        decode_hex(text).map_err(|e| FetchError::Decode(e.to_string()))
    }
}

impl ChainBackend for RpcBackend {
    fn code(&self, id: ContractId) -> Result<Vec<u8>, FetchError> {
        self.hex_result("eth_getCode", json!([id.to_string(), self.block]))
    }

    fn storage(&self, id: ContractId, slot: Word) -> Result<Word, FetchError> {
        let bytes = self.hex_result(
            "eth_getStorageAt",
            json!([id.to_string(), word_to_quantity(&slot), self.block]),
        )?;
        if bytes.len() > 32 {
            return Err(FetchError::Decode(format!("storage word of {} bytes", bytes.len())));
        }
        Ok(Word::from_be_slice(&bytes))
    }

    fn describe(&self) -> String {
        format!("rpc({} @ {})", self.url, self.block)
    }
}
