//! In-process JSON-RPC endpoint that serves a [`FixtureStore`], for tests
//! and offline record/replay runs.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::{json, Value};

use crate::chain::fixtures::FixtureStore;
use crate::types::{word_from_hex, word_to_hex32, ContractId};

pub const MOCK_BLOCK: u64 = 0x112a880;

struct Shared {
    store: FixtureStore,
    stop: AtomicBool,
    requests: AtomicUsize,
    /// Requests still to be answered with HTTP 503.
    failures: AtomicUsize,
}

pub struct MockRpcServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    handle: Option<JoinHandle<()>>,
}

impl MockRpcServer {
    pub fn start(store: FixtureStore) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            store,
            stop: AtomicBool::new(false),
            requests: AtomicUsize::new(0),
            failures: AtomicUsize::new(0),
        });
        let worker = Arc::clone(&shared);
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if worker.stop.load(Ordering::SeqCst) {
                    break;
                }
                if let Ok(stream) = stream {
                    let _ = serve(&worker, stream);
                }
            }
        });
        Ok(MockRpcServer {
            addr,
            shared,
            handle: Some(handle),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// JSON-RPC requests answered so far.
    pub fn requests(&self) -> usize {
        self.shared.requests.load(Ordering::SeqCst)
    }

    /// Answers the next `n` requests with a transport-level failure.
    pub fn fail_next(&self, n: usize) {
        self.shared.failures.store(n, Ordering::SeqCst);
    }
}

impl Drop for MockRpcServer {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(shared: &Shared, stream: TcpStream) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut length = 0usize;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            break;
        }
        if let Some((name, value)) = trimmed.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body)?;
    let mut stream = stream;
    let failing = shared
        .failures
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok();
    if failing {
        let msg = "unavailable";
        write!(
            stream,
            "HTTP/1.1 503 Service Unavailable\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{msg}",
            msg.len()
        )?;
        return stream.flush();
    }
    shared.requests.fetch_add(1, Ordering::SeqCst);
    let response = match serde_json::from_slice::<Value>(&body) {
        Ok(req) => answer(&shared.store, &req),
        Err(e) => json!({"jsonrpc": "2.0", "id": null, "error": {"code": -32700, "message": e.to_string()}}),
    };
    let text = response.to_string();
    write!(
        stream,
        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    )?;
    stream.flush()
}

fn answer(store: &FixtureStore, req: &Value) -> Value {
    let id = req.get("id").cloned().unwrap_or(Value::Null);
    let params = req.get("params").and_then(Value::as_array).cloned().unwrap_or_default();
    let address = |i: usize| -> Option<ContractId> { params.get(i)?.as_str()?.parse().ok() };
    let result = match req.get("method").and_then(Value::as_str) {
        Some("eth_blockNumber") => Ok(json!(format!("{MOCK_BLOCK:#x}"))),
        Some("eth_getCode") => match address(0) {
            Some(a) => Ok(json!(format!("0x{}", hex::encode(store.code_of(a))))),
            None => Err((-32602, "invalid address")),
        },
        Some("eth_getStorageAt") => {
            let slot = params.get(1).and_then(Value::as_str).and_then(|s| word_from_hex(s).ok());
            match (address(0), slot) {
                (Some(a), Some(s)) => Ok(json!(word_to_hex32(&store.storage_of(a, s)))),
                _ => Err((-32602, "invalid params")),
            }
        }
        _ => Err((-32601, "method not found")),
    };
    match result {
        Ok(r) => json!({"jsonrpc": "2.0", "id": id, "result": r}),
        Err((code, message)) => json!({"jsonrpc": "2.0", "id": id, "error": {"code": code, "message": message}}),
    }
}
