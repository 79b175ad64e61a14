//! Front end plumbing: input and backend selection, single runs, batches.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use hookwatch_core::chain::RpcBackend;
use hookwatch_core::disasm::Bytecode;
use hookwatch_core::flow::HookRegistry;
use hookwatch_core::{
    detect, AnalysisConfig, AnalysisError, Analyzer, ChainClient, ContractId, DetectOptions, DetectionReport, EntryInput,
    FixtureStore, SummaryCache, Verdict,
};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Input {
    HexFile(PathBuf),
    Hex(String),
    Address(ContractId),
}

impl fmt::Display for Input {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Input::HexFile(p) => write!(f, "{}", p.display()),
            Input::Hex(h) if h.len() > 18 => write!(f, "{}..", &h[..18]),
            Input::Hex(h) => f.write_str(h),
            Input::Address(a) => write!(f, "{a}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Backend {
    None,
    Fixtures(PathBuf),
    Rpc(String),
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub backend: Backend,
    pub depth_limit: usize,
    pub fanout_cap: usize,
    pub emit_xgraph: bool,
    pub hooks: Option<PathBuf>,
    /// Write every chain read to this fixture directory.
    pub record: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let defaults = AnalysisConfig::default();
        RunConfig {
            backend: Backend::None,
            depth_limit: defaults.depth_limit,
            fanout_cap: defaults.fanout_cap,
            emit_xgraph: false,
            hooks: None,
            record: None,
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Analysis(AnalysisError),
    Usage(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Analysis(AnalysisError::Fetch(_)) => "fetch",
            CliError::Analysis(AnalysisError::Parse(_)) => "parse",
            CliError::Analysis(AnalysisError::Io { .. }) => "io",
            CliError::Usage(_) => "usage",
        }
    }

    /// One-line JSON for the diagnostic stream.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Analysis(e) => write!(f, "{e}"),
            CliError::Usage(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl<E: Into<AnalysisError>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Analysis(e.into())
    }
}

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Analysis(AnalysisError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Shared state for one or more runs against the same backend.
pub struct Session {
    pub client: ChainClient,
    pub cache: SummaryCache,
    pub config: AnalysisConfig,
    /// Loaded fixtures, used to name hex inputs.
    fixtures: Option<FixtureStore>,
    options: DetectOptions,
    record: Option<PathBuf>,
}

impl Session {
    pub fn open(run: &RunConfig) -> Result<Self, CliError> {
        let mut registry = HookRegistry::default();
        if let Some(path) = &run.hooks {
            registry = HookRegistry::load(path)?;
        }
        let config = AnalysisConfig {
            depth_limit: run.depth_limit,
            fanout_cap: run.fanout_cap,
            registry,
            ..AnalysisConfig::default()
        };
        let (client, fixtures) = match &run.backend {
            Backend::None => (ChainClient::offline(), None),
            Backend::Fixtures(dir) => {
                let store = FixtureStore::open(dir)?;
                (ChainClient::new(store.clone()), Some(store))
            }
            Backend::Rpc(url) => (ChainClient::new(RpcBackend::connect(url)?), None),
        };
        let client = if run.record.is_some() { client.recording() } else { client };
        Ok(Session {
            client,
            cache: SummaryCache::new(),
            config,
            fixtures,
            options: DetectOptions {
                emit_xgraph: run.emit_xgraph,
            },
            record: run.record.clone(),
        })
    }

    fn hex_entry(&self, code: Vec<u8>) -> EntryInput {
        // a hex input is placed at the fixture address holding the same code
        let id = self
            .fixtures
            .as_ref()
            .and_then(|f| f.find_by_code(&code))
            .unwrap_or(ContractId::ZERO);
        EntryInput::Code {
            id,
            code: Bytecode::runtime(code),
        }
    }

    pub fn entry(&self, input: &Input) -> Result<EntryInput, CliError> {
        Ok(match input {
            Input::Address(id) => {
                if matches!(self.client.describe().as_str(), "none") {
                    return Err(CliError::Usage("address inputs need --fixtures or --rpc".into()));
                }
                EntryInput::Address(*id)
            }
            Input::Hex(text) => self.hex_entry(Bytecode::from_hex(text)?.bytes),
            Input::HexFile(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
                self.hex_entry(Bytecode::from_hex(&text)?.bytes)
            }
        })
    }

    pub fn analyze(&self, input: &Input) -> Result<DetectionReport, CliError> {
        let entry = self.entry(input)?;
        let analyzer = Analyzer::new(&self.client, &self.cache, &self.config);
        Ok(detect(analyzer, entry, &self.options)?)
    }

    /// Writes recorded chain reads, if recording.
    pub fn finish(&self) -> Result<(), CliError> {
        if let (Some(dir), Some(store)) = (&self.record, self.client.recorded()) {
            store.write(dir)?;
        }
        Ok(())
    }
}

/// Parses a batch list: one input per line, `#` comments. A line is an
/// address if it is `0x` plus 40 hex digits, raw hex if it otherwise starts
/// with `0x`, and a hex-file path (relative to the list) otherwise.
pub fn parse_list(text: &str, base: &Path) -> Result<Vec<Input>, CliError> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let hex = line.strip_prefix("0x").or_else(|| line.strip_prefix("0X"));
        out.push(match hex {
            Some(h) if h.len() == 40 && h.bytes().all(|b| b.is_ascii_hexdigit()) => Input::Address(line.parse()?),
            Some(_) => Input::Hex(line.to_string()),
            None => Input::HexFile(base.join(line)),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct BatchItem {
    pub index: usize,
    pub input: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack_types: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct BatchSummary {
    pub total: usize,
    pub attacker: usize,
    pub benign: usize,
    pub errored: usize,
    /// Attacker reports per attack type.
    pub by_attack_type: BTreeMap<String, usize>,
    pub mean_analysis_ms: f64,
    pub items: Vec<BatchItem>,
}

/// Runs every input on a shared session, `jobs` at a time. Reports go to
/// `out_dir` as `<index>.json` when given.
pub fn batch(session: &Session, inputs: &[Input], jobs: usize, out_dir: Option<&Path>) -> Result<BatchSummary, CliError> {
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let results: Vec<(BatchItem, Option<Arc<DetectionReport>>)> = pool.install(|| {
        inputs
            .par_iter()
            .enumerate()
            .map(|(index, input)| {
                let mut item = BatchItem {
                    index,
                    input: input.to_string(),
                    verdict: None,
                    attack_types: None,
                    report: None,
                    error: None,
                };
                match session.analyze(input) {
                    Ok(report) => {
                        item.verdict = Some(report.verdict);
                        item.attack_types = Some(report.attack_types().iter().map(|t| t.as_str().to_string()).collect());
                        if let Some(dir) = out_dir {
                            let path = dir.join(format!("{index}.json"));
                            match std::fs::write(&path, report.to_json()) {
                                Ok(()) => item.report = Some(path.display().to_string()),
                                Err(e) => item.error = Some(io_error(&path, e).to_string()),
                            }
                        }
                        (item, Some(Arc::new(report)))
                    }
                    Err(e) => {
                        item.error = Some(e.to_string());
                        (item, None)
                    }
                }
            })
            .collect()
    });
    let mut summary = BatchSummary::default();
    let mut total_ms = 0u64;
    for (item, report) in results {
        summary.total += 1;
        match (&item.error, report) {
            (None, Some(r)) => {
                total_ms += r.timing.analysis_ms;
                match r.verdict {
                    Verdict::Attacker => summary.attacker += 1,
                    Verdict::Benign => summary.benign += 1,
                }
                for t in r.attack_types() {
                    *summary.by_attack_type.entry(t.as_str().to_string()).or_default() += 1;
                }
            }
            _ => summary.errored += 1,
        }
        summary.items.push(item);
    }
    let analyzed = summary.attacker + summary.benign;
    if analyzed > 0 {
        summary.mean_analysis_ms = total_ms as f64 / analyzed as f64;
    }
    if let Some(dir) = out_dir {
        let path = dir.join("summary.json");
        let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        std::fs::write(&path, text).map_err(|e| io_error(&path, e))?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_lines_classify() {
        let text = "# corpus\n0x1111111111111111111111111111111111111111\n0x6000\nbounce_from.hex  # file\n\n";
        let inputs = parse_list(text, Path::new("/data")).unwrap();
        assert_eq!(
            inputs,
            vec![
                Input::Address("0x1111111111111111111111111111111111111111".parse().unwrap()),
                Input::Hex("0x6000".into()),
                Input::HexFile(PathBuf::from("/data/bounce_from.hex")),
            ]
        );
    }

    #[test]
    fn stop_only_hex_is_benign() {
        let session = Session::open(&RunConfig::default()).unwrap();
        let r = session.analyze(&Input::Hex("0x00".into())).unwrap();
        assert_eq!(r.verdict, Verdict::Benign);
        assert!(r.findings.is_empty());
    }

    #[test]
    fn address_without_backend_is_a_usage_error() {
        let session = Session::open(&RunConfig::default()).unwrap();
        let e = session.analyze(&Input::Address(ContractId::ZERO)).unwrap_err();
        assert_eq!(e.kind(), "usage");
    }
}
