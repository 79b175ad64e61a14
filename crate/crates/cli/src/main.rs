use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hookwatch::{batch, parse_list, Backend, CliError, Input, RunConfig, Session};
use hookwatch_core::{ContractId, Verdict};

const EXIT_BENIGN: u8 = 0;
const EXIT_ERROR: u8 = 1;
const EXIT_ATTACKER: u8 = 2;

#[derive(Parser)]
#[command(name = "hookwatch", version, about = "Detect reentrancy attacker contracts from EVM bytecode")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze one contract
    Analyze {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        common: CommonArgs,
        /// Write the report here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analyze every input listed in a file
    Batch {
        /// One input per line: an address, 0x-prefixed hex, or a hex file path
        list: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
        /// Directory for per-contract reports and summary.json
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        jobs: usize,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct InputArgs {
    /// Runtime or creation bytecode as hex
    #[arg(long)]
    hex: Option<String>,
    /// File holding hex bytecode
    #[arg(long)]
    hex_file: Option<PathBuf>,
    /// Contract address, fetched from the backend
    #[arg(long)]
    address: Option<ContractId>,
}

#[derive(Args)]
struct CommonArgs {
    /// Fixture directory used as the chain backend
    #[arg(long, conflicts_with = "rpc")]
    fixtures: Option<PathBuf>,
    /// JSON-RPC endpoint used as the chain backend
    #[arg(long, env = "ETH_RPC_URL")]
    rpc: Option<String>,
    /// Record every chain read into this fixture directory
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long, default_value_t = hookwatch_core::analysis::DEFAULT_DEPTH_LIMIT)]
    depth: usize,
    #[arg(long, default_value_t = hookwatch_core::analysis::DEFAULT_FANOUT_CAP)]
    fanout: usize,
    /// Include the cross-contract call graph in reports
    #[arg(long)]
    emit_xgraph: bool,
    /// Extra hook selectors, one `selector name [kind]` per line
    #[arg(long)]
    hooks: Option<PathBuf>,
}

impl CommonArgs {
    fn run_config(&self) -> RunConfig {
        let backend = match (&self.fixtures, &self.rpc) {
            (Some(dir), _) => Backend::Fixtures(dir.clone()),
            (None, Some(url)) => Backend::Rpc(url.clone()),
            (None, None) => Backend::None,
        };
        RunConfig {
            backend,
            depth_limit: self.depth,
            fanout_cap: self.fanout,
            emit_xgraph: self.emit_xgraph,
            hooks: self.hooks.clone(),
            record: self.record.clone(),
        }
    }
}

impl InputArgs {
    fn input(self) -> Input {
        match (self.hex, self.hex_file, self.address) {
            (Some(h), _, _) => Input::Hex(h),
            (_, Some(p), _) => Input::HexFile(p),
            (_, _, Some(a)) => Input::Address(a),
            _ => unreachable!("clap requires one input"),
        }
    }
}

/// Prints a line, tolerating a closed pipe.
fn print_stdout(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.cmd {
        Command::Analyze { input, common, out } => {
            let session = Session::open(&common.run_config())?;
            let report = session.analyze(&input.input())?;
            session.finish()?;
            let text = report.to_json();
            match out {
                Some(path) => std::fs::write(&path, text + "\n").map_err(|source| {
                    CliError::Analysis(hookwatch_core::AnalysisError::Io {
                        path: path.display().to_string(),
                        source,
                    })
                })?,
                None => print_stdout(&text),
            }
            Ok(match report.verdict {
                Verdict::Attacker => EXIT_ATTACKER,
                Verdict::Benign => EXIT_BENIGN,
            })
        }
        Command::Batch { list, common, out, jobs } => {
            let text = std::fs::read_to_string(&list).map_err(|source| {
                CliError::Analysis(hookwatch_core::AnalysisError::Io {
                    path: list.display().to_string(),
                    source,
                })
            })?;
            let base = list.parent().map(PathBuf::from).unwrap_or_default();
            let inputs = parse_list(&text, &base)?;
            let session = Session::open(&common.run_config())?;
            let summary = batch(&session, &inputs, jobs, out.as_deref())?;
            session.finish()?;
            for item in summary.items.iter().filter(|i| i.error.is_some()) {
                eprintln!(
                    "{}",
                    serde_json::json!({"error": "item", "index": item.index, "input": item.input, "message": item.error})
                );
            }
            if out.is_none() {
                print_stdout(&serde_json::to_string_pretty(&summary).expect("summary serializes"));
            }
            Ok(if summary.attacker > 0 { EXIT_ATTACKER } else { EXIT_BENIGN })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own exit code 2 would read as a verdict
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { EXIT_BENIGN });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(EXIT_ERROR)
        }
    }
}
