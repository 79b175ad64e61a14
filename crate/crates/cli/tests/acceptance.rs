//! Acceptance criteria, one pass/fail line each.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use hookwatch::{Backend, Input, RunConfig, Session};
use hookwatch_core::chain::MockRpcServer;
use hookwatch_core::disasm::{disassemble, Bytecode};
use hookwatch_core::flow::{ArgSlot, CallSiteId, Endpoint};
use hookwatch_core::taint::{reachable_sinks, TaintLabel};
use hookwatch_core::{AnalysisConfig, ContractId, FunctionSig, Verdict};
use hookwatch_corpus::audit::audit;
use hookwatch_corpus::closure::{Closure, RandomChain, ARGS};
use hookwatch_corpus::sets::{all_sets, build, detect_set, linear_reentry_chain, mutants, SetKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn corpus_detection() -> Outcome {
    let config = AnalysisConfig::default();
    let started = Instant::now();
    let sets = all_sets();
    let mut attackers = 0;
    let mut benign = 0;
    for set in &sets {
        let r = detect_set(set, &config);
        match set.kind.expected() {
            Some(t) => {
                if r.verdict != Verdict::Attacker || !r.attack_types().contains(&t) {
                    return Err(format!("{}: expected {}, got {:?} {:?}", set.name, t.as_str(), r.verdict, r.attack_types()));
                }
                attackers += 1;
            }
            None => {
                if r.verdict != Verdict::Benign {
                    return Err(format!("{}: benign set flagged", set.name));
                }
                benign += 1;
            }
        }
    }
    let by_design = sets.iter().filter(|s| s.kind.flagged_by_design()).count();
    let elapsed = started.elapsed();
    if elapsed >= Duration::from_secs(10) {
        return Err(format!("corpus took {elapsed:?}"));
    }
    let count = |k: fn(SetKind) -> bool| sets.iter().filter(|s| k(s.kind)).count();
    let fallback = count(|k| k.expected() == Some(hookwatch_core::AttackType::Fallback));
    let erc = count(|k| k.expected() == Some(hookwatch_core::AttackType::ErcHook) && !k.flagged_by_design());
    let user = count(|k| k.expected() == Some(hookwatch_core::AttackType::UserDefined));
    if sets.len() < 12 || fallback < 2 || erc < 3 || user < 2 || benign < 5 {
        return Err(format!("corpus shape: {fallback} fallback, {erc} erc-hook, {user} user-defined, {benign} benign"));
    }
    Ok(format!(
        "{attackers} attacker sets ({by_design} flagged by design) and {benign} benign sets classified in {:.2?}",
        elapsed
    ))
}

fn soundness_audit() -> Outcome {
    let config = AnalysisConfig::default();
    let mut findings = 0;
    let sets = all_sets().into_iter().chain(mutants()).chain([linear_reentry_chain(22, 20, true)]);
    for set in sets {
        let r = detect_set(&set, &config);
        findings += r.findings.len();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).map_err(|e| e.to_string())?;
        let violations = audit(&v);
        if !violations.is_empty() {
            return Err(format!("{}: {}", set.name, violations.join("; ")));
        }
    }
    Ok(format!("{findings} findings, zero violations"))
}

/// Sinks reachable from `label` according to the closure oracle.
fn oracle_sinks(chain: &RandomChain, label: &TaintLabel) -> BTreeSet<(usize, CallSiteId)> {
    let mut out = BTreeSet::new();
    for j in 1..chain.summaries.len() {
        let closure = Closure::new(chain, j);
        let seeds: Vec<(usize, Endpoint)> = match label.position {
            ArgSlot::Arg(k) => vec![(0, Endpoint::CallArg { site: label.callsite, position: k })],
            ArgSlot::Sender => (1..=j)
                .filter(|&h| chain.sender_is_entry[h])
                .map(|h| (h, Endpoint::FuncArg { arg: ArgSlot::Sender }))
                .collect(),
        };
        for site in &chain.summaries[j].call_sites {
            let sink = (j, Endpoint::Callee { site: site.id });
            if seeds.iter().any(|s| closure.reaches(*s, sink)) {
                out.insert((j, site.id));
            }
        }
    }
    out
}

fn taint_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7a17);
    let graphs = 1500;
    let mut comparisons = 0;
    let mut nonempty = 0;
    for _ in 0..graphs {
        let chain = RandomChain::generate(&mut rng);
        let view = chain.view();
        let sites = chain.summaries[0].call_sites.len() as u32;
        let mut labels: Vec<TaintLabel> = (0..ARGS)
            .map(|k| TaintLabel {
                entry: ContractId::ZERO,
                function: FunctionSig::Fallback,
                callsite: CallSiteId(rng.gen_range(0..sites)),
                position: ArgSlot::Arg(k),
                marks_self: true,
            })
            .collect();
        labels.push(TaintLabel {
            entry: ContractId::ZERO,
            function: FunctionSig::Fallback,
            callsite: CallSiteId(0),
            position: ArgSlot::Sender,
            marks_self: true,
        });
        for label in &labels {
            let got: BTreeSet<(usize, CallSiteId)> = reachable_sinks(&view, label).into_iter().map(|(h, s, _)| (h, s)).collect();
            let want = oracle_sinks(&chain, label);
            if got != want {
                return Err(format!("mismatch for {label:?}: search {got:?}, closure {want:?} on {chain:?}"));
            }
            nonempty += usize::from(!want.is_empty());
            comparisons += 1;
        }
    }
    Ok(format!("{graphs} random fact graphs, {comparisons} sink sets compared ({nonempty} non-empty), zero mismatches"))
}

fn disasm_round_trip() -> Outcome {
    let mut blobs: Vec<Vec<u8>> = Vec::new();
    for set in all_sets().into_iter().chain(mutants()).chain([linear_reentry_chain(22, 20, true)]) {
        for id in set.store.addresses().collect::<Vec<_>>() {
            blobs.push(set.store.code_of(id).to_vec());
        }
    }
    let corpus = blobs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(0xd15a);
    for _ in 0..10_000 {
        let len = rng.gen_range(0..=2048);
        let mut b = vec![0u8; len];
        rng.fill(b.as_mut_slice());
        blobs.push(b);
    }
    for b in &blobs {
        let out = disassemble(&Bytecode::runtime(b.clone())).serialize();
        if &out != b {
            return Err(format!("round trip changed a {}-byte input", b.len()));
        }
    }
    Ok(format!("{corpus} corpus contracts and 10000 random byte strings round-trip"))
}

fn mutation_closure() -> Outcome {
    let config = AnalysisConfig::default();
    let mut flipped = 0;
    let all = mutants();
    for m in &all {
        let original = detect_set(&build(m.kind, true), &config);
        let mutant = detect_set(m, &config);
        if original.verdict != Verdict::Attacker || mutant.verdict != Verdict::Benign {
            return Err(format!("{}: {:?} -> {:?}", m.name, original.verdict, mutant.verdict));
        }
        flipped += 1;
    }
    Ok(format!("{flipped}/{} mutants flip to benign", all.len()))
}

fn depth_limit() -> Outcome {
    let config = AnalysisConfig {
        depth_limit: 21,
        ..AnalysisConfig::default()
    };
    let set = linear_reentry_chain(22, 20, true);
    let r = detect_set(&set, &config);
    if r.stats.depth_capped == 0 {
        return Err("no depth-capped chain reported".into());
    }
    let Some(f) = r.findings.iter().find(|f| f.chain.len() <= 21) else {
        return Err("reentry inside the depth limit not detected".into());
    };
    Ok(format!(
        "{} depth-capped chains; reentry found on a {}-edge chain",
        r.stats.depth_capped,
        f.chain.len()
    ))
}

fn record_replay() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut checked = 0;
    for set in all_sets().into_iter().chain([linear_reentry_chain(22, 20, true)]) {
        let server = MockRpcServer::start(set.store.clone()).map_err(|e| e.to_string())?;
        let rec = dir.path().join(&set.name);
        let live = Session::open(&RunConfig {
            backend: Backend::Rpc(server.url()),
            record: Some(rec.clone()),
            ..RunConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let recorded = live.analyze(&Input::Address(set.entry)).map_err(|e| e.to_string())?;
        live.finish().map_err(|e| e.to_string())?;

        let replay = Session::open(&RunConfig {
            backend: Backend::Fixtures(rec.clone()),
            ..RunConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let by_address = replay.analyze(&Input::Address(set.entry)).map_err(|e| e.to_string())?;
        let hex_file = dir.path().join(format!("{}.hex", set.name));
        std::fs::write(&hex_file, hex::encode(set.entry_code())).map_err(|e| e.to_string())?;
        let by_hex = replay.analyze(&Input::HexFile(hex_file)).map_err(|e| e.to_string())?;

        let want = recorded.to_json_untimed();
        if by_address.to_json_untimed() != want || by_hex.to_json_untimed() != want {
            return Err(format!("{}: replayed report differs", set.name));
        }
        checked += 1;
    }
    Ok(format!("{checked} RPC runs replay to byte-identical reports"))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("fixture corpus detection", corpus_detection),
        ("formula soundness audit", soundness_audit),
        ("taint oracle equivalence", taint_oracle),
        ("disassembler round-trip", disasm_round_trip),
        ("mutation benign-closure", mutation_closure),
        ("depth-limit fidelity", depth_limit),
        ("record/replay determinism", record_replay),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
