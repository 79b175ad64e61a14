//! Structural checks on a serialized detection report. Works on the JSON
//! form so it is independent of the detector's own types.

use std::collections::BTreeSet;

use serde_json::Value;

fn fn_ref(v: &Value) -> (String, String) {
    (v["contract"].as_str().unwrap_or_default().to_string(), v["function"].as_str().unwrap_or_default().to_string())
}

fn edge_caller(e: &Value) -> (String, String) {
    (e["caller_address"].as_str().unwrap_or_default().to_string(), e["caller_funcSign"].as_str().unwrap_or_default().to_string())
}

fn edge_target(e: &Value) -> (String, String) {
    (e["target_contract"].as_str().unwrap_or_default().to_string(), e["target_funcSign"].as_str().unwrap_or_default().to_string())
}

fn array(v: &Value) -> &[Value] {
    v.as_array().map(Vec::as_slice).unwrap_or_default()
}

/// Violations found in `report`; empty when the report is consistent.
pub fn audit(report: &Value) -> Vec<String> {
    let mut out = Vec::new();
    let findings = array(&report["findings"]);
    let attacker = report["verdict"] == "attacker";
    if attacker == findings.is_empty() {
        out.push(format!("verdict {} with {} findings", report["verdict"], findings.len()));
    }
    let public: BTreeSet<&str> = array(&report["public_functions"]).iter().filter_map(Value::as_str).collect();
    for (i, f) in findings.iter().enumerate() {
        let mut fail = |msg: String| out.push(format!("finding {i}: {msg}"));
        if f["source"]["marks_self"] != true {
            fail("source does not mark the entry".into());
        }
        if f["source"]["entry"] != report["entry"] {
            fail("source entry differs from report entry".into());
        }
        let hook = f["hook"]["selector"].as_str().unwrap_or_default();
        if !public.contains(hook) {
            fail(format!("hook {hook} is not a public function"));
        }
        let expected_type = if hook == "fallback" { "fallback" } else if f["hook"]["name"].is_null() { "user-defined" } else { "erc-hook" };
        if f["attack_type"] != expected_type {
            fail(format!("attack type {} for hook {hook}", f["attack_type"]));
        }

        let chain = &f["chain"];
        let edges = array(&chain["edges"]);
        if edges.is_empty() {
            fail("empty chain".into());
            continue;
        }
        let root = fn_ref(&chain["root"]);
        if root.0 != report["entry"].as_str().unwrap_or_default() {
            fail("chain root is not in the entry contract".into());
        }
        let mut at = root.clone();
        let mut frames = vec![root];
        for e in edges {
            if edge_caller(e) != at {
                fail(format!("edge at pc {} does not continue the chain", e["pc"]));
            }
            at = edge_target(e);
            frames.push(at.clone());
        }
        let visited: BTreeSet<(String, String)> = array(&chain["visited"]).iter().map(fn_ref).collect();
        if visited != frames.iter().cloned().collect() {
            fail("visited set differs from chain frames".into());
        }

        let sink = &f["sink"];
        let sink_fn = fn_ref(sink);
        if sink_fn != *frames.last().expect("non-empty") {
            fail("sink is not in the last chain frame".into());
        }
        match array(&f["witness"]).last() {
            None => fail("empty witness".into()),
            Some(last) => {
                if fn_ref(last) != sink_fn
                    || last["hop"].as_u64() != Some(edges.len() as u64)
                    || last["fact"]["kind"] != "FuncArgToCallee"
                    || last["fact"]["site"] != sink["callsite"]
                {
                    fail("witness does not end at the sink".into());
                }
            }
        }

        let reentered: BTreeSet<(String, String)> = array(&f["reentered_targets"]).iter().map(fn_ref).collect();
        if reentered.is_empty() {
            fail("no re-entered target".into());
        }
        if !reentered.is_subset(&visited) {
            fail("re-entered target not visited on the chain".into());
        }
        let calls = array(&f["reentering_calls"]);
        if !calls.iter().any(|c| c["call_opcode"] != "STATICCALL") {
            fail("every re-entering call is read-only".into());
        }
        if calls.iter().any(|c| !reentered.contains(&fn_ref(&c["target"]))) {
            fail("re-entering call target missing from re-entered targets".into());
        }
        if !array(&f["victims"]).iter().any(|v| v.as_str() == Some(sink_fn.0.as_str())) {
            fail("sink contract missing from victims".into());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn benign_report_passes() {
        let r = json!({"entry": "0x01", "verdict": "benign", "findings": [], "public_functions": []});
        assert!(audit(&r).is_empty());
    }

    #[test]
    fn verdict_without_findings_fails() {
        let r = json!({"entry": "0x01", "verdict": "attacker", "findings": [], "public_functions": []});
        assert_eq!(audit(&r).len(), 1);
    }
}
