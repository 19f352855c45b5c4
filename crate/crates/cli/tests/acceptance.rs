//! End-to-end acceptance run over the shipped configurations. Each criterion
//! prints one PASS/FAIL line. Runs without the libtest harness so the lines
//! are never captured.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use serde_json::Value;

struct Run {
    stdout: Vec<u8>,
    code: Option<i32>,
    elapsed: Duration,
    report: Value,
}

fn run(task: &str, cfg: &str) -> Run {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(cfg);
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_qkzb-lab"))
        .args([task, "--config", path.to_str().unwrap()])
        .output()
        .expect("binary runs");
    let elapsed = start.elapsed();
    let report = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
    Run { stdout: out.stdout, code: out.status.code(), elapsed, report }
}

/// Checks whose name starts with one of `prefixes`; each must pass with a
/// tolerance no looser than `max_tol` (or at least `min_tol` for ratios).
fn judge(run: &Run, prefixes: &[(&str, f64)], detail: &mut Vec<String>) -> bool {
    let Some(checks) = run.report["checks"].as_array() else {
        detail.push("no report".into());
        return false;
    };
    let mut ok = run.code.is_some();
    for &(prefix, bound) in prefixes {
        let sel: Vec<&Value> = checks.iter().filter(|c| c["name"].as_str().unwrap_or("").starts_with(prefix)).collect();
        if sel.is_empty() {
            detail.push(format!("{prefix}: missing"));
            ok = false;
        }
        for c in sel {
            let tol = c["tolerance"].as_f64().unwrap_or(f64::NAN);
            let at_least = c["comparison"] == ">=";
            let strict_enough = if at_least { tol >= bound } else { tol <= bound };
            let passed = c["passed"] == true && strict_enough;
            ok &= passed;
            let val = c["residual"].as_f64().map_or_else(|| format!("{}", c["error"]), |v| format!("{v:.2e}"));
            if !passed {
                detail.push(format!("{} = {val} (tol {tol:.0e})", c["name"].as_str().unwrap_or("?")));
            }
        }
    }
    ok
}

fn worst(run: &Run, prefix: &str) -> String {
    run.report["checks"]
        .as_array()
        .map(|cs| {
            cs.iter()
                .filter(|c| c["name"].as_str().unwrap_or("").starts_with(prefix))
                .filter_map(|c| c["residual"].as_f64())
                .fold(f64::NAN, |a: f64, b| if a.is_nan() { b } else if is_ratio(prefix) { a.min(b) } else { a.max(b) })
        })
        .map_or("n/a".into(), |v| format!("{}={v:.2e}", prefix.trim_end_matches(['_', '.', '['])))
}

fn is_ratio(prefix: &str) -> bool {
    prefix.starts_with("grid_decay")
}

fn main() {
    let configs: &[(&str, &str)] = &[
        ("theta-check", "theta.json"),
        ("phase-check", "phase.json"),
        ("weights-check", "weights.json"),
        ("rmatrix", "rmatrix.json"),
        ("unitarity", "unitarity.json"),
        ("dybe", "dybe.json"),
        ("qkzb", "qkzb.json"),
        ("qkzb", "qkzb_single.json"),
        ("residue", "residue.json"),
        ("monodromy", "monodromy.json"),
    ];
    let runs: BTreeMap<&str, Run> = configs.iter().map(|&(t, c)| (c, run(t, c))).collect();
    let secs = |names: &[&str]| names.iter().map(|n| runs[n].elapsed).sum::<Duration>();

    let mut lines = Vec::new();
    let mut all = true;
    let mut criterion = |n: usize, ok: bool, limit: Duration, took: Duration, summary: String, detail: Vec<String>| {
        let ok = ok && took < limit;
        all &= ok;
        let mut line = format!(
            "criterion {n}: {} ({:.2} s of {} s) {summary}",
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            limit.as_secs()
        );
        if !detail.is_empty() {
            line.push_str(&format!(" [{}]", detail.join("; ")));
        }
        println!("{line}");
        lines.push(line);
    };

    let mut d = Vec::new();
    let ok = judge(&runs["theta.json"], &[("theta_", 1e-9)], &mut d) & judge(&runs["phase.json"], &[("phase.", 1e-9)], &mut d);
    let s = format!("{} {}", worst(&runs["theta.json"], "theta_"), worst(&runs["phase.json"], "phase."));
    criterion(1, ok, Duration::from_secs(10), secs(&["theta.json", "phase.json"]), s, d);

    let mut d = Vec::new();
    let w = &runs["weights.json"];
    let ok = judge(w, &[("action.", 1e-10), ("collocation.", 1e-8)], &mut d);
    criterion(2, ok, Duration::from_secs(30), w.elapsed, format!("{} {}", worst(w, "action."), worst(w, "collocation.")), d);

    let mut d = Vec::new();
    let ok = judge(&runs["rmatrix.json"], &[("case_", 1e-8)], &mut d)
        & judge(&runs["unitarity.json"], &[("case_1", 1e-8)], &mut d)
        & judge(&runs["dybe.json"], &[("case_1", 1e-7), ("case_2", 1e-6)], &mut d);
    let s = format!("unitarity {} dybe {}", worst(&runs["unitarity.json"], "case_"), worst(&runs["dybe.json"], "case_"));
    criterion(3, ok, Duration::from_secs(120), secs(&["rmatrix.json", "unitarity.json", "dybe.json"]), s, d);

    let mut d = Vec::new();
    let q = &runs["qkzb.json"];
    let q1 = &runs["qkzb_single.json"];
    let rel = [("step_p", 1e-5), ("step_tau", 1e-5), ("step_1", 1e-5)];
    let ok = judge(q, &rel, &mut d) & judge(q1, &rel.map(|(n, _)| (n, 1e-6)), &mut d);
    criterion(4, ok, Duration::from_secs(300), secs(&["qkzb.json", "qkzb_single.json"]), worst(q, "step_"), d);

    let mut d = Vec::new();
    let r = &runs["residue.json"];
    let ok = judge(r, &[("residue_identity", 1e-4), ("radius_halving", 1e-5), ("weight_conservation", 1e-10)], &mut d);
    criterion(5, ok, Duration::from_secs(600), r.elapsed, worst(r, "residue_identity"), d);

    let mut d = Vec::new();
    let m = &runs["monodromy.json"];
    let ok = judge(m, &[("monodromy_tau[j=1]", 1e-4)], &mut d);
    criterion(6, ok, Duration::from_secs(600), m.elapsed, worst(m, "monodromy_"), d);

    let mut d = Vec::new();
    let ok = judge(q, &[("grid_decay", 10.0), ("offset_independence", 1e-7)], &mut d);
    let s = format!("min {} {}", worst(q, "grid_decay"), worst(q, "offset_"));
    criterion(7, ok, Duration::from_secs(300), q.elapsed, s, d);

    let start = Instant::now();
    let mut d = Vec::new();
    for &(t, c) in configs {
        if run(t, c).stdout != runs[c].stdout {
            d.push(format!("{c} differs"));
        }
    }
    let ok = d.is_empty();
    criterion(8, ok, Duration::from_secs(1200), start.elapsed(), format!("{} configs rerun", configs.len()), d);

    if !all {
        eprintln!("acceptance failures:\n{}", lines.join("\n"));
        std::process::exit(1);
    }
}
