//! Human-readable summary of an artifact directory.

use std::fmt::Write;
use std::path::Path;

use serde_json::Value;

use crate::artifacts::{read_manifest, verify, RunStatus};
use crate::error::HarnessError;

/// Non-finite metrics are stored as JSON null.
fn num(v: &Value) -> String {
    match v.as_f64() {
        Some(x) => format!("{x:.4}"),
        None => "inf".to_string(),
    }
}

fn count(v: &Value) -> usize {
    v.as_array().map_or(0, Vec::len)
}

/// Verifies the manifest checksums and summarises `metrics.json`.
pub fn report(dir: &Path) -> Result<String, HarnessError> {
    let manifest = read_manifest(dir)?;
    let bad = verify(dir, &manifest);
    if !bad.is_empty() {
        return Err(HarnessError::Verify(format!("files missing or modified: {}", bad.join(", "))));
    }
    let path = dir.join("metrics.json");
    let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    let m: Value = serde_json::from_str(&text).map_err(|e| HarnessError::Verify(format!("{}: {e}", path.display())))?;

    let mut out = String::new();
    let status = match manifest.status {
        RunStatus::Complete => "complete",
        RunStatus::Partial => "partial",
    };
    writeln!(out, "{} (seed {}), {status}, {} files verified", manifest.kind, manifest.seed, manifest.files.len()).unwrap();
    writeln!(out, "config hash {}", manifest.config_hash).unwrap();
    writeln!(out, "ED size {}, validation size {}", m["ed_size"], m["validation_size"]).unwrap();
    if let Some(s) = m["surrogates"].as_object() {
        for (name, s) in s {
            writeln!(
                out,
                "{name:>8}: median error {}, mean eps {}, second-half eps {}, diverged {}, training median {}",
                num(&s["median_error"]),
                num(&s["mean_epsilon"]),
                num(&s["mean_epsilon_second_half"]),
                count(&s["diverged"]),
                num(&s["training_median_error"]),
            )
            .unwrap();
        }
    }
    for c in m["comparisons"].as_array().into_iter().flatten() {
        writeln!(
            out,
            "{} vs {}: {} wins, {} losses, {} ties; median ratio {}",
            c["a"].as_str().unwrap_or("?"),
            c["b"].as_str().unwrap_or("?"),
            c["wins_a"],
            c["wins_b"],
            c["ties"],
            num(&c["median_ratio"])
        )
        .unwrap();
    }
    if let Some(s) = m["statistics"].as_object() {
        for (name, s) in s {
            writeln!(out, "{name} statistics: mean curve error {}, std curve error {}", num(&s["mean_error"]), num(&s["std_error"]))
                .unwrap();
        }
    }
    for f in &manifest.failures {
        writeln!(out, "failure: {} trace {}: {}", f.surrogate, f.trace_id, f.reason).unwrap();
    }
    Ok(out)
}
