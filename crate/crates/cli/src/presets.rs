//! Checked-in study bundles addressable by name.

use serde_json::Value;

use crate::error::{CliError, Result};

const BUNDLES: [(&str, &str); 6] = [
    ("envelope", include_str!("../configs/envelope.json")),
    ("sequence", include_str!("../configs/sequence.json")),
    ("coverage", include_str!("../configs/coverage.json")),
    ("mineq", include_str!("../configs/mineq.json")),
    ("mindist", include_str!("../configs/mindist.json")),
    ("cmt-demo", include_str!("../configs/cmt.json")),
];

/// Every study of every bundle in one run.
pub const REPLICATION: &str = include_str!("../configs/replication.json");

fn bundle(kind: &str) -> Result<Vec<Value>> {
    let text = BUNDLES
        .iter()
        .find(|(k, _)| *k == kind)
        .map(|(_, t)| *t)
        .ok_or_else(|| CliError::config("--preset", format!("`{kind}` has no presets")))?;
    let doc: Value = serde_json::from_str(text).expect("bundled presets are valid JSON");
    Ok(doc["studies"].as_array().cloned().unwrap_or_default())
}

/// Preset names available for `kind`.
pub fn names(kind: &str) -> Vec<String> {
    bundle(kind)
        .unwrap_or_default()
        .iter()
        .filter_map(|s| s["name"].as_str().map(str::to_string))
        .collect()
}

/// The study block of preset `name`.
pub fn preset(kind: &str, name: &str) -> Result<Value> {
    bundle(kind)?
        .into_iter()
        .find(|s| s["name"] == name)
        .ok_or_else(|| {
            CliError::config(
                "--preset",
                format!("unknown preset `{name}` for `{kind}` (available: {})", names(kind).join(", ")),
            )
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    #[test]
    fn bundles_validate() {
        for (kind, text) in BUNDLES {
            let cfg = RunConfig::from_str(text).unwrap_or_else(|e| panic!("{kind}: {e}"));
            assert!(cfg.studies.iter().all(|s| s.kind == kind), "{kind}");
        }
        RunConfig::from_str(REPLICATION).unwrap();
    }

    #[test]
    fn lookup() {
        assert!(preset("coverage", "reciprocal-fixed").is_ok());
        assert!(preset("coverage", "nope").is_err());
        assert!(preset("scan", "x").is_err());
    }
}
