//! Config documents: TOML files, earlier JSON reports, and `key=value` overrides.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use corrlss::experiments::gdm::GdmSettings;
use corrlss::experiments::local_law::LocalLawSettings;
use corrlss::experiments::moments::MomentSettings;
use corrlss::experiments::sweep::SweepSettings;
use corrlss::experiments::ExperimentConfig;
use serde::Deserialize;
use serde_json::{json, Map, Value};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub experiment: ExperimentConfig,
    pub sweep: Option<SweepSettings>,
    pub gdm: Option<GdmSettings>,
    pub locallaw: Option<LocalLawSettings>,
    pub moments: Option<MomentSettings>,
}

/// Section that holds the settings of `command`, if it has any.
pub fn section(command: &str) -> Option<&'static str> {
    match command {
        "sweep" => Some("sweep"),
        "gdm" => Some("gdm"),
        "locallaw" => Some("locallaw"),
        "moments" => Some("moments"),
        _ => None,
    }
}

fn defaults(command: &str) -> Value {
    let mut doc = json!({
        "experiment": { "law": { "family": "gaussian" }, "n": 400, "p": 200 }
    });
    let settings = match command {
        "sweep" => json!({
            "alpha_grid": [2.5, 3.0, 3.5, 4.5],
            "l_choices": [{ "const": 1.0 }],
            "n_grid": [500]
        }),
        "gdm" => json!({ "t": 0.1 }),
        "locallaw" => json!({ "n_grid": [200, 400, 800] }),
        "moments" => json!({ "columns": 100000 }),
        _ => return doc,
    };
    doc[section(command).unwrap()] = settings;
    doc
}

/// Reads a TOML config or a JSON report. Reports contribute `config` and `settings`.
fn load(path: &Path, command: &str) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        let report: Value = serde_json::from_str(&text).with_context(|| format!("{} is not valid JSON", path.display()))?;
        let config = report.get("config").cloned().ok_or_else(|| anyhow!("{} has no `config` field", path.display()))?;
        let mut doc = Map::new();
        doc.insert("experiment".into(), config);
        if let (Some(name), Some(settings)) = (section(command), report.get("settings")) {
            doc.insert(name.into(), settings.clone());
        }
        return Ok(Value::Object(doc));
    }
    let value: toml::Value = toml::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))?;
    Ok(serde_json::to_value(value)?)
}

fn parse_value(raw: &str) -> Value {
    #[derive(Deserialize)]
    struct Wrapper {
        v: toml::Value,
    }
    match toml::from_str::<Wrapper>(&format!("v = {raw}")) {
        Ok(w) => serde_json::to_value(w.v).unwrap_or_else(|_| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

/// Applies `path.to.key=value`. Bare keys address the `experiment` table.
fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| anyhow!("override `{spec}` is not key=value"))?;
    let mut parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` is malformed");
    }
    if parts.len() == 1 || !matches!(parts[0], "experiment" | "sweep" | "gdm" | "locallaw" | "moments") {
        parts.insert(0, "experiment");
    }
    let mut node = doc;
    for part in &parts[..parts.len() - 1] {
        let map = node.as_object_mut().ok_or_else(|| anyhow!("override `{key}` descends into a non-table"))?;
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    let map = node.as_object_mut().ok_or_else(|| anyhow!("override `{key}` descends into a non-table"))?;
    map.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

pub fn build(command: &str, config: Option<&Path>, overrides: &[String], seed: Option<u64>, workers: usize) -> Result<Document> {
    let mut doc = match config {
        Some(path) => load(path, command)?,
        None => defaults(command),
    };
    for spec in overrides {
        apply_override(&mut doc, spec)?;
    }
    if let Some(seed) = seed {
        apply_override(&mut doc, &format!("experiment.master_seed={seed}"))?;
    }
    apply_override(&mut doc, &format!("experiment.workers={workers}"))?;
    let doc: Document = serde_json::from_value(doc).context("invalid config")?;
    doc.experiment.validate()?;
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_tables() {
        let d = build("gdm", None, &["n=300".into(), "gdm.t=0.2".into(), "law.family=\"gaussian\"".into()], Some(7), 2)
            .unwrap();
        assert_eq!(d.experiment.n, 300);
        assert_eq!(d.experiment.master_seed, 7);
        assert_eq!(d.experiment.workers, 2);
        assert_eq!(d.gdm.unwrap().t, 0.2);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = build("simulate", None, &["replicats=5".into()], None, 1).unwrap_err();
        assert!(format!("{err:#}").contains("replicats"), "{err:#}");
    }
}
