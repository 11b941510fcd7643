//! Config resolution: defaults, then a preset or file, then `--set` overrides.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use oa_core::harness::ExperimentConfig;
use toml::{Table, Value};

/// Presets compiled into the binary, by name.
pub const PRESETS: &[(&str, &str)] = &[
    ("table1-smoke", include_str!("../presets/table1-smoke.toml")),
    ("table1-blackbox", include_str!("../presets/table1-blackbox.toml")),
    ("table2-xi", include_str!("../presets/table2-xi.toml")),
    ("online-jd", include_str!("../presets/online-jd.toml")),
];

pub fn preset(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
        .ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            anyhow!("unknown preset {name:?}; available: {}", names.join(", "))
        })
}

/// Builds the resolved config. Unknown keys anywhere are errors.
pub fn resolve(file: Option<&Path>, preset_name: Option<&str>, sets: &[String]) -> Result<ExperimentConfig> {
    let mut table = Table::try_from(ExperimentConfig::default()).context("serializing defaults")?;
    if let Some(name) = preset_name {
        merge(&mut table, parse_table(preset(name)?).with_context(|| format!("preset {name}"))?);
    }
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        merge(&mut table, parse_table(&text).with_context(|| format!("parsing {}", path.display()))?);
    }
    for s in sets {
        apply_set(&mut table, s)?;
    }
    let cfg: ExperimentConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| anyhow!("invalid configuration: {}", e.message()))?;
    Ok(cfg)
}

fn parse_table(text: &str) -> Result<Table> {
    Ok(text.parse::<Table>()?)
}

/// Deep merge. A table whose `kind` differs from the base replaces it whole,
/// so switching the dataset source does not inherit the other variant's keys.
fn merge(base: &mut Table, over: Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(o)) if b.get("kind") == o.get("kind") || o.get("kind").is_none() => {
                merge(b, o)
            }
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// `a.b.c=value`; the value is read as TOML and falls back to a bare string.
fn apply_set(table: &mut Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override {assignment:?} is not key=value"))?;
    let keys: Vec<&str> = path.trim().split('.').map(str::trim).collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("override {assignment:?} has an empty key");
    }
    let value = parse_value(raw.trim());
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut node = table;
    for k in parents {
        let entry = node.entry(k.to_string()).or_insert_with(|| Value::Table(Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override {assignment:?}: {k} is not a table"))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// The config as TOML, for echoing.
pub fn to_toml(cfg: &ExperimentConfig) -> Result<String> {
    Ok(toml::to_string_pretty(cfg)?)
}
