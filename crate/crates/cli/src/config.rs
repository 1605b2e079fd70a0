//! Run configuration: a flat JSON file with dotted keys, overridable on
//! the command line, with precedence CLI > file > defaults. Every run
//! writes the fully resolved map back out as `config.resolved.json`.

use std::collections::BTreeMap;
use std::path::Path;

use o2cap_core::dataset::SynthesisConfig;
use o2cap_core::trainer::TrainConfig;
use o2cap_core::{O2capError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(default)]
pub struct DataSection {
    /// Path to an embedding file; empty means synthesize from `synth.*`.
    pub path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct EvalSection {
    /// Query embedding file; empty means synthesize a held-out split.
    pub query: String,
    /// Gallery embedding file; empty means synthesize a held-out split.
    pub gallery: String,
    pub query_images_per_id: usize,
    pub gallery_images_per_id: usize,
    pub query_noise_seed: u64,
    pub gallery_noise_seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            query: String::new(),
            gallery: String::new(),
            query_images_per_id: 4,
            gallery_images_per_id: 8,
            query_noise_seed: 1001,
            gallery_noise_seed: 2002,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct OutSection {
    pub dir: String,
}

impl Default for OutSection {
    fn default() -> Self {
        Self { dir: "run".into() }
    }
}

/// Everything a run needs, grouped into sections that map 1:1 onto the
/// dotted-key namespace (`train.lr`, `synth.num_ids`, ...).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataSection,
    pub eval: EvalSection,
    pub out: OutSection,
    pub synth: SynthesisConfig,
    pub train: TrainConfig,
    /// 0 = errors only, 1 = summaries (default), 2 = per-epoch progress.
    pub verbosity: u8,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: Default::default(),
            eval: Default::default(),
            out: Default::default(),
            synth: Default::default(),
            train: Default::default(),
            verbosity: 1,
        }
    }
}

fn flatten_into(
    prefix: &str,
    v: &serde_json::Value,
    out: &mut BTreeMap<String, serde_json::Value>,
) {
    match v {
        serde_json::Value::Object(map) => {
            for (k, val) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_into(&key, val, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

/// Dotted-key view of a config.
pub fn flatten(cfg: &RunConfig) -> BTreeMap<String, serde_json::Value> {
    let v = serde_json::to_value(cfg).expect("config serializes");
    let mut out = BTreeMap::new();
    flatten_into("", &v, &mut out);
    out
}

pub fn unflatten(map: &BTreeMap<String, serde_json::Value>) -> serde_json::Value {
    let mut root = serde_json::Map::new();
    for (key, val) in map {
        let parts: Vec<&str> = key.split('.').collect();
        let mut node = &mut root;
        for part in &parts[..parts.len() - 1] {
            node = node
                .entry(part.to_string())
                .or_insert_with(|| serde_json::Value::Object(Default::default()))
                .as_object_mut()
                .expect("intermediate nodes are objects");
        }
        node.insert(parts[parts.len() - 1].to_string(), val.clone());
    }
    serde_json::Value::Object(root)
}

fn parse_override(s: &str) -> Result<(String, serde_json::Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| O2capError::Config(format!("override {s:?} is not key=value")))?;
    // Accept bare strings so users don't have to quote paths and enum
    // names as JSON.
    let value = serde_json::from_str(raw).unwrap_or(serde_json::Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

/// Resolve the effective configuration: defaults, then the optional file,
/// then `key=value` overrides. Unknown keys are rejected.
pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut map = flatten(&RunConfig::default());
    let known: Vec<String> = map.keys().cloned().collect();

    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| {
            O2capError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let parsed: BTreeMap<String, serde_json::Value> =
            serde_json::from_str(&text).map_err(|e| {
                O2capError::Config(format!(
                    "config {} is not a flat JSON object: {e}",
                    path.display()
                ))
            })?;
        for (k, v) in parsed {
            if !known.contains(&k) {
                return Err(O2capError::Config(format!("unknown config key {k:?}")));
            }
            map.insert(k, v);
        }
    }
    for s in overrides {
        let (k, v) = parse_override(s)?;
        if !known.contains(&k) {
            return Err(O2capError::Config(format!("unknown config key {k:?}")));
        }
        map.insert(k, v);
    }

    let cfg: RunConfig = serde_json::from_value(unflatten(&map))
        .map_err(|e| O2capError::Config(format!("invalid configuration: {e}")))?;
    cfg.synth.validate()?;
    Ok(cfg)
}

/// Write the effective parameters as a flat dotted-key JSON file.
pub fn write_resolved(cfg: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let map = flatten(cfg);
    let text = serde_json::to_string_pretty(&map)?;
    std::fs::write(dir.join("config.resolved.json"), text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_flat_map() {
        let cfg = RunConfig::default();
        let map = flatten(&cfg);
        let back: RunConfig = serde_json::from_value(unflatten(&map)).unwrap();
        assert_eq!(cfg, back);
        assert!(map.contains_key("train.lr"));
        assert!(map.contains_key("synth.num_ids"));
        assert!(map.contains_key("train.batch.proxies"));
    }

    #[test]
    fn override_precedence_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"train.lr": 0.1, "synth.num_ids": 9}"#).unwrap();
        let cfg = resolve(Some(&path), &["train.lr=0.9".into()]).unwrap();
        assert_eq!(cfg.train.lr, 0.9);
        assert_eq!(cfg.synth.num_ids, 9);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = resolve(None, &["train.lrate=0.1".into()]).unwrap_err();
        assert!(matches!(err, O2capError::Config(_)));
    }

    #[test]
    fn bare_string_override() {
        let cfg = resolve(None, &["train.loss_mode=base2".into()]).unwrap();
        assert_eq!(cfg.train.loss_mode, o2cap_core::trainer::LossMode::Base2);
    }

    #[test]
    fn resolved_file_reproduces_config() {
        let cfg = resolve(None, &["train.lr=0.3".into(), "synth.dim=16".into()]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_resolved(&cfg, dir.path()).unwrap();
        let back = resolve(Some(&dir.path().join("config.resolved.json")), &[]).unwrap();
        assert_eq!(cfg, back);
    }
}
