//! Run configuration: a single hierarchical TOML file with documented
//! defaults for every knob, strict rejection of unknown keys, and
//! `key.path=value` overrides applied before deserialization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::a2po::A2poConfig;
use crate::aggregator::AggregatorTrainConfig;
use crate::synthworld::{BusinessRewardConfig, WorldConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("bad override '{0}': {1}")]
    BadOverride(String, String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    /// Full passes over the training split.
    pub epochs: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { seed: 0, epochs: 3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    /// Tokens per semantic id.
    pub levels: usize,
    /// Token alphabet size per level.
    pub codebook_size: u16,
    /// Encoder state dimension.
    pub state_dim: usize,
    pub init_scale: f64,
    /// Catalogs up to this size are ranked by exact enumeration.
    pub enumeration_budget: usize,
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            levels: 3,
            codebook_size: 8,
            state_dim: 16,
            init_scale: 0.1,
            enumeration_budget: 4096,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregatorSection {
    /// Importance levels run 0..=k per dimension.
    pub k: u8,
    pub init_scale: f64,
    pub n_pairs: usize,
    pub epochs: usize,
    /// Fraction of pairs reserved for held-out accuracy.
    pub heldout_fraction: f64,
    pub pair_seed: u64,
    pub group_size: usize,
    pub beta: f64,
    pub step_size: f64,
}

impl Default for AggregatorSection {
    fn default() -> Self {
        let train = AggregatorTrainConfig::default();
        AggregatorSection {
            k: 4,
            init_scale: 0.1,
            n_pairs: 2000,
            epochs: 30,
            heldout_fraction: 0.2,
            pair_seed: 0x9a17,
            group_size: train.group_size,
            beta: train.beta,
            step_size: train.step_size,
        }
    }
}

impl AggregatorSection {
    pub fn train_config(&self) -> AggregatorTrainConfig {
        AggregatorTrainConfig {
            group_size: self.group_size,
            beta: self.beta,
            step_size: self.step_size,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub ks: Vec<usize>,
    /// Fraction of episodes held out for evaluation.
    pub eval_fraction: f64,
    /// Evaluate every this many epochs (the final epoch always evaluates).
    pub eval_every: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { ks: vec![3, 5, 10], eval_fraction: 0.2, eval_every: 1 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub world: WorldConfig,
    pub policy: PolicySection,
    pub a2po: A2poConfig,
    pub aggregator: AggregatorSection,
    pub business: BusinessRewardConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses a TOML config and applies `key.path=value` overrides before
/// deserializing, so overridden unknown keys still fail fast.
pub fn load_config(text: &str, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut value: toml::Value =
        text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    for ov in overrides {
        let (key, raw) = ov
            .split_once('=')
            .ok_or_else(|| ConfigError::BadOverride(ov.clone(), "expected key=value".into()))?;
        apply_override(&mut value, key.trim(), raw.trim())
            .map_err(|e| ConfigError::BadOverride(ov.clone(), e))?;
    }
    RunConfig::deserialize(value).map_err(|e| ConfigError::Parse(e.to_string()))
}

fn apply_override(root: &mut toml::Value, key: &str, raw: &str) -> Result<(), String> {
    let parsed = parse_scalar(raw);
    let mut cursor = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err("empty path segment".into());
    }
    for part in &parts[..parts.len() - 1] {
        let table = cursor.as_table_mut().ok_or_else(|| format!("'{part}' is not a table"))?;
        cursor = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = cursor.as_table_mut().ok_or_else(|| "parent is not a table".to_string())?;
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

/// Interprets an override value with TOML scalar syntax, falling back to a
/// bare string (so `mode=full` works without quotes).
fn parse_scalar(raw: &str) -> toml::Value {
    if let Ok(table) = format!("v = {raw}").parse::<toml::Table>() {
        if let Some(v) = table.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::a2po::FusionMode;

    #[test]
    fn empty_config_gives_defaults() {
        let cfg = load_config("", &[]).unwrap();
        assert_eq!(cfg.a2po.group_size, 16);
        assert_eq!(cfg.a2po.beta_gen, 0.04);
        assert_eq!(cfg.a2po.step_size, 1e-5);
        assert_eq!(cfg.a2po.clip, 0.2);
        assert_eq!(cfg.a2po.fusion.epsilon, 1e-8);
        assert_eq!(cfg.a2po.fusion.std_guard, 1e-8);
        assert_eq!(cfg.a2po.fusion.alpha, 1.0);
        assert_eq!(cfg.aggregator.k, 4);
        assert_eq!(cfg.eval.ks, vec![3, 5, 10]);
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = load_config("[run]\nseed = 7\n", &[]).unwrap();
        let text = cfg.to_toml();
        let again = load_config(&text, &[]).unwrap();
        assert_eq!(again.run.seed, 7);
        assert_eq!(text, again.to_toml());
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = load_config("[world]\nn_itemz = 3\n", &[]).unwrap_err();
        match err {
            ConfigError::Parse(msg) => assert!(msg.contains("n_itemz"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        let err = load_config("[wurld]\nn_items = 3\n", &[]).unwrap_err();
        match err {
            ConfigError::Parse(msg) => assert!(msg.contains("wurld"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let cfg = load_config(
            "",
            &[
                "run.seed=42".into(),
                "a2po.judged_fraction=0.05".into(),
                "a2po.fusion.mode=gate_only".into(),
                "world.n_items=128".into(),
                "eval.ks=[5, 10]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.run.seed, 42);
        assert_eq!(cfg.a2po.judged_fraction, 0.05);
        assert_eq!(cfg.a2po.fusion.mode, FusionMode::GateOnly);
        assert_eq!(cfg.world.n_items, 128);
        assert_eq!(cfg.eval.ks, vec![5, 10]);
    }

    #[test]
    fn override_of_unknown_key_still_fails() {
        let err = load_config("", &["a2po.groop=3".into()]).unwrap_err();
        match err {
            ConfigError::Parse(msg) => assert!(msg.contains("groop"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            load_config("", &["nonsense".into()]).unwrap_err(),
            ConfigError::BadOverride(_, _)
        ));
    }
}
