//! Config files: a named preset plus flat key overrides, merged and
//! schema-checked.
//!
//! ```toml
//! preset = "poly-desk"
//! epochs = 500
//! lr_base = 3e-5
//! ```

use anyhow::{anyhow, bail, Context};
use metamap::config::ExperimentConfig;

/// Load a config file: the `preset` key picks the base configuration and
/// every other key overrides one field. Unknown or ill-typed fields are
/// schema errors naming the field.
pub fn load_config(text: &str) -> anyhow::Result<ExperimentConfig> {
    let table: toml::Table = text.parse().context("config is not valid TOML")?;
    let preset_name = table
        .get("preset")
        .ok_or_else(|| anyhow!("schema error: missing required field `preset`"))?
        .as_str()
        .ok_or_else(|| anyhow!("schema error: field `preset` must be a string"))?;
    let base = ExperimentConfig::preset(preset_name).ok_or_else(|| {
        anyhow!(
            "schema error: unknown preset `{preset_name}` (available: {})",
            ExperimentConfig::preset_names().join(", ")
        )
    })?;

    // serialize the preset, overlay the file's keys, deserialize strictly
    let mut merged = toml::Table::try_from(&base).context("preset serialization")?;
    for (key, value) in &table {
        if key == "preset" {
            continue;
        }
        if !merged.contains_key(key) {
            bail!("schema error: unknown field `{key}`");
        }
        merged.insert(key.clone(), value.clone());
    }
    let cfg: ExperimentConfig = toml::Value::Table(merged)
        .try_into()
        .map_err(|e| anyhow!("schema error: {e}"))?;
    cfg.validate().map_err(|e| anyhow!("schema error: {e}"))?;
    Ok(cfg)
}

pub fn load_config_path(path: &std::path::Path) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    load_config(&text)
}

/// Serialize a config for embedding in checkpoints.
pub fn config_to_toml(cfg: &ExperimentConfig) -> String {
    toml::to_string(cfg).expect("config serializes")
}

pub fn config_from_toml(text: &str) -> anyhow::Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| anyhow!("checkpoint config: {e}"))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_with_override() {
        let cfg = load_config("preset = \"poly-desk\"\nepochs = 77\n").unwrap();
        assert_eq!(cfg.epochs, 77);
        assert_eq!(cfg.z_dim, 64);
    }

    #[test]
    fn missing_preset_is_named() {
        let err = load_config("epochs = 3\n").unwrap_err().to_string();
        assert!(err.contains("missing required field `preset`"), "{err}");
    }

    #[test]
    fn unknown_field_is_named() {
        let err = load_config("preset = \"poly-desk\"\nnot_a_field = 1\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("unknown field `not_a_field`"), "{err}");
    }

    #[test]
    fn invalid_value_is_named() {
        let err = load_config("preset = \"poly-desk\"\nbase_support = 64\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("base_support"), "{err}");
    }

    #[test]
    fn roundtrip_through_toml() {
        let cfg = ExperimentConfig::cards_desk();
        let text = config_to_toml(&cfg);
        let back = config_from_toml(&text).unwrap();
        assert_eq!(back.epochs, cfg.epochs);
        assert_eq!(back.lr_base, cfg.lr_base);
    }
}
