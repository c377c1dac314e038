//! Experiment configuration and the named presets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use autodiff::OptimizerKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Poly,
    Cards,
    Grid,
    Stroop,
}

/// Architecture variants used for the comparison models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Default: one example network and one hyper network shared between the
    /// basic-task and meta-mapping paths.
    Homoiconic,
    /// Separate example/hyper copies for the meta path.
    NonHomoiconic,
    /// No hyper network; the task representation is concatenated to the
    /// input embedding and fed through a fixed task network.
    TaskConcat,
    /// Language-trained model with no meta-mapping training; held-out tasks
    /// are performed directly from their descriptions.
    LanguageAlone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepSource {
    Examples,
    Language,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptKind {
    Adam,
    Rmsprop,
    Sgd,
}

impl From<OptKind> for OptimizerKind {
    fn from(k: OptKind) -> Self {
        match k {
            OptKind::Adam => OptimizerKind::Adam,
            OptKind::Rmsprop => OptimizerKind::RmsProp,
            OptKind::Sgd => OptimizerKind::Sgd,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, message: message.into() }
}

/// The full run configuration. Presets fill every field; config files name a
/// preset and override individual keys.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: DomainKind,
    pub variant: Variant,
    pub rep_source: RepSource,

    pub epochs: usize,
    pub eval_interval: usize,
    /// Task datasets / memory buffers are rebuilt every this many epochs.
    pub data_refresh_interval: usize,

    // model widths
    pub z_dim: usize,
    pub p_hidden: usize,
    pub p_layers: usize,
    pub oe_hidden: usize,
    pub oe_layers: usize,
    pub e_hidden: usize,
    pub h_hidden: usize,
    pub h_layers: usize,
    pub t_hidden: Vec<usize>,
    pub od_hidden: usize,
    pub od_layers: usize,
    pub lstm_hidden: usize,
    pub hyper_init_scale: f64,
    pub weight_norm: bool,

    // optimization
    pub optimizer: OptKind,
    pub lr_base: f64,
    pub lr_base_decay: f64,
    pub lr_base_min: f64,
    pub lr_meta: f64,
    pub lr_meta_decay: f64,
    pub lr_meta_min: f64,
    pub lr_decay_interval: usize,

    // batching
    pub base_batch: usize,
    pub base_support: usize,
    pub meta_support_fraction: f64,

    pub metaclass: bool,
    pub persistent_reps: bool,
    pub persist_match_weight: f64,
    /// Off by default: meta-mapping losses stop at the task representations.
    pub allow_meta_gradients: bool,

    // reinforcement learning
    pub rl_gamma: f64,
    pub rl_eps_init: f64,
    pub rl_eps_decay: f64,
    pub rl_softmax_beta: f64,
    pub rl_buffer_size: usize,
    pub rl_target_copy_interval: usize,
    pub rl_eval_episodes: usize,

    // polynomial registry scale
    pub poly_sources: usize,
    pub poly_source_train: usize,
    pub poly_train_mappings: usize,
    pub poly_heldout_mappings: usize,
    pub poly_coeff_sd: f64,
    /// How many held-out tasks enter each basic-task evaluation pass.
    pub eval_heldout_sample: usize,

    // representation optimization
    pub rep_opt_steps: usize,
    pub rep_opt_lr: f64,
    pub rep_opt_tasks: usize,

    // stroop
    pub stroop_proportions: Vec<usize>,
    pub stroop_seeds: usize,
    pub stroop_max_epochs: usize,
}

impl ExperimentConfig {
    /// Desk-scale polynomial preset.
    pub fn poly_desk() -> Self {
        ExperimentConfig {
            domain: DomainKind::Poly,
            variant: Variant::Homoiconic,
            rep_source: RepSource::Examples,
            epochs: 1500,
            eval_interval: 50,
            data_refresh_interval: 50,
            z_dim: 64,
            p_hidden: 64,
            p_layers: 2,
            oe_hidden: 64,
            oe_layers: 1,
            e_hidden: 128,
            h_hidden: 128,
            h_layers: 4,
            t_hidden: vec![32, 32],
            od_hidden: 64,
            od_layers: 1,
            lstm_hidden: 64,
            hyper_init_scale: 1.0,
            weight_norm: false,
            optimizer: OptKind::Adam,
            lr_base: 1e-4,
            lr_base_decay: 0.85,
            lr_base_min: 3e-8,
            lr_meta: 3e-5,
            lr_meta_decay: 0.85,
            lr_meta_min: 1e-7,
            lr_decay_interval: 100,
            base_batch: 64,
            base_support: 24,
            meta_support_fraction: 0.5,
            metaclass: true,
            persistent_reps: false,
            persist_match_weight: 0.2,
            allow_meta_gradients: false,
            rl_gamma: 0.85,
            rl_eps_init: 1.0,
            rl_eps_decay: 0.03,
            rl_softmax_beta: 8.0,
            rl_buffer_size: 1000,
            rl_target_copy_interval: 10000,
            rl_eval_episodes: 10,
            poly_sources: 30,
            poly_source_train: 18,
            poly_train_mappings: 8,
            poly_heldout_mappings: 4,
            poly_coeff_sd: 2.5,
            eval_heldout_sample: 36,
            rep_opt_steps: 300,
            rep_opt_lr: 1e-4,
            rep_opt_tasks: 12,
            stroop_proportions: vec![1, 2, 3, 5],
            stroop_seeds: 5,
            stroop_max_epochs: 30000,
        }
    }

    /// Full-scale polynomial preset (published hyperparameters). Not run by
    /// the test suites; provided for completeness.
    pub fn poly_paper() -> Self {
        ExperimentConfig {
            epochs: 5000,
            z_dim: 512,
            p_hidden: 128,
            oe_hidden: 512,
            e_hidden: 512,
            h_hidden: 512,
            t_hidden: vec![64, 64],
            lr_base: 3e-5,
            lr_meta: 1e-5,
            base_batch: 1024,
            base_support: 50,
            poly_sources: 100,
            poly_source_train: 60,
            poly_train_mappings: 20,
            poly_heldout_mappings: 16,
            eval_heldout_sample: 144,
            ..Self::poly_desk()
        }
    }

    /// Desk-scale card-game preset.
    pub fn cards_desk() -> Self {
        ExperimentConfig {
            domain: DomainKind::Cards,
            epochs: 6000,
            eval_interval: 200,
            data_refresh_interval: 50,
            oe_hidden: 128,
            oe_layers: 3,
            t_hidden: vec![],
            optimizer: OptKind::Rmsprop,
            lr_base: 3e-5,
            lr_base_decay: 0.85,
            lr_base_min: 3e-8,
            lr_meta: 1e-5,
            lr_meta_decay: 0.9,
            lr_meta_min: 3e-8,
            lr_decay_interval: 200,
            base_batch: 96,
            base_support: 48,
            ..Self::poly_desk()
        }
    }

    /// Desk-scale gridworld preset.
    pub fn grid_desk() -> Self {
        ExperimentConfig {
            domain: DomainKind::Grid,
            epochs: 60000,
            eval_interval: 1000,
            data_refresh_interval: 1500,
            oe_hidden: 128,
            oe_layers: 3,
            t_hidden: vec![32, 32],
            weight_norm: true,
            optimizer: OptKind::Rmsprop,
            lr_base: 1e-4,
            lr_base_decay: 0.8,
            lr_base_min: 3e-8,
            lr_meta: 1e-4,
            lr_meta_decay: 0.95,
            lr_meta_min: 3e-7,
            lr_decay_interval: 2000,
            base_batch: 64,
            base_support: 32,
            metaclass: false,
            persistent_reps: true,
            hyper_init_scale: 10.0,
            rl_target_copy_interval: 2000,
            ..Self::poly_desk()
        }
    }

    /// Tiny two-task context model.
    pub fn stroop() -> Self {
        ExperimentConfig {
            domain: DomainKind::Stroop,
            epochs: 30000,
            eval_interval: 100,
            z_dim: 8,
            p_hidden: 32,
            p_layers: 2,
            oe_hidden: 8,
            oe_layers: 1,
            e_hidden: 64,
            h_hidden: 64,
            t_hidden: vec![],
            od_hidden: 8,
            optimizer: OptKind::Sgd,
            lr_base: 0.01,
            lr_base_decay: 1.0,
            lr_base_min: 0.01,
            lr_meta: 0.01,
            lr_meta_decay: 1.0,
            lr_meta_min: 0.01,
            lr_decay_interval: usize::MAX,
            base_batch: 4,
            base_support: 2,
            metaclass: false,
            ..Self::poly_desk()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "poly-desk" => Some(Self::poly_desk()),
            "poly-paper" => Some(Self::poly_paper()),
            "cards-desk" => Some(Self::cards_desk()),
            "grid-desk" => Some(Self::grid_desk()),
            "stroop" => Some(Self::stroop()),
            "baselines" => Some(Self::poly_desk()),
            "rep-optimize" => Some(Self::poly_desk()),
            _ => None,
        }
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["poly-desk", "poly-paper", "cards-desk", "grid-desk", "stroop", "baselines", "rep-optimize"]
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, v) in [
            ("lr_base", self.lr_base),
            ("lr_meta", self.lr_meta),
            ("lr_base_min", self.lr_base_min),
            ("lr_meta_min", self.lr_meta_min),
        ] {
            if v <= 0.0 {
                return Err(invalid("lr", format!("{field} must be positive, got {v}")));
            }
        }
        if self.base_support >= self.base_batch {
            return Err(invalid(
                "base_support",
                format!("support size {} must be < batch size {}", self.base_support, self.base_batch),
            ));
        }
        if !(self.meta_support_fraction > 0.0 && self.meta_support_fraction < 1.0) {
            return Err(invalid(
                "meta_support_fraction",
                format!("must lie in (0,1), got {}", self.meta_support_fraction),
            ));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs", "must be positive"));
        }
        if self.z_dim == 0 {
            return Err(invalid("z_dim", "must be positive"));
        }
        if self.poly_source_train >= self.poly_sources {
            return Err(invalid(
                "poly_source_train",
                "train sources must be fewer than total sources",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in ExperimentConfig::preset_names() {
            let cfg = ExperimentConfig::preset(name).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn invalid_support_rejected() {
        let mut cfg = ExperimentConfig::poly_desk();
        cfg.base_support = cfg.base_batch;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("base_support"));
    }
}
