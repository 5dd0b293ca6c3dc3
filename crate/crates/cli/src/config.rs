//! Training configuration: a TOML document layered over a named preset.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rlam::ppo::{KlController, PpoConfig};
use rlam::reward::{Objective, RewardConfig};
use rlam::toy::{toy_ppo_config, DEFAULT_PAIRS, DEFAULT_VOCAB_SIZE};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum Preset {
    /// Word-accessibility plus sentence-length reward.
    #[serde(rename = "rlam-default")]
    #[value(name = "rlam-default")]
    RlamDefault,
    /// Negated ARI as the whole reward.
    #[serde(rename = "rlari")]
    #[value(name = "rlari")]
    Rlari,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::RlamDefault => "rlam-default",
            Preset::Rlari => "rlari",
        }
    }
}

/// Shape of the synthetic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub vocab_size: usize,
    pub pairs: usize,
    /// Training documents; the held-out split gets a quarter as many.
    pub n_docs: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            vocab_size: DEFAULT_VOCAB_SIZE,
            pairs: DEFAULT_PAIRS,
            n_docs: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub preset: Preset,
    pub steps: usize,
    /// Seeds the task, the prompt draws and the rollouts.
    pub seed: u64,
    /// Write intermediate checkpoints every this many steps; 0 keeps only
    /// the final one.
    pub checkpoint_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub task: TaskConfig,
    pub reward: RewardConfig,
    pub ppo: PpoConfig,
    pub kl: KlController,
}

impl TrainConfig {
    pub fn preset(preset: Preset) -> Self {
        let reward = RewardConfig {
            objective: match preset {
                Preset::RlamDefault => Objective::Accessibility,
                Preset::Rlari => Objective::Ari,
            },
            ..Default::default()
        };
        Self {
            preset,
            steps: 300,
            seed: 0,
            checkpoint_every: 100,
            out_dir: None,
            task: TaskConfig::default(),
            reward,
            ppo: toy_ppo_config(),
            kl: KlController::default(),
        }
    }

    /// Parses a TOML document. The `preset` key (or `preset_override`)
    /// picks the base; every other key overrides it field by field.
    pub fn from_toml_str(text: &str, preset_override: Option<Preset>) -> Result<Self> {
        let user: toml::Table = text.parse().context("config is not valid TOML")?;
        let preset = match preset_override {
            Some(p) => p,
            None => match user.get("preset") {
                Some(v) => v
                    .clone()
                    .try_into()
                    .context("invalid configuration field `preset`: expected \"rlam-default\" or \"rlari\"")?,
                None => Preset::RlamDefault,
            },
        };
        // Snapshots carry a copy of the seed under [ppo]; a differing one is ambiguous.
        if let Some(ppo_seed) = user.get("ppo").and_then(|p| p.get("seed")) {
            let seed = user.get("seed").cloned().unwrap_or(toml::Value::Integer(0));
            if *ppo_seed != seed {
                bail!("invalid configuration field `ppo.seed`: set `seed` at the top level");
            }
        }
        let mut merged = toml::Table::try_from(Self::preset(preset)).context("serializing preset")?;
        merge(&mut merged, user);
        merged.insert("preset".into(), toml::Value::String(preset.as_str().into()));
        let mut cfg: Self = merged.try_into().context("invalid configuration")?;
        cfg.ppo.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, preset_override: Option<Preset>) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml_str(&text, preset_override).with_context(|| format!("in config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        self.ppo.validate()?;
        self.kl.validate()?;
        if self.task.n_docs == 0 {
            bail!("invalid configuration field `task.n_docs`: must be positive");
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}
