use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rlam::ppo::{train, TrainingLog};
use rlam::toy::{TabularValue, ToyReward, ToyTask};

use crate::artifacts::{
    jsonl_header, save_policy, save_task, save_value, write_file, PolicyCheckpoint, RunManifest, TaskFile,
    ValueCheckpoint,
};
use crate::config::{Preset, TrainConfig};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const TASK_FILE: &str = "task.json";
pub const FREQ_FILE: &str = "freq_model.json";
pub const SFT_FILE: &str = "sft.ckpt";
pub const POLICY_FILE: &str = "policy.ckpt";
pub const VALUE_FILE: &str = "value.ckpt";

#[derive(Debug, Clone, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Replaces the config's preset before its overrides apply.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "RLAM_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<(TrainConfig, PathBuf)> {
        let mut cfg = TrainConfig::load(&self.config, self.preset)?;
        if let Some(steps) = self.steps {
            cfg.steps = steps;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.ppo.seed = seed;
        }
        let out_dir = match (&self.out_dir, &cfg.out_dir) {
            (Some(dir), _) | (None, Some(dir)) => dir.clone(),
            (None, None) => bail!("no output directory: pass --out-dir or set `out_dir` in the config"),
        };
        Ok((cfg, out_dir))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: TrainingLog,
    pub out_dir: PathBuf,
}

fn checkpoint_name(kind: &str, step: usize) -> String {
    format!("checkpoints/{kind}-{step:06}.ckpt")
}

/// Builds the toy task, trains from its SFT policy and writes the log,
/// checkpoints, task, frequency model and manifest into `out_dir`.
pub fn cmd_train(cfg: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut manifest = RunManifest::start("train", Some(cfg.seed), serde_json::to_value(cfg)?);
    let mut outputs: Vec<String> = Vec::new();
    let task = ToyTask::build(cfg.task.vocab_size, cfg.task.pairs, cfg.task.n_docs, cfg.seed)?;

    save_task(
        &out_dir.join(TASK_FILE),
        &TaskFile {
            seed: cfg.seed,
            vocab: task.vocab.clone(),
            held_out: task.held_out.clone(),
        },
    )?;
    task.model.save(&out_dir.join(FREQ_FILE))?;
    save_policy(&out_dir.join(SFT_FILE), &PolicyCheckpoint { step: 0, policy: task.sft.clone() })?;
    write_file(&out_dir.join("config.toml"), cfg.to_toml_string()?)?;
    outputs.extend([TASK_FILE, FREQ_FILE, SFT_FILE, "config.toml"].map(String::from));

    let log_path = out_dir.join(LOG_FILE);
    let mut log_file = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    log_file.write_all(jsonl_header("train-log").as_bytes())?;

    let mut policy = task.sft.clone();
    let mut value = TabularValue::zeros(task.vocab.len());
    let reward = ToyReward {
        vocab: task.vocab.clone(),
        model: task.model.clone(),
        cfg: cfg.reward.clone(),
    };
    let prompts = task.train.prompts(&task.vocab);
    let mut ctrl = cfg.kl.clone();
    let mut on_step = |record: &rlam::ppo::StepRecord, p: &rlam::toy::BigramPolicy, v: &TabularValue| {
        let line = serde_json::to_string(record)?;
        writeln!(log_file, "{line}").map_err(|source| rlam::Error::Io {
            path: log_path.clone(),
            source,
        })?;
        let done = record.step + 1;
        if cfg.checkpoint_every > 0 && done.is_multiple_of(cfg.checkpoint_every) && done < cfg.steps {
            let policy_path = checkpoint_name("policy", done);
            let value_path = checkpoint_name("value", done);
            save_policy(&out_dir.join(&policy_path), &PolicyCheckpoint { step: done, policy: p.clone() })?;
            save_value(&out_dir.join(&value_path), &ValueCheckpoint { step: done, value: v.clone() })?;
            outputs.extend([policy_path, value_path]);
        }
        if done.is_multiple_of(50) {
            eprintln!(
                "step {done}: reward {:.3} kl {:.3} beta {:.4}",
                record.reward_mean, record.kl, record.beta_kl
            );
        }
        Ok(())
    };
    let log = train(
        &mut policy,
        &task.sft,
        &mut value,
        &prompts,
        &reward,
        &cfg.ppo,
        &mut ctrl,
        cfg.steps,
        &mut on_step,
    )?;
    log_file.flush()?;
    drop(log_file);

    let step = log.records.len();
    save_policy(&out_dir.join(POLICY_FILE), &PolicyCheckpoint { step, policy })?;
    save_value(&out_dir.join(VALUE_FILE), &ValueCheckpoint { step, value })?;
    outputs.extend([LOG_FILE, POLICY_FILE, VALUE_FILE].map(String::from));
    manifest.outputs = outputs;
    manifest.finish(out_dir)?;
    if let Some(reason) = &log.halted {
        bail!("training halted at {reason}; the last good parameters were saved");
    }
    Ok(TrainOutcome {
        log,
        out_dir: out_dir.to_owned(),
    })
}
