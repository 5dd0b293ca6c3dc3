use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rlam::analysis::{tds_analyze, TdsReport};
use rlam::metrics::{accessibility_aggregates, mean, measure, MetricReport, SariContext, VoaLexicon};
use rlam::ppo::{greedy_decode, rollout, Policy, PpoConfig};
use rlam::toy::{ToyReward, ToyVocabulary};
use rlam::{FrequencyModel, RewardBreakdown, RewardConfig};
use serde::{Deserialize, Serialize};

use crate::artifacts::{csv_header, jsonl_header, load_policy, load_task, write_file, RunManifest};
use crate::score::{metric_values, METRIC_COLUMNS};

#[derive(Debug, Clone, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub sft_checkpoint: PathBuf,
    /// Task file written by `train`; supplies the held-out prompts and targets.
    #[arg(long, env = "RLAM_TASK")]
    pub task: PathBuf,
    #[arg(long, env = "RLAM_FREQ_MODEL")]
    pub freq_model: PathBuf,
    /// Basic-vocabulary word list; defaults to the toy task's own.
    #[arg(long, env = "RLAM_VOA")]
    pub voa: Option<PathBuf>,
    #[arg(long, env = "RLAM_OUT_DIR")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub max_new_tokens: usize,
    /// Sampled completions per held-out prompt, in addition to greedy decoding.
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.7)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Means over the documents that could be measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedySummary {
    pub documents: usize,
    pub unmeasurable: usize,
    pub finished_fraction: f64,
    pub reward: f64,
    pub ari: Option<f64>,
    pub fk: Option<f64>,
    pub sari: Option<f64>,
    pub voa: Option<f64>,
    pub sl: Option<f64>,
    pub wa: Option<f64>,
    pub wl: Option<f64>,
    pub sentence_wa_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledSummary {
    pub completions: usize,
    pub unmeasurable: usize,
    pub finished_fraction: f64,
    pub reward: f64,
    pub sl: Option<f64>,
    pub wa: Option<f64>,
    /// Mean summed per-token log-ratio against the SFT policy.
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub greedy: GreedySummary,
    pub sampled: Option<SampledSummary>,
    pub tds: TdsReport,
}

#[derive(Serialize)]
struct Generation<'a> {
    row: usize,
    text: String,
    tokens: &'a [u32],
    finished: bool,
    reward: &'a RewardBreakdown,
}

fn check_vocab(what: &str, policy: &dyn Policy, vocab: &ToyVocabulary) -> Result<()> {
    if policy.vocab_size() != vocab.len() {
        bail!(
            "vocabulary mismatch: {what} has {} tokens, the task has {}",
            policy.vocab_size(),
            vocab.len()
        );
    }
    Ok(())
}

fn mean_if_any(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| mean(xs))
}

/// Greedy decoding of every held-out prompt, metric and reward reports, a
/// token distribution shift report against the SFT policy and optionally
/// sampled completions.
pub fn cmd_eval(args: &EvalArgs) -> Result<EvalSummary> {
    let mut manifest = RunManifest::start("eval", Some(args.seed), serde_json::json!({
        "max_new_tokens": args.max_new_tokens,
        "samples": args.samples,
        "temperature": args.temperature,
    }));
    manifest.input("checkpoint", &args.checkpoint);
    manifest.input("sft_checkpoint", &args.sft_checkpoint);
    manifest.input("task", &args.task);
    manifest.input("freq_model", &args.freq_model);

    let policy = load_policy(&args.checkpoint)?.policy;
    let sft = load_policy(&args.sft_checkpoint)?.policy;
    let task = load_task(&args.task)?;
    let model = FrequencyModel::load(&args.freq_model)?;
    let lexicon = match &args.voa {
        Some(path) => {
            manifest.input("voa", path);
            VoaLexicon::load(path)?
        }
        None => task.vocab.basic_vocabulary()?,
    };
    let vocab = &task.vocab;
    check_vocab("checkpoint", &policy, vocab)?;
    check_vocab("SFT checkpoint", &sft, vocab)?;
    let reward = ToyReward {
        vocab: vocab.clone(),
        model: model.clone(),
        cfg: RewardConfig {
            eos_token_id: vocab.eos,
            ..Default::default()
        },
    };
    let prompts = task.held_out.prompts(vocab);
    if prompts.is_empty() {
        bail!("task has no held-out prompts");
    }

    let mut generations = jsonl_header("generations");
    let mut metrics_csv = csv::WriterBuilder::new().from_writer(csv_header("eval-metrics").into_bytes());
    let mut header = vec!["row", "finished", "reward", "sari"];
    header.extend(METRIC_COLUMNS);
    metrics_csv.write_record(&header)?;

    let mut reports: Vec<MetricReport> = Vec::new();
    let (mut rewards, mut finished, mut generated) = (Vec::new(), 0, 0);
    for (row, prompt) in prompts.iter().enumerate() {
        let decoded = greedy_decode(&policy, prompt, args.max_new_tokens)?;
        generated += decoded.tokens.len();
        let breakdown = reward.breakdown(&decoded.tokens, decoded.finished);
        let doc = vocab.document(&decoded.tokens)?;
        let source = vocab.document(&task.held_out.sources[row])?;
        let target = vocab.document(&task.held_out.targets[row])?;
        let report = measure(&doc, &model, &lexicon, Some(SariContext {
            source: &source,
            references: std::slice::from_ref(&target),
        }));
        let mut record = vec![
            row.to_string(),
            decoded.finished.to_string(),
            breakdown.total.to_string(),
        ];
        match &report {
            Ok(r) => {
                record.push(r.sari.map(|s| s.to_string()).unwrap_or_default());
                record.extend(metric_values(r).iter().map(f64::to_string));
            }
            Err(_) => record.extend(std::iter::repeat_n(String::new(), 1 + METRIC_COLUMNS.len())),
        }
        metrics_csv.write_record(&record)?;
        generations.push_str(&serde_json::to_string(&Generation {
            row,
            text: vocab.decode(&decoded.tokens)?,
            tokens: &decoded.tokens,
            finished: decoded.finished,
            reward: &breakdown,
        })?);
        generations.push('\n');
        rewards.push(breakdown.total);
        finished += usize::from(decoded.finished);
        if let Ok(r) = report {
            reports.push(r);
        }
    }

    let tds = tds_analyze(&policy, &sft, &prompts, args.max_new_tokens)?;
    if tds.total() != generated {
        bail!("token shift categories cover {} tokens, {} were generated", tds.total(), generated);
    }

    let column = |f: &dyn Fn(&MetricReport) -> f64| mean_if_any(&reports.iter().map(f).collect::<Vec<_>>());
    let greedy = GreedySummary {
        documents: prompts.len(),
        unmeasurable: prompts.len() - reports.len(),
        finished_fraction: finished as f64 / prompts.len() as f64,
        reward: mean(&rewards),
        ari: column(&|r| r.ari),
        fk: column(&|r| r.fk),
        sari: mean_if_any(&reports.iter().filter_map(|r| r.sari).collect::<Vec<_>>()),
        voa: column(&|r| r.voa_log_ratio),
        sl: column(&|r| r.avg_sentence_length),
        wa: column(&|r| r.avg_word_accessibility),
        wl: column(&|r| r.avg_word_length),
        sentence_wa_std: column(&|r| r.sentence_wa_std),
    };
    let sampled = (args.samples > 0)
        .then(|| sample(args, &policy, &sft, &prompts, vocab, &model, &reward))
        .transpose()?;

    let out = &args.out_dir;
    write_file(&out.join("generations.jsonl"), generations)?;
    write_file(&out.join("metrics.csv"), metrics_csv.into_inner()?)?;
    write_file(&out.join("tds.json"), serde_json::to_string_pretty(&tds)? + "\n")?;
    write_file(&out.join("tds_positions.csv"), positions_csv(&tds)?)?;
    let summary = EvalSummary { greedy, sampled, tds };
    write_file(&out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    manifest.outputs = ["generations.jsonl", "metrics.csv", "tds.json", "tds_positions.csv", "summary.json"]
        .map(String::from)
        .to_vec();
    manifest.finish(out)?;
    Ok(summary)
}

fn sample(
    args: &EvalArgs,
    policy: &rlam::toy::BigramPolicy,
    sft: &rlam::toy::BigramPolicy,
    prompts: &[Vec<u32>],
    vocab: &ToyVocabulary,
    model: &FrequencyModel,
    reward: &ToyReward,
) -> Result<SampledSummary> {
    let cfg = PpoConfig {
        temperature: args.temperature,
        max_new_tokens: args.max_new_tokens,
        seed: args.seed,
        ..Default::default()
    };
    cfg.validate()?;
    let repeated: Vec<Vec<u32>> = prompts
        .iter()
        .flat_map(|p| std::iter::repeat_n(p.clone(), args.samples))
        .collect();
    let batch = rollout(policy, sft, &repeated, &cfg, args.seed).context("sampling completions")?;
    let (mut sl, mut wa, mut rewards, mut kls) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut finished = 0;
    for traj in &batch {
        rewards.push(reward.breakdown(&traj.actions, traj.finished).total);
        kls.push(traj.kl_sum());
        finished += usize::from(traj.finished);
        if let Ok(agg) = accessibility_aggregates(&vocab.document(&traj.actions)?, model) {
            sl.push(agg.avg_sl);
            wa.push(agg.avg_wa);
        }
    }
    Ok(SampledSummary {
        completions: batch.len(),
        unmeasurable: batch.len() - sl.len(),
        finished_fraction: finished as f64 / batch.len() as f64,
        reward: mean(&rewards),
        sl: mean_if_any(&sl),
        wa: mean_if_any(&wa),
        kl: mean(&kls),
    })
}

/// Long format: one row per decile and category.
fn positions_csv(tds: &TdsReport) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().from_writer(csv_header("tds-positions").into_bytes());
    w.write_record(["decile", "tokens", "category", "proportion"])?;
    for bin in &tds.positional_histogram {
        for (category, proportion) in [
            ("marginal", bin.marginal_proportion()),
            ("shifted", bin.shifted_proportion()),
        ] {
            w.write_record([
                bin.decile.to_string(),
                bin.tokens.to_string(),
                category.to_owned(),
                proportion.to_string(),
            ])?;
        }
    }
    Ok(w.into_inner()?)
}

/// Reads an eval summary written by [`cmd_eval`].
pub fn load_summary(dir: &Path) -> Result<EvalSummary> {
    let path = dir.join("summary.json");
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}
