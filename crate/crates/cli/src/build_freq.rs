use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rlam::frequency::{BuildOptions, FrequencyModel, TypeCounts, DEFAULT_CAPACITY, DEFAULT_FEATURE_DIM, DEFAULT_L2};
use serde::Serialize;

#[derive(Debug, Clone, clap::Args)]
pub struct BuildFreqArgs {
    /// Reference corpus, one text per line.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CAPACITY)]
    pub capacity: usize,
    #[arg(long, default_value_t = DEFAULT_L2)]
    pub l2: f64,
    #[arg(long, default_value_t = DEFAULT_FEATURE_DIM)]
    pub feature_dim: usize,
    /// Name recorded in the model; defaults to the corpus file stem.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, env = "RLAM_FREQ_MODEL")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildFreqSummary {
    pub types_seen: usize,
    pub types_retained: usize,
    pub total_tokens: u64,
    pub out: PathBuf,
}

pub fn cmd_build_freq(args: &BuildFreqArgs) -> Result<BuildFreqSummary> {
    let text = fs::read_to_string(&args.corpus).with_context(|| format!("reading corpus {}", args.corpus.display()))?;
    let mut counts = TypeCounts::default();
    for line in text.lines() {
        counts.add_line(line);
    }
    let opts = BuildOptions {
        capacity: args.capacity,
        l2: args.l2,
        feature_dim: args.feature_dim,
        reference_name: args.name.clone().unwrap_or_else(|| stem(&args.corpus)),
    };
    let model = FrequencyModel::from_counts(&counts, &opts)?;
    model.save(&args.out)?;
    Ok(BuildFreqSummary {
        types_seen: counts.counts.len(),
        types_retained: model.table.len(),
        total_tokens: model.total_tokens,
        out: args.out.clone(),
    })
}

pub(crate) fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into())
}
