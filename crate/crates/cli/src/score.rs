use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use rlam::metrics::{measure, mean, MetricReport, VoaLexicon};
use rlam::{tokenize, FrequencyModel};

use crate::artifacts::{csv_header, write_file};
use crate::build_freq::stem;

/// Metric columns shared by score and eval CSVs, in output order.
pub const METRIC_COLUMNS: [&str; 7] = ["ari", "fk", "voa", "sl", "wa", "wl", "sentence_wa_std"];

#[derive(Debug, Clone, clap::Args)]
pub struct ScoreArgs {
    /// Document files, one document per line; each gets its own summary rows.
    #[arg(long, required = true, num_args = 1..)]
    pub docs: Vec<PathBuf>,
    #[arg(long, env = "RLAM_FREQ_MODEL")]
    pub freq_model: PathBuf,
    /// Basic-vocabulary word list, one word per line.
    #[arg(long, env = "RLAM_VOA")]
    pub voa: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSummary {
    pub source: String,
    pub scored: usize,
    pub skipped: usize,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

pub fn metric_values(r: &MetricReport) -> [f64; 7] {
    [
        r.ari,
        r.fk,
        r.voa_log_ratio,
        r.avg_sentence_length,
        r.avg_word_accessibility,
        r.avg_word_length,
        r.sentence_wa_std,
    ]
}

/// Sample standard deviation; zero for fewer than two values.
fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn cmd_score(args: &ScoreArgs) -> Result<Vec<SourceSummary>> {
    let model = FrequencyModel::load(&args.freq_model)?;
    let lexicon = VoaLexicon::load(&args.voa)?;
    let mut out = csv::WriterBuilder::new().from_writer(csv_header("score").into_bytes());
    let mut header = vec!["source", "row"];
    header.extend(METRIC_COLUMNS);
    out.write_record(&header)?;

    let mut summaries = Vec::new();
    for path in &args.docs {
        let bytes = fs::read(path).with_context(|| format!("reading documents {}", path.display()))?;
        let source = stem(path);
        let mut rows: Vec<[f64; 7]> = Vec::new();
        let mut skipped = 0;
        for (i, line) in bytes.split(|&b| b == b'\n').enumerate() {
            let line = line.strip_suffix(b"\r").unwrap_or(line);
            if line.is_empty() {
                continue;
            }
            let report = std::str::from_utf8(line)
                .map_err(anyhow::Error::from)
                .and_then(|text| Ok(measure(&tokenize(text), &model, &lexicon, None)?));
            match report {
                Ok(r) => {
                    let values = metric_values(&r);
                    let mut record = vec![source.clone(), (i + 1).to_string()];
                    record.extend(values.iter().map(f64::to_string));
                    out.write_record(&record)?;
                    rows.push(values);
                }
                Err(e) => {
                    eprintln!("warning: {}:{}: skipped: {e}", path.display(), i + 1);
                    skipped += 1;
                }
            }
        }
        let columns: Vec<Vec<f64>> = (0..METRIC_COLUMNS.len())
            .map(|j| rows.iter().map(|r| r[j]).collect())
            .collect();
        let summary = SourceSummary {
            source: source.clone(),
            scored: rows.len(),
            skipped,
            means: columns
                .iter()
                .map(|c| if c.is_empty() { f64::NAN } else { mean(c) })
                .collect(),
            stds: columns.iter().map(|c| sample_std(c)).collect(),
        };
        for (label, values) in [("mean", &summary.means), ("std", &summary.stds)] {
            let mut record = vec![source.clone(), label.to_owned()];
            record.extend(values.iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }));
            out.write_record(&record)?;
        }
        eprintln!("{source}: {} documents scored, {skipped} skipped", rows.len());
        summaries.push(summary);
    }
    write_file(&args.out, out.into_inner()?)?;
    Ok(summaries)
}
