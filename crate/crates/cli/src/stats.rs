use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rlam::analysis::{bonferroni, paired_t_test, Tail, TestResult, DEFAULT_ALPHA};

use crate::artifacts::{csv_header, write_file};

/// Columns that identify rows rather than hold measurements.
const KEY_COLUMNS: [&str; 3] = ["source", "row", "finished"];

#[derive(Debug, Clone, clap::Args)]
pub struct StatsArgs {
    /// Per-document metrics CSV from `score` or `eval`.
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Alternative hypothesis on the mean of `a - b`.
    #[arg(long, value_enum, default_value_t = TailArg::TwoSided)]
    pub tail: TailArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TailArg {
    TwoSided,
    Greater,
    Less,
}

impl From<TailArg> for Tail {
    fn from(t: TailArg) -> Self {
        match t {
            TailArg::TwoSided => Tail::TwoSided,
            TailArg::Greater => Tail::Greater,
            TailArg::Less => Tail::Less,
        }
    }
}

/// Document rows of a metrics CSV: row keys and one optional value per
/// metric column. Summary rows (non-numeric `row`) are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub metrics: Vec<String>,
    pub keys: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

pub fn read_metric_table(path: &Path) -> Result<MetricTable> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("reading metrics {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let row_col = headers
        .iter()
        .position(|h| h == "row")
        .with_context(|| format!("{}: no `row` column", path.display()))?;
    let source_col = headers.iter().position(|h| h == "source");
    let metric_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| !KEY_COLUMNS.contains(&&headers[i]))
        .collect();
    let mut table = MetricTable {
        metrics: metric_cols.iter().map(|&i| headers[i].to_owned()).collect(),
        keys: Vec::new(),
        values: Vec::new(),
    };
    for (line, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{}: record {}", path.display(), line + 1))?;
        if record[row_col].parse::<usize>().is_err() {
            continue;
        }
        let key = match source_col {
            Some(c) => format!("{}:{}", &record[c], &record[row_col]),
            None => record[row_col].to_owned(),
        };
        let values = metric_cols
            .iter()
            .map(|&i| match &record[i] {
                "" => Ok(None),
                v => v
                    .parse::<f64>()
                    .map(Some)
                    .with_context(|| format!("{}: `{}` in column {}", path.display(), v, &headers[i])),
            })
            .collect::<Result<Vec<_>>>()?;
        table.keys.push(key);
        table.values.push(values);
    }
    Ok(table)
}

/// Paired t-test per shared metric, Bonferroni-corrected over the family.
/// Documents missing a metric in either file are left out of that test.
pub fn compare_tables(a: &MetricTable, b: &MetricTable, alpha: f64, tail: Tail) -> Result<Vec<(TestResult, usize)>> {
    if a.keys.len() != b.keys.len() {
        bail!("row mismatch: {} documents vs {}", a.keys.len(), b.keys.len());
    }
    if let Some(i) = (0..a.keys.len()).find(|&i| a.keys[i].rsplit(':').next() != b.keys[i].rsplit(':').next()) {
        bail!("row mismatch at document {}: `{}` vs `{}`", i + 1, a.keys[i], b.keys[i]);
    }
    let mut raw = Vec::new();
    let mut sizes = Vec::new();
    for (j, metric) in a.metrics.iter().enumerate() {
        let Some(k) = b.metrics.iter().position(|m| m == metric) else {
            continue;
        };
        let (xs, ys): (Vec<f64>, Vec<f64>) = a
            .values
            .iter()
            .zip(&b.values)
            .filter_map(|(ra, rb)| Some((ra[j]?, rb[k]?)))
            .unzip();
        if xs.len() < 2 {
            eprintln!("warning: {metric}: fewer than 2 paired values, skipped");
            continue;
        }
        let test = paired_t_test(&xs, &ys)?;
        raw.push(TestResult::new(metric.clone(), &test, tail));
        sizes.push(xs.len());
    }
    if raw.is_empty() {
        bail!("no metric columns shared by both files");
    }
    Ok(bonferroni(&raw, alpha).into_iter().zip(sizes).collect())
}

fn fmt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn cmd_stats(args: &StatsArgs) -> Result<Vec<TestResult>> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        bail!("alpha must lie in (0, 1)");
    }
    let a = read_metric_table(&args.a)?;
    let b = read_metric_table(&args.b)?;
    let results = compare_tables(&a, &b, args.alpha, args.tail.into())?;
    let mut table = format!("{:<18} {:>5} {:>12} {:>12} {:>12}  significant", "metric", "n", "t", "p_raw", "p_adjusted");
    for (r, n) in &results {
        table.push_str(&format!(
            "\n{:<18} {:>5} {:>12} {:>12.6} {:>12.6}  {}",
            r.metric_name,
            n,
            r.t_statistic.map_or("undefined".into(), |t| format!("{t:.4}")),
            r.p_raw,
            r.p_adjusted,
            r.significant
        ));
    }
    crate::print_stdout(&table)?;
    if let Some(out) = &args.out {
        let mut w = csv::WriterBuilder::new().from_writer(csv_header("stats").into_bytes());
        w.write_record(["metric", "n", "t", "p_raw", "p_adjusted", "significant"])?;
        for (r, n) in &results {
            w.write_record([
                r.metric_name.clone(),
                n.to_string(),
                fmt(r.t_statistic),
                r.p_raw.to_string(),
                r.p_adjusted.to_string(),
                r.significant.to_string(),
            ])?;
        }
        write_file(out, w.into_inner()?)?;
    }
    Ok(results.into_iter().map(|(r, _)| r).collect())
}
