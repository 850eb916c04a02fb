//! Summaries and result files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::{ExperimentConfig, LearnerStrategy, ResultRecord};
use crate::error::{Error, Result};

/// Mean and sample standard deviation over repeats for one
/// `(strategy, iteration)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryRow {
    pub strategy: LearnerStrategy,
    pub iteration: usize,
    pub n_pairs: usize,
    pub repeats: usize,
    pub mean: f64,
    pub std: f64,
}

/// Rows come out in order of first appearance of each strategy, then by
/// iteration.
pub fn summarize(records: &[ResultRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::InvalidData("no records to summarize".into()));
    }
    let mut strategy_order: Vec<LearnerStrategy> = Vec::new();
    let mut cells: BTreeMap<(usize, usize), (usize, Vec<f64>)> = BTreeMap::new();
    for r in records {
        let pos = match strategy_order.iter().position(|&s| s == r.strategy) {
            Some(p) => p,
            None => {
                strategy_order.push(r.strategy);
                strategy_order.len() - 1
            }
        };
        cells
            .entry((pos, r.iteration))
            .or_insert_with(|| (r.n_pairs, Vec::new()))
            .1
            .push(r.accuracy);
    }
    Ok(cells
        .into_iter()
        .map(|((pos, iteration), (n_pairs, values))| {
            let n = values.len();
            let mean = values.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            SummaryRow {
                strategy: strategy_order[pos],
                iteration,
                n_pairs,
                repeats: n,
                mean,
                std,
            }
        })
        .collect())
}

/// One row per iteration, one `mean ± std` column per strategy.
pub fn format_table(rows: &[SummaryRow]) -> String {
    let mut strategies: Vec<LearnerStrategy> = Vec::new();
    for r in rows {
        if !strategies.contains(&r.strategy) {
            strategies.push(r.strategy);
        }
    }
    let mut by_iteration: BTreeMap<usize, (usize, Vec<Option<&SummaryRow>>)> = BTreeMap::new();
    for r in rows {
        let entry = by_iteration
            .entry(r.iteration)
            .or_insert_with(|| (r.n_pairs, vec![None; strategies.len()]));
        let col = strategies.iter().position(|&s| s == r.strategy).expect("collected above");
        entry.1[col] = Some(r);
    }
    let repeats = rows.iter().map(|r| r.repeats).max().unwrap_or(0);

    let width = 15;
    let mut out = String::new();
    let _ = write!(out, "{:>5} {:>7}", "iter", "pairs");
    for s in &strategies {
        let _ = write!(out, " {:>width$}", s.as_str());
    }
    out.push('\n');
    for (iteration, (n_pairs, cols)) in &by_iteration {
        let _ = write!(out, "{iteration:>5} {n_pairs:>7}");
        for cell in cols {
            let text = cell.map_or_else(|| "-".to_string(), |r| format!("{:.3} ± {:.3}", r.mean, r.std));
            let _ = write!(out, " {text:>width$}");
        }
        out.push('\n');
    }
    let _ = writeln!(out, "1NN accuracy, mean ± sample std over {repeats} repeats");
    out
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Columns: strategy, repeat, iteration, n_pairs, accuracy, runtime_ms, seed.
pub fn write_results_csv<W: Write>(records: &[ResultRecord], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["strategy", "repeat", "iteration", "n_pairs", "accuracy", "runtime_ms", "seed"])
        .map_err(csv_err)?;
    for r in records {
        wtr.write_record([
            r.strategy.as_str().to_string(),
            r.repeat.to_string(),
            r.iteration.to_string(),
            r.n_pairs.to_string(),
            r.accuracy.to_string(),
            format!("{:.3}", r.runtime_ms),
            r.seed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["strategy", "iteration", "n_pairs", "repeats", "mean", "std"])
        .map_err(csv_err)?;
    for r in rows {
        wtr.write_record([
            r.strategy.as_str().to_string(),
            r.iteration.to_string(),
            r.n_pairs.to_string(),
            r.repeats.to_string(),
            format!("{:.6}", r.mean),
            format!("{:.6}", r.std),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ResultsDocument<'a> {
    config: &'a ExperimentConfig,
    records: &'a [ResultRecord],
    summary: &'a [SummaryRow],
}

/// Write `results.csv`, `results.json` (config echoed), `summary.csv` and
/// `summary.txt` into `dir`, creating it if needed.
pub fn write_outputs(dir: &Path, config: &ExperimentConfig, records: &[ResultRecord]) -> Result<Vec<SummaryRow>> {
    std::fs::create_dir_all(dir)?;
    let summary = summarize(records)?;
    write_results_csv(records, std::fs::File::create(dir.join("results.csv"))?)?;
    write_summary_csv(&summary, std::fs::File::create(dir.join("summary.csv"))?)?;
    std::fs::write(dir.join("summary.txt"), format_table(&summary))?;
    let doc = ResultsDocument {
        config,
        records,
        summary: &summary,
    };
    std::fs::write(dir.join("results.json"), serde_json::to_string_pretty(&doc)?)?;
    Ok(summary)
}
