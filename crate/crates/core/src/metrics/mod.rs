//! Evaluation metrics, epoch traces and Table-2-shaped reports, plus the
//! convergence instrumentation in [`regret`].

pub mod regret;

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::model::{aggregate, log_loss};
use crate::{Error, Result};

/// Rank-based (Mann-Whitney) area under the ROC curve; tied scores count one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Evaluation("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Evaluation("NaN score".into()));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Evaluation(
            "AUC needs at least one positive and one negative label".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of 1-based ranks of the positives, ties sharing their average rank.
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mean_rank = (start + 1 + end) as f64 / 2.0;
        let tied_positives = order[start..end].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum += mean_rank * tied_positives as f64;
        start = end;
    }
    let p = positives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

/// Mean log loss of probabilities against labels, without any penalty term.
pub fn mean_log_loss(probabilities: &[f64], labels: &[u8]) -> f64 {
    if probabilities.is_empty() {
        return 0.0;
    }
    let total: f64 = probabilities
        .iter()
        .zip(labels)
        .map(|(&p, &y)| log_loss(p, y))
        .sum();
    total / probabilities.len() as f64
}

/// Turns per-party local predictions (`local[j][i]`) into probabilities.
pub fn composite_probabilities(local: &[Vec<f64>]) -> Vec<f64> {
    let n = local.first().map_or(0, Vec::len);
    let mut row = vec![0.0; local.len()];
    (0..n)
        .map(|i| {
            for (slot, party) in row.iter_mut().zip(local) {
                *slot = party[i];
            }
            aggregate(&row)
        })
        .collect()
}

/// Test-set quality of a scored dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub log_loss: f64,
    pub auc: f64,
}

pub fn evaluate(probabilities: &[f64], labels: &[u8]) -> Result<Evaluation> {
    Ok(Evaluation {
        log_loss: mean_log_loss(probabilities, labels),
        auc: auc(probabilities, labels)?,
    })
}

/// One row of a training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub scheme: String,
    pub epoch: usize,
    pub train_objective: f64,
    pub test_logloss: f64,
    pub test_auc: f64,
    pub elapsed_s: f64,
}

pub const CSV_HEADER: &str = "scheme,epoch,train_objective,test_logloss,test_auc,elapsed_s";

/// Writes the rows as CSV; an empty slice yields the header alone.
pub fn write_csv<W: Write>(rows: &[EpochMetrics], out: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    writer
        .write_record(CSV_HEADER.split(','))
        .map_err(csv_error)?;
    for row in rows {
        writer.serialize(row).map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<EpochMetrics>> {
    let mut reader = csv::Reader::from_reader(input);
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected header `{}`", header.join(",")),
        });
    }
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<EpochMetrics>, _>>()
        .map_err(csv_error)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// The last row of each scheme, in first-appearance order.
pub fn final_rows(rows: &[EpochMetrics]) -> Vec<&EpochMetrics> {
    let mut out: Vec<&EpochMetrics> = Vec::new();
    for row in rows {
        match out.iter_mut().find(|r| r.scheme == row.scheme) {
            Some(slot) => {
                if row.epoch >= slot.epoch {
                    *slot = row;
                }
            }
            None => out.push(row),
        }
    }
    out
}

/// An aligned plain-text table with one line per scheme.
pub fn summary_table(rows: &[EpochMetrics]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:>6} {:>11} {:>10} {:>9} {:>10}",
        "scheme", "epoch", "train_loss", "test_loss", "test_auc", "time_s"
    );
    for row in final_rows(rows) {
        let _ = writeln!(
            out,
            "{:<12} {:>6} {:>11.4} {:>10.4} {:>9.4} {:>10.2}",
            row.scheme, row.epoch, row.train_objective, row.test_logloss, row.test_auc, row.elapsed_s
        );
    }
    out
}

/// CSV plus summary for a set of traces.
pub fn emit_report<W: Write, S: Write>(rows: &[EpochMetrics], csv_out: W, mut summary: S) -> Result<()> {
    write_csv(rows, csv_out)?;
    summary.write_all(summary_table(rows).as_bytes())?;
    Ok(())
}
