//! Persistence of split-search outputs: a JSONL trace with one record
//! per outer iteration, and a CSV carrying the final per-example
//! probabilities and assignments, keyed by example id.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::engine::objective::LabelMarginals;
use crate::engine::predictor::GapStats;
use crate::engine::split::SplitState;
use crate::error::{Error, Result};

/// Everything measured during one outer iteration of the split search.
///
/// The penalties and marginals are computed over the full dataset with
/// the probabilities that sampled this iteration's split; `gap_loss`
/// scores the test side of that split against the trained predictor's
/// correctness flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub outer_iter: usize,
    pub gap_stats: GapStats,
    pub omega1: f64,
    pub omega2: f64,
    pub gap_loss: f64,
    pub total_loss: f64,
    pub split_ratio: f64,
    pub label_marginals: LabelMarginals,
}

/// Writes one JSON object per line, in iteration order.
pub fn write_traces_jsonl<W: Write>(mut writer: W, traces: &[IterationTrace]) -> Result<()> {
    for trace in traces {
        serde_json::to_writer(&mut writer, trace)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a JSONL trace back; parse failures carry the 1-based line.
pub fn read_traces_jsonl<R: Read>(reader: R) -> Result<Vec<IterationTrace>> {
    let mut traces = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let trace = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx as u64 + 1,
            msg: format!("invalid trace record: {e}"),
        })?;
        traces.push(trace);
    }
    Ok(traces)
}

pub fn save_traces_jsonl(path: &Path, traces: &[IterationTrace]) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    write_traces_jsonl(&mut writer, traces)?;
    writer.flush()?;
    Ok(())
}

pub fn load_traces_jsonl(path: &Path) -> Result<Vec<IterationTrace>> {
    read_traces_jsonl(File::open(path)?)
}

/// One row of a split CSV: an example id, its train-membership
/// probability, and the realized assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitRow {
    pub id: u64,
    pub prob: f64,
    pub z: bool,
}

/// Writes `id,prob,z` rows in the given order. Probabilities use 17
/// significant digits, so reading the file back reproduces them bit
/// for bit.
pub fn write_split_csv<W: Write>(mut writer: W, ids: &[u64], state: &SplitState) -> Result<()> {
    if ids.len() != state.probs.len() || ids.len() != state.assignment.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} ids vs {} probabilities / {} assignments",
            ids.len(),
            state.probs.len(),
            state.assignment.len()
        )));
    }
    writeln!(writer, "id,prob,z")?;
    for ((&id, &prob), &z) in ids.iter().zip(&state.probs).zip(&state.assignment) {
        writeln!(writer, "{id},{prob:.16e},{}", u8::from(z))?;
    }
    Ok(())
}

/// Reads a split CSV; any malformed cell reports its 1-based line
/// (the header is line 1).
pub fn read_split_csv<R: Read>(reader: R) -> Result<Vec<SplitRow>> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    {
        let headers = csv_reader.headers().map_err(|e| Error::Parse {
            line: 1,
            msg: format!("unreadable header: {e}"),
        })?;
        let expected = ["id", "prob", "z"];
        if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header id,prob,z, found {}", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
    }
    let mut rows = Vec::new();
    for (idx, record) in csv_reader.records().enumerate() {
        let line = idx as u64 + 2;
        let record = record.map_err(|e| Error::Parse {
            line: e
                .position()
                .map(|p| p.line())
                .unwrap_or(line),
            msg: format!("malformed row: {e}"),
        })?;
        if record.len() != 3 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 3 cells, found {}", record.len()),
            });
        }
        let id: u64 = record[0].parse().map_err(|e| Error::Parse {
            line,
            msg: format!("bad id {:?}: {e}", &record[0]),
        })?;
        let prob: f64 = record[1].parse().map_err(|e| Error::Parse {
            line,
            msg: format!("bad probability {:?}: {e}", &record[1]),
        })?;
        if !prob.is_finite() || !(0.0..=1.0).contains(&prob) {
            return Err(Error::Parse {
                line,
                msg: format!("probability {prob} outside [0,1]"),
            });
        }
        let z = match &record[2] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("assignment must be 0 or 1, found {other:?}"),
                })
            }
        };
        rows.push(SplitRow { id, prob, z });
    }
    Ok(rows)
}

pub fn save_split_csv(path: &Path, ids: &[u64], state: &SplitState) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    write_split_csv(&mut writer, ids, state)?;
    writer.flush()?;
    Ok(())
}

pub fn load_split_csv(path: &Path) -> Result<Vec<SplitRow>> {
    read_split_csv(File::open(path)?)
}

/// Matches split rows to a dataset by example id and returns the
/// state in dataset order. Every dataset id must appear exactly once
/// and no row may name an id the dataset lacks; the first offending id
/// is reported.
pub fn align_split(dataset: &Dataset, rows: &[SplitRow]) -> Result<SplitState> {
    let mut by_id: HashMap<u64, (f64, bool)> = HashMap::with_capacity(rows.len());
    for row in rows {
        if by_id.insert(row.id, (row.prob, row.z)).is_some() {
            return Err(Error::ContractViolation(format!(
                "split lists example id {} more than once",
                row.id
            )));
        }
    }
    let known: HashSet<u64> = dataset.ids().into_iter().collect();
    for row in rows {
        if !known.contains(&row.id) {
            return Err(Error::ContractViolation(format!(
                "split names example id {} which the dataset does not contain",
                row.id
            )));
        }
    }
    let mut probs = Vec::with_capacity(dataset.len());
    let mut assignment = Vec::with_capacity(dataset.len());
    for ex in dataset.examples() {
        match by_id.get(&ex.id) {
            Some(&(prob, z)) => {
                probs.push(prob);
                assignment.push(z);
            }
            None => {
                return Err(Error::ContractViolation(format!(
                    "split is missing example id {}",
                    ex.id
                )))
            }
        }
    }
    Ok(SplitState {
        probs,
        assignment,
        rng_seed: None,
    })
}
