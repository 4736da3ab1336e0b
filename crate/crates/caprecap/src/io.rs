//! CSV input and output.
//!
//! Input header: `y1..yK`, `x1..xd`, and optionally `q1_hat`, `q2_hat`,
//! `q12_hat` for externally estimated nuisances. Columns are matched by name.

use std::io::{Read, Write};

use caprecap_core::model::QProbs;
use caprecap_core::nuisance::coherent_triple;
use caprecap_core::{validate_dataset, CaptureDataset, Error as CoreError};

use crate::format::fmt_f64;

#[derive(Debug, thiserror::Error)]
pub enum InputError {
    #[error("cannot read input: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("header: {0}")]
    Header(String),
    #[error("line {line}, column `{column}`: cannot parse `{value}` as a number")]
    Value {
        line: usize,
        column: String,
        value: String,
    },
    #[error("line {line}: {source}")]
    Row { line: usize, source: CoreError },
    #[error("line {line}: nuisance columns: {source}")]
    Nuisance { line: usize, source: CoreError },
    #[error("{0}")]
    Dataset(CoreError),
    #[error("--external-nuisance needs columns q1_hat, q2_hat and q12_hat")]
    MissingNuisanceColumns,
}

/// Data row `row` (0-based) sits on this 1-based file line.
fn line_of(row: usize) -> usize {
    row + 2
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    y: Vec<usize>,
    x: Vec<usize>,
    q_hat: Option<[usize; 3]>,
}

fn numbered(name: &str, prefix: char) -> Option<usize> {
    let rest = name.strip_prefix(prefix)?;
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) || rest.starts_with('0') {
        return None;
    }
    rest.parse().ok()
}

fn parse_header(header: &csv::StringRecord) -> Result<Layout, InputError> {
    let mut y: Vec<(usize, usize)> = Vec::new();
    let mut x: Vec<(usize, usize)> = Vec::new();
    let mut q: [Option<usize>; 3] = [None; 3];
    for (pos, raw) in header.iter().enumerate() {
        let name = raw.trim().to_ascii_lowercase();
        let slot = match name.as_str() {
            "q1_hat" => Some(0),
            "q2_hat" => Some(1),
            "q12_hat" => Some(2),
            _ => None,
        };
        if let Some(s) = slot {
            if q[s].replace(pos).is_some() {
                return Err(InputError::Header(format!("duplicate column `{name}`")));
            }
        } else if let Some(k) = numbered(&name, 'y') {
            y.push((k, pos));
        } else if let Some(j) = numbered(&name, 'x') {
            x.push((j, pos));
        } else {
            return Err(InputError::Header(format!(
                "unexpected column `{raw}` at position {}; expected y1..yK, x1..xd, q1_hat, q2_hat, q12_hat",
                pos + 1
            )));
        }
    }
    let ordered = |mut cols: Vec<(usize, usize)>, prefix: char| -> Result<Vec<usize>, InputError> {
        cols.sort_unstable();
        for (i, &(k, _)) in cols.iter().enumerate() {
            if k != i + 1 {
                return Err(InputError::Header(format!(
                    "{prefix} columns must be numbered {prefix}1..{prefix}{} without gaps or repeats",
                    cols.len()
                )));
            }
        }
        Ok(cols.into_iter().map(|(_, pos)| pos).collect())
    };
    let y = ordered(y, 'y')?;
    let x = ordered(x, 'x')?;
    if y.len() < 2 {
        return Err(InputError::Header(format!(
            "at least two capture columns (y1, y2) are required, found {}",
            y.len()
        )));
    }
    let q_hat = match q {
        [Some(a), Some(b), Some(c)] => Some([a, b, c]),
        [None, None, None] => None,
        _ => {
            return Err(InputError::Header(
                "nuisance columns q1_hat, q2_hat, q12_hat must be given together".into(),
            ))
        }
    };
    Ok(Layout { y, x, q_hat })
}

/// Parsed input: the validated dataset and, if present, the raw external
/// nuisance columns.
#[derive(Debug, Clone, PartialEq)]
pub struct InputData {
    pub dataset: CaptureDataset,
    pub external: Option<Vec<[f64; 3]>>,
}

impl InputData {
    /// External nuisances truncated to `[epsilon, 1 - epsilon]` and made
    /// coherent.
    pub fn external_q(&self, epsilon: f64, k2_identity: bool) -> Result<Vec<QProbs>, InputError> {
        let raw = self.external.as_ref().ok_or(InputError::MissingNuisanceColumns)?;
        let k2 = k2_identity && self.dataset.k_lists() == 2;
        raw.iter()
            .enumerate()
            .map(|(row, &[q1, q2, q12])| {
                if [q1, q2, q12].iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(InputError::Nuisance {
                        line: line_of(row),
                        source: CoreError::ProbabilityOutOfRange {
                            name: "q_hat",
                            value: [q1, q2, q12].into_iter().find(|v| !(0.0..=1.0).contains(v)).unwrap_or(f64::NAN),
                        },
                    });
                }
                coherent_triple(q1, q2, q12, epsilon, k2).map_err(|source| InputError::Nuisance {
                    line: line_of(row),
                    source,
                })
            })
            .collect()
    }
}

fn row_error(e: CoreError) -> InputError {
    match e {
        CoreError::InconsistentWidth { row, .. }
        | CoreError::AllZeroCaptureRow { row }
        | CoreError::NonBinaryIndicator { row, .. }
        | CoreError::NonFiniteCovariate { row, .. } => InputError::Row {
            line: line_of(row),
            source: e,
        },
        other => InputError::Dataset(other),
    }
}

pub fn read_capture_csv<R: Read>(reader: R) -> Result<InputData, InputError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let layout = parse_header(&header)?;

    let mut rows: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut external = layout.q_hat.map(|_| Vec::new());
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let cell = |pos: usize| -> Result<f64, InputError> {
            let raw = record.get(pos).unwrap_or("");
            raw.parse::<f64>().map_err(|_| InputError::Value {
                line: line_of(row),
                column: header.get(pos).unwrap_or("?").trim().to_string(),
                value: raw.to_string(),
            })
        };
        let y = layout.y.iter().map(|&p| cell(p)).collect::<Result<Vec<_>, _>>()?;
        let x = layout.x.iter().map(|&p| cell(p)).collect::<Result<Vec<_>, _>>()?;
        if let (Some(cols), Some(out)) = (layout.q_hat, external.as_mut()) {
            out.push([cell(cols[0])?, cell(cols[1])?, cell(cols[2])?]);
        }
        rows.push((y, x));
    }
    let dataset = validate_dataset(&rows).map_err(row_error)?;
    Ok(InputData { dataset, external })
}

pub fn read_capture_file(path: &std::path::Path) -> Result<InputData, InputError> {
    read_capture_csv(std::fs::File::open(path)?)
}

/// Write a dataset in the input schema. Capture indicators are written as
/// `0`/`1`, covariates with 17 significant digits.
pub fn write_capture_csv<W: Write>(dataset: &CaptureDataset, writer: W) -> Result<(), InputError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (1..=dataset.k_lists()).map(|k| format!("y{k}")).collect();
    header.extend((1..=dataset.dim()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for unit in dataset.units() {
        let mut rec: Vec<String> = unit.y().iter().map(|b| b.to_string()).collect();
        rec.extend(unit.x().iter().map(|&v| fmt_f64(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
