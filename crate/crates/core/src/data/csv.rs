use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Series, SplitFractions};
use crate::error::{Error, Result};
use crate::io::fmt_f64;

/// What to do with empty or `NaN` cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NanPolicy {
    #[default]
    Reject,
    ForwardFill,
    DropRow,
}

impl std::str::FromStr for NanPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "reject" => Ok(NanPolicy::Reject),
            "forward_fill" | "ffill" => Ok(NanPolicy::ForwardFill),
            "drop_row" => Ok(NanPolicy::DropRow),
            _ => Err(Error::InvalidParam(format!(
                "unknown NaN policy {s:?}; expected reject, forward_fill or drop_row"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvOptions {
    pub nan_policy: NanPolicy,
    /// Ignore the first column (a timestamp or index).
    pub skip_first_column: bool,
    pub dt: f64,
    pub splits: SplitFractions,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            nan_policy: NanPolicy::Reject,
            skip_first_column: false,
            dt: 1.0,
            splits: SplitFractions::default(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Series> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file), opts, &path.display().to_string())
}

/// Parses a header row of channel names followed by one numeric row per time
/// step. `source` names the input in error messages. Missing cells are
/// reported with their 1-based file line and column.
pub fn read_csv(r: impl Read, opts: &CsvOptions, source: &str) -> Result<Series> {
    let csv_err = |line: u64, msg: String| Error::Csv {
        path: source.to_string(),
        line,
        msg,
    };
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(::csv::Trim::All)
        .from_reader(r);
    let headers = reader.headers().map_err(|e| csv_err(line_of(&e), e.to_string()))?.clone();
    let offset = usize::from(opts.skip_first_column);
    if headers.len() <= offset || headers.iter().all(str::is_empty) {
        return Err(csv_err(1, "empty file or no channel columns".into()));
    }
    let names: Vec<String> = headers.iter().skip(offset).map(str::to_string).collect();
    let width = names.len();

    let mut rows: Vec<(u64, Vec<Option<f64>>)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(line_of(&e), e.to_string()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let mut row = Vec::with_capacity(width);
        for (c, cell) in record.iter().skip(offset).enumerate() {
            row.push(parse_cell(cell).map_err(|()| {
                csv_err(line, format!("non-numeric cell {cell:?} in column {}", names[c]))
            })?);
        }
        rows.push((line, row));
    }
    if rows.is_empty() {
        return Err(csv_err(1, "no data rows".into()));
    }

    let mut channels = vec![Vec::with_capacity(rows.len()); width];
    let mut last: Vec<Option<f64>> = vec![None; width];
    'rows: for (line, row) in &rows {
        if opts.nan_policy == NanPolicy::DropRow && row.iter().any(Option::is_none) {
            continue 'rows;
        }
        for (c, cell) in row.iter().enumerate() {
            let v = match (cell, opts.nan_policy) {
                (Some(v), _) => *v,
                (None, NanPolicy::ForwardFill) if last[c].is_some() => last[c].unwrap(),
                (None, _) => {
                    return Err(Error::MissingValue {
                        row: *line as usize,
                        column: c + 1 + offset,
                        name: names[c].clone(),
                    })
                }
            };
            last[c] = Some(v);
            channels[c].push(v);
        }
    }
    Series::with_fractions(names, channels, opts.dt, opts.splits)
}

fn line_of(e: &::csv::Error) -> u64 {
    e.position().map(|p| p.line()).unwrap_or(0)
}

/// `Ok(None)` for a missing value, `Err` for anything non-numeric.
fn parse_cell(cell: &str) -> std::result::Result<Option<f64>, ()> {
    if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(()),
    }
}

pub fn save_csv(series: &Series, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(series, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

/// Header of channel names, then one row per step at 17 significant digits.
pub fn write_csv(series: &Series, w: impl Write) -> std::io::Result<()> {
    let mut writer = ::csv::Writer::from_writer(w);
    writer.write_record(&series.names)?;
    for t in 0..series.len() {
        writer.write_record(series.channels.iter().map(|c| fmt_f64(c[t])))?;
    }
    writer.flush()
}
