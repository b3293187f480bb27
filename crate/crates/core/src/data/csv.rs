//! Comma-separated series files (one row per time step, one column per
//! feature) and label files (one `0`/`1` per line).

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::transforms::SeriesMatrix;

use super::Dataset;

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a series CSV. A first line made entirely of non-numeric cells is
/// taken as a header of feature names.
pub fn load_series_csv(path: impl AsRef<Path>) -> Result<SeriesMatrix> {
    let path = path.as_ref();
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(::csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            ::csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_error(path, 0, format!("{other:?}")),
        })?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut names = None;
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(idx + 1);
            match e.kind() {
                ::csv::ErrorKind::UnequalLengths {
                    expected_len, len, ..
                } => parse_error(
                    path,
                    line,
                    format!("ragged row: {len} cells, expected {expected_len}"),
                ),
                _ => parse_error(path, line, e.to_string()),
            }
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(idx + 1);
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        let parsed: Vec<Option<f64>> = record
            .iter()
            .map(|c| c.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        if idx == 0 && parsed.iter().all(Option::is_none) {
            names = Some(record.iter().map(str::to_string).collect::<Vec<_>>());
            continue;
        }
        let mut row = Vec::with_capacity(parsed.len());
        for (col, (value, cell)) in parsed.into_iter().zip(record.iter()).enumerate() {
            match value {
                Some(v) => row.push(v),
                None => {
                    return Err(parse_error(
                        path,
                        line,
                        format!("column {}: `{cell}` is not a finite number", col + 1),
                    ))
                }
            }
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_error(
                    path,
                    line,
                    format!("ragged row: {} cells, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_error(path, 1, "file contains no data rows"));
    }
    let series = SeriesMatrix::from_time_rows(&rows)?;
    match names {
        Some(n) if n.len() == series.features() => series.with_feature_names(n),
        Some(n) => Err(parse_error(
            path,
            1,
            format!("header has {} names for {} columns", n.len(), series.features()),
        )),
        None => Ok(series),
    }
}

/// Reads one `0`/`1` label per line; blank lines are skipped.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<bool>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let cell = line.trim();
        if cell.is_empty() {
            continue;
        }
        let value = match cell {
            "0" => false,
            "1" => true,
            other => match other.parse::<f64>() {
                Ok(v) if v == 0.0 => false,
                Ok(v) if v == 1.0 => true,
                _ => return Err(parse_error(path, i + 1, format!("label `{other}` is not 0 or 1"))),
            },
        };
        labels.push(value);
    }
    Ok(labels)
}

/// Loads raw train/test CSVs and test labels, normalising both splits with
/// the training range.
pub fn load_csv_dataset(
    train_path: impl AsRef<Path>,
    test_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<Dataset> {
    let train = load_series_csv(&train_path)?;
    let test = load_series_csv(&test_path)?;
    let labels = load_labels(&labels_path)?;
    if train.features() != test.features() {
        return Err(parse_error(
            test_path.as_ref(),
            1,
            format!(
                "test has {} columns but train has {}",
                test.features(),
                train.features()
            ),
        ));
    }
    if labels.len() != test.len() {
        return Err(parse_error(
            labels_path.as_ref(),
            labels.len(),
            format!("{} labels for {} test rows", labels.len(), test.len()),
        ));
    }
    Dataset::from_raw(&train, &test, labels)
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(file))
}

/// Writes a series as CSV rows of time steps. Values use Rust's shortest
/// round-trip formatting, so reading the file back is lossless.
pub fn write_series_csv(path: impl AsRef<Path>, series: &SeriesMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    if let Some(names) = series.feature_names() {
        writeln!(out, "{}", names.join(",")).map_err(io)?;
    }
    let (m, t) = (series.features(), series.len());
    let v = series.values();
    let mut line = String::new();
    for step in 0..t {
        line.clear();
        for f in 0..m {
            if f > 0 {
                line.push(',');
            }
            line.push_str(&v.at(f, step).to_string());
        }
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[bool]) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    for &l in labels {
        writeln!(out, "{}", u8::from(l)).map_err(io)?;
    }
    out.flush().map_err(io)
}
