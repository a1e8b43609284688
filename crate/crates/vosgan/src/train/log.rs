//! Run-directory plumbing: CSV step logs and JSON manifests.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::TrainError;

/// Append-only CSV with a fixed header. Reopening an existing file checks
/// the header and appends, which is what a resumed run needs.
pub struct CsvLog {
    path: PathBuf,
    out: BufWriter<File>,
    columns: usize,
}

impl CsvLog {
    pub fn create(path: &Path, header: &[&str]) -> Result<CsvLog, TrainError> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", header.join(","))?;
        out.flush()?;
        Ok(CsvLog { path: path.to_path_buf(), out, columns: header.len() })
    }

    pub fn append(path: &Path, header: &[&str]) -> Result<CsvLog, TrainError> {
        if !path.exists() {
            return Self::create(path, header);
        }
        let first = std::fs::read_to_string(path)?
            .lines()
            .next()
            .unwrap_or_default()
            .to_string();
        if first != header.join(",") {
            return Err(TrainError::Log(format!(
                "{} has header {first:?}, expected {:?}",
                path.display(),
                header.join(",")
            )));
        }
        let out = BufWriter::new(OpenOptions::new().append(true).open(path)?);
        Ok(CsvLog { path: path.to_path_buf(), out, columns: header.len() })
    }

    pub fn row(&mut self, values: &[String]) -> Result<(), TrainError> {
        assert_eq!(values.len(), self.columns, "row width mismatch in {}", self.path.display());
        writeln!(self.out, "{}", values.join(","))?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), TrainError> {
        self.out.flush()?;
        Ok(())
    }
}

/// Formats a float so CSV round trips are exact for f64.
pub fn csv_f64(v: f64) -> String {
    // 17 significant digits uniquely identify any f64.
    format!("{v:.17e}")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), TrainError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| TrainError::Log(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Parses one column of a step log back into f64s, skipping the header.
pub fn read_csv_column(path: &Path, column: &str) -> Result<Vec<f64>, TrainError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| TrainError::Log(format!("{} is empty", path.display())))?;
    let idx = header
        .split(',')
        .position(|h| h == column)
        .ok_or_else(|| TrainError::Log(format!("no column {column:?} in {}", path.display())))?;
    let mut values = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cell = line
            .split(',')
            .nth(idx)
            .ok_or_else(|| TrainError::Log(format!("line {} too short", lineno + 2)))?;
        values.push(
            cell.parse::<f64>()
                .map_err(|e| TrainError::Log(format!("line {}: {e}", lineno + 2)))?,
        );
    }
    Ok(values)
}
