//! CSV and JSON writers.
//!
//! Floats are written in their shortest round-trip decimal form, independent
//! of locale.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// Environment variable naming the output root.
pub const OUTPUT_ROOT_ENV: &str = "POPBAL_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "popbal-out";

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

/// `$POPBAL_OUTPUT_ROOT`, or `popbal-out` in the working directory.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

pub fn ensure_dir(dir: &Path) -> Result<(), OutputError> {
    fs::create_dir_all(dir).map_err(|source| OutputError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), OutputError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| OutputError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a header row followed by one record per row.
pub fn write_csv<R, I>(path: &Path, header: &[&str], rows: I) -> Result<(), OutputError>
where
    R: Serialize,
    I: IntoIterator<Item = R>,
{
    let err = |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(err)?;
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.serialize(row).map_err(err)?;
    }
    w.flush().map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_floats_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        let values = [0.1 + 0.2, 1e-300, 123456.789, -0.0, 2.0f64.sqrt()];
        write_csv(&path, &["i", "v"], values.iter().enumerate()).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("i,v"));
        for (line, v) in lines.zip(values) {
            let parsed: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
            assert_eq!(parsed.to_bits(), v.to_bits(), "{line}");
        }
    }

    #[test]
    fn json_is_newline_terminated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        write_json(&path, &[1.5, 2.0]).unwrap();
        assert!(fs::read_to_string(&path).unwrap().ends_with("]\n"));
    }
}
