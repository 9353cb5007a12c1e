use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

/// Append-only JSON-lines file, flushed after every record.
pub struct JsonlWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonlWriter {
    /// Opens for appending; `truncate` starts the file over.
    pub fn open(path: &Path, truncate: bool) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(!truncate)
            .write(true)
            .truncate(truncate)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(JsonlWriter { path: path.to_path_buf(), out: BufWriter::new(file) })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| Error::Input(e.to_string()))?;
        writeln!(self.out, "{line}").and_then(|_| self.out.flush()).map_err(|e| Error::io(&self.path, e))
    }
}

/// Parse every line of a JSON-lines file.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0u64;
    let mut out = Vec::new();
    for line in text.lines() {
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(line).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                pos,
                msg: e.to_string(),
            })?);
        }
        pos += line.len() as u64 + 1;
    }
    Ok(out)
}

/// CSV with a fixed header; rows must match its width.
pub struct CsvWriter {
    path: PathBuf,
    width: usize,
    out: BufWriter<File>,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = CsvWriter { path: path.to_path_buf(), width: header.len(), out: BufWriter::new(file) };
        w.line(&header.join(","))?;
        Ok(w)
    }

    /// Reopen an existing file for appending without rewriting the header.
    pub fn append(path: &Path, header: &[&str]) -> Result<Self> {
        if !path.exists() {
            return Self::create(path, header);
        }
        let file = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
        Ok(CsvWriter { path: path.to_path_buf(), width: header.len(), out: BufWriter::new(file) })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        if fields.len() != self.width {
            return Err(Error::Input(format!("csv row has {} fields, header has {}", fields.len(), self.width)));
        }
        self.line(&fields.join(","))
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}").and_then(|_| self.out.flush()).map_err(|e| Error::io(&self.path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        let mut w = JsonlWriter::open(&p, true).unwrap();
        w.write(&(1, "a")).unwrap();
        w.write(&(2, "b")).unwrap();
        drop(w);
        let mut w = JsonlWriter::open(&p, false).unwrap();
        w.write(&(3, "c")).unwrap();
        let back: Vec<(u32, String)> = read_jsonl(&p).unwrap();
        assert_eq!(back, vec![(1, "a".into()), (2, "b".into()), (3, "c".into())]);
    }

    #[test]
    fn csv_checks_width() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        let mut w = CsvWriter::create(&p, &["a", "b"]).unwrap();
        w.row(&["1".into(), "2".into()]).unwrap();
        assert!(w.row(&["1".into()]).is_err());
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "a,b\n1,2\n");
    }
}
