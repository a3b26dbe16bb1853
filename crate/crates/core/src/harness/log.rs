use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::Result;

/// Line-delimited JSON log, kept in memory and mirrored to a file when one
/// is given.
pub struct JsonLog<T> {
    records: Vec<T>,
    file: Option<BufWriter<File>>,
}

impl<T: Serialize> JsonLog<T> {
    pub fn in_memory() -> Self {
        Self {
            records: Vec::new(),
            file: None,
        }
    }

    /// Appends to `path` when `append`, truncates it otherwise.
    pub fn to_file(path: &Path, append: bool) -> Result<Self> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)?;
        Ok(Self {
            records: Vec::new(),
            file: Some(BufWriter::new(file)),
        })
    }

    pub fn open(path: Option<&Path>, append: bool) -> Result<Self> {
        match path {
            Some(p) => Self::to_file(p, append),
            None => Ok(Self::in_memory()),
        }
    }

    pub fn push(&mut self, record: T) -> Result<()> {
        if let Some(f) = &mut self.file {
            serde_json::to_writer(&mut *f, &record)?;
            f.write_all(b"\n")?;
            f.flush()?;
        }
        self.records.push(record);
        Ok(())
    }

    /// Records pushed through this handle (not those already in the file).
    pub fn records(&self) -> &[T] {
        &self.records
    }

    pub fn into_records(self) -> Vec<T> {
        self.records
    }
}

/// Reads every line of a log file.
pub fn read_log<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
