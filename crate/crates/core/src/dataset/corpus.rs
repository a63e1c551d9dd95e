//! Newline-delimited JSON files with a one-line schema header.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::VQARecord;

pub const CORPUS_KIND: &str = "dentvqa.corpus";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{0}: {1}")]
    Io(String, #[source] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
}

pub fn write_jsonl<T: Serialize>(path: &Path, kind: &str, items: &[T]) -> Result<(), CorpusError> {
    let io_err = |e| CorpusError::Io(path.display().to_string(), e);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err)?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    let header = Header { schema: kind.to_string(), version: SCHEMA_VERSION };
    let bad = |e: serde_json::Error| CorpusError::Parse { line: 0, message: e.to_string() };
    writeln!(w, "{}", serde_json::to_string(&header).map_err(bad)?).map_err(io_err)?;
    for item in items {
        writeln!(w, "{}", serde_json::to_string(item).map_err(bad)?).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<Vec<T>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::Io(path.display().to_string(), e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or(CorpusError::Parse { line: 1, message: "empty file; expected a schema header".into() })?
        .map_err(|e| CorpusError::Io(path.display().to_string(), e))?;
    let header: Header = serde_json::from_str(&first)
        .map_err(|e| CorpusError::Parse { line: 1, message: format!("bad header: {e}") })?;
    if header.schema != kind {
        return Err(CorpusError::Parse {
            line: 1,
            message: format!("expected schema {kind:?}, found {:?}", header.schema),
        });
    }
    if header.version != SCHEMA_VERSION {
        return Err(CorpusError::Parse { line: 1, message: format!("unsupported schema version {}", header.version) });
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| CorpusError::Io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CorpusError::Parse { line: i + 2, message: e.to_string() })?);
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, records: &[VQARecord]) -> Result<(), CorpusError> {
    write_jsonl(path, CORPUS_KIND, records)
}

pub fn read_corpus(path: &Path) -> Result<Vec<VQARecord>, CorpusError> {
    read_jsonl(path, CORPUS_KIND)
}
