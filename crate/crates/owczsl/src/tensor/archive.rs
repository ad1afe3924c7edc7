//! Named-tensor archive used for checkpoints.
//!
//! Layout: a text header, a blank line, then raw little-endian payloads in
//! header order. The first line is the magic `#owczsl-ckpt v1`; further `#`
//! lines carry free-form metadata (configuration, index conventions). Each
//! remaining header line is `name<SP>dtype<SP>dim0,dim1,…<SP>byte-offset`
//! with the offset relative to the start of the payload section.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &str = "#owczsl-ckpt v1";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic line {found:?} (expected {MAGIC:?})")]
    Version { found: String },
    #[error("header line {line}: {detail}")]
    Header { line: usize, detail: String },
    #[error("payload truncated: entry {name} needs {need} bytes at offset {offset}")]
    Truncated { name: String, need: usize, offset: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Archive {
    pub comments: Vec<String>,
    pub entries: Vec<Entry>,
}

impl Archive {
    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn save(&self, path: &Path) -> Result<(), ArchiveError> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{MAGIC}")?;
        for c in &self.comments {
            writeln!(w, "# {c}")?;
        }
        let mut offset = 0usize;
        for e in &self.entries {
            let dims: Vec<String> = e.shape.iter().map(|d| d.to_string()).collect();
            writeln!(w, "{} f64 {} {}", e.name, dims.join(","), offset)?;
            offset += e.data.len() * 8;
        }
        writeln!(w)?;
        for e in &self.entries {
            for v in &e.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ArchiveError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end_matches('\n') != MAGIC {
            return Err(ArchiveError::Version { found: line.trim_end().to_string() });
        }
        let mut comments = Vec::new();
        let mut headers: Vec<(String, String, Vec<usize>, usize)> = Vec::new();
        let mut lineno = 1;
        loop {
            line.clear();
            lineno += 1;
            let n = r.read_line(&mut line)?;
            if n == 0 {
                return Err(ArchiveError::Header { line: lineno, detail: "missing blank separator".into() });
            }
            let text = line.trim_end_matches('\n');
            if text.is_empty() {
                break;
            }
            if let Some(comment) = text.strip_prefix('#') {
                comments.push(comment.trim_start().to_string());
                continue;
            }
            let fields: Vec<&str> = text.split(' ').collect();
            if fields.len() != 4 {
                return Err(ArchiveError::Header { line: lineno, detail: format!("expected 4 fields, got {}", fields.len()) });
            }
            let dtype = fields[1].to_string();
            if dtype != "f64" && dtype != "f32" {
                return Err(ArchiveError::Header { line: lineno, detail: format!("unknown dtype {dtype}") });
            }
            let shape: Result<Vec<usize>, _> = fields[2].split(',').map(str::parse).collect();
            let shape = shape.map_err(|e| ArchiveError::Header { line: lineno, detail: format!("bad dims: {e}") })?;
            let offset: usize = fields[3]
                .parse()
                .map_err(|e| ArchiveError::Header { line: lineno, detail: format!("bad offset: {e}") })?;
            headers.push((fields[0].to_string(), dtype, shape, offset));
        }
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        let mut entries = Vec::with_capacity(headers.len());
        for (name, dtype, shape, offset) in headers {
            let count: usize = shape.iter().product();
            let width = if dtype == "f64" { 8 } else { 4 };
            let need = count * width;
            if offset + need > payload.len() {
                return Err(ArchiveError::Truncated { name, need, offset });
            }
            let bytes = &payload[offset..offset + need];
            let data: Vec<f64> = if dtype == "f64" {
                bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
            } else {
                bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect()
            };
            entries.push(Entry { name, shape, data });
        }
        Ok(Archive { comments, entries })
    }
}
