//! Manifest TSV: `id<TAB>attr_name<TAB>obj_name<TAB>split` under the header
//! line `#owczsl-manifest v1`.

use std::fs;
use std::path::Path;

use super::{io_err, CompositionSpace, DataError, Sample, SplitKind};

pub const MANIFEST_MAGIC: &str = "#owczsl-manifest v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManifestRow {
    pub id: u32,
    pub y_attr: usize,
    pub y_obj: usize,
    pub split: SplitKind,
}

pub fn write_manifest(path: &Path, space: &CompositionSpace, samples: &[Sample]) -> Result<(), DataError> {
    let mut text = String::with_capacity(32 + samples.len() * 32);
    text.push_str(MANIFEST_MAGIC);
    text.push('\n');
    for s in samples {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            s.id, space.attrs[s.y_attr], space.objs[s.y_obj], s.split
        ));
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_manifest(path: &Path, space: &CompositionSpace) -> Result<Vec<ManifestRow>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let pathstr = path.display().to_string();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first == MANIFEST_MAGIC => {}
        Some((_, first)) => {
            return Err(DataError::Parse { path: pathstr, line: 1, detail: format!("bad header {first:?}") })
        }
        None => return Err(DataError::Parse { path: pathstr, line: 1, detail: "empty file".into() }),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let perr = |detail: String| DataError::Parse { path: pathstr.clone(), line: lineno, detail };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(perr(format!("expected 4 tab-separated fields, got {}", fields.len())));
        }
        let id: u32 = fields[0].parse().map_err(|e| perr(format!("bad id: {e}")))?;
        let y_attr = space
            .attr_of_name(fields[1])
            .ok_or_else(|| perr(format!("unknown attribute {:?}", fields[1])))?;
        let y_obj = space
            .obj_of_name(fields[2])
            .ok_or_else(|| perr(format!("unknown object {:?}", fields[2])))?;
        let split =
            SplitKind::parse(fields[3]).ok_or_else(|| perr(format!("bad split token {:?}", fields[3])))?;
        rows.push(ManifestRow { id, y_attr, y_obj, split });
    }
    Ok(rows)
}
