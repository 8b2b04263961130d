//! The shared on-disk layout for vectors and model weights: an optional JSON
//! header line followed by one `{"id": ..., "vec": [...]}` object per line.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line_no}: {msg}")]
    Malformed {
        path: PathBuf,
        line_no: usize,
        msg: String,
    },
    #[error("{path}: bad header: {msg}")]
    Header { path: PathBuf, msg: String },
}

impl ArtifactError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorRow {
    pub id: String,
    pub vec: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorFile {
    pub header: Option<Value>,
    pub rows: Vec<VectorRow>,
}

impl VectorFile {
    pub fn header_field<T: serde::de::DeserializeOwned>(
        &self,
        path: &Path,
        key: &str,
    ) -> Result<T, ArtifactError> {
        let header = self.header.as_ref().ok_or_else(|| ArtifactError::Header {
            path: path.to_path_buf(),
            msg: "missing header line".into(),
        })?;
        let raw = header.get(key).ok_or_else(|| ArtifactError::Header {
            path: path.to_path_buf(),
            msg: format!("missing field `{key}`"),
        })?;
        serde_json::from_value(raw.clone()).map_err(|e| ArtifactError::Header {
            path: path.to_path_buf(),
            msg: format!("field `{key}`: {e}"),
        })
    }
}

fn is_row(value: &Value) -> bool {
    value
        .as_object()
        .is_some_and(|o| o.contains_key("id") && o.contains_key("vec"))
}

pub fn read_vector_file(path: &Path) -> Result<VectorFile, ArtifactError> {
    let file = File::open(path).map_err(|e| ArtifactError::io(path, e))?;
    let mut header = None;
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| ArtifactError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| ArtifactError::Malformed {
            path: path.to_path_buf(),
            line_no,
            msg: e.to_string(),
        })?;
        if idx == 0 && !is_row(&value) {
            header = Some(value);
            continue;
        }
        let row: VectorRow =
            serde_json::from_value(value).map_err(|e| ArtifactError::Malformed {
                path: path.to_path_buf(),
                line_no,
                msg: e.to_string(),
            })?;
        rows.push(row);
    }
    Ok(VectorFile { header, rows })
}

pub fn write_vector_file<'a, I>(
    path: &Path,
    header: Option<&Value>,
    rows: I,
) -> Result<(), ArtifactError>
where
    I: IntoIterator<Item = (&'a str, &'a [f64])>,
{
    let file = File::create(path).map_err(|e| ArtifactError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e: std::io::Error| ArtifactError::io(path, e);
    if let Some(h) = header {
        serde_json::to_writer(&mut w, h).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    for (id, vec) in rows {
        #[derive(Serialize)]
        struct RowRef<'r> {
            id: &'r str,
            vec: &'r [f64],
        }
        serde_json::to_writer(&mut w, &RowRef { id, vec }).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}
