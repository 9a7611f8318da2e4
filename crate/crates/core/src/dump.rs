//! Matrix dump files shared by embedding tables and LDP vector stores.
//!
//! Text form:
//!
//! ```text
//! N D [tag]
//! key<TAB>f1 f2 ... fD
//! ```
//!
//! Binary form: the ASCII line `F32LE N D [tag]`, then `N * D` little-endian
//! `f32` values in row order, then (only for rows whose keys are not simply
//! `0..N`) one key per line.

use std::fmt::Display;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

const BINARY_MAGIC: &str = "F32LE";

#[derive(Debug, thiserror::Error)]
pub enum DumpError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DumpError + '_ {
    move |source| DumpError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DumpFormat {
    Text,
    Binary,
}

impl FromStr for DumpFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(DumpFormat::Text),
            "binary" => Ok(DumpFormat::Binary),
            other => Err(format!("unknown dump format `{other}` (expected text|binary)")),
        }
    }
}

pub trait DumpScalar: Copy + Display + FromStr + PartialEq {
    fn to_f32(self) -> f32;
    fn from_f32(v: f32) -> Self;
}

impl DumpScalar for f32 {
    fn to_f32(self) -> f32 {
        self
    }
    fn from_f32(v: f32) -> Self {
        v
    }
}

impl DumpScalar for f64 {
    fn to_f32(self) -> f32 {
        self as f32
    }
    fn from_f32(v: f32) -> Self {
        v as f64
    }
}

/// Row-major matrix with one string key per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub dim: usize,
    pub tag: Option<String>,
    pub keys: Vec<String>,
    pub data: Vec<T>,
}

impl<T: DumpScalar> Matrix<T> {
    pub fn rows(&self) -> usize {
        self.keys.len()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Matrix keyed by row index.
    pub fn indexed(dim: usize, tag: Option<String>, data: Vec<T>) -> Self {
        let rows = data.len().checked_div(dim).unwrap_or(0);
        Matrix {
            dim,
            tag,
            keys: (0..rows).map(|i| i.to_string()).collect(),
            data,
        }
    }

    fn keys_are_indices(&self) -> bool {
        self.keys.iter().enumerate().all(|(i, k)| *k == i.to_string())
    }

    fn header(&self) -> String {
        match &self.tag {
            Some(tag) => format!("{} {} {}", self.rows(), self.dim, tag),
            None => format!("{} {}", self.rows(), self.dim),
        }
    }

    pub fn write(&self, path: &Path, format: DumpFormat) -> Result<(), DumpError> {
        let err = io_err(path);
        let mut w = BufWriter::new(File::create(path).map_err(&err)?);
        match format {
            DumpFormat::Text => {
                writeln!(w, "{}", self.header()).map_err(&err)?;
                for (i, key) in self.keys.iter().enumerate() {
                    write!(w, "{key}\t").map_err(&err)?;
                    for (j, v) in self.row(i).iter().enumerate() {
                        if j > 0 {
                            w.write_all(b" ").map_err(&err)?;
                        }
                        write!(w, "{v}").map_err(&err)?;
                    }
                    w.write_all(b"\n").map_err(&err)?;
                }
            }
            DumpFormat::Binary => {
                writeln!(w, "{BINARY_MAGIC} {}", self.header()).map_err(&err)?;
                for v in &self.data {
                    w.write_all(&v.to_f32().to_le_bytes()).map_err(&err)?;
                }
                if !self.keys_are_indices() {
                    for key in &self.keys {
                        writeln!(w, "{key}").map_err(&err)?;
                    }
                }
            }
        }
        w.flush().map_err(&err)
    }

    /// Reads either form; the binary form is recognised by its magic token.
    pub fn read(path: &Path) -> Result<Self, DumpError> {
        let err = io_err(path);
        let mut reader = BufReader::new(File::open(path).map_err(&err)?);
        let mut header = String::new();
        reader.read_line(&mut header).map_err(&err)?;
        let parse = |line: usize, reason: String| DumpError::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut tokens: Vec<&str> = header.split_whitespace().collect();
        let binary = tokens.first() == Some(&BINARY_MAGIC);
        if binary {
            tokens.remove(0);
        }
        if !(2..=3).contains(&tokens.len()) {
            return Err(parse(1, format!("expected header `N D [tag]`, got `{}`", header.trim_end())));
        }
        let rows: usize = tokens[0]
            .parse()
            .map_err(|_| parse(1, format!("bad row count `{}`", tokens[0])))?;
        let dim: usize = tokens[1]
            .parse()
            .map_err(|_| parse(1, format!("bad dimension `{}`", tokens[1])))?;
        let tag = tokens.get(2).map(|s| s.to_string());

        if binary {
            let mut buf = vec![0u8; rows * dim * 4];
            reader
                .read_exact(&mut buf)
                .map_err(|_| parse(2, format!("expected {} bytes of f32 data", rows * dim * 4)))?;
            let data = buf
                .chunks_exact(4)
                .map(|c| T::from_f32(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            let mut keys = Vec::with_capacity(rows);
            for line in reader.lines() {
                keys.push(line.map_err(&err)?);
            }
            if keys.is_empty() {
                keys = (0..rows).map(|i| i.to_string()).collect();
            } else if keys.len() != rows {
                return Err(parse(2, format!("expected {rows} keys, found {}", keys.len())));
            }
            return Ok(Matrix { dim, tag, keys, data });
        }

        let mut keys = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(rows * dim);
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 2;
            let line = line.map_err(&err)?;
            if keys.len() == rows {
                return Err(parse(line_no, format!("more than {rows} rows")));
            }
            let (key, values) = line
                .split_once('\t')
                .ok_or_else(|| parse(line_no, "expected `key<TAB>values`".into()))?;
            let before = data.len();
            for tok in values.split_whitespace() {
                let v = tok
                    .parse::<T>()
                    .map_err(|_| parse(line_no, format!("bad float `{tok}`")))?;
                data.push(v);
            }
            if data.len() - before != dim {
                return Err(parse(
                    line_no,
                    format!("expected {dim} values, found {}", data.len() - before),
                ));
            }
            keys.push(key.to_owned());
        }
        if keys.len() != rows {
            return Err(parse(keys.len() + 2, format!("expected {rows} rows, found {}", keys.len())));
        }
        Ok(Matrix { dim, tag, keys, data })
    }
}
