use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::KgError;

/// Dense string interner: indices are contiguous from zero and each index
/// has exactly one surface string.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, surface: &str) -> Option<u32> {
        self.index.get(surface).copied()
    }

    pub fn get_or_insert(&mut self, surface: &str) -> u32 {
        if let Some(&id) = self.index.get(surface) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(surface.to_owned());
        self.index.insert(surface.to_owned(), id);
        id
    }

    pub fn surface(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &str)> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, s)| (i as u32, s.as_str()))
    }

    /// Writes `index<TAB>surface` lines.
    pub fn dump(&self, path: &Path) -> Result<(), KgError> {
        let mut w = BufWriter::new(File::create(path).map_err(|e| KgError::io(path, e))?);
        for (id, s) in self.iter() {
            writeln!(w, "{id}\t{s}").map_err(|e| KgError::io(path, e))?;
        }
        w.flush().map_err(|e| KgError::io(path, e))
    }

    /// Reads a dump produced by [`Vocab::dump`]. Indices must be contiguous
    /// and in order.
    pub fn load(path: &Path) -> Result<Self, KgError> {
        let reader = BufReader::new(File::open(path).map_err(|e| KgError::io(path, e))?);
        let mut vocab = Vocab::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| KgError::io(path, e))?;
            let line_no = lineno + 1;
            let (idx, surface) = line.split_once('\t').ok_or_else(|| KgError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                reason: "expected `index<TAB>surface`".into(),
            })?;
            let idx: u32 = idx.parse().map_err(|_| KgError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                reason: format!("bad index `{idx}`"),
            })?;
            if idx as usize != vocab.len() || vocab.get(surface).is_some() {
                return Err(KgError::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    reason: "indices must be contiguous and surfaces unique".into(),
                });
            }
            vocab.get_or_insert(surface);
        }
        Ok(vocab)
    }
}
