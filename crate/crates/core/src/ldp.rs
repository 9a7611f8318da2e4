//! LDP vector space: one dense vector per lexicalised dependency path.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dump::{DumpError, DumpFormat, Matrix};
use crate::kg::{LdpId, Vocab};

pub const DEFAULT_DIM: usize = 768;

#[derive(Debug, thiserror::Error)]
pub enum LdpError {
    #[error(transparent)]
    Dump(#[from] DumpError),
    #[error("{path}: {count} vocabulary LDPs have no vector: {}", preview(.missing))]
    Missing {
        path: PathBuf,
        count: usize,
        missing: Vec<String>,
    },
    #[error("{path}: LDP {ldp:?} appears twice")]
    Duplicate { path: PathBuf, ldp: String },
    #[error("empty LDP string")]
    EmptyLdp,
    #[error("vector dimension must be at least 1")]
    ZeroDim,
    #[error("non-finite entry in vector of LDP {0}")]
    NonFinite(LdpId),
    #[error("token vectors of {0:?} cancel to zero")]
    Degenerate(String),
    #[error("store has {found} vectors but the vocabulary has {expected} LDPs")]
    SizeMismatch { expected: usize, found: usize },
}

fn preview(names: &[String]) -> String {
    let shown: Vec<&str> = names.iter().take(10).map(String::as_str).collect();
    let more = names.len().saturating_sub(shown.len());
    if more > 0 {
        format!("{} (+{more} more)", shown.join(", "))
    } else {
        shown.join(", ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    ExternalExport,
    Fallback,
}

impl Provenance {
    pub fn label(self) -> &'static str {
        match self {
            Provenance::ExternalExport => "external-export",
            Provenance::Fallback => "fallback",
        }
    }
}

/// Vectors aligned with an LDP vocabulary: row `i` belongs to `LdpId(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LdpVectorStore {
    dim: usize,
    vectors: Vec<f32>,
    provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct VectorLoadReport {
    pub rows: usize,
    pub skipped_unknown: usize,
}

impl LdpVectorStore {
    pub fn from_vectors(dim: usize, vectors: Vec<f32>, provenance: Provenance) -> Result<Self, LdpError> {
        if dim == 0 {
            return Err(LdpError::ZeroDim);
        }
        if !vectors.len().is_multiple_of(dim) {
            return Err(LdpError::SizeMismatch {
                expected: vectors.len() / dim + 1,
                found: vectors.len() / dim,
            });
        }
        if let Some(i) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(LdpError::NonFinite(LdpId((i / dim) as u32)));
        }
        Ok(LdpVectorStore {
            dim,
            vectors,
            provenance,
        })
    }

    /// Encodes every vocabulary LDP with [`fallback_encode`].
    pub fn from_fallback(vocab: &Vocab, dim: usize, seed: u64) -> Result<Self, LdpError> {
        let mut vectors = Vec::with_capacity(vocab.len() * dim);
        for (_, ldp) in vocab.iter() {
            vectors.extend(fallback_encode(ldp, dim, seed)?);
        }
        Self::from_vectors(dim, vectors, Provenance::Fallback)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn vector(&self, id: LdpId) -> &[f32] {
        &self.vectors[id.index() * self.dim..(id.index() + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.vectors
    }

    /// Writes the store keyed by LDP surface strings.
    pub fn dump(&self, vocab: &Vocab, path: &Path, format: DumpFormat) -> Result<(), LdpError> {
        if vocab.len() != self.len() {
            return Err(LdpError::SizeMismatch {
                expected: vocab.len(),
                found: self.len(),
            });
        }
        let m = Matrix {
            dim: self.dim,
            tag: Some(self.provenance.label().to_owned()),
            keys: vocab.iter().map(|(_, s)| s.to_owned()).collect(),
            data: self.vectors.clone(),
        };
        m.write(path, format)?;
        Ok(())
    }

    /// Reads a dump keyed by LDP strings and aligns it with `vocab`. Rows for
    /// LDPs outside the vocabulary are skipped and counted.
    pub fn load_vectors(path: &Path, vocab: &Vocab) -> Result<(Self, VectorLoadReport), LdpError> {
        let m = Matrix::<f32>::read(path)?;
        if m.dim == 0 {
            return Err(LdpError::ZeroDim);
        }
        let mut slot: Vec<Option<usize>> = vec![None; vocab.len()];
        let mut report = VectorLoadReport {
            rows: m.rows(),
            skipped_unknown: 0,
        };
        for (row, key) in m.keys.iter().enumerate() {
            match vocab.get(key) {
                Some(id) if slot[id as usize].is_some() => {
                    return Err(LdpError::Duplicate {
                        path: path.to_path_buf(),
                        ldp: key.clone(),
                    })
                }
                Some(id) => slot[id as usize] = Some(row),
                None => report.skipped_unknown += 1,
            }
        }
        let missing: Vec<String> = vocab
            .iter()
            .filter(|(id, _)| slot[*id as usize].is_none())
            .map(|(_, s)| s.to_owned())
            .collect();
        if !missing.is_empty() {
            return Err(LdpError::Missing {
                path: path.to_path_buf(),
                count: missing.len(),
                missing,
            });
        }
        if report.skipped_unknown > 0 {
            log::info!(
                "{}: skipped {} vectors for LDPs outside the vocabulary",
                path.display(),
                report.skipped_unknown
            );
        }
        let mut vectors = Vec::with_capacity(vocab.len() * m.dim);
        for row in slot.into_iter().flatten() {
            vectors.extend_from_slice(m.row(row));
        }
        let provenance = match m.tag.as_deref() {
            Some("fallback") => Provenance::Fallback,
            _ => Provenance::ExternalExport,
        };
        Ok((Self::from_vectors(m.dim, vectors, provenance)?, report))
    }
}

fn token_vector(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(token.as_bytes());
    let key: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Deterministic stand-in for a sentence encoder. The LDP is split on `:`,
/// each non-empty token becomes a seeded pseudo-random unit vector, and the
/// result is the unit-normalised mean. Being a mean, it depends on the token
/// multiset and not on token order.
pub fn fallback_encode(ldp: &str, dim: usize, seed: u64) -> Result<Vec<f32>, LdpError> {
    if dim == 0 {
        return Err(LdpError::ZeroDim);
    }
    let tokens: Vec<&str> = ldp.split(':').filter(|t| !t.is_empty()).collect();
    if tokens.is_empty() {
        return Err(LdpError::EmptyLdp);
    }
    let mut mean = vec![0.0f64; dim];
    for tok in &tokens {
        for (m, x) in mean.iter_mut().zip(token_vector(tok, dim, seed)) {
            *m += x;
        }
    }
    let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 1e-12) {
        return Err(LdpError::Degenerate(ldp.to_owned()));
    }
    Ok(mean.into_iter().map(|x| (x / norm) as f32).collect())
}
