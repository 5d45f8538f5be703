//! Row-major embedding matrices with record ids.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    pub fn code(self) -> u8 {
        match self {
            Modality::Image => 0,
            Modality::Text => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Modality::Image),
            1 => Ok(Modality::Text),
            other => Err(Error::Format(format!("unknown modality code {other}"))),
        }
    }
}

/// `n x d` embeddings, one row per id, stored row-major in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    data: Vec<f64>,
    dim: usize,
    modality: Modality,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, data: Vec<f64>, dim: usize, modality: Modality) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Empty("embedding matrix has no rows"));
        }
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::dims(
                "embedding payload length",
                ids.len() * dim,
                data.len(),
            ));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(EmbeddingMatrix {
            ids,
            data,
            dim,
            modality,
        })
    }

    /// Builds a matrix from rows, generating ids `"0", "1", ...`.
    pub fn from_rows(rows: &[Vec<f64>], modality: Modality) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::Empty("no rows"))?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::dims(format!("row {i}"), dim, row.len()));
            }
            data.extend_from_slice(row);
        }
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        Self::new(ids, data, dim, modality)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Gathers rows by index into a new matrix. Repeated indices are allowed;
    /// ids of repeats get a `#k` suffix to stay unique.
    pub fn gather(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        let mut ids = Vec::with_capacity(indices.len());
        let mut seen = std::collections::HashMap::<usize, usize>::new();
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!(
                    "row index {i} out of range for {} rows",
                    self.len()
                )));
            }
            let count = seen.entry(i).or_insert(0);
            ids.push(if *count == 0 {
                self.ids[i].clone()
            } else {
                format!("{}#{count}", self.ids[i])
            });
            *count += 1;
            data.extend_from_slice(self.row(i));
        }
        Self::new(ids, data, self.dim, self.modality)
    }

    pub(crate) fn into_parts(self) -> (Vec<String>, Vec<f64>, usize, Modality) {
        (self.ids, self.data, self.dim, self.modality)
    }

    pub(crate) fn from_parts_unchecked(
        ids: Vec<String>,
        data: Vec<f64>,
        dim: usize,
        modality: Modality,
    ) -> Self {
        debug_assert_eq!(ids.len() * dim, data.len());
        EmbeddingMatrix {
            ids,
            data,
            dim,
            modality,
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        0.0
    } else {
        (dot(a, b) / denom).clamp(-1.0, 1.0)
    }
}

pub(crate) fn check_finite(v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(col) => Err(Error::NonFinite { row: 0, col }),
        None => Ok(()),
    }
}
