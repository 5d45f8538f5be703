//! Caption datastore with exact cosine top-k retrieval.
//!
//! Embeddings are kept as f32 rows (the on-disk precision) and promoted to
//! f64 for scoring, so a saved and reloaded store scores identically.

mod persist;

use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use persist::{load, save, FORMAT_VERSION};

use crate::align::AlignmentMap;
use crate::embedding::{EmbeddingMatrix, Modality};
use crate::error::{Error, Result};

/// Embeddings handed to the store must be unit norm within this tolerance.
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Human,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionRecord {
    pub caption_id: String,
    pub text: String,
    /// Preprocessed text embedding.
    pub embedding: Vec<f64>,
    pub provenance: Provenance,
    pub dal_iteration: u32,
    pub source_image_id: Option<String>,
}

impl CaptionRecord {
    pub fn human(caption_id: impl Into<String>, text: impl Into<String>, embedding: Vec<f64>) -> Self {
        CaptionRecord {
            caption_id: caption_id.into(),
            text: text.into(),
            embedding,
            provenance: Provenance::Human,
            dal_iteration: 0,
            source_image_id: None,
        }
    }

    pub fn synthetic(
        caption_id: impl Into<String>,
        text: impl Into<String>,
        embedding: Vec<f64>,
        dal_iteration: u32,
        source_image_id: Option<String>,
    ) -> Self {
        CaptionRecord {
            caption_id: caption_id.into(),
            text: text.into(),
            embedding,
            provenance: Provenance::Synthetic,
            dal_iteration,
            source_image_id,
        }
    }
}

/// Record metadata as held by the store; the embedding lives in the row matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub caption_id: String,
    pub text: String,
    pub provenance: Provenance,
    pub dal_iteration: u32,
    pub source_image_id: Option<String>,
}

/// Filter decision recorded for every synthetic caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub caption_id: String,
    pub dal_iteration: u32,
    pub score: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset: String,
    pub map_fingerprint: Option<String>,
    pub d: usize,
    pub human: usize,
    pub synthetic: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Datastore {
    dim: usize,
    records: Vec<RecordMeta>,
    rows: Vec<f32>,
    norms: Vec<f64>,
    index: HashMap<String, usize>,
    audit: Vec<AuditEntry>,
    dataset: String,
    map_fingerprint: Option<String>,
    human: usize,
    synthetic: usize,
}

impl Datastore {
    pub fn build(records: Vec<CaptionRecord>) -> Result<Self> {
        let dim = records
            .first()
            .map(|r| r.embedding.len())
            .ok_or(Error::Empty("datastore needs at least one record"))?;
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        let mut store = Datastore {
            dim,
            records: Vec::with_capacity(records.len()),
            rows: Vec::with_capacity(records.len() * dim),
            norms: Vec::with_capacity(records.len()),
            index: HashMap::with_capacity(records.len()),
            audit: Vec::new(),
            dataset: String::new(),
            map_fingerprint: None,
            human: 0,
            synthetic: 0,
        };
        for rec in records {
            store.push(rec)?;
        }
        Ok(store)
    }

    pub fn with_dataset(mut self, tag: impl Into<String>) -> Self {
        self.dataset = tag.into();
        self
    }

    pub fn with_map_fingerprint(mut self, fingerprint: impl Into<String>) -> Self {
        self.map_fingerprint = Some(fingerprint.into());
        self
    }

    fn push(&mut self, rec: CaptionRecord) -> Result<()> {
        if rec.embedding.len() != self.dim {
            return Err(Error::dims(
                format!("embedding of {:?}", rec.caption_id),
                self.dim,
                rec.embedding.len(),
            ));
        }
        if rec.text.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "caption {:?} has empty text",
                rec.caption_id
            )));
        }
        if rec.provenance == Provenance::Human && rec.dal_iteration != 0 {
            return Err(Error::InvalidArgument(format!(
                "human caption {:?} must have dal_iteration 0",
                rec.caption_id
            )));
        }
        if self.index.contains_key(&rec.caption_id) {
            return Err(Error::DuplicateId(rec.caption_id));
        }
        if let Some(col) = rec.embedding.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                row: self.records.len(),
                col,
            });
        }
        let row: Vec<f32> = rec.embedding.iter().map(|&x| x as f32).collect();
        let norm = row_norm(&row);
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::InvalidArgument(format!(
                "embedding of {:?} has norm {norm}, expected unit norm",
                rec.caption_id
            )));
        }
        self.index.insert(rec.caption_id.clone(), self.records.len());
        match rec.provenance {
            Provenance::Human => self.human += 1,
            Provenance::Synthetic => self.synthetic += 1,
        }
        self.rows.extend_from_slice(&row);
        self.norms.push(norm);
        self.records.push(RecordMeta {
            caption_id: rec.caption_id,
            text: rec.text,
            provenance: rec.provenance,
            dal_iteration: rec.dal_iteration,
            source_image_id: rec.source_image_id,
        });
        Ok(())
    }

    /// Appends a synthetic caption produced at DAL iteration >= 1.
    pub fn add_synthetic(mut self, rec: CaptionRecord) -> Result<Self> {
        self.push_synthetic(rec)?;
        Ok(self)
    }

    /// Like [`Datastore::add_synthetic`], also recording the filter decision.
    pub fn add_synthetic_audited(mut self, rec: CaptionRecord, score: f64, threshold: f64) -> Result<Self> {
        let entry = AuditEntry {
            caption_id: rec.caption_id.clone(),
            dal_iteration: rec.dal_iteration,
            score,
            threshold,
        };
        self.push_synthetic(rec)?;
        self.audit.push(entry);
        Ok(self)
    }

    fn push_synthetic(&mut self, rec: CaptionRecord) -> Result<()> {
        if rec.provenance != Provenance::Synthetic {
            return Err(Error::InvalidArgument(format!(
                "add_synthetic received non-synthetic caption {:?}",
                rec.caption_id
            )));
        }
        if rec.dal_iteration == 0 {
            return Err(Error::InvalidArgument(format!(
                "synthetic caption {:?} must have dal_iteration >= 1",
                rec.caption_id
            )));
        }
        self.push(rec)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[RecordMeta] {
        &self.records
    }

    pub fn record(&self, index: usize) -> &RecordMeta {
        &self.records[index]
    }

    pub fn embedding(&self, index: usize) -> &[f32] {
        &self.rows[index * self.dim..(index + 1) * self.dim]
    }

    pub fn position(&self, caption_id: &str) -> Option<usize> {
        self.index.get(caption_id).copied()
    }

    pub fn contains(&self, caption_id: &str) -> bool {
        self.index.contains_key(caption_id)
    }

    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            dataset: self.dataset.clone(),
            map_fingerprint: self.map_fingerprint.clone(),
            d: self.dim,
            human: self.human,
            synthetic: self.synthetic,
        }
    }

    /// The `k` records with highest cosine similarity to `query`, best first.
    /// Equal scores are ordered by ascending caption id.
    pub fn topk(&self, query: &[f64], k: usize) -> Result<Vec<Hit>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if query.len() != self.dim {
            return Err(Error::dims("query length", self.dim, query.len()));
        }
        crate::embedding::check_finite(query)?;
        let qnorm = crate::embedding::norm(query);
        let mut hits: Vec<Hit> = self
            .rows
            .chunks_exact(self.dim)
            .zip(&self.norms)
            .enumerate()
            .map(|(index, (row, &rnorm))| Hit {
                index,
                score: score(query, qnorm, row, rnorm),
            })
            .collect();
        let k = k.min(hits.len());
        let cmp = |a: &Hit, b: &Hit| self.rank_order(a, b);
        if k < hits.len() {
            hits.select_nth_unstable_by(k - 1, cmp);
            hits.truncate(k);
        }
        hits.sort_unstable_by(cmp);
        Ok(hits)
    }

    /// [`Datastore::topk`] for many queries, fanned out across threads.
    pub fn topk_batch(&self, queries: &[Vec<f64>], k: usize) -> Result<Vec<Vec<Hit>>> {
        queries.par_iter().map(|q| self.topk(q, k)).collect()
    }

    fn rank_order(&self, a: &Hit, b: &Hit) -> Ordering {
        b.score
            .total_cmp(&a.score)
            .then_with(|| self.records[a.index].caption_id.cmp(&self.records[b.index].caption_id))
    }
}

fn row_norm(row: &[f32]) -> f64 {
    row.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

fn score(query: &[f64], qnorm: f64, row: &[f32], rnorm: f64) -> f64 {
    let denom = qnorm * rnorm;
    if denom == 0.0 {
        return 0.0;
    }
    let dot: f64 = query.iter().zip(row).map(|(q, &r)| q * r as f64).sum();
    (dot / denom).clamp(-1.0, 1.0)
}

/// Caption text with its raw embedding, as read from ingestion files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionInput {
    pub caption_id: String,
    pub text: String,
    #[serde(default)]
    pub image_id: Option<String>,
}

/// Preprocesses raw text embeddings with `map` and unit-normalizes them into
/// human records. `captions` must be row-aligned with `texts`.
pub fn human_records(
    map: &AlignmentMap,
    texts: &EmbeddingMatrix,
    captions: &[CaptionInput],
) -> Result<Vec<CaptionRecord>> {
    if texts.modality() != Modality::Text {
        return Err(Error::InvalidArgument("datastore embeddings must be text".into()));
    }
    if texts.len() != captions.len() {
        return Err(Error::CountMismatch {
            left: texts.len(),
            right: captions.len(),
        });
    }
    texts
        .ids()
        .iter()
        .zip(texts.rows())
        .zip(captions)
        .map(|((id, row), cap)| {
            if *id != cap.caption_id {
                return Err(Error::InvalidArgument(format!(
                    "embedding id {id:?} does not match caption id {:?}",
                    cap.caption_id
                )));
            }
            let embedding = unit(map.prepare_text(row)?)?;
            Ok(CaptionRecord {
                caption_id: cap.caption_id.clone(),
                text: cap.text.clone(),
                embedding,
                provenance: Provenance::Human,
                dal_iteration: 0,
                source_image_id: cap.image_id.clone(),
            })
        })
        .collect()
}

pub(crate) fn unit(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let n = crate::embedding::norm(&v);
    if n == 0.0 {
        return Err(Error::ZeroNormRow {
            row: 0,
            after_centering: false,
        });
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}
