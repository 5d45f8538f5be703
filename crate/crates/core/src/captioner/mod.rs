//! Retrieval-augmented captioning: align the image embedding, retrieve the
//! nearest captions, prompt a generator with them, and keep the candidate
//! whose text embedding is most cosine-similar to the aligned image.

pub mod embedder;
pub mod generator;
pub mod prompt;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use embedder::{CachedEmbedder, EmbedRequest, EmbedResponse, HttpEmbedder, LookupEmbedder, MockEmbedder, TextEmbedder};
pub use generator::{
    generate_candidates, ErrorResponse, GenerationRequest, GenerationResponse, Generated, Generator, HttpGenerator, MockGenerator,
    RetryPolicy, SamplingParams,
};
pub use prompt::{Ordering, PromptTemplate};

use crate::align::AlignmentMap;
use crate::embedding::{cosine, EmbeddingMatrix, Modality};
use crate::error::{Error, Result};
use crate::vecstore::Datastore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub aligned_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    /// Unique candidates in generation order.
    pub candidates: Vec<Candidate>,
    pub selected_index: usize,
    pub requested: usize,
    pub returned: usize,
    pub empty_dropped: usize,
    pub duplicates_dropped: usize,
    /// Preprocessed text embeddings, row-aligned with `candidates`.
    #[serde(skip)]
    pub embeddings: Vec<Vec<f64>>,
}

impl CandidateSet {
    pub fn selected(&self) -> &Candidate {
        &self.candidates[self.selected_index]
    }

    pub fn shortfall(&self) -> usize {
        self.requested.saturating_sub(self.returned)
    }
}

/// Index of the first maximal score.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Scores candidates against the raw image embedding `image_vec`.
pub fn select_candidate(
    candidates: &[String],
    image_vec: &[f64],
    map: &AlignmentMap,
    embedder: &dyn TextEmbedder,
) -> Result<CandidateSet> {
    let query = map.apply(image_vec)?;
    select_for_query(candidates, &query, map, embedder)
}

/// Like [`select_candidate`] for an image already mapped into text space.
pub fn select_for_query(
    candidates: &[String],
    aligned_query: &[f64],
    map: &AlignmentMap,
    embedder: &dyn TextEmbedder,
) -> Result<CandidateSet> {
    let mut unique: Vec<String> = Vec::with_capacity(candidates.len());
    let mut empty = 0;
    for c in candidates {
        if c.trim().is_empty() {
            empty += 1;
        } else if !unique.contains(c) {
            unique.push(c.clone());
        }
    }
    if unique.is_empty() {
        return Err(Error::Empty("no non-empty candidates to select from"));
    }
    let raw = embedder.embed(&unique)?;
    if raw.len() != unique.len() {
        return Err(Error::Service(format!(
            "embedder returned {} vectors for {} candidates",
            raw.len(),
            unique.len()
        )));
    }
    let embeddings = raw
        .iter()
        .map(|v| map.prepare_text(v))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = embeddings.iter().map(|e| cosine(e, aligned_query)).collect();
    let selected_index = argmax_first(&scores).expect("non-empty");
    Ok(CandidateSet {
        duplicates_dropped: candidates.len() - empty - unique.len(),
        candidates: unique
            .into_iter()
            .zip(&scores)
            .map(|(text, &aligned_score)| Candidate { text, aligned_score })
            .collect(),
        selected_index,
        requested: candidates.len(),
        returned: candidates.len(),
        empty_dropped: empty,
        embeddings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub caption_id: String,
    pub text: String,
    pub score: f64,
}

/// Final caption plus everything needed to audit how it was chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionOutput {
    pub caption: String,
    pub k: usize,
    pub retrieved: Vec<Retrieved>,
    pub prompt: String,
    pub request: GenerationRequest,
    pub candidates: CandidateSet,
    #[serde(skip)]
    pub aligned_query: Vec<f64>,
}

/// The components shared by every captioning call.
#[derive(Clone, Copy)]
pub struct Pipeline<'a> {
    pub map: &'a AlignmentMap,
    pub store: &'a Datastore,
    pub template: &'a PromptTemplate,
    pub generator: &'a dyn Generator,
    pub embedder: &'a dyn TextEmbedder,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        map: &'a AlignmentMap,
        store: &'a Datastore,
        template: &'a PromptTemplate,
        generator: &'a dyn Generator,
        embedder: &'a dyn TextEmbedder,
    ) -> Result<Self> {
        if map.dim() != store.dim() {
            return Err(Error::dims("datastore dimension", map.dim(), store.dim()));
        }
        Ok(Pipeline {
            map,
            store,
            template,
            generator,
            embedder,
        })
    }

    /// Captions one raw image embedding.
    pub fn caption(&self, image_vec: &[f64], k: usize, params: &SamplingParams) -> Result<CaptionOutput> {
        params.validate()?;
        let query = self.map.apply(image_vec).map_err(|e| e.in_stage("align"))?;
        let hits = self.store.topk(&query, k).map_err(|e| e.in_stage("retrieve"))?;
        let retrieved: Vec<Retrieved> = hits
            .iter()
            .map(|h| {
                let r = self.store.record(h.index);
                Retrieved {
                    caption_id: r.caption_id.clone(),
                    text: r.text.clone(),
                    score: h.score,
                }
            })
            .collect();
        let texts: Vec<&str> = retrieved.iter().map(|r| r.text.as_str()).collect();
        let prompt = self.template.render(&texts).map_err(|e| e.in_stage("prompt"))?;
        let request = params.request(prompt.clone());
        let generated =
            generate_candidates(self.generator, &request).map_err(|e| e.in_stage("generate"))?;
        let mut candidates = select_for_query(&generated.texts, &query, self.map, self.embedder)
            .map_err(|e| e.in_stage("select"))?;
        candidates.requested = generated.requested;
        candidates.returned = generated.returned;
        candidates.empty_dropped += generated.empty_dropped;
        Ok(CaptionOutput {
            caption: candidates.selected().text.clone(),
            k,
            retrieved,
            prompt,
            request,
            candidates,
            aligned_query: query,
        })
    }

    /// Captions every row of `images` on a pool of at most `jobs` workers.
    /// With a seed in `params`, each image gets its own seed derived from the
    /// base seed and its id, so results do not depend on scheduling.
    pub fn caption_all(
        &self,
        images: &EmbeddingMatrix,
        k: usize,
        params: &SamplingParams,
        jobs: usize,
    ) -> Result<Vec<CaptionOutput>> {
        if images.modality() != Modality::Image {
            return Err(Error::InvalidArgument("captioning needs image embeddings".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
        pool.install(|| {
            images
                .ids()
                .par_iter()
                .enumerate()
                .map(|(i, id)| {
                    let params = per_item_params(params, id);
                    self.caption(images.row(i), k, &params)
                })
                .collect()
        })
    }
}

/// Per-item copy of `params` with the seed, if any, mixed with `item_id`.
pub fn per_item_params(params: &SamplingParams, item_id: &str) -> SamplingParams {
    SamplingParams {
        seed: params.seed.map(|s| crate::mock::mix(s, item_id, 0)),
        ..params.clone()
    }
}

/// Recomputes candidate scores from a caption trace, the embedder and the map.
pub fn rescore(
    output: &CaptionOutput,
    image_vec: &[f64],
    map: &AlignmentMap,
    embedder: &dyn TextEmbedder,
) -> Result<Vec<f64>> {
    let query = map.apply(image_vec)?;
    let texts: Vec<String> = output.candidates.candidates.iter().map(|c| c.text.clone()).collect();
    let raw = embedder.embed(&texts)?;
    raw.iter()
        .map(|v| Ok(cosine(&map.prepare_text(v)?, &query)))
        .collect()
}

/// Groups a flat list of embeddings by text, for building a lookup embedder.
pub fn embedding_table(texts: &[String], vectors: &[Vec<f64>]) -> HashMap<String, Vec<f64>> {
    texts.iter().cloned().zip(vectors.iter().cloned()).collect()
}
