//! Datastore augmentation: caption training images with the current
//! datastore, keep the synthetic captions that beat the running validation
//! mean, add them, re-tune k, repeat.

mod checkpoint;
mod run;

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{DalState, PendingIteration, STATE_FILE};
pub use run::{resume_dal, run_dal, DalOutcome};

use crate::align::AlignmentMap;
use crate::captioner::{per_item_params, CaptionOutput, Generator, Pipeline, PromptTemplate, SamplingParams, TextEmbedder};
use crate::error::{Error, Result};
use crate::metrics::{CaptionMetric, ReferenceSet, ScoreInput, ScoreReport};
use crate::mock::mix;
use crate::vecstore::Datastore;

/// One image taking part in the loop: its raw embedding and, for
/// reference-based metrics, its reference captions.
#[derive(Debug, Clone, PartialEq)]
pub struct DalItem {
    pub image_id: String,
    pub image: Vec<f64>,
    pub references: Option<ReferenceSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DalConfig {
    pub iterations: u32,
    pub metric: String,
    pub k_grid: Vec<usize>,
    /// k used for the first threshold and generation pass.
    pub initial_k: usize,
    /// Sampling parameters; the seed is replaced per phase and image from `seed`.
    pub generation: SamplingParams,
    pub one_best: bool,
    /// Score every unique sampled candidate rather than only the caption the
    /// pipeline selects.
    pub score_all_candidates: bool,
    pub seed: u64,
    /// Worker threads; 0 uses all cores. Does not affect results.
    pub jobs: usize,
    /// Images generated between progress checkpoints. Does not affect results.
    pub batch_size: usize,
}

impl Default for DalConfig {
    fn default() -> Self {
        DalConfig {
            iterations: 5,
            metric: "aclip-s".into(),
            k_grid: (1..=17).collect(),
            initial_k: 13,
            generation: SamplingParams::default(),
            one_best: true,
            score_all_candidates: true,
            seed: 0,
            jobs: 0,
            batch_size: 64,
        }
    }
}

impl DalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_grid.is_empty() {
            return Err(Error::InvalidArgument("k_grid must not be empty".into()));
        }
        if self.k_grid[0] == 0 || self.k_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "k_grid must hold positive values in strictly ascending order".into(),
            ));
        }
        if self.initial_k == 0 {
            return Err(Error::InvalidArgument("initial_k must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        self.generation.validate()
    }

    /// The fields that influence results; two configs with equal keys
    /// produce identical runs.
    fn result_key(&self) -> DalConfig {
        DalConfig {
            jobs: 0,
            batch_size: 1,
            ..self.clone()
        }
    }

    fn phase_params(&self, phase: &str, iteration: u32) -> SamplingParams {
        SamplingParams {
            seed: Some(mix(self.seed, phase, iteration as u64)),
            ..self.generation.clone()
        }
    }
}

/// What the loop needs besides data and configuration.
#[derive(Clone, Copy)]
pub struct Components<'a> {
    pub map: &'a AlignmentMap,
    pub template: &'a PromptTemplate,
    pub generator: &'a dyn Generator,
    pub embedder: &'a dyn TextEmbedder,
    pub metric: &'a dyn CaptionMetric,
}

impl<'a> Components<'a> {
    pub fn pipeline<'s>(&self, store: &'s Datastore) -> Result<Pipeline<'s>>
    where
        'a: 's,
    {
        Pipeline::new(self.map, store, self.template, self.generator, self.embedder)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KScore {
    pub k: usize,
    /// `k` clamped to the datastore size.
    pub effective_k: usize,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSearch {
    pub best_k: usize,
    pub scores: Vec<KScore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: u32,
    /// k in effect when the threshold was computed and training images captioned.
    pub threshold_k: usize,
    pub validation_mean: f64,
    pub validation_stderr: f64,
    pub images_processed: usize,
    pub candidates_generated: usize,
    pub candidates_added: usize,
    pub generation_shortfall: usize,
    pub chosen_k: usize,
    pub k_scores: Vec<KScore>,
    /// Validation scores at `chosen_k` on the augmented datastore.
    pub validation_scores: BTreeMap<String, MetricSummary>,
    pub datastore_version: String,
    pub datastore_size: usize,
}

/// Scores every candidate of one caption trace.
pub fn score_candidates(output: &CaptionOutput, item: &DalItem, metric: &dyn CaptionMetric) -> Result<Vec<f64>> {
    let set = &output.candidates;
    set.candidates
        .iter()
        .zip(&set.embeddings)
        .map(|(c, e)| {
            metric.score(&ScoreInput {
                image_id: &item.image_id,
                text: &c.text,
                candidate_vec: e,
                aligned_image: &output.aligned_query,
                references: item.references.as_ref(),
            })
        })
        .collect()
}

/// Scores the caption the pipeline selected.
pub fn score_selected(output: &CaptionOutput, item: &DalItem, metric: &dyn CaptionMetric) -> Result<f64> {
    let set = &output.candidates;
    let i = set.selected_index;
    metric.score(&ScoreInput {
        image_id: &item.image_id,
        text: &set.candidates[i].text,
        candidate_vec: &set.embeddings[i],
        aligned_image: &output.aligned_query,
        references: item.references.as_ref(),
    })
}

/// Captions every item with per-image seeds derived from `params`.
pub fn caption_items(
    pipeline: &Pipeline,
    items: &[DalItem],
    k: usize,
    params: &SamplingParams,
) -> Result<Vec<CaptionOutput>> {
    items
        .par_iter()
        .map(|item| {
            pipeline
                .caption(&item.image, k, &per_item_params(params, &item.image_id))
                .map_err(|e| e.for_item(&item.image_id))
        })
        .collect()
}

fn score_report(outputs: &[CaptionOutput], items: &[DalItem], metric: &dyn CaptionMetric) -> Result<ScoreReport> {
    let per_item = outputs
        .iter()
        .zip(items)
        .map(|(o, item)| {
            let s = score_selected(o, item, metric).map_err(|e| e.for_item(&item.image_id))?;
            Ok((item.image_id.clone(), s))
        })
        .collect::<Result<Vec<_>>>()?;
    ScoreReport::new(metric.name(), per_item)
}

/// Mean metric score of the pipeline's captions over the validation items.
pub fn compute_threshold(
    pipeline: &Pipeline,
    val: &[DalItem],
    k: usize,
    params: &SamplingParams,
    metric: &dyn CaptionMetric,
) -> Result<ScoreReport> {
    if val.is_empty() {
        return Err(Error::Empty("validation set is empty"));
    }
    let outputs = caption_items(pipeline, val, k, params)?;
    score_report(&outputs, val, metric)
}

/// Indices of candidates scoring strictly above `threshold`; with `one_best`
/// only the first highest of those.
pub fn filter_candidates(scores: &[f64], threshold: f64, one_best: bool) -> Vec<usize> {
    let passing = (0..scores.len()).filter(|&i| scores[i] > threshold);
    if !one_best {
        return passing.collect();
    }
    let mut best: Option<usize> = None;
    for i in passing {
        if best.is_none_or(|b| scores[i] > scores[b]) {
            best = Some(i);
        }
    }
    best.into_iter().collect()
}

/// Validation mean per k; the best k wins, ties go to the smaller k.
pub fn search_k(
    pipeline: &Pipeline,
    val: &[DalItem],
    k_grid: &[usize],
    params: &SamplingParams,
    metric: &dyn CaptionMetric,
) -> Result<KSearch> {
    Ok(search_k_traced(pipeline, val, k_grid, params, metric)?.0)
}

pub(crate) fn search_k_traced(
    pipeline: &Pipeline,
    val: &[DalItem],
    k_grid: &[usize],
    params: &SamplingParams,
    metric: &dyn CaptionMetric,
) -> Result<(KSearch, Vec<CaptionOutput>)> {
    if val.is_empty() {
        return Err(Error::Empty("validation set is empty"));
    }
    if k_grid.is_empty() || k_grid.contains(&0) {
        return Err(Error::InvalidArgument("k_grid must hold positive values".into()));
    }
    let size = pipeline.store.len();
    let mut scores = Vec::with_capacity(k_grid.len());
    let mut best: Option<(usize, f64, Vec<CaptionOutput>)> = None;
    for (i, &k) in k_grid.iter().enumerate() {
        let effective_k = k.min(size);
        let outputs = caption_items(pipeline, val, effective_k, params)?;
        let report = score_report(&outputs, val, metric)?;
        let better = best.as_ref().is_none_or(|(_, m, _)| report.mean > *m);
        scores.push(KScore {
            k,
            effective_k,
            mean: report.mean,
            stderr: report.stderr,
        });
        if better {
            best = Some((i, report.mean, outputs));
        }
    }
    let (i, _, outputs) = best.expect("non-empty grid");
    Ok((
        KSearch {
            best_k: k_grid[i],
            scores,
        },
        outputs,
    ))
}

fn check_items(items: &[DalItem], what: &str, dim: usize, needs_refs: bool) -> Result<()> {
    let mut seen = HashSet::new();
    for item in items {
        if !seen.insert(item.image_id.as_str()) {
            return Err(Error::DuplicateId(format!("{what} image {}", item.image_id)));
        }
        if item.image.len() != dim {
            return Err(Error::dims(format!("{what} image {}", item.image_id), dim, item.image.len()));
        }
        crate::embedding::check_finite(&item.image).map_err(|e| e.for_item(&item.image_id))?;
        if needs_refs && item.references.is_none() {
            return Err(Error::InvalidArgument(format!(
                "{what} image {} has no references but the metric needs them",
                item.image_id
            )));
        }
        if let Some(r) = &item.references {
            if r.dim() != dim {
                return Err(Error::dims(format!("{what} references of {}", item.image_id), dim, r.dim()));
            }
        }
    }
    Ok(())
}
