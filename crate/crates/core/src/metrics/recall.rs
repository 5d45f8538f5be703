use std::collections::{HashMap, HashSet};

use rayon::prelude::*;

use super::report::ScoreReport;
use crate::align::AlignmentMap;
use crate::embedding::{EmbeddingMatrix, Modality};
use crate::error::{Error, Result};
use crate::vecstore::Datastore;

/// Fraction of image queries whose top-k retrieval contains a gold caption,
/// one report per requested k.
///
/// `gold` maps image id to the caption ids counted as correct. Every query
/// needs at least one gold caption and every gold id must be in the store.
pub fn recall_at_k(
    queries: &EmbeddingMatrix,
    store: &Datastore,
    gold: &HashMap<String, Vec<String>>,
    ks: &[usize],
    map: &AlignmentMap,
) -> Result<Vec<(usize, ScoreReport)>> {
    if queries.modality() != Modality::Image {
        return Err(Error::InvalidArgument("recall queries must be image embeddings".into()));
    }
    if queries.dim() != map.dim() || store.dim() != map.dim() {
        return Err(Error::dims("recall query/store dimension", map.dim(), queries.dim().max(store.dim())));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidArgument("k values must be non-empty and positive".into()));
    }
    let mut gold_idx: Vec<HashSet<usize>> = Vec::with_capacity(queries.len());
    for id in queries.ids() {
        let ids = gold
            .get(id)
            .filter(|g| !g.is_empty())
            .ok_or_else(|| Error::UnknownId(format!("no gold captions for image {id}")))?;
        let set = ids
            .iter()
            .map(|c| {
                store
                    .position(c)
                    .ok_or_else(|| Error::UnknownId(format!("gold caption {c} is not in the store")))
            })
            .collect::<Result<HashSet<usize>>>()?;
        gold_idx.push(set);
    }
    let kmax = *ks.iter().max().unwrap();
    // A total rank order makes top-k a prefix of top-kmax.
    let ranks: Vec<Option<usize>> = queries
        .ids()
        .par_iter()
        .enumerate()
        .map(|(i, _)| {
            let q = map.apply(queries.row(i))?;
            let hits = store.topk(&q, kmax)?;
            Ok(hits.iter().position(|h| gold_idx[i].contains(&h.index)))
        })
        .collect::<Result<_>>()?;
    ks.iter()
        .map(|&k| {
            let items = queries
                .ids()
                .iter()
                .zip(&ranks)
                .map(|(id, r)| (id.clone(), if r.is_some_and(|r| r < k) { 1.0 } else { 0.0 }))
                .collect();
            Ok((k, ScoreReport::new(format!("R@{k}"), items)?))
        })
        .collect()
}
