use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::checkpoint::{
    append_progress, data_fingerprint, progress_path, read_progress, report_path, store_name, Addition,
    ImageProgress, ScoredText,
};
use super::{
    check_items, compute_threshold, filter_candidates, score_candidates, score_report, score_selected,
    search_k_traced, Components, DalConfig, DalItem, DalState, IterationReport, MetricSummary, PendingIteration,
    STATE_FILE,
};
use crate::captioner::{per_item_params, Pipeline, SamplingParams};
use crate::error::{Error, Result};
use crate::metrics::{AClipS, CaptionMetric, RefAClipS};
use crate::util;
use crate::vecstore::{self, unit, CaptionRecord, Datastore};

#[derive(Debug, Clone)]
pub struct DalOutcome {
    pub store: Datastore,
    pub state: DalState,
}

/// Runs the loop from an initial human datastore. With a checkpoint
/// directory, every step is persisted and an interrupted run can be finished
/// with [`resume_dal`].
pub fn run_dal(
    cfg: &DalConfig,
    initial: Datastore,
    train: &[DalItem],
    val: &[DalItem],
    comps: &Components,
    checkpoint: Option<&Path>,
) -> Result<DalOutcome> {
    check_inputs(cfg, &initial, train, val, comps)?;
    if initial.manifest().synthetic != 0 {
        return Err(Error::InvalidArgument("the initial datastore must hold only human captions".into()));
    }
    let state = DalState::new(cfg.clone(), data_fingerprint(&comps.map.fingerprint(), train, val));
    if let Some(dir) = checkpoint {
        if dir.join(STATE_FILE).exists() {
            return Err(Error::InvalidArgument(format!(
                "{} already holds a DAL run; resume it or pick another directory",
                dir.display()
            )));
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        vecstore::save(&initial, state.store_dir(dir))?;
        state.save(dir)?;
    }
    drive(state, initial, train, val, comps, checkpoint)
}

/// Continues the run checkpointed in `dir`. A supplied config must match the
/// stored one apart from `jobs` and `batch_size`.
pub fn resume_dal(
    dir: &Path,
    cfg: Option<&DalConfig>,
    train: &[DalItem],
    val: &[DalItem],
    comps: &Components,
) -> Result<DalOutcome> {
    let mut state = DalState::load(dir)?;
    if let Some(cfg) = cfg {
        if cfg.result_key() != state.config.result_key() {
            return Err(Error::InvalidArgument(format!(
                "config differs from the one stored in {}",
                dir.join(STATE_FILE).display()
            )));
        }
        state.config.jobs = cfg.jobs;
        state.config.batch_size = cfg.batch_size;
    }
    if state.data_fingerprint != data_fingerprint(&comps.map.fingerprint(), train, val) {
        return Err(Error::InvalidArgument(
            "map or train/validation data differ from the checkpointed run".into(),
        ));
    }
    let store = vecstore::load(state.store_dir(dir))?;
    check_inputs(&state.config, &store, train, val, comps)?;
    drive(state, store, train, val, comps, Some(dir))
}

fn check_inputs(cfg: &DalConfig, store: &Datastore, train: &[DalItem], val: &[DalItem], comps: &Components) -> Result<()> {
    cfg.validate()?;
    if cfg.metric != comps.metric.name() {
        return Err(Error::InvalidArgument(format!(
            "config names metric {:?} but {:?} was supplied",
            cfg.metric,
            comps.metric.name()
        )));
    }
    if cfg.iterations > 0 && val.is_empty() {
        return Err(Error::Empty("validation set is empty"));
    }
    if cfg.iterations > 0 && train.is_empty() {
        return Err(Error::Empty("training set is empty"));
    }
    let dim = comps.map.dim();
    if store.dim() != dim {
        return Err(Error::dims("datastore dimension", dim, store.dim()));
    }
    let needs = comps.metric.needs_references();
    check_items(train, "train", dim, needs)?;
    check_items(val, "validation", dim, needs)
}

fn interrupted(e: Error, iteration: u32, dir: Option<&Path>) -> Error {
    match dir {
        Some(d) => Error::Interrupted {
            iteration: iteration as usize,
            checkpoint: d.to_path_buf(),
            source: Box::new(e),
        },
        None => e,
    }
}

fn drive(
    mut state: DalState,
    mut store: Datastore,
    train: &[DalItem],
    val: &[DalItem],
    comps: &Components,
    dir: Option<&Path>,
) -> Result<DalOutcome> {
    let cfg = state.config.clone();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    pool.install(|| {
        while state.iteration < cfg.iterations {
            let i = state.iteration + 1;
            let pending = match state.pending.clone() {
                Some(p) if p.iteration == i => p,
                _ => {
                    let pipeline = comps.pipeline(&store)?;
                    let report = compute_threshold(
                        &pipeline,
                        val,
                        state.current_k,
                        &cfg.phase_params("validation", i),
                        comps.metric,
                    )
                    .map_err(|e| interrupted(e.in_stage("threshold"), i, dir))?;
                    let p = PendingIteration {
                        iteration: i,
                        threshold: report.mean,
                        threshold_stderr: report.stderr,
                        threshold_k: state.current_k,
                    };
                    state.threshold = Some(p.threshold);
                    state.pending = Some(p.clone());
                    if let Some(d) = dir {
                        state.save(d)?;
                    }
                    p
                }
            };

            let progress = generate(&cfg, &store, train, comps, &pending, dir)?;

            let before = store.len();
            let mut generated = 0;
            let mut shortfall = 0;
            for item in train {
                let p = &progress[&item.image_id];
                generated += p.scored.len();
                shortfall += p.shortfall;
                for a in &p.additions {
                    let c = &p.scored[a.candidate];
                    let rec = CaptionRecord::synthetic(
                        format!("syn-{i}-{}-{}", item.image_id, a.candidate),
                        c.text.clone(),
                        a.embedding.iter().map(|&x| x as f64).collect(),
                        i,
                        Some(item.image_id.clone()),
                    );
                    store = store.add_synthetic_audited(rec, c.score, pending.threshold)?;
                }
            }
            let added = store.len() - before;
            let version = store_name(i);
            if let Some(d) = dir {
                vecstore::save(&store, d.join(&version))?;
            }

            let pipeline = comps.pipeline(&store)?;
            let (search, outputs) = search_k_traced(
                &pipeline,
                val,
                &cfg.k_grid,
                &cfg.phase_params("k-search", i),
                comps.metric,
            )
            .map_err(|e| interrupted(e.in_stage("k search"), i, dir))?;

            let mut validation_scores = BTreeMap::new();
            for m in report_metrics(comps.metric, val) {
                let r = score_report(&outputs, val, m)?;
                validation_scores.insert(
                    m.name().to_string(),
                    MetricSummary {
                        mean: r.mean,
                        stderr: r.stderr,
                    },
                );
            }
            let report = IterationReport {
                iteration: i,
                threshold_k: pending.threshold_k,
                validation_mean: pending.threshold,
                validation_stderr: pending.threshold_stderr,
                images_processed: train.len(),
                candidates_generated: generated,
                candidates_added: added,
                generation_shortfall: shortfall,
                chosen_k: search.best_k,
                k_scores: search.scores,
                validation_scores,
                datastore_version: version.clone(),
                datastore_size: store.len(),
            };
            if let Some(d) = dir {
                util::write_atomic(report_path(d, i), &serde_json::to_vec_pretty(&report)?)?;
            }
            state.iteration = i;
            state.current_k = report.chosen_k;
            state.datastore_version = version;
            state.history.push(report);
            state.pending = None;
            if let Some(d) = dir {
                state.save(d)?;
            }
        }
        Ok(DalOutcome { store, state })
    })
}

fn report_metrics<'a>(primary: &'a dyn CaptionMetric, val: &[DalItem]) -> Vec<&'a dyn CaptionMetric> {
    let mut out: Vec<&'a dyn CaptionMetric> = vec![primary];
    let with_refs = val.iter().all(|v| v.references.is_some());
    let builtins: [&'a dyn CaptionMetric; 2] = [&AClipS, &RefAClipS];
    for m in builtins {
        if (with_refs || !m.needs_references()) && out.iter().all(|o| o.name() != m.name()) {
            out.push(m);
        }
    }
    out
}

/// Captions, scores and filters every training image not yet in the
/// progress file, checkpointing after each batch.
fn generate(
    cfg: &DalConfig,
    store: &Datastore,
    train: &[DalItem],
    comps: &Components,
    pending: &PendingIteration,
    dir: Option<&Path>,
) -> Result<HashMap<String, ImageProgress>> {
    let i = pending.iteration;
    let path: Option<PathBuf> = dir.map(|d| progress_path(d, i));
    let mut done: HashMap<String, ImageProgress> = HashMap::new();
    if let Some(p) = path.as_deref().filter(|p| p.exists()) {
        for entry in read_progress(p)? {
            done.insert(entry.image_id.clone(), entry);
        }
    }
    let todo: Vec<&DalItem> = train.iter().filter(|t| !done.contains_key(&t.image_id)).collect();
    let pipeline = comps.pipeline(store)?;
    let params = cfg.phase_params("train", i);
    for batch in todo.chunks(cfg.batch_size) {
        let results: Vec<Result<ImageProgress>> = batch
            .par_iter()
            .map(|item| {
                process_image(&pipeline, item, cfg, &params, pending, comps.metric)
                    .map_err(|e| e.for_item(&item.image_id))
            })
            .collect();
        let mut ok = Vec::with_capacity(results.len());
        let mut first_err = None;
        for r in results {
            match r {
                Ok(p) => ok.push(p),
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        if let Some(p) = &path {
            append_progress(p, &ok)?;
        }
        for p in ok {
            done.insert(p.image_id.clone(), p);
        }
        if let Some(e) = first_err {
            return Err(interrupted(e.in_stage("generation"), i, dir));
        }
    }
    Ok(done)
}

fn process_image(
    pipeline: &Pipeline,
    item: &DalItem,
    cfg: &DalConfig,
    params: &SamplingParams,
    pending: &PendingIteration,
    metric: &dyn CaptionMetric,
) -> Result<ImageProgress> {
    let out = pipeline.caption(&item.image, pending.threshold_k, &per_item_params(params, &item.image_id))?;
    let set = &out.candidates;
    let (indices, scores): (Vec<usize>, Vec<f64>) = if cfg.score_all_candidates {
        ((0..set.candidates.len()).collect(), score_candidates(&out, item, metric)?)
    } else {
        (vec![set.selected_index], vec![score_selected(&out, item, metric)?])
    };
    let additions = filter_candidates(&scores, pending.threshold, cfg.one_best)
        .into_iter()
        .map(|j| {
            let e = unit(set.embeddings[indices[j]].clone())?;
            Ok(Addition {
                candidate: j,
                embedding: e.iter().map(|&x| x as f32).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ImageProgress {
        image_id: item.image_id.clone(),
        shortfall: set.shortfall(),
        scored: indices
            .iter()
            .zip(&scores)
            .map(|(&j, &score)| ScoredText {
                text: set.candidates[j].text.clone(),
                score,
            })
            .collect(),
        additions,
    })
}
