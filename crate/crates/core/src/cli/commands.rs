use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use capalign::align::{fit as fit_map, mapfile, objective_values};
use capalign::captioner::{CaptionOutput, PromptTemplate, SamplingParams, TextEmbedder};
use capalign::dal::{resume_dal, run_dal, Components, DalConfig, DalItem, STATE_FILE};
use capalign::metrics::{
    attach_metrics, builtin_metric, kendall_tau, metric_column, pearson_matrix, read_judgments, read_metric_csv,
    recall_at_k, Judgment, ScoreInput, ScoreReport, TauVariant,
};
use capalign::vecstore::{self, human_records, CaptionInput, Datastore};
use capalign::{EmbeddingMatrix, Error, MapKind, Modality, Result, Scheme};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::args::*;
use super::config::{merge, ConfigFile};
use super::io::{self, required};
use super::manifest::{sibling, Recorder};

pub fn dispatch(cli: &Cli, rec: &mut Recorder) -> Result<()> {
    let file = match &cli.config {
        Some(p) => {
            rec.input(p)?;
            Some(ConfigFile::read(p)?)
        }
        None => None,
    };
    let section = |name: &str| -> Result<Map<String, Value>> {
        match &file {
            Some(f) => f.section(name),
            None => Ok(Map::new()),
        }
    };
    match &cli.command {
        Command::Fit(a) => fit(merge(section("fit")?, a)?, rec),
        Command::Store {
            command: StoreCommand::Build(a),
        } => store_build(merge(section("store_build")?, a)?, rec),
        Command::Caption(a) => caption(merge(section("caption")?, a)?, rec),
        Command::Eval { command } => match command {
            EvalCommand::Tau(a) => eval_tau(merge(section("eval_tau")?, a)?, rec),
            EvalCommand::Recall(a) => eval_recall(merge(section("eval_recall")?, a)?, rec),
            EvalCommand::Scores(a) => eval_scores(merge(section("eval_scores")?, a)?, rec),
            EvalCommand::Pearson(a) => eval_pearson(merge(section("eval_pearson")?, a)?, rec),
        },
        Command::Dal(a) => {
            let mut merged = merge(section("dal")?, a)?;
            merged.resume = a.resume.clone();
            dal(merged, rec)
        }
    }
}

#[derive(Debug, Deserialize)]
struct PairRow {
    image_id: String,
    caption_id: String,
}

#[derive(Debug, Serialize)]
struct FitReport {
    method: String,
    scheme: String,
    dataset: String,
    d: usize,
    n: usize,
    residual: f64,
    mean_residual: f64,
    cosine: f64,
    mean_cosine: f64,
    orthogonality_error: f64,
    map_fingerprint: String,
}

fn paired(images: &EmbeddingMatrix, texts: &EmbeddingMatrix, pairs: &[PairRow]) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    if pairs.is_empty() {
        return Err(Error::Empty("pair list has no rows"));
    }
    let d = images.dim();
    let mut img = Vec::with_capacity(pairs.len() * d);
    let mut txt = Vec::with_capacity(pairs.len() * d);
    for p in pairs {
        let i = images
            .position(&p.image_id)
            .ok_or_else(|| Error::UnknownId(format!("pair names image {} missing from the image file", p.image_id)))?;
        let t = texts
            .position(&p.caption_id)
            .ok_or_else(|| Error::UnknownId(format!("pair names caption {} missing from the text file", p.caption_id)))?;
        img.extend_from_slice(images.row(i));
        txt.extend_from_slice(texts.row(t));
    }
    let ids: Vec<String> = (0..pairs.len()).map(|i| i.to_string()).collect();
    Ok((
        EmbeddingMatrix::new(ids.clone(), img, d, Modality::Image)?,
        EmbeddingMatrix::new(ids, txt, d, Modality::Text)?,
    ))
}

fn fit(mut a: FitArgs, rec: &mut Recorder) -> Result<()> {
    let images_path = required(&a.images, "images")?.clone();
    let texts_path = required(&a.texts, "texts")?.clone();
    let out = required(&a.out, "out")?.clone();
    let method: MapKind = a.method.get_or_insert_with(|| "procrustes".into()).parse()?;
    let scheme: Scheme = a.scheme.get_or_insert_with(|| "center".into()).parse()?;
    let dataset = a
        .dataset
        .get_or_insert_with(|| file_stem(&images_path))
        .clone();
    rec.config(&a)?;
    rec.default_dest(sibling(&out, "run.json"));
    rec.input(&images_path)?;
    rec.input(&texts_path)?;

    let images = io::read_embeddings(&images_path, Modality::Image)?;
    let texts = io::read_embeddings(&texts_path, Modality::Text)?;
    if images.dim() != texts.dim() {
        return Err(Error::InvalidArgument(format!(
            "image embeddings have d={} but text embeddings have d={}",
            images.dim(),
            texts.dim()
        )));
    }
    let (images, texts) = match &a.pairs {
        Some(p) => {
            rec.input(p)?;
            paired(&images, &texts, &io::read_csv(p)?)?
        }
        None => {
            if images.len() != texts.len() {
                return Err(Error::CountMismatch {
                    left: images.len(),
                    right: texts.len(),
                });
            }
            (images, texts)
        }
    };
    let n = images.len();
    let (map, pre_texts, pre_images) = fit_map(method, scheme, texts, images)?;
    let map = map.with_fitted_on(dataset.clone());
    let obj = objective_values(&map, &pre_texts, &pre_images)?;
    let report = FitReport {
        method: a.method.clone().unwrap_or_default(),
        scheme: a.scheme.clone().unwrap_or_default(),
        dataset,
        d: map.dim(),
        n,
        residual: obj.residual_sum,
        mean_residual: obj.residual_sum / n as f64,
        cosine: obj.cosine_sum,
        mean_cosine: obj.cosine_sum / n as f64,
        orthogonality_error: map.orthogonality_error(),
        map_fingerprint: map.fingerprint(),
    };
    mapfile::write(&out, &map)?;
    rec.output(&out);
    let report_path = sibling(&out, "report.json");
    io::write_json(&report_path, &report)?;
    rec.output(&report_path);
    println!(
        "fitted {} map on {n} pairs, d={}: mean cosine {:.6}, mean residual {:.6}",
        report.method, report.d, report.mean_cosine, report.mean_residual
    );
    Ok(())
}

fn store_build(mut a: StoreBuildArgs, rec: &mut Recorder) -> Result<()> {
    let map_path = required(&a.map, "map")?.clone();
    let texts_path = required(&a.texts, "texts")?.clone();
    let captions_path = required(&a.captions, "captions")?.clone();
    let out = required(&a.out, "out")?.clone();
    let dataset = a.dataset.get_or_insert_with(|| file_stem(&captions_path)).clone();
    rec.config(&a)?;
    rec.default_dest(sibling(&out, "run.json"));
    for p in [&map_path, &texts_path, &captions_path] {
        rec.input(p)?;
    }
    if out.join(vecstore_manifest()).exists() {
        return Err(Error::InvalidArgument(format!("{} already holds a datastore", out.display())));
    }

    let map = mapfile::read(&map_path)?;
    let texts = io::read_embeddings(&texts_path, Modality::Text)?;
    let mut by_id: HashMap<String, CaptionInput> = HashMap::new();
    for c in io::read_csv::<CaptionInput>(&captions_path)? {
        let id = c.caption_id.clone();
        if by_id.insert(id.clone(), c).is_some() {
            return Err(Error::DuplicateId(id));
        }
    }
    let captions = texts
        .ids()
        .iter()
        .map(|id| {
            by_id
                .remove(id)
                .ok_or_else(|| Error::UnknownId(format!("no caption text for embedding {id}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(extra) = by_id.keys().min() {
        return Err(Error::UnknownId(format!("caption {extra} has no embedding")));
    }
    let store = Datastore::build(human_records(&map, &texts, &captions)?)?
        .with_dataset(dataset)
        .with_map_fingerprint(map.fingerprint());
    vecstore::save(&store, &out)?;
    rec.output(&out);
    println!("datastore {} holds {} captions", out.display(), store.len());
    Ok(())
}

fn vecstore_manifest() -> &'static str {
    "manifest.json"
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Fills defaults in place and returns the sampling parameters and template.
fn generation_settings(g: &mut GenerationArgs) -> Result<(SamplingParams, PromptTemplate)> {
    let d = SamplingParams::default();
    let params = SamplingParams {
        num_samples: *g.l.get_or_insert(d.num_samples),
        temperature: *g.temperature.get_or_insert(d.temperature),
        top_p: *g.top_p.get_or_insert(d.top_p),
        max_tokens: *g.max_tokens.get_or_insert(d.max_tokens),
        seed: g.seed,
    };
    params.validate()?;
    g.k.get_or_insert(13);
    let template = PromptTemplate {
        ordering: g.ordering.get_or_insert_with(|| "worst_to_best".into()).parse()?,
        ..PromptTemplate::default()
    };
    Ok((params, template))
}

#[derive(Serialize)]
struct CaptionLine<'a> {
    image_id: &'a str,
    #[serde(flatten)]
    output: &'a CaptionOutput,
}

fn caption(mut a: CaptionArgs, rec: &mut Recorder) -> Result<()> {
    let map_path = required(&a.map, "map")?.clone();
    let store_path = required(&a.store, "store")?.clone();
    let images_path = required(&a.image_emb, "image-emb")?.clone();
    let out = required(&a.out, "out")?.clone();
    let gen_url = required(&a.generation.generator_url, "generator-url")?.clone();
    let emb_url = required(&a.generation.embedder_url, "embedder-url")?.clone();
    let (params, template) = generation_settings(&mut a.generation)?;
    let k = a.generation.k.unwrap_or(13);
    rec.config(&a)?;
    rec.default_dest(sibling(&out, "run.json"));
    for p in [&map_path, &store_path, &images_path] {
        rec.input(p)?;
    }

    let map = mapfile::read(&map_path)?;
    let store = io::load_store(&store_path, &map)?;
    let images = io::read_embeddings(&images_path, Modality::Image)?;
    let generator = io::generator(&gen_url, &template)?;
    let embedder = io::embedder(&emb_url, map.dim())?;
    let pipeline = capalign::captioner::Pipeline::new(&map, &store, &template, &*generator, &embedder)?;
    let outputs = pipeline.caption_all(&images, k, &params, io::jobs(a.generation.jobs))?;

    let mut buf = Vec::new();
    for (id, o) in images.ids().iter().zip(&outputs) {
        serde_json::to_writer(&mut buf, &CaptionLine { image_id: id, output: o })?;
        buf.push(b'\n');
    }
    capalign::write_atomic(&out, &buf)?;
    rec.output(&out);
    eprintln!("captioned {} images with k={k}", outputs.len());
    Ok(())
}

fn judgments_with_metrics(judgments: &Path, metrics_csv: Option<&PathBuf>, rec: &mut Recorder) -> Result<Vec<Judgment>> {
    rec.input(judgments)?;
    let mut js = read_judgments(judgments)?;
    if js.is_empty() {
        return Err(Error::Empty("judgment file has no rows"));
    }
    if let Some(p) = metrics_csv {
        rec.input(p)?;
        attach_metrics(&mut js, &read_metric_csv(p)?)?;
    }
    Ok(js)
}

fn metric_names(js: &[Judgment]) -> Vec<String> {
    let names: BTreeSet<&String> = js.iter().flat_map(|j| j.metric_scores.keys()).collect();
    names.into_iter().cloned().collect()
}

fn finish_output(out: Option<&PathBuf>, value: &impl Serialize, rec: &mut Recorder) -> Result<()> {
    if let Some(p) = out {
        io::write_json(p, value)?;
        rec.output(p);
        rec.default_dest(sibling(p, "run.json"));
    }
    Ok(())
}

#[derive(Serialize)]
struct TauOutput {
    variant: TauVariant,
    n: usize,
    tau: std::collections::BTreeMap<String, f64>,
}

fn eval_tau(mut a: TauArgs, rec: &mut Recorder) -> Result<()> {
    let judgments = required(&a.judgments, "judgments")?.clone();
    let variant: TauVariant = a.variant.get_or_insert_with(|| "b".into()).parse()?;
    rec.config(&a)?;
    let js = judgments_with_metrics(&judgments, a.metrics_csv.as_ref(), rec)?;
    let names = match &a.metric {
        Some(m) => vec![m.clone()],
        None => metric_names(&js),
    };
    if names.is_empty() {
        return Err(Error::Empty("judgments carry no metric scores"));
    }
    let mut tau = std::collections::BTreeMap::new();
    for name in &names {
        let (human, scores) = metric_column(&js, name)?;
        let t = kendall_tau(&scores, &human, variant).map_err(|e| e.for_item(name))?;
        tau.insert(name.clone(), t);
    }
    let mut stdout = std::io::stdout().lock();
    if a.metric.is_some() {
        writeln!(stdout, "{:.2}", tau[&names[0]] * 100.0).ok();
    } else {
        for (name, t) in &tau {
            writeln!(stdout, "{name}\t{:.2}", t * 100.0).ok();
        }
    }
    let out = TauOutput {
        variant,
        n: js.len(),
        tau,
    };
    finish_output(a.out.as_ref(), &out, rec)
}

fn print_reports(reports: &[&ScoreReport]) {
    let mut stdout = std::io::stdout().lock();
    for r in reports {
        writeln!(stdout, "{}\t{:.4}\t{:.4}\t{}", r.metric_name, r.mean, r.stderr, r.len()).ok();
    }
}

fn eval_recall(mut a: RecallArgs, rec: &mut Recorder) -> Result<()> {
    let map_path = required(&a.map, "map")?.clone();
    let store_path = required(&a.store, "store")?.clone();
    let images_path = required(&a.images, "images")?.clone();
    let gold_path = required(&a.gold, "gold")?.clone();
    let ks = a.ks.get_or_insert_with(|| vec![1, 5, 10]).clone();
    rec.config(&a)?;
    for p in [&map_path, &store_path, &images_path, &gold_path] {
        rec.input(p)?;
    }
    let map = mapfile::read(&map_path)?;
    let store = io::load_store(&store_path, &map)?;
    let images = io::read_embeddings(&images_path, Modality::Image)?;
    let mut gold: HashMap<String, Vec<String>> = HashMap::new();
    for row in io::read_csv::<PairRow>(&gold_path)? {
        gold.entry(row.image_id).or_default().push(row.caption_id);
    }
    let reports = recall_at_k(&images, &store, &gold, &ks, &map)?;
    print_reports(&reports.iter().map(|(_, r)| r).collect::<Vec<_>>());
    let reports: Vec<&ScoreReport> = reports.iter().map(|(_, r)| r).collect();
    finish_output(a.out.as_ref(), &reports, rec)
}

#[derive(Debug, Deserialize)]
struct CandidateRow {
    #[serde(default)]
    id: Option<String>,
    image_id: String,
    candidate: String,
}

fn eval_scores(mut a: ScoresArgs, rec: &mut Recorder) -> Result<()> {
    let map_path = required(&a.map, "map")?.clone();
    let images_path = required(&a.images, "images")?.clone();
    let candidates_path = required(&a.candidates, "candidates")?.clone();
    let emb_url = required(&a.embedder_url, "embedder-url")?.clone();
    let metric = builtin_metric(a.metric.get_or_insert_with(|| "aclip-s".into()))?;
    rec.config(&a)?;
    for p in [&map_path, &images_path, &candidates_path] {
        rec.input(p)?;
    }
    let rows: Vec<(usize, CandidateRow)> = io::read_jsonl(&candidates_path)?;
    if rows.is_empty() {
        return Err(Error::Empty("candidate file has no rows"));
    }
    let map = mapfile::read(&map_path)?;
    let images = io::read_embeddings(&images_path, Modality::Image)?;
    let embedder = io::embedder(&emb_url, map.dim())?;
    let refs = match &a.references {
        Some(p) => {
            rec.input(p)?;
            io::read_references(p, &map, &embedder)?
        }
        None if metric.needs_references() => {
            return Err(Error::InvalidArgument(format!("{} needs --references", metric.name())));
        }
        None => HashMap::new(),
    };

    let texts: Vec<String> = rows.iter().map(|(_, r)| r.candidate.clone()).collect();
    let raw = embedder.embed(&texts)?;
    let mut aligned: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut per_item = Vec::with_capacity(rows.len());
    for ((line, row), vec) in rows.iter().zip(raw) {
        let id = row.id.clone().unwrap_or_else(|| line.to_string());
        if !aligned.contains_key(row.image_id.as_str()) {
            let i = images
                .position(&row.image_id)
                .ok_or_else(|| Error::UnknownId(format!("image {} is not in {}", row.image_id, images_path.display())))?;
            aligned.insert(&row.image_id, map.apply(images.row(i))?);
        }
        let candidate_vec = map.prepare_text(&vec)?;
        let score = metric
            .score(&ScoreInput {
                image_id: &row.image_id,
                text: &row.candidate,
                candidate_vec: &candidate_vec,
                aligned_image: &aligned[row.image_id.as_str()],
                references: refs.get(&row.image_id),
            })
            .map_err(|e| e.for_item(&id))?;
        per_item.push((id, score));
    }
    let report = ScoreReport::new(metric.name(), per_item)?;
    print_reports(&[&report]);
    finish_output(a.out.as_ref(), &report, rec)
}

fn eval_pearson(mut a: PearsonArgs, rec: &mut Recorder) -> Result<()> {
    let judgments = required(&a.judgments, "judgments")?.clone();
    let no_human = *a.no_human.get_or_insert(false);
    rec.config(&a)?;
    let js = judgments_with_metrics(&judgments, a.metrics_csv.as_ref(), rec)?;
    let mut columns = Vec::new();
    if !no_human {
        columns.push(("human".to_string(), js.iter().map(|j| j.human_score).collect()));
    }
    for name in metric_names(&js) {
        let (_, scores) = metric_column(&js, &name)?;
        columns.push((name, scores));
    }
    let m = pearson_matrix(&columns)?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "\t{}", m.names.join("\t")).ok();
    for (name, row) in m.names.iter().zip(&m.values) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
        writeln!(stdout, "{name}\t{}", cells.join("\t")).ok();
    }
    finish_output(a.out.as_ref(), &m, rec)
}

const INPUTS_FILE: &str = "inputs.json";

fn dal(a: DalArgs, rec: &mut Recorder) -> Result<()> {
    let (mut a, dir, resuming) = match &a.resume {
        Some(dir) => {
            let p = dir.join(INPUTS_FILE);
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let mut saved: Map<String, Value> =
                serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
            if let Value::Object(given) = serde_json::to_value(&a)? {
                saved.extend(given);
            }
            let merged: DalArgs = serde_json::from_value(Value::Object(saved))?;
            (merged, dir.clone(), true)
        }
        None => {
            let dir = required(&a.checkpoint, "checkpoint")?.clone();
            (a, dir, false)
        }
    };
    let map_path = io::absolute(required(&a.map, "map")?);
    let store_path = io::absolute(required(&a.store, "store")?);
    let train_path = io::absolute(required(&a.train_images, "train-images")?);
    let val_path = io::absolute(required(&a.val_images, "val-images")?);
    let refs_path = a.val_references.as_deref().map(io::absolute);
    let gen_url = required(&a.generation.generator_url, "generator-url")?.clone();
    let emb_url = required(&a.generation.embedder_url, "embedder-url")?.clone();
    a.map = Some(map_path.clone());
    a.store = Some(store_path.clone());
    a.train_images = Some(train_path.clone());
    a.val_images = Some(val_path.clone());
    a.val_references = refs_path.clone();
    a.checkpoint = Some(io::absolute(&dir));

    let defaults = DalConfig::default();
    let (generation, template) = generation_settings(&mut a.generation)?;
    let cfg = DalConfig {
        iterations: *a.iterations.get_or_insert(defaults.iterations),
        metric: a.metric.get_or_insert(defaults.metric).clone(),
        k_grid: a.k_grid.get_or_insert(defaults.k_grid).clone(),
        initial_k: a.generation.k.unwrap_or(defaults.initial_k),
        generation: SamplingParams {
            seed: None,
            ..generation
        },
        one_best: !*a.all_passing.get_or_insert(false),
        score_all_candidates: defaults.score_all_candidates,
        seed: a.generation.seed.unwrap_or(defaults.seed),
        jobs: a.generation.jobs.unwrap_or(0),
        batch_size: *a.batch_size.get_or_insert(defaults.batch_size),
    };
    cfg.validate()?;
    rec.config(&serde_json::json!({ "inputs": &a, "dal": &cfg }))?;
    rec.default_dest(next_manifest_path(&dir));
    for p in [&map_path, &store_path, &train_path, &val_path] {
        rec.input(p)?;
    }
    if let Some(p) = &refs_path {
        rec.input(p)?;
    }
    if !resuming {
        if dir.join(STATE_FILE).exists() {
            return Err(Error::InvalidArgument(format!(
                "{} already holds a DAL run; continue it with --resume",
                dir.display()
            )));
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        io::write_json(&dir.join(INPUTS_FILE), &a)?;
    }

    let map = mapfile::read(&map_path)?;
    let store = io::load_store(&store_path, &map)?;
    let embedder = io::embedder(&emb_url, map.dim())?;
    let mut train_refs = io::store_references(&store)?;
    let mut val_refs = match &refs_path {
        Some(p) => io::read_references(p, &map, &embedder)?,
        None => HashMap::new(),
    };
    let train = items(&io::read_embeddings(&train_path, Modality::Image)?, &mut train_refs);
    let val = items(&io::read_embeddings(&val_path, Modality::Image)?, &mut val_refs);
    let generator = io::generator(&gen_url, &template)?;
    let metric = builtin_metric(&cfg.metric)?;
    let comps = Components {
        map: &map,
        template: &template,
        generator: &*generator,
        embedder: &embedder as &dyn TextEmbedder,
        metric: &*metric,
    };
    let outcome = if resuming {
        resume_dal(&dir, Some(&cfg), &train, &val, &comps)?
    } else {
        run_dal(&cfg, store, &train, &val, &comps, Some(&dir))?
    };
    rec.output(&dir);
    let mut stdout = std::io::stdout().lock();
    for r in &outcome.state.history {
        writeln!(
            stdout,
            "iteration {}: threshold {:.4} at k={}, added {} of {} candidates, chosen k={}, datastore {} ({} captions)",
            r.iteration,
            r.validation_mean,
            r.threshold_k,
            r.candidates_added,
            r.candidates_generated,
            r.chosen_k,
            r.datastore_version,
            r.datastore_size
        )
        .ok();
    }
    writeln!(stdout, "final datastore: {}", outcome.state.store_dir(&dir).display()).ok();
    Ok(())
}

fn items(images: &EmbeddingMatrix, refs: &mut HashMap<String, capalign::metrics::ReferenceSet>) -> Vec<DalItem> {
    images
        .ids()
        .iter()
        .zip(images.rows())
        .map(|(id, row)| DalItem {
            image_id: id.clone(),
            image: row.to_vec(),
            references: refs.remove(id),
        })
        .collect()
}

/// `run_manifest_<n>.json` with the first unused `n`, so resumed runs keep
/// the manifests of earlier invocations.
fn next_manifest_path(dir: &Path) -> PathBuf {
    (1..)
        .map(|n| dir.join(format!("run_manifest_{n}.json")))
        .find(|p| !p.exists())
        .expect("unbounded range")
}
