//! Python bindings: alignment maps, EMBX files, the caption datastore,
//! retrieval-augmented captioning, metrics and the self-training loop.

use std::path::PathBuf;

use capalign::align::{self, mapfile};
use capalign::captioner::{
    CachedEmbedder, Generator, HttpEmbedder, HttpGenerator, MockEmbedder, MockGenerator, Pipeline, PromptTemplate,
    SamplingParams, TextEmbedder,
};
use capalign::dal::{self, Components, DalConfig, DalItem};
use capalign::metrics::{self, AClipS, TauVariant};
use capalign::vecstore::{self, CaptionInput};
use capalign::{embx, EmbeddingMatrix, Error, ErrorClass, MapKind, Modality, Scheme};
use pyo3::exceptions::{PyConnectionError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e.class() {
        ErrorClass::Validation => PyValueError::new_err(e.to_string()),
        ErrorClass::Service => PyConnectionError::new_err(e.to_string()),
        ErrorClass::Numerical | ErrorClass::Internal => PyRuntimeError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for capalign::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn modality(name: &str) -> PyResult<Modality> {
    match name {
        "image" => Ok(Modality::Image),
        "text" => Ok(Modality::Text),
        other => Err(PyValueError::new_err(format!("modality must be 'image' or 'text', got {other:?}"))),
    }
}

fn modality_name(m: Modality) -> &'static str {
    match m {
        Modality::Image => "image",
        Modality::Text => "text",
    }
}

fn matrix(ids: Vec<String>, rows: Vec<Vec<f64>>, m: Modality) -> PyResult<EmbeddingMatrix> {
    let dim = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != dim) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    EmbeddingMatrix::new(ids, rows.concat(), dim, m).py()
}

fn rows(m: &EmbeddingMatrix) -> Vec<Vec<f64>> {
    m.rows().map(<[f64]>::to_vec).collect()
}

/// Default row ids "0", "1", ... when none are given.
fn ids_or_index(ids: Option<Vec<String>>, n: usize) -> Vec<String> {
    ids.unwrap_or_else(|| (0..n).map(|i| i.to_string()).collect())
}

fn to_python<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn generator(url: &str, template: &PromptTemplate) -> PyResult<Box<dyn Generator>> {
    Ok(match url {
        "mock" | "mock:resample" => Box::new(MockGenerator::Resample(template.clone())),
        "mock:echo" => Box::new(MockGenerator::Echo(template.clone())),
        "mock:hash" => Box::new(MockGenerator::Hash),
        u if u.starts_with("http://") || u.starts_with("https://") => Box::new(HttpGenerator::new(u)),
        other => return Err(PyValueError::new_err(format!("unsupported generator {other:?}"))),
    })
}

fn embedder(url: &str, dim: usize) -> PyResult<CachedEmbedder<Box<dyn TextEmbedder>>> {
    let inner: Box<dyn TextEmbedder> = if url == "mock" {
        Box::new(MockEmbedder { dim, seed: 0 })
    } else if let Some(seed) = url.strip_prefix("mock:") {
        let seed = seed
            .parse()
            .map_err(|_| PyValueError::new_err(format!("mock embedder seed {seed:?} is not an integer")))?;
        Box::new(MockEmbedder { dim, seed })
    } else if url.starts_with("http://") || url.starts_with("https://") {
        Box::new(HttpEmbedder::new(url))
    } else {
        return Err(PyValueError::new_err(format!("unsupported embedder {url:?}")));
    };
    Ok(CachedEmbedder::new(inner))
}

/// A fitted linear map from image space into text space.
#[pyclass(name = "AlignmentMap", module = "capalign_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyAlignmentMap {
    inner: capalign::AlignmentMap,
}

#[pymethods]
impl PyAlignmentMap {
    /// Fits on paired rows: `texts[i]` describes `images[i]`.
    #[staticmethod]
    #[pyo3(signature = (texts, images, method = "procrustes", scheme = "center"))]
    fn fit(py: Python<'_>, texts: Vec<Vec<f64>>, images: Vec<Vec<f64>>, method: &str, scheme: &str) -> PyResult<Self> {
        let method: MapKind = method.parse().py()?;
        let scheme: Scheme = scheme.parse().py()?;
        let ids = ids_or_index(None, texts.len());
        let t = matrix(ids.clone(), texts, Modality::Text)?;
        let i = matrix(ids, images, Modality::Image)?;
        let (map, _, _) = py.detach(|| align::fit(method, scheme, t, i)).py()?;
        Ok(PyAlignmentMap { inner: map })
    }

    #[staticmethod]
    fn identity(dim: usize) -> Self {
        PyAlignmentMap {
            inner: capalign::AlignmentMap::identity(dim),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyAlignmentMap {
            inner: mapfile::read(path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        mapfile::write(path, &self.inner).py()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn kind(&self) -> String {
        format!("{:?}", self.inner.kind()).to_lowercase()
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn orthogonality_error(&self) -> f64 {
        self.inner.orthogonality_error()
    }

    /// `W` as a list of rows.
    fn matrix(&self) -> Vec<Vec<f64>> {
        self.inner.matrix().chunks(self.inner.dim()).map(<[f64]>::to_vec).collect()
    }

    /// Preprocesses a raw image embedding and maps it into text space.
    fn apply(&self, image: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.apply(&image).py()
    }

    fn prepare_text(&self, text: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.prepare_text(&text).py()
    }

    fn __repr__(&self) -> String {
        format!("AlignmentMap(kind={:?}, dim={})", self.kind(), self.dim())
    }
}

type EmbxContents = (Vec<String>, Vec<Vec<f64>>, &'static str);

/// Reads an EMBX file as `(ids, rows, modality)`.
#[pyfunction]
fn read_embx(path: PathBuf) -> PyResult<EmbxContents> {
    let m = embx::read(path).py()?;
    Ok((m.ids().to_vec(), rows(&m), modality_name(m.modality())))
}

#[pyfunction]
#[pyo3(signature = (path, rows, modality, ids = None))]
fn write_embx(path: PathBuf, rows: Vec<Vec<f64>>, modality: &str, ids: Option<Vec<String>>) -> PyResult<()> {
    let ids = ids_or_index(ids, rows.len());
    let m = matrix(ids, rows, self::modality(modality)?)?;
    embx::write(path, &m).py()
}

/// Caption datastore searched by cosine similarity.
#[pyclass(name = "Datastore", module = "capalign_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDatastore {
    inner: vecstore::Datastore,
}

#[pymethods]
impl PyDatastore {
    /// Builds a human-caption store from raw text embeddings, preprocessed
    /// with `map`.
    #[staticmethod]
    #[pyo3(signature = (map, caption_ids, texts, embeddings, image_ids = None, dataset = "default"))]
    fn build(
        map: &PyAlignmentMap,
        caption_ids: Vec<String>,
        texts: Vec<String>,
        embeddings: Vec<Vec<f64>>,
        image_ids: Option<Vec<Option<String>>>,
        dataset: &str,
    ) -> PyResult<Self> {
        if texts.len() != caption_ids.len() {
            return Err(PyValueError::new_err("caption_ids and texts differ in length"));
        }
        let image_ids = image_ids.unwrap_or_else(|| vec![None; texts.len()]);
        if image_ids.len() != texts.len() {
            return Err(PyValueError::new_err("image_ids and texts differ in length"));
        }
        let captions: Vec<CaptionInput> = caption_ids
            .iter()
            .zip(texts)
            .zip(image_ids)
            .map(|((id, text), image_id)| CaptionInput {
                caption_id: id.clone(),
                text,
                image_id,
            })
            .collect();
        let m = matrix(caption_ids, embeddings, Modality::Text)?;
        let records = vecstore::human_records(&map.inner, &m, &captions).py()?;
        let store = vecstore::Datastore::build(records)
            .py()?
            .with_dataset(dataset)
            .with_map_fingerprint(map.inner.fingerprint());
        Ok(PyDatastore { inner: store })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyDatastore {
            inner: vecstore::load(path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        vecstore::save(&self.inner, path).py()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// Store counts and provenance as a dict.
    fn manifest<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_python(py, &self.inner.manifest())
    }

    /// `(caption_id, text, score)` for the `k` best matches, best first.
    fn topk(&self, query: Vec<f64>, k: usize) -> PyResult<Vec<(String, String, f64)>> {
        let hits = self.inner.topk(&query, k).py()?;
        Ok(hits
            .iter()
            .map(|h| {
                let r = self.inner.record(h.index);
                (r.caption_id.clone(), r.text.clone(), h.score)
            })
            .collect())
    }

    /// Record metadata, one dict per caption in store order.
    fn records<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_python(py, &self.inner.records())
    }
}

fn sampling(num_samples: usize, temperature: f64, top_p: f64, max_tokens: usize, seed: Option<u64>) -> SamplingParams {
    SamplingParams {
        num_samples,
        temperature,
        top_p,
        max_tokens,
        seed,
    }
}

/// Captions each image: retrieve `k` captions, prompt the generator, embed
/// the candidates and keep the best aligned one. Returns one trace dict per
/// image.
#[pyfunction]
#[pyo3(signature = (
    map, store, images, k = 13, generator = "mock", embedder = "mock",
    num_samples = 10, temperature = 0.1, top_p = 0.9, max_tokens = 40, seed = None, jobs = 0,
))]
#[allow(clippy::too_many_arguments)]
fn caption<'py>(
    py: Python<'py>,
    map: &PyAlignmentMap,
    store: &PyDatastore,
    images: Vec<Vec<f64>>,
    k: usize,
    generator: &str,
    embedder: &str,
    num_samples: usize,
    temperature: f64,
    top_p: f64,
    max_tokens: usize,
    seed: Option<u64>,
    jobs: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let template = PromptTemplate::default();
    let gen = self::generator(generator, &template)?;
    let emb = self::embedder(embedder, map.inner.dim())?;
    let ids = ids_or_index(None, images.len());
    let images = matrix(ids, images, Modality::Image)?;
    let params = sampling(num_samples, temperature, top_p, max_tokens, seed);
    let jobs = if jobs == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        jobs
    };
    let outputs = py
        .detach(|| {
            let pipeline = Pipeline::new(&map.inner, &store.inner, &template, &*gen, &emb)?;
            pipeline.caption_all(&images, k, &params, jobs)
        })
        .py()?;
    to_python(py, &outputs)
}

/// Kendall rank correlation, variant "b" or "c", unscaled.
#[pyfunction]
#[pyo3(signature = (x, y, variant = "b"))]
fn kendall_tau(x: Vec<f64>, y: Vec<f64>, variant: &str) -> PyResult<f64> {
    match variant.parse::<TauVariant>().py()? {
        TauVariant::B => metrics::kendall_tau_b(&x, &y).py(),
        TauVariant::C => metrics::kendall_tau_c(&x, &y).py(),
    }
}

/// `max(cos(candidate, W image), 0)` for a preprocessed candidate embedding
/// and a raw image embedding.
#[pyfunction]
fn aclip_s(candidate: Vec<f64>, image: Vec<f64>, map: &PyAlignmentMap) -> PyResult<f64> {
    metrics::aclip_s(&candidate, &image, &map.inner).py()
}

/// Harmonic mean of the aligned score and the best reference similarity.
#[pyfunction]
fn ref_aclip_s(candidate: Vec<f64>, references: Vec<Vec<f64>>, image: Vec<f64>, map: &PyAlignmentMap) -> PyResult<f64> {
    let texts = (0..references.len()).map(|i| format!("ref{i}")).collect();
    let refs = metrics::ReferenceSet::new("image", texts, references).py()?;
    metrics::ref_aclip_s(&candidate, &refs, &image, &map.inner).py()
}

#[pyfunction]
fn harmonic_mean(a: f64, b: f64) -> f64 {
    metrics::harmonic_mean(a, b)
}

fn dal_items(ids: Vec<String>, images: Vec<Vec<f64>>) -> PyResult<Vec<DalItem>> {
    if ids.len() != images.len() {
        return Err(PyValueError::new_err("image ids and vectors differ in length"));
    }
    Ok(ids
        .into_iter()
        .zip(images)
        .map(|(image_id, image)| DalItem {
            image_id,
            image,
            references: None,
        })
        .collect())
}

/// Grows `store` with self-generated captions scored by aCLIP-S.
///
/// Returns the final datastore and the per-iteration reports. With
/// `checkpoint`, progress is persisted there and `resume=True` continues an
/// interrupted run.
#[pyfunction]
#[pyo3(signature = (
    map, store, train_ids, train_images, val_ids, val_images, iterations = 5, k_grid = None,
    initial_k = 13, num_samples = 10, seed = 0, generator = "mock", embedder = "mock",
    checkpoint = None, resume = false, jobs = 0,
))]
#[allow(clippy::too_many_arguments)]
fn run_dal<'py>(
    py: Python<'py>,
    map: &PyAlignmentMap,
    store: &PyDatastore,
    train_ids: Vec<String>,
    train_images: Vec<Vec<f64>>,
    val_ids: Vec<String>,
    val_images: Vec<Vec<f64>>,
    iterations: u32,
    k_grid: Option<Vec<usize>>,
    initial_k: usize,
    num_samples: usize,
    seed: u64,
    generator: &str,
    embedder: &str,
    checkpoint: Option<PathBuf>,
    resume: bool,
    jobs: usize,
) -> PyResult<(PyDatastore, Bound<'py, PyAny>)> {
    let defaults = DalConfig::default();
    let cfg = DalConfig {
        iterations,
        k_grid: k_grid.unwrap_or(defaults.k_grid.clone()),
        initial_k,
        generation: SamplingParams {
            num_samples,
            ..Default::default()
        },
        seed,
        jobs,
        ..defaults
    };
    let train = dal_items(train_ids, train_images)?;
    let val = dal_items(val_ids, val_images)?;
    let template = PromptTemplate::default();
    let gen = self::generator(generator, &template)?;
    let emb = self::embedder(embedder, map.inner.dim())?;
    let comps = Components {
        map: &map.inner,
        template: &template,
        generator: &*gen,
        embedder: &emb,
        metric: &AClipS,
    };
    let outcome = py
        .detach(|| match (&checkpoint, resume) {
            (Some(dir), true) => dal::resume_dal(dir, Some(&cfg), &train, &val, &comps),
            (None, true) => Err(Error::InvalidArgument("resume needs a checkpoint directory".into())),
            (dir, false) => dal::run_dal(&cfg, store.inner.clone(), &train, &val, &comps, dir.as_deref()),
        })
        .py()?;
    let history = to_python(py, &outcome.state.history)?;
    Ok((PyDatastore { inner: outcome.store }, history))
}

#[pymodule]
fn capalign_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyAlignmentMap>()?;
    m.add_class::<PyDatastore>()?;
    m.add_function(wrap_pyfunction!(read_embx, m)?)?;
    m.add_function(wrap_pyfunction!(write_embx, m)?)?;
    m.add_function(wrap_pyfunction!(caption, m)?)?;
    m.add_function(wrap_pyfunction!(kendall_tau, m)?)?;
    m.add_function(wrap_pyfunction!(aclip_s, m)?)?;
    m.add_function(wrap_pyfunction!(ref_aclip_s, m)?)?;
    m.add_function(wrap_pyfunction!(harmonic_mean, m)?)?;
    m.add_function(wrap_pyfunction!(run_dal, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
