use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use capalign::captioner::{
    CachedEmbedder, Generator, HttpEmbedder, HttpGenerator, MockEmbedder, MockGenerator, PromptTemplate, TextEmbedder,
};
use capalign::metrics::ReferenceSet;
use capalign::vecstore::{self, Datastore};
use capalign::{embx, AlignmentMap, EmbeddingMatrix, Error, Modality, Result};
use serde::de::DeserializeOwned;
use serde::Deserialize;

pub fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("--{flag} is required (flag or config key)")))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f);
    rdr.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::Format(format!("{} row {}: {e}", path.display(), i + 1))))
        .collect()
}

/// Non-blank lines with their zero-based line numbers.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push((i, v));
    }
    Ok(out)
}

/// Reads an EMBX file for a given role, re-tagging it if it was exported
/// under the other modality.
pub fn read_embeddings(path: &Path, role: Modality) -> Result<EmbeddingMatrix> {
    let m = embx::read(path)?;
    if m.modality() == role {
        return Ok(m);
    }
    eprintln!(
        "warning: {} holds {:?} embeddings; using them as {:?}",
        path.display(),
        m.modality(),
        role
    );
    EmbeddingMatrix::new(m.ids().to_vec(), m.data().to_vec(), m.dim(), role)
}

/// Loads a datastore and checks it was built with `map`.
pub fn load_store(path: &Path, map: &AlignmentMap) -> Result<Datastore> {
    let store = vecstore::load(path)?;
    if let Some(fp) = store.manifest().map_fingerprint {
        if fp != map.fingerprint() {
            return Err(Error::InvalidArgument(format!(
                "datastore {} was built with map {fp}, not the supplied map {}",
                path.display(),
                map.fingerprint()
            )));
        }
    }
    Ok(store)
}

pub fn generator(url: &str, template: &PromptTemplate) -> Result<Box<dyn Generator>> {
    Ok(match url {
        "mock" | "mock:resample" => Box::new(MockGenerator::Resample(template.clone())),
        "mock:echo" => Box::new(MockGenerator::Echo(template.clone())),
        "mock:hash" => Box::new(MockGenerator::Hash),
        u if u.starts_with("http://") || u.starts_with("https://") => Box::new(HttpGenerator::new(u)),
        other => return Err(Error::InvalidArgument(format!("unsupported generator url {other:?}"))),
    })
}

pub fn embedder(url: &str, dim: usize) -> Result<CachedEmbedder<Box<dyn TextEmbedder>>> {
    let inner: Box<dyn TextEmbedder> = if url == "mock" {
        Box::new(MockEmbedder { dim, seed: 0 })
    } else if let Some(seed) = url.strip_prefix("mock:") {
        let seed = seed
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("mock embedder seed {seed:?} is not an integer")))?;
        Box::new(MockEmbedder { dim, seed })
    } else if url.starts_with("http://") || url.starts_with("https://") {
        Box::new(HttpEmbedder::new(url))
    } else {
        return Err(Error::InvalidArgument(format!("unsupported embedder url {url:?}")));
    };
    Ok(CachedEmbedder::new(inner))
}

#[derive(Debug, Deserialize)]
pub struct ReferenceRow {
    pub image_id: String,
    pub text: String,
}

/// Reference captions per image, embedded and preprocessed with `map`.
pub fn read_references(
    path: &Path,
    map: &AlignmentMap,
    embedder: &dyn TextEmbedder,
) -> Result<HashMap<String, ReferenceSet>> {
    let mut grouped: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for row in read_csv::<ReferenceRow>(path)? {
        grouped.entry(row.image_id).or_default().push(row.text);
    }
    let all: Vec<String> = grouped.values().flatten().cloned().collect();
    let raw = embedder.embed(&all)?;
    let mut vectors = raw.into_iter();
    grouped
        .into_iter()
        .map(|(id, texts)| {
            let embs = vectors
                .by_ref()
                .take(texts.len())
                .map(|v| unit(map.prepare_text(&v)?))
                .collect::<Result<Vec<_>>>()?;
            let set = ReferenceSet::new(id.clone(), texts, embs)?;
            Ok((id, set))
        })
        .collect()
}

/// Human captions of each source image in the store, as reference sets.
pub fn store_references(store: &Datastore) -> Result<HashMap<String, ReferenceSet>> {
    let mut grouped: BTreeMap<String, (Vec<String>, Vec<Vec<f64>>)> = BTreeMap::new();
    for (i, r) in store.records().iter().enumerate() {
        let Some(img) = &r.source_image_id else { continue };
        if r.provenance != vecstore::Provenance::Human {
            continue;
        }
        let e = grouped.entry(img.clone()).or_default();
        e.0.push(r.text.clone());
        e.1.push(unit(store.embedding(i).iter().map(|&x| x as f64).collect())?);
    }
    grouped
        .into_iter()
        .map(|(id, (texts, embs))| Ok((id.clone(), ReferenceSet::new(id, texts, embs)?)))
        .collect()
}

pub fn unit(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let n = capalign::embedding::norm(&v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Numerical("zero or non-finite norm embedding".into()));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    capalign::write_atomic(path, &bytes)
}

pub fn jobs(requested: Option<usize>) -> usize {
    match requested {
        Some(n) if n > 0 => n,
        _ => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    }
}

pub fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}
