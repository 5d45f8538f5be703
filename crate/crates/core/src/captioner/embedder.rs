use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::generator::{http_agent, post_json, RetryPolicy};
use crate::error::{Error, Result};
use crate::mock;

/// Raw (not preprocessed) text embeddings, row-aligned with the input.
pub trait TextEmbedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

impl<E: TextEmbedder + ?Sized> TextEmbedder for &E {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        (**self).embed(texts)
    }
}

impl<E: TextEmbedder + ?Sized> TextEmbedder for Box<E> {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        (**self).embed(texts)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
}

/// Client for the `/v1/embed` HTTP contract.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    url: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl HttpEmbedder {
    pub fn new(base_url: &str) -> Self {
        HttpEmbedder {
            url: format!("{}/v1/embed", base_url.trim_end_matches('/')),
            agent: http_agent(Duration::from_secs(120)),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

impl TextEmbedder for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let req = EmbedRequest {
            texts: texts.to_vec(),
        };
        let resp: EmbedResponse = post_json(&self.agent, &self.url, &req, &self.retry)?;
        if resp.vectors.len() != texts.len() {
            return Err(Error::Service(format!(
                "embedder returned {} vectors for {} texts",
                resp.vectors.len(),
                texts.len()
            )));
        }
        if let Some(bad) = resp.vectors.iter().find(|v| v.len() != resp.dim) {
            return Err(Error::Service(format!(
                "embedder declared dim {} but sent a vector of length {}",
                resp.dim,
                bad.len()
            )));
        }
        Ok(resp.vectors)
    }
}

/// Hash-derived unit vectors; the text itself is the hash key.
#[derive(Debug, Clone, Copy)]
pub struct MockEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl TextEmbedder for MockEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts
            .iter()
            .map(|t| mock::mock_vector(self.seed, t, self.dim))
            .collect())
    }
}

/// Looks texts up in a fixed table, deferring unknown texts to `fallback`.
pub struct LookupEmbedder<E> {
    table: HashMap<String, Vec<f64>>,
    fallback: Option<E>,
}

impl<E: TextEmbedder> LookupEmbedder<E> {
    pub fn new(table: HashMap<String, Vec<f64>>, fallback: Option<E>) -> Self {
        LookupEmbedder { table, fallback }
    }
}

impl<E: TextEmbedder> TextEmbedder for LookupEmbedder<E> {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let missing: Vec<String> = texts
            .iter()
            .filter(|t| !self.table.contains_key(*t))
            .cloned()
            .collect();
        let extra = match (&self.fallback, missing.is_empty()) {
            (_, true) => Vec::new(),
            (Some(f), false) => f.embed(&missing)?,
            (None, false) => {
                return Err(Error::UnknownId(missing[0].clone()));
            }
        };
        if extra.len() != missing.len() {
            return Err(Error::Service(format!(
                "fallback embedder returned {} vectors for {} texts",
                extra.len(),
                missing.len()
            )));
        }
        let extra: HashMap<String, Vec<f64>> = missing.into_iter().zip(extra).collect();
        Ok(texts
            .iter()
            .map(|t| self.table.get(t).unwrap_or_else(|| &extra[t]).clone())
            .collect())
    }
}

/// Memoizes another embedder per unique string.
pub struct CachedEmbedder<E> {
    inner: E,
    cache: Mutex<HashMap<String, Vec<f64>>>,
}

impl<E: TextEmbedder> CachedEmbedder<E> {
    pub fn new(inner: E) -> Self {
        CachedEmbedder {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().unwrap().len()
    }
}

impl<E: TextEmbedder> TextEmbedder for CachedEmbedder<E> {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let mut missing: Vec<String> = {
            let cache = self.cache.lock().unwrap();
            texts.iter().filter(|t| !cache.contains_key(*t)).cloned().collect()
        };
        missing.sort();
        missing.dedup();
        if !missing.is_empty() {
            let vectors = self.inner.embed(&missing)?;
            if vectors.len() != missing.len() {
                return Err(Error::Service(format!(
                    "embedder returned {} vectors for {} texts",
                    vectors.len(),
                    missing.len()
                )));
            }
            let mut cache = self.cache.lock().unwrap();
            cache.extend(missing.into_iter().zip(vectors));
        }
        let cache = self.cache.lock().unwrap();
        Ok(texts.iter().map(|t| cache[t].clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting(AtomicUsize);

    impl TextEmbedder for Counting {
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
            self.0.fetch_add(texts.len(), Ordering::SeqCst);
            MockEmbedder { dim: 4, seed: 0 }.embed(texts)
        }
    }

    #[test]
    fn cache_embeds_each_string_once() {
        let e = CachedEmbedder::new(Counting(AtomicUsize::new(0)));
        let a = e.embed(&["x".into(), "y".into(), "x".into()]).unwrap();
        let b = e.embed(&["y".into(), "z".into()]).unwrap();
        assert_eq!(a[0], a[2]);
        assert_eq!(a[1], b[0]);
        assert_eq!(e.inner.0.load(Ordering::SeqCst), 3);
        assert_eq!(e.cached(), 3);
    }

    #[test]
    fn lookup_then_fallback() {
        let mut table = HashMap::new();
        table.insert("known".to_string(), vec![1.0, 0.0]);
        let e = LookupEmbedder::new(table.clone(), Some(MockEmbedder { dim: 2, seed: 1 }));
        let out = e.embed(&["known".into(), "other".into()]).unwrap();
        assert_eq!(out[0], vec![1.0, 0.0]);
        assert_eq!(out[1].len(), 2);
        let strict = LookupEmbedder::<MockEmbedder>::new(table, None);
        assert!(matches!(strict.embed(&["other".into()]), Err(Error::UnknownId(_))));
    }
}
