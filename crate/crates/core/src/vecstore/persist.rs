//! Store directories: `manifest.json`, `records.jsonl`, `embeddings.embx`
//! (rows in `records.jsonl` order) and `audit.jsonl`, with a CRC-32 for each
//! data file recorded in the manifest.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AuditEntry, CaptionRecord, Datastore, RecordMeta};
use crate::embedding::{EmbeddingMatrix, Modality};
use crate::error::{Error, Result};
use crate::{embx, util};

pub const FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const RECORDS: &str = "records.jsonl";
const EMBEDDINGS: &str = "embeddings.embx";
const AUDIT: &str = "audit.jsonl";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    format_version: u32,
    dataset: String,
    d: usize,
    counts: Counts,
    map_fingerprint: Option<String>,
    crc32: BTreeMap<String, u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Counts {
    human: usize,
    synthetic: usize,
}

fn jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    Ok(out)
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(bytes: &[u8], what: &str) -> Result<Vec<T>> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Format(format!("{what} is not UTF-8")))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Format(format!("{what} line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn save(store: &Datastore, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let records = jsonl(&store.records)?;
    let audit = jsonl(&store.audit)?;
    let ids = store.records.iter().map(|r| r.caption_id.clone()).collect();
    let data = store.rows.iter().map(|&x| x as f64).collect();
    let embeddings = embx::encode(&EmbeddingMatrix::new(ids, data, store.dim, Modality::Text)?)?;

    let mut crc32 = BTreeMap::new();
    for (name, bytes) in [(RECORDS, &records), (EMBEDDINGS, &embeddings), (AUDIT, &audit)] {
        crc32.insert(name.to_string(), crc32fast::hash(bytes));
        util::write_atomic(dir.join(name), bytes)?;
    }
    let m = store.manifest();
    let manifest = ManifestFile {
        format_version: FORMAT_VERSION,
        dataset: m.dataset,
        d: m.d,
        counts: Counts {
            human: m.human,
            synthetic: m.synthetic,
        },
        map_fingerprint: m.map_fingerprint,
        crc32,
    };
    // The manifest goes last so a partially written directory never validates.
    util::write_atomic(dir.join(MANIFEST), &serde_json::to_vec_pretty(&manifest)?)
}

pub fn load(dir: impl AsRef<Path>) -> Result<Datastore> {
    let dir = dir.as_ref();
    let read = |name: &str| {
        let p = dir.join(name);
        std::fs::read(&p).map_err(|e| Error::io(p, e))
    };
    let manifest: ManifestFile = serde_json::from_slice(&read(MANIFEST)?)
        .map_err(|e| Error::Format(format!("{MANIFEST}: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            what: "datastore",
            found: manifest.format_version,
        });
    }
    let mut files = BTreeMap::new();
    for name in [RECORDS, EMBEDDINGS, AUDIT] {
        let bytes = read(name)?;
        let stored = *manifest
            .crc32
            .get(name)
            .ok_or_else(|| Error::Format(format!("manifest lacks a checksum for {name}")))?;
        let computed = crc32fast::hash(&bytes);
        if stored != computed {
            return Err(Error::Checksum {
                what: name.to_string(),
                stored,
                computed,
            });
        }
        files.insert(name, bytes);
    }

    let metas: Vec<RecordMeta> = parse_jsonl(&files[RECORDS], RECORDS)?;
    let audit: Vec<AuditEntry> = parse_jsonl(&files[AUDIT], AUDIT)?;
    let emb = embx::decode(&files[EMBEDDINGS])?;
    if emb.len() != metas.len() {
        return Err(Error::Format(format!(
            "{EMBEDDINGS} has {} rows but {RECORDS} has {}",
            emb.len(),
            metas.len()
        )));
    }
    if emb.dim() != manifest.d {
        return Err(Error::dims(EMBEDDINGS, manifest.d, emb.dim()));
    }

    let records = metas
        .into_iter()
        .zip(emb.ids().iter().zip(emb.rows()))
        .map(|(meta, (id, row))| {
            if *id != meta.caption_id {
                return Err(Error::Format(format!(
                    "row order mismatch: embedding {id:?} vs record {:?}",
                    meta.caption_id
                )));
            }
            Ok(CaptionRecord {
                caption_id: meta.caption_id,
                text: meta.text,
                embedding: row.to_vec(),
                provenance: meta.provenance,
                dal_iteration: meta.dal_iteration,
                source_image_id: meta.source_image_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut store = Datastore::build(records)?.with_dataset(manifest.dataset);
    store.map_fingerprint = manifest.map_fingerprint;
    for entry in &audit {
        if !store.contains(&entry.caption_id) {
            return Err(Error::UnknownId(entry.caption_id.clone()));
        }
    }
    store.audit = audit;
    if store.human != manifest.counts.human || store.synthetic != manifest.counts.synthetic {
        return Err(Error::Format(format!(
            "manifest counts ({} human, {} synthetic) disagree with records ({}, {})",
            manifest.counts.human, manifest.counts.synthetic, store.human, store.synthetic
        )));
    }
    Ok(store)
}
