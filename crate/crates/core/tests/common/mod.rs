#![allow(dead_code)]

pub mod http;

use capalign::align::{fit, MapKind, Scheme};
use capalign::captioner::{MockEmbedder, TextEmbedder};
use capalign::dal::DalItem;
use capalign::metrics::ReferenceSet;
use capalign::vecstore::{human_records, CaptionInput, Datastore};
use capalign::{AlignmentMap, EmbeddingMatrix, Modality};
use faer::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Haar-ish random orthogonal matrix, row-major.
pub fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let g = gaussian(d * d, rng);
    let m = Mat::from_fn(d, d, |i, j| g[i * d + j]);
    let q = m.qr().compute_Q();
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = q[(i, j)];
        }
    }
    out
}

pub fn matvec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..m.len() / d)
        .map(|i| m[i * d..(i + 1) * d].iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Small captioning world: images live in a rotated, shifted copy of the
/// caption space, with a handful of captions per image.
pub struct World {
    pub dim: usize,
    pub embedder: MockEmbedder,
    pub map: AlignmentMap,
    pub store: Datastore,
    pub captions: Vec<CaptionInput>,
    pub texts: EmbeddingMatrix,
    pub train_images: EmbeddingMatrix,
    pub train: Vec<DalItem>,
    pub val: Vec<DalItem>,
}

fn caption_text(split: &str, image: usize, j: usize) -> String {
    const NOUNS: [&str; 8] = ["dog", "cat", "bike", "tree", "boat", "kite", "horse", "train"];
    const PLACES: [&str; 6] = ["on a beach", "in a park", "near a road", "by a lake", "in a field", "at night"];
    format!(
        "a {} {} ({split} {image} view {j})",
        NOUNS[(image + j) % NOUNS.len()],
        PLACES[(image * 7 + j) % PLACES.len()]
    )
}

fn image_vector(caption_vecs: &[Vec<f64>], rot: &[f64], gap: &[f64], noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let d = gap.len();
    let mut mean = vec![0.0; d];
    for v in caption_vecs {
        mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
    }
    let mean = normalize(mean);
    let mut img = matvec(rot, &mean);
    let eps = gaussian(d, rng);
    img.iter_mut()
        .zip(gap)
        .zip(eps)
        .for_each(|((x, g), e)| *x += g + noise * e);
    normalize(img)
}

fn references(embedder: &MockEmbedder, map: &AlignmentMap, image_id: &str, texts: Vec<String>) -> ReferenceSet {
    let raw = embedder.embed(&texts).unwrap();
    let prepared = raw
        .iter()
        .map(|v| normalize(map.prepare_text(v).unwrap()))
        .collect();
    ReferenceSet::new(image_id, texts, prepared).unwrap()
}

pub fn world(seed: u64, dim: usize, n_train: usize, n_val: usize, per_image: usize) -> World {
    let embedder = MockEmbedder { dim, seed };
    let mut r = rng(seed);
    let rot = random_orthogonal(dim, &mut r);
    let gap: Vec<f64> = normalize(gaussian(dim, &mut r)).iter().map(|x| 0.5 * x).collect();

    let mut captions = Vec::new();
    let mut text_rows = Vec::new();
    let mut image_rows = Vec::new();
    let mut train_texts: Vec<Vec<String>> = Vec::new();
    let mut train_vecs = Vec::new();
    for i in 0..n_train {
        let texts: Vec<String> = (0..per_image).map(|j| caption_text("train", i, j)).collect();
        let vecs = embedder.embed(&texts).unwrap();
        let img = image_vector(&vecs, &rot, &gap, 0.05, &mut r);
        for (j, (t, v)) in texts.iter().zip(&vecs).enumerate() {
            captions.push(CaptionInput {
                caption_id: format!("c{i}-{j}"),
                text: t.clone(),
                image_id: Some(format!("train{i}")),
            });
            text_rows.push(v.clone());
            image_rows.push(img.clone());
        }
        train_vecs.push(img);
        train_texts.push(texts);
    }
    let ids: Vec<String> = captions.iter().map(|c| c.caption_id.clone()).collect();
    let texts = EmbeddingMatrix::new(ids.clone(), text_rows.concat(), dim, Modality::Text).unwrap();
    let paired_images = EmbeddingMatrix::new(ids, image_rows.concat(), dim, Modality::Image).unwrap();
    let (map, _, _) = fit(MapKind::Procrustes, Scheme::NormalizeCenterRenormalize, texts.clone(), paired_images).unwrap();
    let store = Datastore::build(human_records(&map, &texts, &captions).unwrap())
        .unwrap()
        .with_dataset("toy")
        .with_map_fingerprint(map.fingerprint());

    let train: Vec<DalItem> = train_vecs
        .iter()
        .zip(train_texts)
        .enumerate()
        .map(|(i, (img, refs))| {
            let id = format!("train{i}");
            DalItem {
                references: Some(references(&embedder, &map, &id, refs)),
                image_id: id,
                image: img.clone(),
            }
        })
        .collect();
    let train_images = EmbeddingMatrix::new(
        train.iter().map(|t| t.image_id.clone()).collect(),
        train_vecs.concat(),
        dim,
        Modality::Image,
    )
    .unwrap();

    let val = (0..n_val)
        .map(|i| {
            let texts: Vec<String> = (0..per_image).map(|j| caption_text("val", i, j)).collect();
            let vecs = embedder.embed(&texts).unwrap();
            let img = image_vector(&vecs, &rot, &gap, 0.05, &mut r);
            let id = format!("val{i}");
            DalItem {
                references: Some(references(&embedder, &map, &id, texts)),
                image_id: id,
                image: img,
            }
        })
        .collect();

    World {
        dim,
        embedder,
        map,
        store,
        captions,
        texts,
        train_images,
        train,
        val,
    }
}
