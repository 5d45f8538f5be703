use crate::align::AlignmentMap;
use crate::embedding::{check_finite, cosine};
use crate::error::{Error, Result};
use crate::vecstore::UNIT_NORM_TOL;

/// Reference captions for one image with their preprocessed embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    image_id: String,
    references: Vec<String>,
    embeddings: Vec<Vec<f64>>,
}

impl ReferenceSet {
    pub fn new(image_id: impl Into<String>, references: Vec<String>, embeddings: Vec<Vec<f64>>) -> Result<Self> {
        if references.is_empty() {
            return Err(Error::Empty("reference set has no captions"));
        }
        if references.len() != embeddings.len() {
            return Err(Error::CountMismatch {
                left: references.len(),
                right: embeddings.len(),
            });
        }
        let dim = embeddings[0].len();
        for (i, e) in embeddings.iter().enumerate() {
            if e.len() != dim {
                return Err(Error::dims(format!("reference embedding {i}"), dim, e.len()));
            }
            check_finite(e)?;
            let n = crate::embedding::norm(e);
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::InvalidArgument(format!(
                    "reference embedding {i} has norm {n}, expected unit norm"
                )));
            }
        }
        Ok(ReferenceSet {
            image_id: image_id.into(),
            references,
            embeddings,
        })
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn references(&self) -> &[String] {
        &self.references
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn dim(&self) -> usize {
        self.embeddings[0].len()
    }
}

/// Harmonic mean of two non-negative scores, 0 when either is 0.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// `max(cos(candidate, aligned_image), 0)` for an already-aligned image.
pub fn aclip_s_aligned(candidate_vec: &[f64], aligned_image: &[f64]) -> Result<f64> {
    if candidate_vec.len() != aligned_image.len() {
        return Err(Error::dims("candidate length", aligned_image.len(), candidate_vec.len()));
    }
    check_finite(candidate_vec)?;
    check_finite(aligned_image)?;
    Ok(cosine(candidate_vec, aligned_image).max(0.0))
}

/// Reference-free score of a preprocessed candidate text embedding against a
/// raw image embedding.
pub fn aclip_s(candidate_vec: &[f64], image_vec: &[f64], map: &AlignmentMap) -> Result<f64> {
    if image_vec.len() != map.dim() {
        return Err(Error::dims("image length", map.dim(), image_vec.len()));
    }
    aclip_s_aligned(candidate_vec, &map.apply(image_vec)?)
}

/// Best clamped cosine between the candidate and any reference.
pub fn reference_similarity(candidate_vec: &[f64], refs: &ReferenceSet) -> Result<f64> {
    if candidate_vec.len() != refs.dim() {
        return Err(Error::dims("candidate length", refs.dim(), candidate_vec.len()));
    }
    check_finite(candidate_vec)?;
    let best = refs
        .embeddings
        .iter()
        .map(|r| cosine(candidate_vec, r))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(best.max(0.0))
}

/// Harmonic mean of the aligned score and the best reference similarity.
pub fn ref_aclip_s(
    candidate_vec: &[f64],
    refs: &ReferenceSet,
    image_vec: &[f64],
    map: &AlignmentMap,
) -> Result<f64> {
    let a = aclip_s(candidate_vec, image_vec, map)?;
    let r = reference_similarity(candidate_vec, refs)?;
    Ok(harmonic_mean(a, r))
}

/// [`ref_aclip_s`] for an already-aligned image.
pub fn ref_aclip_s_aligned(candidate_vec: &[f64], refs: &ReferenceSet, aligned_image: &[f64]) -> Result<f64> {
    let a = aclip_s_aligned(candidate_vec, aligned_image)?;
    let r = reference_similarity(candidate_vec, refs)?;
    Ok(harmonic_mean(a, r))
}
