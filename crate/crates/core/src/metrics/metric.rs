use std::collections::HashMap;

use super::clip_score::{aclip_s_aligned, ref_aclip_s_aligned, ReferenceSet};
use crate::error::{Error, Result};

/// Everything a caption metric may look at for one candidate.
#[derive(Debug, Clone, Copy)]
pub struct ScoreInput<'a> {
    pub image_id: &'a str,
    pub text: &'a str,
    /// Preprocessed text embedding of the candidate.
    pub candidate_vec: &'a [f64],
    /// The image embedding after preprocessing and the alignment map.
    pub aligned_image: &'a [f64],
    pub references: Option<&'a ReferenceSet>,
}

/// A named caption quality score, higher is better.
pub trait CaptionMetric: Send + Sync {
    fn name(&self) -> &str;
    fn needs_references(&self) -> bool {
        false
    }
    fn score(&self, input: &ScoreInput) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AClipS;

impl CaptionMetric for AClipS {
    fn name(&self) -> &str {
        "aclip-s"
    }

    fn score(&self, input: &ScoreInput) -> Result<f64> {
        aclip_s_aligned(input.candidate_vec, input.aligned_image)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RefAClipS;

impl CaptionMetric for RefAClipS {
    fn name(&self) -> &str {
        "refaclip-s"
    }

    fn needs_references(&self) -> bool {
        true
    }

    fn score(&self, input: &ScoreInput) -> Result<f64> {
        let refs = input
            .references
            .ok_or_else(|| Error::InvalidArgument(format!("image {} has no reference captions", input.image_id)))?;
        ref_aclip_s_aligned(input.candidate_vec, refs, input.aligned_image)
    }
}

/// Scores looked up by (image id, candidate text), for metrics computed
/// outside this crate.
#[derive(Debug, Clone, Default)]
pub struct ExternalScores {
    name: String,
    table: HashMap<(String, String), f64>,
}

impl ExternalScores {
    pub fn new(name: impl Into<String>) -> Self {
        ExternalScores {
            name: name.into(),
            table: HashMap::new(),
        }
    }

    pub fn insert(&mut self, image_id: impl Into<String>, text: impl Into<String>, score: f64) {
        self.table.insert((image_id.into(), text.into()), score);
    }
}

impl CaptionMetric for ExternalScores {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, input: &ScoreInput) -> Result<f64> {
        self.table
            .get(&(input.image_id.to_string(), input.text.to_string()))
            .copied()
            .ok_or_else(|| {
                Error::UnknownId(format!(
                    "{} has no score for image {} caption {:?}",
                    self.name, input.image_id, input.text
                ))
            })
    }
}

/// Built-in metric by name.
pub fn builtin_metric(name: &str) -> Result<Box<dyn CaptionMetric>> {
    match name.to_ascii_lowercase().replace('_', "-").as_str() {
        "aclip-s" | "aclips" => Ok(Box::new(AClipS)),
        "refaclip-s" | "refaclips" => Ok(Box::new(RefAClipS)),
        other => Err(Error::InvalidArgument(format!(
            "unknown metric {other:?}; built-ins are aclip-s and refaclip-s"
        ))),
    }
}
