use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    /// Most similar caption last, closest to the generation point.
    #[default]
    WorstToBest,
    BestToWorst,
}

impl std::str::FromStr for Ordering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "worst_to_best" | "worst-to-best" => Ok(Ordering::WorstToBest),
            "best_to_worst" | "best-to-worst" => Ok(Ordering::BestToWorst),
            other => Err(Error::InvalidArgument(format!("unknown ordering {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplate {
    pub prefix: String,
    pub separator: String,
    pub suffix: String,
    pub ordering: Ordering,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            prefix: "Similar images show: ".into(),
            separator: ", ".into(),
            suffix: " This image shows:".into(),
            ordering: Ordering::WorstToBest,
        }
    }
}

impl PromptTemplate {
    /// Renders retrieved captions, given best first, into a prompt.
    pub fn render<S: AsRef<str>>(&self, retrieved_best_first: &[S]) -> Result<String> {
        if retrieved_best_first.is_empty() {
            return Err(Error::Empty("no retrieved captions to build a prompt from"));
        }
        let mut captions: Vec<&str> = retrieved_best_first.iter().map(AsRef::as_ref).collect();
        if self.ordering == Ordering::WorstToBest {
            captions.reverse();
        }
        let mut out = String::with_capacity(
            self.prefix.len() + self.suffix.len() + captions.iter().map(|c| c.len() + 2).sum::<usize>(),
        );
        out.push_str(&self.prefix);
        out.push_str(&captions.join(&self.separator));
        out.push_str(&self.suffix);
        Ok(out)
    }

    /// Inverse of [`PromptTemplate::render`] for prompts whose captions do
    /// not themselves contain the separator. Returns captions best first.
    pub fn parse(&self, prompt: &str) -> Option<Vec<String>> {
        let body = prompt.strip_prefix(&self.prefix)?.strip_suffix(&self.suffix)?;
        let mut captions: Vec<String> = body.split(&self.separator).map(str::to_owned).collect();
        if self.ordering == Ordering::WorstToBest {
            captions.reverse();
        }
        Some(captions)
    }

    /// The captions portion of a rendered prompt.
    pub fn body<'a>(&self, prompt: &'a str) -> Option<&'a str> {
        prompt.strip_prefix(&self.prefix)?.strip_suffix(&self.suffix)
    }
}
