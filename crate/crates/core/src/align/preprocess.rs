use serde::{Deserialize, Serialize};

use crate::embedding::{norm, EmbeddingMatrix, Modality};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    None,
    /// Unit-normalize, subtract the training mean of the row's modality,
    /// unit-normalize again.
    NormalizeCenterRenormalize,
}

impl Scheme {
    pub fn code(self) -> u8 {
        match self {
            Scheme::None => 0,
            Scheme::NormalizeCenterRenormalize => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Scheme::None),
            1 => Ok(Scheme::NormalizeCenterRenormalize),
            other => Err(Error::Format(format!("unknown preprocessing scheme code {other}"))),
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Scheme::None),
            "center" | "normalize_center_renormalize" => Ok(Scheme::NormalizeCenterRenormalize),
            other => Err(Error::InvalidArgument(format!(
                "unknown scheme {other:?} (expected none|center)"
            ))),
        }
    }
}

/// Per-modality centering statistics computed on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    image_mean: Vec<f64>,
    text_mean: Vec<f64>,
    scheme: Scheme,
}

impl Preprocessor {
    pub fn none(dim: usize) -> Self {
        Preprocessor {
            image_mean: vec![0.0; dim],
            text_mean: vec![0.0; dim],
            scheme: Scheme::None,
        }
    }

    pub fn from_parts(image_mean: Vec<f64>, text_mean: Vec<f64>, scheme: Scheme) -> Result<Self> {
        if image_mean.len() != text_mean.len() {
            return Err(Error::dims("text mean", image_mean.len(), text_mean.len()));
        }
        if image_mean.is_empty() {
            return Err(Error::Empty("preprocessor dimension is zero"));
        }
        for v in [&image_mean, &text_mean] {
            if let Some(col) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite { row: 0, col });
            }
        }
        Ok(Preprocessor {
            image_mean,
            text_mean,
            scheme,
        })
    }

    /// Fits the means over the unit-normalized training rows of each modality.
    pub fn fit(images: &EmbeddingMatrix, texts: &EmbeddingMatrix, scheme: Scheme) -> Result<Self> {
        if images.dim() != texts.dim() {
            return Err(Error::dims("text embeddings", images.dim(), texts.dim()));
        }
        let dim = images.dim();
        match scheme {
            Scheme::None => Ok(Self::none(dim)),
            Scheme::NormalizeCenterRenormalize => Ok(Preprocessor {
                image_mean: normalized_mean(images)?,
                text_mean: normalized_mean(texts)?,
                scheme,
            }),
        }
    }

    pub fn dim(&self) -> usize {
        self.image_mean.len()
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn image_mean(&self) -> &[f64] {
        &self.image_mean
    }

    pub fn text_mean(&self) -> &[f64] {
        &self.text_mean
    }

    pub fn mean(&self, modality: Modality) -> &[f64] {
        match modality {
            Modality::Image => &self.image_mean,
            Modality::Text => &self.text_mean,
        }
    }

    /// Preprocesses a single vector of the given modality.
    pub fn apply_vec(&self, v: &[f64], modality: Modality) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::dims("vector length", self.dim(), v.len()));
        }
        crate::embedding::check_finite(v)?;
        let mut out = v.to_vec();
        self.apply_row(&mut out, modality, 0)?;
        Ok(out)
    }

    pub fn apply(&self, rows: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        self.apply_owned(rows.clone())
    }

    /// In-place variant of [`Preprocessor::apply`] for large matrices.
    pub fn apply_owned(&self, rows: EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        if rows.dim() != self.dim() {
            return Err(Error::dims("embedding dimension", self.dim(), rows.dim()));
        }
        if self.scheme == Scheme::None {
            return Ok(rows);
        }
        let (ids, mut data, dim, modality) = rows.into_parts();
        for (i, row) in data.chunks_exact_mut(dim).enumerate() {
            self.apply_row(row, modality, i)?;
        }
        Ok(EmbeddingMatrix::from_parts_unchecked(ids, data, dim, modality))
    }

    fn apply_row(&self, row: &mut [f64], modality: Modality, index: usize) -> Result<()> {
        if self.scheme == Scheme::None {
            return Ok(());
        }
        normalize_in_place(row).ok_or(Error::ZeroNormRow {
            row: index,
            after_centering: false,
        })?;
        for (x, m) in row.iter_mut().zip(self.mean(modality)) {
            *x -= m;
        }
        normalize_in_place(row).ok_or(Error::ZeroNormRow {
            row: index,
            after_centering: true,
        })
    }
}

fn normalize_in_place(row: &mut [f64]) -> Option<()> {
    let n = norm(row);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    row.iter_mut().for_each(|x| *x /= n);
    Some(())
}

fn normalized_mean(m: &EmbeddingMatrix) -> Result<Vec<f64>> {
    let mut mean = vec![0.0; m.dim()];
    for (i, row) in m.rows().enumerate() {
        let n = norm(row);
        if n == 0.0 {
            return Err(Error::ZeroNormRow {
                row: i,
                after_centering: false,
            });
        }
        for (acc, x) in mean.iter_mut().zip(row) {
            *acc += x / n;
        }
    }
    let count = m.len() as f64;
    mean.iter_mut().for_each(|x| *x /= count);
    Ok(mean)
}
