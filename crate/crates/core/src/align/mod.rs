//! Closed-form linear alignment of image embeddings onto text embeddings.
//!
//! Given paired rows `f_i` (image) and `e_i` (text), the maps here minimize
//! `sum_i |W f_i - e_i|^2`, either over orthogonal `W` (Procrustes) or over
//! all `d x d` matrices (least squares). For orthogonal `W` and unit rows the
//! squared residual equals `2n - 2 * sum_i cos(e_i, W f_i)`, so the Procrustes
//! solution is also the cosine-sum maximizer.

mod fit;
pub mod mapfile;
mod preprocess;

use serde::{Deserialize, Serialize};

pub use fit::{fit, fit_ols, fit_procrustes, objective_values, Objective};
pub use preprocess::{Preprocessor, Scheme};

use crate::embedding::Modality;
use crate::error::{Error, Result};

/// Tolerance on `max |W^T W - I|` for maps labelled orthogonal.
pub const ORTHOGONALITY_TOL: f64 = 1e-6;

/// Relative singular-value cutoff for the least-squares pseudoinverse.
pub const OLS_RCOND: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Identity,
    Procrustes,
    Ols,
}

impl MapKind {
    pub fn code(self) -> u8 {
        match self {
            MapKind::Identity => 0,
            MapKind::Procrustes => 1,
            MapKind::Ols => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(MapKind::Identity),
            1 => Ok(MapKind::Procrustes),
            2 => Ok(MapKind::Ols),
            other => Err(Error::Format(format!("unknown map kind code {other}"))),
        }
    }
}

impl std::str::FromStr for MapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(MapKind::Identity),
            "procrustes" => Ok(MapKind::Procrustes),
            "ols" => Ok(MapKind::Ols),
            other => Err(Error::InvalidArgument(format!(
                "unknown method {other:?} (expected procrustes|ols|identity)"
            ))),
        }
    }
}

/// A fitted `d x d` map (row-major) together with the preprocessing that
/// must be applied to raw embeddings before the map.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentMap {
    w: Vec<f64>,
    dim: usize,
    kind: MapKind,
    preprocessor: Preprocessor,
    fitted_on: Option<String>,
}

impl AlignmentMap {
    pub fn identity(dim: usize) -> Self {
        let mut w = vec![0.0; dim * dim];
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        AlignmentMap {
            w,
            dim,
            kind: MapKind::Identity,
            preprocessor: Preprocessor::none(dim),
            fitted_on: None,
        }
    }

    /// Assembles a map from its parts, checking the invariants of `kind`.
    pub fn from_parts(kind: MapKind, w: Vec<f64>, preprocessor: Preprocessor) -> Result<Self> {
        let dim = preprocessor.dim();
        if w.len() != dim * dim {
            return Err(Error::dims("map matrix entries", dim * dim, w.len()));
        }
        if let Some(pos) = w.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        let map = AlignmentMap {
            w,
            dim,
            kind,
            preprocessor,
            fitted_on: None,
        };
        match kind {
            MapKind::Identity => {
                if map.w != AlignmentMap::identity(dim).w {
                    return Err(Error::InvalidArgument(
                        "identity map must have W = I exactly".into(),
                    ));
                }
            }
            MapKind::Procrustes => {
                let dev = map.orthogonality_error();
                if dev > ORTHOGONALITY_TOL {
                    return Err(Error::Numerical(format!(
                        "procrustes map deviates from orthogonality by {dev:e}"
                    )));
                }
            }
            MapKind::Ols => {}
        }
        Ok(map)
    }

    pub fn with_preprocessor(mut self, preprocessor: Preprocessor) -> Result<Self> {
        if preprocessor.dim() != self.dim {
            return Err(Error::dims("preprocessor dimension", self.dim, preprocessor.dim()));
        }
        self.preprocessor = preprocessor;
        Ok(self)
    }

    pub fn with_fitted_on(mut self, tag: impl Into<String>) -> Self {
        self.fitted_on = Some(tag.into());
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn matrix(&self) -> &[f64] {
        &self.w
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.w[row * self.dim + col]
    }

    pub fn preprocessor(&self) -> &Preprocessor {
        &self.preprocessor
    }

    pub fn fitted_on(&self) -> Option<&str> {
        self.fitted_on.as_deref()
    }

    /// `max |W^T W - I|`.
    pub fn orthogonality_error(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in i..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += self.w[k * d + i] * self.w[k * d + j];
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }

    /// `W v` without any preprocessing.
    pub fn transform(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim {
            return Err(Error::dims("vector length", self.dim, v.len()));
        }
        Ok(self
            .w
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Preprocesses a raw image embedding and maps it into text space.
    pub fn apply(&self, image_vec: &[f64]) -> Result<Vec<f64>> {
        if image_vec.len() != self.dim {
            return Err(Error::dims("image vector length", self.dim, image_vec.len()));
        }
        let v = self.preprocessor.apply_vec(image_vec, Modality::Image)?;
        self.transform(&v)
    }

    /// Preprocesses a raw text embedding; text vectors are not mapped.
    pub fn prepare_text(&self, text_vec: &[f64]) -> Result<Vec<f64>> {
        self.preprocessor.apply_vec(text_vec, Modality::Text)
    }

    /// SHA-256 of the serialized map file, hex encoded.
    pub fn fingerprint(&self) -> String {
        crate::util::sha256_hex(&mapfile::encode(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_apply_is_noop() {
        let m = AlignmentMap::identity(3);
        assert_eq!(m.apply(&[0.3, -2.0, 5.0]).unwrap(), vec![0.3, -2.0, 5.0]);
    }

    #[test]
    fn rotation_apply() {
        let m = AlignmentMap::from_parts(
            MapKind::Procrustes,
            vec![0.0, -1.0, 1.0, 0.0],
            Preprocessor::none(2),
        )
        .unwrap();
        assert_eq!(m.apply(&[1.0, 0.0]).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn apply_matches_naive_product() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let d = 7;
        let w: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = AlignmentMap::from_parts(MapKind::Ols, w.clone(), Preprocessor::none(d)).unwrap();
        let got = m.apply(&v).unwrap();
        for i in 0..d {
            let mut expect = 0.0;
            for j in 0..d {
                expect += w[i * d + j] * v[j];
            }
            assert!((got[i] - expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn apply_rejects_wrong_length() {
        assert!(matches!(
            AlignmentMap::identity(3).apply(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn from_parts_checks_invariants() {
        assert!(AlignmentMap::from_parts(
            MapKind::Procrustes,
            vec![2.0, 0.0, 0.0, 1.0],
            Preprocessor::none(2)
        )
        .is_err());
        assert!(AlignmentMap::from_parts(
            MapKind::Identity,
            vec![1.0, 1e-300, 0.0, 1.0],
            Preprocessor::none(2)
        )
        .is_err());
        assert!(AlignmentMap::from_parts(
            MapKind::Ols,
            vec![f64::INFINITY, 0.0, 0.0, 1.0],
            Preprocessor::none(2)
        )
        .is_err());
    }
}
