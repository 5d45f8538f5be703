use std::sync::Once;

use faer::{Mat, MatRef};

use super::{AlignmentMap, MapKind, Preprocessor, Scheme, OLS_RCOND};
use crate::embedding::{cosine, EmbeddingMatrix, Modality};
use crate::error::{Error, Result};

static SEQUENTIAL: Once = Once::new();

// Fits run single-threaded so that results do not depend on the host's core count.
fn sequential_linalg() {
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
}

fn check_pair(texts: &EmbeddingMatrix, images: &EmbeddingMatrix) -> Result<()> {
    if texts.modality() != Modality::Text {
        return Err(Error::InvalidArgument(
            "first matrix must hold text embeddings".into(),
        ));
    }
    if images.modality() != Modality::Image {
        return Err(Error::InvalidArgument(
            "second matrix must hold image embeddings".into(),
        ));
    }
    if texts.dim() != images.dim() {
        return Err(Error::dims("text vs image dimension", images.dim(), texts.dim()));
    }
    if texts.len() != images.len() {
        return Err(Error::CountMismatch {
            left: texts.len(),
            right: images.len(),
        });
    }
    Ok(())
}

fn view(m: &EmbeddingMatrix) -> MatRef<'_, f64> {
    MatRef::from_row_major_slice(m.data(), m.len(), m.dim())
}

fn to_row_major(m: &Mat<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn ensure_finite(w: &[f64], what: &str) -> Result<()> {
    if w.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{what} produced non-finite entries")))
    }
}

/// Orthogonal `W` minimizing `sum_i |W f_i - e_i|^2`.
///
/// With `M = E^T F = U S V^T`, the objective equals `const - 2 <W, M>_F`,
/// which is maximized over orthogonal matrices by `W = U V^T`.
pub fn fit_procrustes(texts: &EmbeddingMatrix, images: &EmbeddingMatrix) -> Result<AlignmentMap> {
    check_pair(texts, images)?;
    sequential_linalg();
    let cross = view(texts).transpose() * view(images);
    let svd = cross
        .svd()
        .map_err(|e| Error::Numerical(format!("SVD of cross-covariance failed: {e:?}")))?;
    let w = svd.U() * svd.V().transpose();
    let w = to_row_major(&w);
    ensure_finite(&w, "procrustes fit")?;
    AlignmentMap::from_parts(MapKind::Procrustes, w, Preprocessor::none(texts.dim()))
}

/// Unconstrained least-squares `W`, via the SVD pseudoinverse of `F`.
///
/// With the thin SVD `F = U S V^T`, the minimizer of `|F W^T - E|_F` is
/// `W = E^T U S^+ V^T`. Singular values below `OLS_RCOND * s_max` are
/// treated as zero.
pub fn fit_ols(texts: &EmbeddingMatrix, images: &EmbeddingMatrix) -> Result<AlignmentMap> {
    check_pair(texts, images)?;
    sequential_linalg();
    let f = view(images);
    let svd = f
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD of image matrix failed: {e:?}")))?;
    let s = svd.S().column_vector();
    let rank_dim = s.nrows();
    let s_max = (0..rank_dim).map(|i| s[i]).fold(0.0f64, f64::max);
    if s_max == 0.0 {
        return Err(Error::Numerical("image matrix is identically zero".into()));
    }
    let cutoff = OLS_RCOND * s_max;
    // T = E^T U, then scale column j by 1/s_j.
    let mut t = view(texts).transpose() * svd.U();
    for j in 0..rank_dim {
        let inv = if s[j] > cutoff { 1.0 / s[j] } else { 0.0 };
        for i in 0..t.nrows() {
            t[(i, j)] *= inv;
        }
    }
    let w = t * svd.V().transpose();
    let w = to_row_major(&w);
    ensure_finite(&w, "least-squares fit")?;
    AlignmentMap::from_parts(MapKind::Ols, w, Preprocessor::none(texts.dim()))
}

/// Full pipeline on raw embeddings: fit the preprocessor, preprocess both
/// sides, fit `W`, and attach the preprocessor to the returned map.
pub fn fit(
    method: MapKind,
    scheme: Scheme,
    texts: EmbeddingMatrix,
    images: EmbeddingMatrix,
) -> Result<(AlignmentMap, EmbeddingMatrix, EmbeddingMatrix)> {
    check_pair(&texts, &images)?;
    let pre = Preprocessor::fit(&images, &texts, scheme)?;
    let texts = pre.apply_owned(texts)?;
    let images = pre.apply_owned(images)?;
    let map = match method {
        MapKind::Procrustes => fit_procrustes(&texts, &images)?,
        MapKind::Ols => fit_ols(&texts, &images)?,
        MapKind::Identity => AlignmentMap::identity(texts.dim()),
    };
    let map = map.with_preprocessor(pre)?;
    Ok((map, texts, images))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    /// `sum_i cos(e_i, W f_i)`
    pub cosine_sum: f64,
    /// `sum_i |W f_i - e_i|^2`
    pub residual_sum: f64,
}

/// Evaluates both objectives for already-preprocessed paired rows.
pub fn objective_values(
    map: &AlignmentMap,
    texts: &EmbeddingMatrix,
    images: &EmbeddingMatrix,
) -> Result<Objective> {
    check_pair(texts, images)?;
    if texts.dim() != map.dim() {
        return Err(Error::dims("map dimension", map.dim(), texts.dim()));
    }
    let mut cosine_sum = 0.0;
    let mut residual_sum = 0.0;
    for (e, f) in texts.rows().zip(images.rows()) {
        let wf = map.transform(f)?;
        cosine_sum += cosine(e, &wf);
        residual_sum += wf.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(Objective {
        cosine_sum,
        residual_sum,
    })
}
