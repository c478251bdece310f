//! Category-conditioned temporal pooling.
//!
//! Each word of a class name scores every frame; a softmax over frames turns
//! those scores into a distribution per word, and the per-word distributions
//! are averaged into one saliency weight per frame. The video representation
//! is then the saliency-weighted sum of frame embeddings. Mean pooling is kept
//! alongside as the baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{check_temperature, dot, softmax_unchecked, Matrix, Vector};
use crate::store::FrameEmbeddings;

pub const DEFAULT_TAU_VCS: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    MeanPool,
    ConceptSpotting,
}

/// Nonnegative per-frame weights that sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyVector {
    pub weights: Vec<f64>,
    pub tau_vcs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRepresentation {
    pub embedding: Vector,
    pub method: Aggregation,
}

/// Saliency from a precomputed `T x N` frame-by-word score matrix.
pub fn saliency_from_scores(scores: &Matrix, tau_vcs: f64) -> Result<SaliencyVector> {
    check_temperature(tau_vcs)?;
    let (t, n) = (scores.rows(), scores.cols());
    let mut weights = vec![0.0; t];
    let mut column = vec![0.0; t];
    for w in 0..n {
        for (f, c) in column.iter_mut().enumerate() {
            *c = scores.get(f, w) / tau_vcs;
        }
        let p = softmax_unchecked(&column);
        weights.iter_mut().zip(&p).for_each(|(acc, v)| *acc += v);
    }
    weights.iter_mut().for_each(|v| *v /= n as f64);
    Ok(SaliencyVector { weights, tau_vcs })
}

/// Word-to-frame saliency of `frames` with respect to the class words `words`.
pub fn temporal_saliency(frames: &FrameEmbeddings, words: &Matrix, tau_vcs: f64) -> Result<SaliencyVector> {
    check_temperature(tau_vcs)?;
    let fm = frames.frames();
    if fm.cols() != words.cols() {
        return Err(Error::DimMismatch { expected: fm.cols(), got: words.cols() });
    }
    let mut scores = Vec::with_capacity(fm.rows() * words.rows());
    for v in fm.iter_rows() {
        scores.extend(words.iter_rows().map(|t| dot(v, t)));
    }
    let scores = Matrix::new(fm.rows(), words.rows(), scores)?;
    saliency_from_scores(&scores, tau_vcs)
}

/// Saliency-weighted sum of frame rows.
pub fn aggregate(frames: &FrameEmbeddings, s: &SaliencyVector) -> Result<VideoRepresentation> {
    let fm = frames.frames();
    if s.weights.len() != fm.rows() {
        return Err(Error::LengthMismatch { expected: fm.rows(), got: s.weights.len() });
    }
    let mut out = vec![0.0; fm.cols()];
    for (row, &w) in fm.iter_rows().zip(&s.weights) {
        out.iter_mut().zip(row).for_each(|(o, v)| *o += w * v);
    }
    Ok(VideoRepresentation { embedding: Vector::new(out)?, method: Aggregation::ConceptSpotting })
}

pub fn mean_pool(frames: &FrameEmbeddings) -> VideoRepresentation {
    let fm = frames.frames();
    let mut out = vec![0.0; fm.cols()];
    for row in fm.iter_rows() {
        out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
    }
    let t = fm.rows() as f64;
    out.iter_mut().for_each(|o| *o /= t);
    VideoRepresentation { embedding: Vector::new(out).expect("mean of finite rows is finite"), method: Aggregation::MeanPool }
}

/// Video representation for one category under the chosen aggregation.
pub fn represent(frames: &FrameEmbeddings, words: &Matrix, aggregation: Aggregation, tau_vcs: f64) -> Result<VideoRepresentation> {
    match aggregation {
        Aggregation::MeanPool => Ok(mean_pool(frames)),
        Aggregation::ConceptSpotting => aggregate(frames, &temporal_saliency(frames, words, tau_vcs)?),
    }
}
