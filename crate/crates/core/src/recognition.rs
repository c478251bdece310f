//! Per-category scoring from the video and attribute branches, convex fusion
//! of the two, top-k prediction, and the evaluation protocols.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attributes::{describe_video, SentenceEncoder, DEFAULT_K_ATTRIBUTES, DEFAULT_PREFIX};
use crate::concept_spotting::{represent, Aggregation, DEFAULT_TAU_VCS};
use crate::error::{Error, Result};
use crate::numerics::{check_temperature, cosine, Vector};
use crate::store::{CategoryEntry, DatasetManifest, FrameEmbeddings, Lexicon};

pub const DEFAULT_LAMBDA: f64 = 0.6;
pub const TOP5: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Video,
    Attributes,
    Fused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub branch: Branch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub lambda: f64,
    pub tau_vcs: f64,
    pub k_attributes: usize,
    /// Prompt template with a `{}` slot; `None` disables the prompt.
    pub prefix: Option<String>,
    pub aggregation: Aggregation,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            lambda: DEFAULT_LAMBDA,
            tau_vcs: DEFAULT_TAU_VCS,
            k_attributes: DEFAULT_K_ATTRIBUTES,
            prefix: Some(DEFAULT_PREFIX.to_string()),
            aggregation: Aggregation::ConceptSpotting,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::LambdaOutOfRange(self.lambda));
        }
        check_temperature(self.tau_vcs)?;
        if self.k_attributes == 0 {
            return Err(Error::BadK { k: 0, max: usize::MAX });
        }
        Ok(())
    }

    pub fn template(&self) -> &str {
        self.prefix.as_deref().unwrap_or("{}")
    }
}

/// Lexicon and sentence encoder backing the attribute branch.
#[derive(Debug, Clone)]
pub struct AttributeBranch<'a> {
    pub lexicon: &'a Lexicon,
    pub encoder: SentenceEncoder,
}

fn check_dims(dim: usize, cats: &[CategoryEntry]) -> Result<()> {
    match cats.iter().find(|c| c.dim() != dim) {
        Some(c) => Err(Error::DimMismatch { expected: dim, got: c.dim() }),
        None => Ok(()),
    }
}

/// Cosine between each category's class embedding and the video, where the
/// video representation is recomputed per category under concept spotting.
pub fn video_scores(video: &FrameEmbeddings, cats: &[CategoryEntry], cfg: &FusionConfig) -> Result<ScoreVector> {
    check_dims(video.dim(), cats)?;
    let scores = match cfg.aggregation {
        Aggregation::MeanPool => {
            let ev = crate::concept_spotting::mean_pool(video).embedding;
            cats.iter().map(|c| cosine(ev.as_slice(), c.cls_embedding().as_slice())).collect::<Result<Vec<_>>>()?
        }
        Aggregation::ConceptSpotting => cats
            .iter()
            .map(|c| {
                let ev = represent(video, c.word_embeddings(), cfg.aggregation, cfg.tau_vcs)?.embedding;
                cosine(ev.as_slice(), c.cls_embedding().as_slice())
            })
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(ScoreVector { scores, branch: Branch::Video })
}

pub fn attribute_scores(e_a: &Vector, cats: &[CategoryEntry]) -> Result<ScoreVector> {
    check_dims(e_a.dim(), cats)?;
    let scores = cats.iter().map(|c| cosine(e_a.as_slice(), c.cls_embedding().as_slice())).collect::<Result<Vec<_>>>()?;
    Ok(ScoreVector { scores, branch: Branch::Attributes })
}

/// `lambda * sv + (1 - lambda) * sa`, elementwise.
pub fn fuse(sv: &ScoreVector, sa: &ScoreVector, lambda: f64) -> Result<ScoreVector> {
    if sv.scores.len() != sa.scores.len() {
        return Err(Error::LengthMismatch { expected: sv.scores.len(), got: sa.scores.len() });
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::LambdaOutOfRange(lambda));
    }
    // exact at the endpoints: 1 * v + 0 * a == v and 0 * v + 1 * a == a
    let scores = sv.scores.iter().zip(&sa.scores).map(|(v, a)| lambda * v + (1.0 - lambda) * a).collect();
    Ok(ScoreVector { scores, branch: Branch::Fused })
}

/// The `k` best labels, highest score first, ties to the lower label.
pub fn predict_topk(s: &ScoreVector, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > s.scores.len() {
        return Err(Error::BadK { k, max: s.scores.len() });
    }
    let mut idx: Vec<usize> = (0..s.scores.len()).collect();
    idx.sort_by(|&a, &b| crate::attributes::rank_desc((a, s.scores[a]), (b, s.scores[b])));
    idx.truncate(k);
    Ok(idx)
}

/// Final per-category scores for one video under `cfg`.
pub fn score_video(
    video: &FrameEmbeddings,
    cats: &[CategoryEntry],
    cfg: &FusionConfig,
    attributes: Option<&AttributeBranch>,
) -> Result<ScoreVector> {
    let sv = video_scores(video, cats, cfg)?;
    let Some(branch) = attributes else {
        return Ok(sv);
    };
    let (_, sentence) = describe_video(video, branch.lexicon, cfg.k_attributes, cfg.template(), &branch.encoder)?;
    let sa = attribute_scores(&sentence.embedding, cats)?;
    fuse(&sv, &sa, cfg.lambda)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub video_id: String,
    pub label: usize,
    /// Up to five labels, best first.
    pub ranked: Vec<usize>,
    pub correct_top1: bool,
    pub correct_top5: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    #[serde(flatten)]
    pub fusion: FusionConfig,
    pub attributes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1: f64,
    pub top5: f64,
    pub num_videos: usize,
    pub num_classes: usize,
    pub predictions: Vec<Prediction>,
    pub config: ConfigEcho,
}

/// Single-view top-1 / top-5 accuracy. Top-5 is clamped to the class count.
pub fn evaluate(dataset: &DatasetManifest, cfg: &FusionConfig, attributes: Option<&AttributeBranch>) -> Result<EvalReport> {
    cfg.validate()?;
    if dataset.videos().is_empty() {
        return Err(Error::EmptyDataset);
    }
    let cats = dataset.categories();
    let k5 = TOP5.min(cats.len());
    let predictions = dataset
        .videos()
        .par_iter()
        .map(|v| {
            let s = score_video(&v.frames, cats, cfg, attributes)?;
            let ranked = predict_topk(&s, k5)?;
            Ok(Prediction {
                video_id: v.frames.video_id.clone(),
                label: v.label,
                correct_top1: ranked[0] == v.label,
                correct_top5: ranked.contains(&v.label),
                ranked,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = predictions.len() as f64;
    let top1 = predictions.iter().filter(|p| p.correct_top1).count() as f64 / n;
    let top5 = predictions.iter().filter(|p| p.correct_top5).count() as f64 / n;
    Ok(EvalReport {
        top1,
        top5,
        num_videos: predictions.len(),
        num_classes: cats.len(),
        predictions,
        config: ConfigEcho { fusion: cfg.clone(), attributes: attributes.is_some() },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfClassReport {
    pub mean: f64,
    /// Population standard deviation over repeats.
    pub std: f64,
    pub per_repeat: Vec<f64>,
    /// Original labels kept in each repeat, ascending.
    pub classes: Vec<Vec<usize>>,
    pub seed: u64,
    pub config: ConfigEcho,
}

/// Zero-shot protocol: evaluate top-1 on a random half of the classes,
/// `repeats` times, and report mean and spread.
pub fn half_class_eval(
    dataset: &DatasetManifest,
    cfg: &FusionConfig,
    attributes: Option<&AttributeBranch>,
    repeats: usize,
    seed: u64,
) -> Result<HalfClassReport> {
    let k = dataset.categories().len();
    if k < 2 {
        return Err(Error::TooFewClasses(k));
    }
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_repeat = Vec::with_capacity(repeats);
    let mut classes = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let mut keep = sample(&mut rng, k, k / 2).into_vec();
        keep.sort_unstable();
        let subset = dataset.restrict_to_classes(&keep)?;
        per_repeat.push(evaluate(&subset, cfg, attributes)?.top1);
        classes.push(keep);
    }
    let n = per_repeat.len() as f64;
    let mean = per_repeat.iter().sum::<f64>() / n;
    let std = (per_repeat.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(HalfClassReport {
        mean,
        std,
        per_repeat,
        classes,
        seed,
        config: ConfigEcho { fusion: cfg.clone(), attributes: attributes.is_some() },
    })
}
