//! Seeded synthetic datasets with known answers.
//!
//! Class embeddings are the surrogate encodings of the prompted class names,
//! symmetrically orthonormalized so they stay as close as possible to those
//! encodings. A video of class `c` is made of exact copies of `c`'s class
//! embedding plus a configurable number of noise frames orthogonal to every
//! class. The lexicon holds the bare class names with their class embeddings,
//! so retrieving one attribute and prompting it reproduces the encoding the
//! class embedding was built from.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::attributes::{apply_prompt, DEFAULT_PREFIX};
use crate::error::{Error, Result};
use crate::numerics::{dot, normalize_in_place, Matrix, Vector};
use crate::store::{
    surrogate_encode, write_bemb, write_json, CategoryEntry, CategoryRecord, DatasetManifest, DatasetManifestFile, FrameEmbeddings,
    LabeledVideo, Lexicon, LexiconManifestFile, VideoRecord,
};

pub const DEFAULT_ENCODER_SEED: u64 = 0;
pub const DATASET_FILE: &str = "dataset.json";
pub const LEXICON_FILE: &str = "lexicon.json";

const VOCAB: &[&str] = &[
    "archery",
    "bowling",
    "climbing",
    "dancing",
    "fencing",
    "juggling",
    "kayaking",
    "surfing",
    "skating",
    "rowing",
    "boxing",
    "diving",
    "hiking",
    "knitting",
    "painting",
    "skiing",
    "sailing",
    "drumming",
    "welding",
    "baking",
    "running",
    "swimming",
    "yodeling",
    "wrestling",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub classes: usize,
    pub videos: usize,
    pub frames: usize,
    pub dim: usize,
    pub noise_frames: usize,
    pub seed: u64,
    pub encoder_seed: u64,
    /// Standard deviation of the perturbation added to class embeddings to
    /// form word embeddings.
    pub word_noise: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            classes: 8,
            videos: 64,
            frames: 8,
            dim: 32,
            noise_frames: 0,
            seed: 0,
            encoder_seed: DEFAULT_ENCODER_SEED,
            word_noise: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    pub dataset: DatasetManifest,
    pub lexicon: Lexicon,
}

pub fn class_name(i: usize) -> String {
    let base = VOCAB[i % VOCAB.len()];
    match i / VOCAB.len() {
        0 => base.to_string(),
        round => format!("{base} {round}"),
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

/// Columns of `u` mapped to the nearest orthonormal set, `U (U^T U)^{-1/2}`,
/// followed by one Gram-Schmidt sweep to clean up rounding.
fn symmetric_orthonormalize(rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let (k, d) = (rows.len(), rows[0].len());
    let u = DMatrix::from_fn(d, k, |r, c| rows[c][r]);
    let eig = SymmetricEigen::new(u.transpose() * &u);
    if eig.eigenvalues.iter().any(|&l| l <= 1e-12) {
        return Err(Error::InvalidArgument("class encodings are linearly dependent".into()));
    }
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let w = &u * (&eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose());
    let mut out: Vec<Vec<f64>> = (0..k).map(|c| w.column(c).iter().copied().collect()).collect();
    for i in 0..k {
        for j in 0..i {
            let p = dot(&out[i], &out[j]);
            let prev = out[j].clone();
            out[i].iter_mut().zip(&prev).for_each(|(x, y)| *x -= p * y);
        }
        normalize_in_place(&mut out[i])?;
    }
    Ok(out)
}

/// Random unit vector orthogonal to every row of `basis` (assumed orthonormal).
fn orthogonal_noise(rng: &mut ChaCha8Rng, basis: &[Vec<f64>], dim: usize) -> Vec<f64> {
    loop {
        let mut v = gaussian(rng, dim);
        // two passes keep the residual component at rounding level
        for _ in 0..2 {
            for b in basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        if normalize_in_place(&mut v).is_ok() {
            return v;
        }
    }
}

pub fn gen_synthetic(p: &SyntheticParams) -> Result<SyntheticSet> {
    if p.classes < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 classes, got {}", p.classes)));
    }
    if p.dim < p.classes || (p.noise_frames > 0 && p.dim == p.classes) {
        return Err(Error::DimTooSmall { dim: p.dim, classes: p.classes });
    }
    if p.frames == 0 || p.noise_frames >= p.frames {
        return Err(Error::InvalidArgument(format!(
            "need at least one class frame: frames = {}, noise frames = {}",
            p.frames, p.noise_frames
        )));
    }
    if p.videos == 0 {
        return Err(Error::InvalidArgument("need at least one video".into()));
    }
    let names: Vec<String> = (0..p.classes).map(class_name).collect();
    let encodings = names
        .iter()
        .map(|n| Ok(surrogate_encode(&apply_prompt(DEFAULT_PREFIX, n)?, p.dim, p.encoder_seed)?.into_inner()))
        .collect::<Result<Vec<_>>>()?;
    let cls = symmetric_orthonormalize(&encodings)?;

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut categories = Vec::with_capacity(p.classes);
    for (i, name) in names.iter().enumerate() {
        let words: Vec<Vec<f64>> = name
            .split_whitespace()
            .map(|_| {
                let mut w: Vec<f64> = gaussian(&mut rng, p.dim).into_iter().zip(&cls[i]).map(|(g, c)| c + p.word_noise * g).collect();
                normalize_in_place(&mut w).map(|_| w)
            })
            .collect::<Result<_>>()?;
        categories.push(CategoryEntry::new(name.clone(), i, Vector::new(cls[i].clone())?, Matrix::from_rows(&words)?)?);
    }

    let mut videos = Vec::with_capacity(p.videos);
    for v in 0..p.videos {
        let label = v % p.classes;
        let noise_at = sample(&mut rng, p.frames, p.noise_frames).into_vec();
        let rows: Vec<Vec<f64>> = (0..p.frames)
            .map(|t| if noise_at.contains(&t) { orthogonal_noise(&mut rng, &cls, p.dim) } else { cls[label].clone() })
            .collect();
        videos.push(LabeledVideo { frames: FrameEmbeddings::new(format!("vid{v:04}"), Matrix::from_rows(&rows)?)?, label });
    }

    let dataset = DatasetManifest::new(p.dim, categories, videos)?;
    let lexicon = Lexicon::new(names, Matrix::from_rows(&cls)?)?;
    Ok(SyntheticSet { dataset, lexicon })
}

/// Writes `dataset.json`, `lexicon.json` and the BEMB files they reference.
/// Returns the dataset manifest path.
pub fn write_synthetic(set: &SyntheticSet, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    for sub in ["categories", "videos"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let ds = &set.dataset;
    let mut categories = Vec::new();
    for c in ds.categories() {
        let cls_bemb = PathBuf::from(format!("categories/c{:03}_cls.bemb", c.label));
        let words_bemb = PathBuf::from(format!("categories/c{:03}_words.bemb", c.label));
        write_bemb(dir.join(&cls_bemb), &Matrix::from_rows(&[c.cls_embedding().as_slice()])?)?;
        write_bemb(dir.join(&words_bemb), c.word_embeddings())?;
        categories.push(CategoryRecord { name: c.name.clone(), label: c.label, cls_bemb, words_bemb });
    }
    let mut videos = Vec::new();
    for v in ds.videos() {
        let frames_bemb = PathBuf::from(format!("videos/{}.bemb", v.frames.video_id));
        write_bemb(dir.join(&frames_bemb), v.frames.frames())?;
        videos.push(VideoRecord { id: v.frames.video_id.clone(), frames_bemb, label: v.label });
    }
    let manifest = dir.join(DATASET_FILE);
    write_json(&manifest, &DatasetManifestFile { dim: ds.dim(), categories, videos })?;

    let lex_bemb = PathBuf::from("lexicon.bemb");
    write_bemb(dir.join(&lex_bemb), set.lexicon.embeddings())?;
    write_json(
        dir.join(LEXICON_FILE),
        &LexiconManifestFile { dim: set.lexicon.dim(), phrases: set.lexicon.phrases().to_vec(), embeddings_bemb: lex_bemb },
    )?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_embeddings_are_orthonormal() {
        let p = SyntheticParams { classes: 4, dim: 8, videos: 4, ..Default::default() };
        let s = gen_synthetic(&p).unwrap();
        let cats = s.dataset.categories();
        for i in 0..4 {
            for j in 0..4 {
                let c = dot(cats[i].cls_embedding().as_slice(), cats[j].cls_embedding().as_slice());
                if i == j {
                    assert!((c - 1.0).abs() < 1e-12);
                } else {
                    assert!(c.abs() < 1e-10, "{i},{j}: {c}");
                }
            }
        }
    }

    #[test]
    fn noise_frames_are_orthogonal_to_classes() {
        let p = SyntheticParams { noise_frames: 4, ..Default::default() };
        let s = gen_synthetic(&p).unwrap();
        let cats = s.dataset.categories();
        for v in s.dataset.videos() {
            let mut signal = 0;
            for row in v.frames.frames().iter_rows() {
                let own = dot(row, cats[v.label].cls_embedding().as_slice());
                if (own - 1.0).abs() < 1e-12 {
                    signal += 1;
                } else {
                    for c in cats {
                        assert!(dot(row, c.cls_embedding().as_slice()).abs() < 1e-12);
                    }
                }
            }
            assert_eq!(signal, 4);
        }
    }

    #[test]
    fn parameter_validation() {
        let small = SyntheticParams { classes: 8, dim: 4, ..Default::default() };
        assert!(matches!(gen_synthetic(&small), Err(Error::DimTooSmall { .. })));
        let no_room = SyntheticParams { classes: 4, dim: 4, noise_frames: 1, ..Default::default() };
        assert!(matches!(gen_synthetic(&no_room), Err(Error::DimTooSmall { .. })));
        let all_noise = SyntheticParams { frames: 4, noise_frames: 4, ..Default::default() };
        assert!(matches!(gen_synthetic(&all_noise), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn names_are_distinct() {
        let names: std::collections::HashSet<String> = (0..100).map(class_name).collect();
        assert_eq!(names.len(), 100);
    }
}
