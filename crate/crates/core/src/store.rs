//! Embedding ingestion: the BEMB binary matrix format, JSON manifests that tie
//! embedding files to videos, categories and lexicon phrases, and a seeded
//! surrogate text encoder for running the pipeline without a neural runtime.
//!
//! BEMB layout (all integers little-endian):
//!
//! | bytes  | content                                   |
//! |--------|-------------------------------------------|
//! | 0..4   | magic `b"BEMB"`                           |
//! | 4..8   | version, `u32` = 1                        |
//! | 8..12  | rows, `u32`                               |
//! | 12..16 | cols, `u32`                               |
//! | 16..   | `rows * cols` IEEE-754 `f32`, row-major   |
//!
//! No trailing bytes are permitted.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{normalize_in_place, Matrix, Vector};

pub const BEMB_MAGIC: [u8; 4] = *b"BEMB";
pub const BEMB_VERSION: u32 = 1;
pub const BEMB_HEADER_LEN: usize = 16;

/// Rows are re-normalized on load; this is how far from unit they may end up.
pub const UNIT_NORM_TOL: f64 = 1e-6;

pub fn encode_bemb(m: &Matrix) -> Result<Vec<u8>> {
    let (rows, cols) = (m.rows(), m.cols());
    let (Ok(r32), Ok(c32)) = (u32::try_from(rows), u32::try_from(cols)) else {
        return Err(Error::DimOverflow { rows: rows as u64, cols: cols as u64 });
    };
    let mut buf = Vec::with_capacity(BEMB_HEADER_LEN + 4 * rows * cols);
    buf.extend_from_slice(&BEMB_MAGIC);
    buf.extend_from_slice(&BEMB_VERSION.to_le_bytes());
    buf.extend_from_slice(&r32.to_le_bytes());
    buf.extend_from_slice(&c32.to_le_bytes());
    for &v in m.as_slice() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::NonFinite);
        }
        buf.extend_from_slice(&f.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_bemb(bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < BEMB_HEADER_LEN {
        return Err(Error::TruncatedFile { expected: BEMB_HEADER_LEN as u64, found: bytes.len() as u64 });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != BEMB_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = word(4);
    if version != BEMB_VERSION {
        return Err(Error::BadVersion(version));
    }
    let (rows, cols) = (word(8) as u64, word(12) as u64);
    let payload = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .filter(|&n| rows > 0 && cols > 0 && usize::try_from(n).is_ok())
        .ok_or(Error::DimOverflow { rows, cols })?;
    let expected = BEMB_HEADER_LEN as u64 + payload;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(Error::TruncatedFile { expected, found });
    }
    if found > expected {
        return Err(Error::TrailingBytes(found - expected));
    }
    let data = bytes[BEMB_HEADER_LEN..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    Matrix::new(rows as usize, cols as usize, data)
}

pub fn write_bemb(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_bemb(m)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_bemb(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bemb(&bytes)
}

/// Frame embeddings of one video, rows normalized to unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEmbeddings {
    pub video_id: String,
    frames: Matrix,
}

impl FrameEmbeddings {
    pub fn new(video_id: impl Into<String>, frames: Matrix) -> Result<Self> {
        Ok(FrameEmbeddings { video_id: video_id.into(), frames: frames.normalized_rows()? })
    }

    pub fn frames(&self) -> &Matrix {
        &self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

/// A class with its sentence-level embedding and one embedding per word.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryEntry {
    pub name: String,
    pub label: usize,
    cls_embedding: Vector,
    word_embeddings: Matrix,
}

impl CategoryEntry {
    pub fn new(name: impl Into<String>, label: usize, cls_embedding: Vector, word_embeddings: Matrix) -> Result<Self> {
        if cls_embedding.dim() != word_embeddings.cols() {
            return Err(Error::DimMismatch { expected: cls_embedding.dim(), got: word_embeddings.cols() });
        }
        Ok(CategoryEntry {
            name: name.into(),
            label,
            cls_embedding: crate::numerics::l2_normalize(&cls_embedding)?,
            word_embeddings: word_embeddings.normalized_rows()?,
        })
    }

    pub fn cls_embedding(&self) -> &Vector {
        &self.cls_embedding
    }

    pub fn word_embeddings(&self) -> &Matrix {
        &self.word_embeddings
    }

    pub fn dim(&self) -> usize {
        self.cls_embedding.dim()
    }
}

/// Ordered phrases with one unit-norm embedding row each.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    phrases: Vec<String>,
    embeddings: Matrix,
}

impl Lexicon {
    pub fn new(phrases: Vec<String>, embeddings: Matrix) -> Result<Self> {
        if phrases.len() != embeddings.rows() {
            return Err(Error::LengthMismatch { expected: embeddings.rows(), got: phrases.len() });
        }
        Ok(Lexicon { phrases, embeddings: embeddings.normalized_rows()? })
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVideo {
    pub frames: FrameEmbeddings,
    pub label: usize,
}

/// Categories indexed by label, plus labeled videos. All share one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    dim: usize,
    categories: Vec<CategoryEntry>,
    videos: Vec<LabeledVideo>,
}

impl DatasetManifest {
    /// Categories are reordered by label; labels must then be exactly `0..K`.
    pub fn new(dim: usize, mut categories: Vec<CategoryEntry>, videos: Vec<LabeledVideo>) -> Result<Self> {
        if categories.is_empty() {
            return Err(Error::Manifest("no categories".into()));
        }
        categories.sort_by_key(|c| c.label);
        for (i, c) in categories.iter().enumerate() {
            if c.label != i {
                return Err(Error::Manifest(format!(
                    "category labels must be 0..{} without gaps or repeats; found {} at position {i}",
                    categories.len(),
                    c.label
                )));
            }
            if c.dim() != dim {
                return Err(Error::DimMismatch { expected: dim, got: c.dim() });
            }
        }
        for v in &videos {
            if v.label >= categories.len() {
                return Err(Error::UnknownLabel { label: v.label, categories: categories.len() });
            }
            if v.frames.dim() != dim {
                return Err(Error::DimMismatch { expected: dim, got: v.frames.dim() });
            }
        }
        Ok(DatasetManifest { dim, categories, videos })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn categories(&self) -> &[CategoryEntry] {
        &self.categories
    }

    pub fn videos(&self) -> &[LabeledVideo] {
        &self.videos
    }

    /// Keeps only the given classes (by original label) and the videos that
    /// belong to them. Retained classes are relabeled `0..k` in ascending
    /// order of their original label.
    pub fn restrict_to_classes(&self, labels: &[usize]) -> Result<Self> {
        let mut keep: Vec<usize> = labels.to_vec();
        keep.sort_unstable();
        keep.dedup();
        let mut remap = vec![None; self.categories.len()];
        let mut categories = Vec::with_capacity(keep.len());
        for (new, &old) in keep.iter().enumerate() {
            let c = self.categories.get(old).ok_or(Error::UnknownLabel { label: old, categories: self.categories.len() })?;
            remap[old] = Some(new);
            categories.push(CategoryEntry { label: new, ..c.clone() });
        }
        let videos =
            self.videos.iter().filter_map(|v| remap[v.label].map(|l| LabeledVideo { frames: v.frames.clone(), label: l })).collect();
        DatasetManifest::new(self.dim, categories, videos)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRecord {
    pub name: String,
    pub label: usize,
    pub cls_bemb: PathBuf,
    pub words_bemb: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: String,
    pub frames_bemb: PathBuf,
    pub label: usize,
}

/// On-disk form of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifestFile {
    pub dim: usize,
    pub categories: Vec<CategoryRecord>,
    pub videos: Vec<VideoRecord>,
}

/// On-disk form of a lexicon manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconManifestFile {
    pub dim: usize,
    pub phrases: Vec<String>,
    pub embeddings_bemb: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ManifestFile {
    Lexicon(LexiconManifestFile),
    Dataset(DatasetManifestFile),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Manifest {
    Dataset(DatasetManifest),
    Lexicon(Lexicon),
}

fn read_checked(base: &Path, rel: &Path, dim: usize) -> Result<Matrix> {
    let m = read_bemb(base.join(rel))?;
    if m.cols() != dim {
        return Err(Error::DimMismatch { expected: dim, got: m.cols() });
    }
    Ok(m)
}

/// Loads either kind of manifest; relative paths resolve against its directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed: ManifestFile = serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    match parsed {
        ManifestFile::Dataset(f) => resolve_dataset(base, &f).map(Manifest::Dataset),
        ManifestFile::Lexicon(f) => resolve_lexicon(base, &f).map(Manifest::Lexicon),
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    match load_manifest(path.as_ref())? {
        Manifest::Dataset(d) => Ok(d),
        Manifest::Lexicon(_) => Err(Error::Manifest(format!("{} is a lexicon manifest, expected a dataset", path.as_ref().display()))),
    }
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon> {
    match load_manifest(path.as_ref())? {
        Manifest::Lexicon(l) => Ok(l),
        Manifest::Dataset(_) => Err(Error::Manifest(format!("{} is a dataset manifest, expected a lexicon", path.as_ref().display()))),
    }
}

fn resolve_dataset(base: &Path, f: &DatasetManifestFile) -> Result<DatasetManifest> {
    let mut categories = Vec::with_capacity(f.categories.len());
    for c in &f.categories {
        let cls = read_checked(base, &c.cls_bemb, f.dim)?;
        if cls.rows() != 1 {
            return Err(Error::Manifest(format!("{}: class embedding must have one row, found {}", c.cls_bemb.display(), cls.rows())));
        }
        let words = read_checked(base, &c.words_bemb, f.dim)?;
        let cls = Vector::new(cls.row(0).to_vec())?;
        categories.push(CategoryEntry::new(c.name.clone(), c.label, cls, words)?);
    }
    let k = categories.len();
    let mut videos = Vec::with_capacity(f.videos.len());
    for v in &f.videos {
        if v.label >= k {
            return Err(Error::UnknownLabel { label: v.label, categories: k });
        }
        let frames = read_checked(base, &v.frames_bemb, f.dim)?;
        videos.push(LabeledVideo { frames: FrameEmbeddings::new(v.id.clone(), frames)?, label: v.label });
    }
    DatasetManifest::new(f.dim, categories, videos)
}

fn resolve_lexicon(base: &Path, f: &LexiconManifestFile) -> Result<Lexicon> {
    let emb = read_checked(base, &f.embeddings_bemb, f.dim)?;
    Lexicon::new(f.phrases.clone(), emb)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Unit vector for one token, fully determined by `(token, dim, seed)`.
pub fn token_vector(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(b"bike-surrogate-v1");
    h.update(seed.to_le_bytes());
    h.update(token.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        if normalize_in_place(&mut v).is_ok() {
            return v;
        }
    }
}

fn check_surrogate_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        return Err(Error::InvalidArgument(format!("surrogate dimension must be >= 2, got {dim}")));
    }
    Ok(())
}

/// Deterministic stand-in for a text encoder: lowercase, split on whitespace,
/// average the per-token vectors, normalize.
pub fn surrogate_encode(text: &str, dim: usize, seed: u64) -> Result<Vector> {
    check_surrogate_dim(dim)?;
    let toks = tokens(text);
    if toks.is_empty() {
        return Err(Error::EmptyText);
    }
    // sort so the summation order, and therefore every bit, is independent of word order
    let mut vecs: Vec<Vec<f64>> = toks.iter().map(|t| token_vector(t, dim, seed)).collect();
    vecs.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    let mut mean = vec![0.0; dim];
    for v in &vecs {
        mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
    }
    let n = vecs.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    normalize_in_place(&mut mean)?;
    Vector::new(mean)
}

/// One surrogate row per whitespace-separated word of a class name.
pub fn word_embeddings_of(name: &str, dim: usize, seed: u64) -> Result<Matrix> {
    check_surrogate_dim(dim)?;
    let toks = tokens(name);
    if toks.is_empty() {
        return Err(Error::EmptyText);
    }
    let rows: Vec<Vec<f64>> = toks.iter().map(|t| token_vector(t, dim, seed)).collect();
    Matrix::from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bemb_round_trip_and_layout() {
        let m = Matrix::from_rows(&[[1.0, -2.5, 3.25], [0.0, 1e-3, 7.0]]).unwrap();
        let bytes = encode_bemb(&m).unwrap();
        assert_eq!(&bytes[0..4], b"BEMB");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[2, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &[3, 0, 0, 0]);
        assert_eq!(bytes.len(), 16 + 6 * 4);
        assert_eq!(&bytes[20..24], &(-2.5f32).to_le_bytes());
        let back = decode_bemb(&bytes).unwrap();
        let expect: Vec<f64> = m.as_slice().iter().map(|&v| v as f32 as f64).collect();
        assert_eq!(back.as_slice(), expect.as_slice());
        assert_eq!((back.rows(), back.cols()), (2, 3));
    }

    #[test]
    fn bemb_rejects_corruption() {
        let m = Matrix::new(10, 2, vec![0.5; 20]).unwrap();
        let mut bytes = encode_bemb(&m).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_bemb(&bad), Err(Error::BadMagic(_))));

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(decode_bemb(&bad), Err(Error::BadVersion(2))));

        // header says 10 rows, payload holds 9
        let short = &bytes[..bytes.len() - 8];
        assert!(matches!(decode_bemb(short), Err(Error::TruncatedFile { .. })));
        assert!(matches!(decode_bemb(&bytes[..7]), Err(Error::TruncatedFile { .. })));

        bytes.push(0);
        assert!(matches!(decode_bemb(&bytes), Err(Error::TrailingBytes(1))));

        let mut huge = encode_bemb(&m).unwrap()[..16].to_vec();
        huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_bemb(&huge), Err(Error::DimOverflow { .. }) | Err(Error::TruncatedFile { .. })));
        huge[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_bemb(&huge), Err(Error::DimOverflow { .. })));
    }

    #[test]
    fn bemb_refuses_values_outside_f32() {
        let m = Matrix::new(1, 1, vec![1e300]).unwrap();
        assert!(matches!(encode_bemb(&m), Err(Error::NonFinite)));
    }

    #[test]
    fn surrogate_is_deterministic_and_unit() {
        let a = surrogate_encode("Juggling soccer ball", 32, 9).unwrap();
        let b = surrogate_encode("juggling  soccer ball", 32, 9).unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-12);
        let c = surrogate_encode("juggling soccer ball", 32, 10).unwrap();
        assert_ne!(a, c);
        assert_eq!(surrogate_encode("a b", 16, 3).unwrap(), surrogate_encode("b a", 16, 3).unwrap());
        assert!(matches!(surrogate_encode("   ", 16, 3), Err(Error::EmptyText)));
    }

    #[test]
    fn word_embeddings_examples() {
        assert_eq!(word_embeddings_of("kicking soccer ball", 8, 0).unwrap().rows(), 3);
        let one = word_embeddings_of("archery", 8, 0).unwrap();
        assert_eq!(one.rows(), 1);
        assert_eq!(one.row(0), surrogate_encode("archery", 8, 0).unwrap().as_slice());
        assert!(matches!(word_embeddings_of("", 8, 0), Err(Error::EmptyText)));
    }

    proptest! {
        #[test]
        fn bemb_round_trip_is_exact_for_f32_values(
            rows in 1usize..6,
            cols in 1usize..9,
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen::<f32>() as f64 * 200.0 - 100.0).collect();
            let data: Vec<f64> = data.into_iter().map(|v| v as f32 as f64).collect();
            let m = Matrix::new(rows, cols, data).unwrap();
            prop_assert_eq!(decode_bemb(&encode_bemb(&m).unwrap()).unwrap(), m);
        }

        #[test]
        fn surrogate_output_is_unit(text in "[a-z]{1,8}( [a-z]{1,8}){0,5}", seed in any::<u64>(), dim in 2usize..64) {
            let v = surrogate_encode(&text, dim, seed).unwrap();
            prop_assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }
}
