//! Video-to-text direction: look up the lexicon phrases closest to a video,
//! wrap them in a prompt, and embed the resulting sentence.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::concept_spotting::mean_pool;
use crate::error::{Error, Result};
use crate::numerics::{cosine, l2_normalize, Vector};
use crate::store::{surrogate_encode, FrameEmbeddings, Lexicon};

pub const DEFAULT_PREFIX: &str = "This is a video about {}";
pub const DEFAULT_K_ATTRIBUTES: usize = 5;
pub const PHRASE_JOINER: &str = ", ";
const PLACEHOLDER: &str = "{}";

/// Top-k lexicon phrases for one video, highest cosine first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSet {
    pub phrases: Vec<ScoredPhrase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPhrase {
    pub index: usize,
    pub phrase: String,
    pub score: f64,
}

impl AttributeSet {
    pub fn k(&self) -> usize {
        self.phrases.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeSentence {
    pub text: String,
    pub prefix: String,
    pub embedding: Vector,
}

/// Where the sentence embedding comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum SentenceEncoder {
    Surrogate { seed: u64 },
    Ingested(Vector),
}

/// Normalized mean of the frame rows.
pub fn retrieval_embedding(frames: &FrameEmbeddings) -> Result<Vector> {
    l2_normalize(&mean_pool(frames).embedding)
}

/// Descending by score, ascending index on ties.
pub(crate) fn rank_desc(a: (usize, f64), b: (usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

pub fn retrieve_attributes(vemb: &Vector, lexicon: &Lexicon, k: usize) -> Result<AttributeSet> {
    if k == 0 || k > lexicon.len() {
        return Err(Error::BadK { k, max: lexicon.len() });
    }
    if vemb.dim() != lexicon.dim() {
        return Err(Error::DimMismatch { expected: lexicon.dim(), got: vemb.dim() });
    }
    let mut scored = lexicon
        .embeddings()
        .iter_rows()
        .map(|row| cosine(vemb.as_slice(), row))
        .enumerate()
        .map(|(i, s)| s.map(|s| (i, s)))
        .collect::<Result<Vec<_>>>()?;
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, |a, b| rank_desc(*a, *b));
        scored.truncate(k);
    }
    scored.sort_unstable_by(|a, b| rank_desc(*a, *b));
    let phrases =
        scored.into_iter().map(|(index, score)| ScoredPhrase { index, phrase: lexicon.phrases()[index].clone(), score }).collect();
    Ok(AttributeSet { phrases })
}

/// Substitutes `template`'s first `{}` with a string. Prompt-free runs use
/// the bare template `"{}"`.
pub fn apply_prompt(template: &str, body: &str) -> Result<String> {
    if !template.contains(PLACEHOLDER) {
        return Err(Error::MissingPlaceholder(template.to_string()));
    }
    Ok(template.replacen(PLACEHOLDER, body, 1))
}

pub fn build_attribute_sentence(attrs: &AttributeSet, prefix: &str) -> Result<String> {
    if attrs.phrases.is_empty() {
        return Err(Error::EmptyAttributes);
    }
    let joined = attrs.phrases.iter().map(|p| p.phrase.as_str()).collect::<Vec<_>>().join(PHRASE_JOINER);
    apply_prompt(prefix, &joined)
}

pub fn attribute_embedding(sentence: &str, dim: usize, source: &SentenceEncoder) -> Result<Vector> {
    if sentence.trim().is_empty() {
        return Err(Error::EmptyText);
    }
    match source {
        SentenceEncoder::Surrogate { seed } => surrogate_encode(sentence, dim, *seed),
        SentenceEncoder::Ingested(v) => {
            if v.dim() != dim {
                return Err(Error::DimMismatch { expected: dim, got: v.dim() });
            }
            l2_normalize(v)
        }
    }
}

/// Retrieval, sentence assembly and embedding for one video.
pub fn describe_video(
    frames: &FrameEmbeddings,
    lexicon: &Lexicon,
    k: usize,
    prefix: &str,
    encoder: &SentenceEncoder,
) -> Result<(AttributeSet, AttributeSentence)> {
    let attrs = retrieve_attributes(&retrieval_embedding(frames)?, lexicon, k)?;
    let text = build_attribute_sentence(&attrs, prefix)?;
    let embedding = attribute_embedding(&text, frames.dim(), encoder)?;
    Ok((attrs, AttributeSentence { text, prefix: prefix.to_string(), embedding }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    fn lexicon(rows: &[&[f64]]) -> Lexicon {
        let phrases = (0..rows.len()).map(|i| format!("p{i}")).collect();
        Lexicon::new(phrases, Matrix::from_rows(rows).unwrap()).unwrap()
    }

    fn set(phrases: &[&str]) -> AttributeSet {
        AttributeSet {
            phrases: phrases.iter().enumerate().map(|(i, p)| ScoredPhrase { index: i, phrase: p.to_string(), score: 1.0 }).collect(),
        }
    }

    #[test]
    fn retrieval_embedding_examples() {
        let single = FrameEmbeddings::new("v", Matrix::from_rows(&[[0.6, 0.8]]).unwrap()).unwrap();
        assert_eq!(retrieval_embedding(&single).unwrap().as_slice(), &[0.6, 0.8]);
        let two = FrameEmbeddings::new("v", Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap()).unwrap();
        let r = retrieval_embedding(&two).unwrap();
        assert!((r.as_slice()[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((r.as_slice()[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        let cancel = FrameEmbeddings::new("v", Matrix::from_rows(&[[0.6, 0.8], [-0.6, -0.8]]).unwrap()).unwrap();
        assert!(matches!(retrieval_embedding(&cancel), Err(Error::ZeroVector)));
    }

    #[test]
    fn retrieval_orders_by_cosine() {
        // cosines with (1, 0): 0.9, 0.5, 0.1
        let c = |x: f64| [x, (1.0 - x * x).sqrt()];
        let (a, b, d) = (c(0.9), c(0.5), c(0.1));
        let lex = lexicon(&[&d, &a, &b]);
        let v = Vector::new(vec![1.0, 0.0]).unwrap();
        let got = retrieve_attributes(&v, &lex, 2).unwrap();
        let idx: Vec<usize> = got.phrases.iter().map(|p| p.index).collect();
        assert_eq!(idx, vec![1, 2]);
        assert!((got.phrases[0].score - 0.9).abs() < 1e-12);

        let all = retrieve_attributes(&v, &lex, 3).unwrap();
        let idx: Vec<usize> = all.phrases.iter().map(|p| p.index).collect();
        assert_eq!(idx, vec![1, 2, 0]);
    }

    #[test]
    fn retrieval_breaks_ties_by_index() {
        let lex = lexicon(&[&[0.0, 1.0], &[0.0, -1.0], &[0.6, 0.8], &[-1.0, 0.0], &[0.0, 1.0], &[0.6, 0.8]]);
        let v = Vector::new(vec![1.0, 0.0]).unwrap();
        let got = retrieve_attributes(&v, &lex, 1).unwrap();
        assert_eq!(got.phrases[0].index, 2);
        let got = retrieve_attributes(&v, &lex, 2).unwrap();
        assert_eq!(got.phrases.iter().map(|p| p.index).collect::<Vec<_>>(), vec![2, 5]);
    }

    #[test]
    fn retrieval_errors() {
        let lex = lexicon(&[&[1.0, 0.0]]);
        let v = Vector::new(vec![1.0, 0.0]).unwrap();
        assert!(matches!(retrieve_attributes(&v, &lex, 0), Err(Error::BadK { .. })));
        assert!(matches!(retrieve_attributes(&v, &lex, 2), Err(Error::BadK { .. })));
        let v3 = Vector::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(retrieve_attributes(&v3, &lex, 1), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn sentence_examples() {
        assert_eq!(
            build_attribute_sentence(&set(&["juggling soccer ball", "shooting goal"]), DEFAULT_PREFIX).unwrap(),
            "This is a video about juggling soccer ball, shooting goal"
        );
        assert_eq!(build_attribute_sentence(&set(&["archery"]), DEFAULT_PREFIX).unwrap(), "This is a video about archery");
        assert_eq!(build_attribute_sentence(&set(&["a", "b"]), "{}").unwrap(), "a, b");
        assert!(matches!(build_attribute_sentence(&set(&["a"]), "no slot"), Err(Error::MissingPlaceholder(_))));
        assert!(matches!(build_attribute_sentence(&set(&[]), DEFAULT_PREFIX), Err(Error::EmptyAttributes)));
    }

    #[test]
    fn embedding_sources() {
        let enc = SentenceEncoder::Surrogate { seed: 4 };
        let a = attribute_embedding("This is a video about archery", 16, &enc).unwrap();
        let b = attribute_embedding("This is a video about archery", 16, &enc).unwrap();
        assert_eq!(a, b);

        let ing = SentenceEncoder::Ingested(Vector::new(vec![0.0, 2.0, 0.0]).unwrap());
        assert_eq!(attribute_embedding("x", 3, &ing).unwrap().as_slice(), &[0.0, 1.0, 0.0]);
        assert!(matches!(attribute_embedding(" ", 16, &enc), Err(Error::EmptyText)));
    }
}
