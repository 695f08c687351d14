//! Deterministic conditioning and latent codec stand-ins.
//!
//! Prompts are embedded one vector per whitespace-delimited word, each vector
//! a unit-normalized Gaussian draw keyed by a hash of the word and the
//! embedder seed. Images map to latents by exact `p x p` patch flattening.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::latent::{LatentTensor, SeededRng};
use crate::raster::Image;

pub const EMBED_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptEmbedding {
    tokens: Vec<Vec<f64>>,
    text_span: (usize, usize),
    source_text: String,
}

impl PromptEmbedding {
    pub fn tokens(&self) -> &[Vec<f64>] {
        &self.tokens
    }

    /// Inclusive `(start, end)` token indices of the quoted scene text.
    pub fn text_span(&self) -> (usize, usize) {
        self.text_span
    }

    pub fn source_text(&self) -> &str {
        &self.source_text
    }

    pub fn span_tokens(&self) -> &[Vec<f64>] {
        &self.tokens[self.text_span.0..=self.text_span.1]
    }
}

/// Strips leading and trailing punctuation so `'CAT'.` and `CAT` share a vector.
pub fn normalize_word(word: &str) -> &str {
    word.trim_matches(|c: char| !c.is_alphanumeric())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn embed_word(word: &str, seed: u64) -> Vec<f64> {
    let key = fnv1a(normalize_word(word).as_bytes());
    let mut rng = SeededRng::with_stream(seed, key);
    let v = rng.normals(EMBED_DIM);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Embeds `text` and marks the tokens of `span_text`, which must occur exactly once.
pub fn embed_prompt(text: &str, span_text: &str, seed: u64) -> Result<PromptEmbedding> {
    let words: Vec<&str> = text.split_whitespace().map(normalize_word).collect();
    let needle: Vec<&str> = span_text.split_whitespace().map(normalize_word).collect();
    if needle.is_empty() {
        return Err(Error::invalid("empty span text"));
    }
    let hits: Vec<usize> = (0..words.len().saturating_sub(needle.len() - 1))
        .filter(|&i| words[i..i + needle.len()] == needle[..])
        .collect();
    match hits.as_slice() {
        [start] => embed_prompt_span(text, (*start, start + needle.len() - 1), seed),
        [] => Err(Error::invalid(format!("span {span_text:?} not found in {text:?}"))),
        _ => Err(Error::invalid(format!("span {span_text:?} is ambiguous in {text:?}"))),
    }
}

/// Embeds `text` with an explicit inclusive token span.
pub fn embed_prompt_span(text: &str, span: (usize, usize), seed: u64) -> Result<PromptEmbedding> {
    let tokens: Vec<Vec<f64>> = text.split_whitespace().map(|w| embed_word(w, seed)).collect();
    if span.0 > span.1 || span.1 >= tokens.len() {
        return Err(Error::invalid(format!(
            "span {span:?} outside {} tokens",
            tokens.len()
        )));
    }
    Ok(PromptEmbedding {
        tokens,
        text_span: span,
        source_text: text.to_string(),
    })
}

pub fn source_prompt(src: &str) -> String {
    format!("A picture with word '{src}'.")
}

pub fn target_prompt(src: &str, tar: &str) -> String {
    format!("Please replace the word '{src}' with '{tar}'.")
}

fn trailing_span(text: &str, quoted: &str) -> Result<(usize, usize)> {
    let n = text.split_whitespace().count();
    let k = quoted.split_whitespace().count();
    if k == 0 {
        return Err(Error::invalid("empty scene text"));
    }
    Ok((n - k, n - 1))
}

/// Source-description embedding; the span covers the quoted source word.
pub fn embed_source(src: &str, seed: u64) -> Result<PromptEmbedding> {
    let text = source_prompt(src);
    let span = trailing_span(&text, src)?;
    embed_prompt_span(&text, span, seed)
}

/// Replacement-instruction embedding; the span covers the quoted target word
/// (the last quote), so it stays well defined when `src == tar`.
pub fn embed_target(src: &str, tar: &str, seed: u64) -> Result<PromptEmbedding> {
    let text = target_prompt(src, tar);
    let span = trailing_span(&text, tar)?;
    embed_prompt_span(&text, span, seed)
}

/// Exact `p x p` patch codec between images and token latents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PatchCodec {
    pub patch: usize,
    pub channels: usize,
}

impl Default for PatchCodec {
    fn default() -> Self {
        Self { patch: 2, channels: 3 }
    }
}

impl PatchCodec {
    pub fn new(patch: usize, channels: usize) -> Result<Self> {
        if patch == 0 || channels == 0 {
            return Err(Error::invalid("patch and channels must be positive"));
        }
        Ok(Self { patch, channels })
    }

    pub fn token_dim(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    /// Latent grid `(rows, cols)` for an image of the given size.
    pub fn grid(&self, width: usize, height: usize) -> Result<(usize, usize)> {
        let p = self.patch;
        if width == 0 || height == 0 || width % p != 0 || height % p != 0 {
            return Err(Error::invalid(format!(
                "image {width}x{height} not divisible by patch {p}"
            )));
        }
        Ok((height / p, width / p))
    }

    /// Row-major patches; within a patch, rows then columns then channels.
    pub fn encode(&self, img: &Image) -> Result<LatentTensor> {
        if img.channels() != self.channels {
            return Err(Error::shape(format!(
                "codec expects {} channels, image has {}",
                self.channels,
                img.channels()
            )));
        }
        let (rows, cols) = self.grid(img.width(), img.height())?;
        let p = self.patch;
        let mut data = Vec::with_capacity(img.data().len());
        for gy in 0..rows {
            for gx in 0..cols {
                for dy in 0..p {
                    for dx in 0..p {
                        data.extend_from_slice(img.pixel(gx * p + dx, gy * p + dy));
                    }
                }
            }
        }
        LatentTensor::tokens(rows * cols, self.token_dim(), data)
    }

    pub fn decode(&self, z: &LatentTensor, width: usize, height: usize) -> Result<Image> {
        let (rows, cols) = self.grid(width, height)?;
        if z.shape() != [rows * cols, self.token_dim()] {
            return Err(Error::shape(format!(
                "latent {:?} does not match a {rows}x{cols} grid of dim {}",
                z.shape(),
                self.token_dim()
            )));
        }
        let p = self.patch;
        let c = self.channels;
        let mut img = Image::new(width, height, c, vec![0.0; width * height * c])?;
        for gy in 0..rows {
            for gx in 0..cols {
                let token = z.token(gy * cols + gx);
                for dy in 0..p {
                    for dx in 0..p {
                        let o = (dy * p + dx) * c;
                        img.pixel_mut(gx * p + dx, gy * p + dy)
                            .copy_from_slice(&token[o..o + c]);
                    }
                }
            }
        }
        Ok(img)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn span_by_position() {
        let e = embed_prompt("replace word CAT", "CAT", 5).unwrap();
        assert_eq!(e.tokens().len(), 3);
        assert_eq!(e.text_span(), (2, 2));
        assert_eq!(e, embed_prompt("replace word CAT", "CAT", 5).unwrap());
    }

    #[test]
    fn ambiguous_or_missing_span() {
        assert!(embed_prompt("CAT or CAT", "CAT", 1).is_err());
        assert!(embed_prompt("a dog", "CAT", 1).is_err());
        assert!(embed_prompt("a dog", "", 1).is_err());
    }

    #[test]
    fn embedding_locality() {
        let a = embed_prompt("one two three", "two", 9).unwrap();
        let b = embed_prompt("one TWO three", "TWO", 9).unwrap();
        assert_eq!(a.tokens()[0], b.tokens()[0]);
        assert_ne!(a.tokens()[1], b.tokens()[1]);
        assert_eq!(a.tokens()[2], b.tokens()[2]);
    }

    #[test]
    fn unit_norm_vectors() {
        let v = embed_word("HELLO", 3);
        let n: f64 = v.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
        assert_eq!(v.len(), EMBED_DIM);
    }

    #[test]
    fn templates_mark_quoted_words() {
        let s = embed_source("CAT", 0).unwrap();
        assert_eq!(s.source_text(), "A picture with word 'CAT'.");
        assert_eq!(s.text_span(), (4, 4));
        let t = embed_target("CAT", "CAT", 0).unwrap();
        assert_eq!(t.text_span(), (6, 6));
        // quotes and the full stop are not part of the word identity
        assert_eq!(s.span_tokens(), t.span_tokens());
    }

    #[test]
    fn codec_shapes() {
        let codec = PatchCodec::new(2, 1).unwrap();
        let img = Image::new(4, 4, 1, (0..16).map(|i| i as f64).collect()).unwrap();
        let z = codec.encode(&img).unwrap();
        assert_eq!(z.shape(), &[4, 4]);
        assert_eq!(z.token(0), &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(codec.decode(&z, 4, 4).unwrap(), img);

        let bad = Image::new(5, 4, 1, vec![0.0; 20]).unwrap();
        assert!(codec.encode(&bad).is_err());
        assert!(codec.decode(&z, 8, 4).is_err());
    }

    proptest! {
        #[test]
        fn codec_round_trip(gw in 1usize..5, gh in 1usize..5, p in 1usize..4, seed in any::<u64>()) {
            let codec = PatchCodec::new(p, 3).unwrap();
            let (w, h) = (gw * p, gh * p);
            let data = SeededRng::new(seed).normals(w * h * 3);
            let img = Image::new(w, h, 3, data).unwrap();
            let z = codec.encode(&img).unwrap();
            let back = codec.decode(&z, w, h).unwrap();
            prop_assert_eq!(&back, &img);
            prop_assert_eq!(codec.encode(&back).unwrap(), z);
        }
    }
}
