use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tokenizer::{is_special, Vocab, MASK, SEP};

use super::corpus::{Sample, SampleKind};

const DEFAULT_STOPWORDS: &str = include_str!("stopwords.txt");

/// Function words excluded from prompts and keyword lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stopwords(HashSet<String>);

impl Default for Stopwords {
    fn default() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }
}

impl Stopwords {
    pub fn parse(text: &str) -> Self {
        Self(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
        )
    }

    pub fn empty() -> Self {
        Self(HashSet::new())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    /// Not a stopword and not made only of punctuation.
    pub fn is_content(&self, word: &str) -> bool {
        !self.contains(word) && word.chars().any(char::is_alphanumeric)
    }

    /// Distinct content words in sentence order.
    pub fn content_words<'a>(&self, words: &[&'a str]) -> Vec<&'a str> {
        let mut seen = HashSet::new();
        words
            .iter()
            .copied()
            .filter(|w| self.is_content(w) && seen.insert(*w))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskTag {
    Translate,
    Denoise,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskUnit {
    /// Each BPE token is masked independently.
    #[default]
    Token,
    /// Each word is masked as a whole (all of its tokens).
    Word,
}

impl std::str::FromStr for MaskUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token" => Ok(MaskUnit::Token),
            "word" => Ok(MaskUnit::Word),
            _ => Err(Error::config(format!("unknown mask unit `{s}` (token|word)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub encoder_tokens: Vec<u32>,
    pub decoder_target: Vec<u32>,
    pub image: Option<Vec<f64>>,
    pub task_tag: TaskTag,
    pub kind: SampleKind,
    /// Keyword tokens appended after SEP (empty when unprompted).
    pub prompt: Vec<u32>,
}

/// Replaces non-special tokens by MASK with probability `ratio`.
pub fn mask_tokens(words: &[Vec<u32>], ratio: f64, unit: MaskUnit, rng: &mut Rng) -> Vec<u32> {
    let mut out = Vec::with_capacity(words.iter().map(Vec::len).sum());
    for word in words {
        match unit {
            MaskUnit::Token => {
                for &t in word {
                    out.push(if !is_special(t) && rng.bernoulli(ratio) { MASK } else { t });
                }
            }
            MaskUnit::Word => {
                let masked = rng.bernoulli(ratio);
                out.extend(word.iter().map(|&t| if masked && !is_special(t) { MASK } else { t }));
            }
        }
    }
    out
}

/// Masked caption as encoder input, clean caption as decoder target.
pub fn make_denoising_example(
    caption: &Sample,
    vocab: &Vocab,
    image: Option<Vec<f64>>,
    mask_ratio: f64,
    unit: MaskUnit,
    rng: &mut Rng,
) -> Result<TrainingExample> {
    if caption.kind != SampleKind::Caption {
        return Err(Error::input(format!("denoising needs a caption, got a {}", caption.kind)));
    }
    if !(0.0..=1.0).contains(&mask_ratio) {
        return Err(Error::config(format!("mask ratio {mask_ratio} outside [0, 1]")));
    }
    let words = vocab.encode_words(&caption.target);
    Ok(TrainingExample {
        encoder_tokens: mask_tokens(&words, mask_ratio, unit, rng),
        decoder_target: words.concat(),
        image,
        task_tag: TaskTag::Denoise,
        kind: SampleKind::Caption,
        prompt: Vec::new(),
    })
}

/// `k` distinct content words of `words`, `k` uniform in `[min_k, max_k]` and
/// clipped to what is available, kept in sentence order.
pub fn sample_pseudo_prompt<'a>(
    words: &[&'a str],
    stopwords: &Stopwords,
    min_k: usize,
    max_k: usize,
    rng: &mut Rng,
) -> Vec<&'a str> {
    let content = stopwords.content_words(words);
    if content.is_empty() {
        return Vec::new();
    }
    let k = rng.range_inclusive(min_k.min(max_k), max_k.max(min_k)).min(content.len());
    rng.choose_indices(content.len(), k)
        .into_iter()
        .map(|i| content[i])
        .collect()
}

/// `source ++ [SEP] ++ keywords`; empty keywords leave the source unchanged.
pub fn make_prompted_source(source: &[u32], keywords: &[u32]) -> Vec<u32> {
    let mut out = source.to_vec();
    if !keywords.is_empty() {
        out.push(SEP);
        out.extend_from_slice(keywords);
    }
    out
}

/// Part before the first SEP.
pub fn strip_prompt(tokens: &[u32]) -> &[u32] {
    let end = tokens.iter().position(|&t| t == SEP).unwrap_or(tokens.len());
    &tokens[..end]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn zero_ratio_keeps_tokens_and_full_ratio_masks_all() {
        let w = vec![vec![6, 7], vec![8], vec![SEP, 9]];
        let mut rng = Rng::new(1);
        assert_eq!(mask_tokens(&w, 0.0, MaskUnit::Token, &mut rng), vec![6, 7, 8, SEP, 9]);
        assert_eq!(mask_tokens(&w, 1.0, MaskUnit::Token, &mut rng), vec![MASK, MASK, MASK, SEP, MASK]);
        assert_eq!(mask_tokens(&w, 1.0, MaskUnit::Word, &mut rng), vec![MASK, MASK, MASK, SEP, MASK]);
    }

    #[test]
    fn masking_trace_is_reproducible() {
        // Ten single-token words; positions masked under seed 11 at ratio 0.3
        // are exactly those whose uniform draw falls below 0.3.
        let w: Vec<Vec<u32>> = (10..20).map(|t| vec![t]).collect();
        let mut rng = Rng::new(11);
        let masked = mask_tokens(&w, 0.3, MaskUnit::Token, &mut rng);
        let mut replay = Rng::new(11);
        let expected: Vec<usize> = (0..10).filter(|_| replay.uniform() < 0.3).collect();
        let got: Vec<usize> = (0..10).filter(|&i| masked[i] == MASK).collect();
        assert_eq!(got, expected);
        assert_eq!(got, MASK_TRACE_SEED_11);
    }

    const MASK_TRACE_SEED_11: &[usize] = &[1, 4, 6, 9];

    #[test]
    fn word_masking_covers_whole_words() {
        let w = vec![vec![6, 7, 8], vec![9, 10], vec![11, 12, 13, 14]];
        let mut rng = Rng::new(3);
        for _ in 0..20 {
            let m = mask_tokens(&w, 0.5, MaskUnit::Word, &mut rng);
            for (start, len) in [(0, 3), (3, 2), (5, 4)] {
                let part = &m[start..start + len];
                assert!(part.iter().all(|&t| t == MASK) || !part.contains(&MASK));
            }
        }
    }

    #[test]
    fn pseudo_prompt_edge_cases() {
        let sw = Stopwords::default();
        let mut rng = Rng::new(0);
        assert_eq!(sample_pseudo_prompt(&words("猫"), &sw, 1, 3, &mut rng), vec!["猫"]);
        assert!(sample_pseudo_prompt(&words("的 了 是"), &sw, 1, 3, &mut rng).is_empty());
    }

    #[test]
    fn pseudo_prompt_trace() {
        let sw = Stopwords::default();
        let sentence = words("黑色 的 猫 坐 在 红色 沙发 上");
        let mut rng = Rng::new(3);
        let got = sample_pseudo_prompt(&sentence, &sw, 1, 3, &mut rng);
        assert_eq!(got, PROMPT_TRACE_SEED_3);
        let content = sw.content_words(&sentence);
        let pos = |w: &str| content.iter().position(|c| *c == w).unwrap();
        assert!(got.windows(2).all(|p| pos(p[0]) < pos(p[1])));
    }

    const PROMPT_TRACE_SEED_3: &[&str] = &["红色"];

    #[test]
    fn prompted_source_arithmetic() {
        let s = [6, 7, 8];
        assert_eq!(make_prompted_source(&s, &[]), s.to_vec());
        let p = make_prompted_source(&s, &[9, 10]);
        assert_eq!(p.len(), 3 + 1 + 2);
        assert_eq!(strip_prompt(&p), &s);
    }

    #[test]
    fn denoising_keeps_clean_target() {
        let vocab = Vocab::train(["a b c d"], 0).unwrap();
        let cap = Sample::caption("a b c d", "i");
        let mut rng = Rng::new(2);
        let ex = make_denoising_example(&cap, &vocab, None, 0.5, MaskUnit::Token, &mut rng).unwrap();
        assert_eq!(ex.decoder_target, vocab.encode("a b c d"));
        for (e, t) in ex.encoder_tokens.iter().zip(&ex.decoder_target) {
            assert!(*e == MASK || e == t);
        }
        let par = Sample::parallel("x", "a");
        assert!(make_denoising_example(&par, &vocab, None, 0.5, MaskUnit::Token, &mut rng).is_err());
    }
}
