//! Image → keyword prompts.
//!
//! Keywords of a target sentence are its content words ranked rarest first by
//! corpus frequency. At inference, an image's keywords are those of its
//! cosine-nearest neighbour among stored (feature, keywords) pairs.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{FeatureStore, ImageFeature, Stopwords};
use crate::error::{Error, Result};

/// Word frequencies over a target-language corpus.
#[derive(Clone, Debug, Default)]
pub struct KeywordExtractor {
    counts: HashMap<String, usize>,
    stopwords: Stopwords,
}

impl KeywordExtractor {
    pub fn new<'a, I>(corpus: I, stopwords: Stopwords) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts = HashMap::new();
        for sentence in corpus {
            for w in sentence.split_whitespace() {
                *counts.entry(w.to_string()).or_insert(0) += 1;
            }
        }
        Self { counts, stopwords }
    }

    pub fn frequency(&self, word: &str) -> usize {
        self.counts.get(word).copied().unwrap_or(0)
    }

    /// Up to `k` distinct content words, rarest first; equal frequencies keep
    /// sentence order.
    pub fn extract(&self, target: &str, k: usize) -> Vec<String> {
        let words: Vec<&str> = target.split_whitespace().collect();
        let mut content = self.stopwords.content_words(&words);
        content.sort_by_key(|w| self.frequency(w));
        content.into_iter().take(k).map(str::to_string).collect()
    }
}

/// Anything that maps an image feature to keywords.
pub trait KeywordPredictor {
    fn predict(&self, image: &[f64], k: usize) -> Result<Vec<String>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub vector: Vec<f64>,
    pub keywords: Vec<String>,
}

/// Exact nearest-neighbour keyword retrieval under cosine similarity.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeywordIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
    norms: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

impl KeywordIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn push(&mut self, vector: Vec<f64>, keywords: Vec<String>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::input(format!(
                "index vector has {} values, expected {}",
                vector.len(),
                self.dim
            )));
        }
        if keywords.is_empty() {
            return Err(Error::input("index entries need at least one keyword"));
        }
        self.norms.push(norm(&vector));
        self.entries.push(IndexEntry { vector, keywords });
        Ok(())
    }

    /// One entry per pair whose target yields keywords. Pairs without any
    /// content word are skipped.
    pub fn build<'a, I>(pairs: I, extractor: &KeywordExtractor, k: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [f64], &'a str)>,
    {
        let mut index: Option<Self> = None;
        for (vector, target) in pairs {
            let idx = index.get_or_insert_with(|| Self::new(vector.len()));
            let keywords = extractor.extract(target, k);
            if keywords.is_empty() {
                continue;
            }
            idx.push(vector.to_vec(), keywords)?;
        }
        Ok(index.unwrap_or_default())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    /// Position of the most similar entry; the first one wins ties.
    pub fn nearest(&self, query: &[f64]) -> Result<usize> {
        if self.entries.is_empty() {
            return Err(Error::State("keyword index is empty".into()));
        }
        if query.len() != self.dim {
            return Err(Error::Dimension {
                op: "nearest",
                left: vec![query.len()],
                right: vec![self.dim],
            });
        }
        let qn = norm(query);
        let mut best = (0, f64::NEG_INFINITY);
        for (i, (e, &n)) in self.entries.iter().zip(&self.norms).enumerate() {
            let sim = if qn == 0.0 || n == 0.0 {
                0.0
            } else {
                e.vector.iter().zip(query).map(|(x, y)| x * y).sum::<f64>() / (qn * n)
            };
            if sim > best.1 {
                best = (i, sim);
            }
        }
        Ok(best.0)
    }

    /// Keywords of the nearest entry, truncated to `k`.
    pub fn predict_keywords(&self, image: &[f64], k: usize) -> Result<Vec<String>> {
        let i = self.nearest(image)?;
        Ok(self.entries[i].keywords.iter().take(k).cloned().collect())
    }

    /// Sidecar path stored next to the feature file.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".keywords.jsonl");
        PathBuf::from(s)
    }

    /// Writes the vectors as a feature file (ids are ordinals) and the
    /// keyword lists as a JSON-lines sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let features = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| ImageFeature {
                id: i.to_string(),
                vector: e.vector.clone(),
            })
            .collect();
        FeatureStore::from_features(self.dim, features)?.save(path)?;
        let sidecar: String = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                serde_json::to_string(&SidecarLine {
                    ordinal: i,
                    keywords: e.keywords.clone(),
                })
                .expect("strings serialize")
                    + "\n"
            })
            .collect();
        let side = Self::sidecar_path(path);
        std::fs::write(&side, sidecar).map_err(|e| Error::io(&side, e))
    }

    /// Vectors are stored as f32, so loaded vectors are rounded copies.
    pub fn load(path: &Path) -> Result<Self> {
        let store = FeatureStore::load(path)?;
        let side = Self::sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let mut index = Self::new(store.dim());
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        for (i, f) in store.features().iter().enumerate() {
            let (n, line) = lines.next().ok_or_else(|| Error::Parse {
                path: side.display().to_string(),
                line: i + 1,
                msg: "sidecar has fewer lines than the feature file".into(),
            })?;
            let parsed: SidecarLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: side.display().to_string(),
                line: n + 1,
                msg: e.to_string(),
            })?;
            if parsed.ordinal != i || f.id != i.to_string() {
                return Err(Error::Parse {
                    path: side.display().to_string(),
                    line: n + 1,
                    msg: format!("expected ordinal {i}"),
                });
            }
            index.push(f.vector.clone(), parsed.keywords)?;
        }
        Ok(index)
    }
}

impl KeywordPredictor for KeywordIndex {
    fn predict(&self, image: &[f64], k: usize) -> Result<Vec<String>> {
        self.predict_keywords(image, k)
    }
}

#[derive(Serialize, Deserialize)]
struct SidecarLine {
    ordinal: usize,
    keywords: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn extractor() -> KeywordExtractor {
        KeywordExtractor::new(
            ["猫 在 沙发 上", "猫 在 草地", "狗 在 草地 上 跑", "鹤 在 湖边"],
            Stopwords::default(),
        )
    }

    #[test]
    fn all_content_words_when_k_is_large() {
        let e = extractor();
        let mut got = e.extract("猫 狗 湖边", 3);
        got.sort();
        assert_eq!(got, vec!["湖边", "狗", "猫"]);
        assert!(e.extract("的 了 在", 3).is_empty());
    }

    #[test]
    fn rare_word_ranked_first() {
        // counts: 猫 2, 草地 2, 狗 1, 跑 1
        let e = extractor();
        assert_eq!(e.extract("猫 草地 狗 跑", 2), vec!["狗", "跑"]);
        assert_eq!(e.extract("猫 草地 狗 跑", 4), vec!["狗", "跑", "猫", "草地"]);
    }

    #[test]
    fn index_build_and_lookup() {
        let e = extractor();
        let v = [vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
        let targets = ["鹤 在 湖边", "狗 跑", "猫 沙发"];
        let idx = KeywordIndex::build(v.iter().map(Vec::as_slice).zip(targets), &e, 2).unwrap();
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.predict_keywords(&[1.0, 0.0], 2).unwrap(), vec!["鹤", "湖边"]);
        // duplicates both kept; the first wins ties
        assert_eq!(idx.predict_keywords(&[0.0, 3.0], 1).unwrap(), vec!["狗"]);
    }

    #[test]
    fn empty_index_is_a_state_error() {
        let idx = KeywordIndex::build(std::iter::empty(), &extractor(), 2).unwrap();
        assert!(idx.is_empty());
        assert!(matches!(idx.predict_keywords(&[1.0], 1), Err(Error::State(_))));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let e = extractor();
        let pairs: Vec<(&[f64], &str)> = vec![(&[1.0, 0.0], "猫"), (&[1.0], "狗")];
        assert!(KeywordIndex::build(pairs, &e, 1).is_err());
    }

    #[test]
    fn single_entry_always_answers() {
        let mut idx = KeywordIndex::new(3);
        idx.push(vec![1.0, 2.0, 3.0], vec!["鹤".into()]).unwrap();
        assert_eq!(idx.predict_keywords(&[-5.0, 0.1, 0.0], 3).unwrap(), vec!["鹤"]);
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.imf");
        let mut idx = KeywordIndex::new(2);
        idx.push(vec![0.5, -0.25], vec!["猫".into(), "沙发".into()]).unwrap();
        idx.push(vec![1.0, 2.0], vec!["狗".into()]).unwrap();
        idx.save(&path).unwrap();
        assert_eq!(KeywordIndex::load(&path).unwrap(), idx);
    }

    fn brute_force(entries: &[Vec<f64>], q: &[f64]) -> usize {
        let mut best = 0;
        for i in 1..entries.len() {
            if cosine(&entries[i], q) > cosine(&entries[best], q) {
                best = i;
            }
        }
        best
    }

    #[test]
    fn orthogonal_query_among_near_duplicates() {
        let mut rng = Rng::new(9);
        let base: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let entries: Vec<Vec<f64>> = (0..50)
            .map(|_| base.iter().map(|x| x + 1e-3 * rng.normal()).collect())
            .collect();
        let mut idx = KeywordIndex::new(6);
        for (i, e) in entries.iter().enumerate() {
            idx.push(e.clone(), vec![format!("w{i}")]).unwrap();
        }
        // component of a random vector orthogonal to `base`
        let r: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let proj = cosine(&r, &base) * norm(&r) / norm(&base);
        let q: Vec<f64> = r.iter().zip(&base).map(|(a, b)| a - proj * b).collect();
        assert!(cosine(&q, &base).abs() < 1e-12);
        assert_eq!(idx.nearest(&q).unwrap(), brute_force(&entries, &q));
    }

    proptest! {
        #[test]
        fn retrieval_is_exact_and_scale_invariant(
            entries in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..30),
            q in prop::collection::vec(-1.0f64..1.0, 4),
            scale in 0.01f64..100.0,
        ) {
            let mut idx = KeywordIndex::new(4);
            for (i, e) in entries.iter().enumerate() {
                idx.push(e.clone(), vec![format!("w{i}")]).unwrap();
            }
            let n = idx.nearest(&q).unwrap();
            prop_assert_eq!(n, brute_force(&entries, &q));
            let scaled: Vec<f64> = q.iter().map(|x| x * scale).collect();
            let a = idx.predict_keywords(&q, 1).unwrap();
            let b = idx.predict_keywords(&scaled, 1).unwrap();
            // scaling can only move exact ties, which the first entry wins in both
            let (sa, sb) = (cosine(&entries[n], &q), cosine(&entries[idx.nearest(&scaled).unwrap()], &scaled));
            prop_assert!(a == b || (sa - sb).abs() < 1e-12);
        }

        #[test]
        fn extraction_is_bounded_and_deterministic(
            words in prop::collection::vec("[a-e]{1,2}", 0..12), k in 1usize..5,
        ) {
            let e = KeywordExtractor::new(["a b c", "a a d"], Stopwords::empty());
            let s = words.join(" ");
            let x = e.extract(&s, k);
            prop_assert!(x.len() <= k);
            prop_assert_eq!(x, e.extract(&s, k));
        }
    }
}
