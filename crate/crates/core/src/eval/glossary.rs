//! Ambiguous-word glossary and the accuracy of their translations.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Source word → acceptable target translations.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Glossary {
    entries: BTreeMap<String, Vec<String>>,
}

fn normalize_word(w: &str) -> String {
    w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

fn squash(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

impl Glossary {
    pub fn insert(&mut self, word: &str, translations: Vec<String>) -> Result<()> {
        let translations: Vec<String> = translations
            .into_iter()
            .map(|t| t.trim().to_string())
            .filter(|t| !t.is_empty())
            .collect();
        if translations.is_empty() {
            return Err(Error::input(format!("glossary word `{word}` has no translations")));
        }
        self.entries.insert(normalize_word(word), translations);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[String]> {
        self.entries.get(&normalize_word(word)).map(Vec::as_slice)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// TSV: source word, then comma-separated translations (ASCII or
    /// full-width commas).
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut g = Self::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: &str| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg: msg.to_string(),
            };
            let (word, alts) = line.split_once('\t').ok_or_else(|| err("expected two tab-separated columns"))?;
            let alts = alts.split([',', '，']).map(str::to_string).collect();
            g.insert(word, alts).map_err(|_| err("no translations"))?;
        }
        Ok(g)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_tsv(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}\t{}\n", v.join(",")))
            .collect()
    }
}

/// Outcome of one (sentence, glossary word) case.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordCase {
    pub sentence: usize,
    pub word: String,
    /// The single alternative found in the reference, when applicable.
    pub expected: Option<String>,
    pub hit: bool,
    /// The hypothesis contains more than one alternative.
    pub multiple_in_hypothesis: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WordAccuracy {
    /// hits / applicable, or 0 when nothing is applicable.
    pub accuracy: f64,
    pub hits: usize,
    pub applicable: usize,
    /// Applicable cases whose hypothesis held several alternatives.
    pub flagged: usize,
    pub cases: Vec<WordCase>,
}

/// A case counts when exactly one alternative occurs in the reference; it is
/// a hit when that alternative also occurs in the hypothesis. Matching is by
/// substring on whitespace-free text.
pub fn word_accuracy<S, H, R>(sources: &[S], hyps: &[H], refs: &[R], glossary: &Glossary) -> Result<WordAccuracy>
where
    S: AsRef<str>,
    H: AsRef<str>,
    R: AsRef<str>,
{
    if glossary.is_empty() {
        return Err(Error::input("empty glossary"));
    }
    if sources.len() != hyps.len() || hyps.len() != refs.len() {
        return Err(Error::input("sources, hypotheses and references differ in count"));
    }
    let mut out = WordAccuracy::default();
    for (i, ((s, h), r)) in sources.iter().zip(hyps).zip(refs).enumerate() {
        let (h, r) = (squash(h.as_ref()), squash(r.as_ref()));
        let mut words: Vec<String> = s.as_ref().split_whitespace().map(normalize_word).collect();
        words.sort();
        words.dedup();
        for w in words {
            let Some(alts) = glossary.entries.get(&w) else { continue };
            let in_ref: Vec<&String> = alts.iter().filter(|a| r.contains(a.as_str())).collect();
            let in_hyp = alts.iter().filter(|a| h.contains(a.as_str())).count();
            let mut case = WordCase {
                sentence: i,
                word: w.clone(),
                expected: None,
                hit: false,
                multiple_in_hypothesis: in_hyp > 1,
            };
            if let [only] = in_ref.as_slice() {
                case.expected = Some((*only).clone());
                case.hit = h.contains(only.as_str());
                out.applicable += 1;
                out.hits += usize::from(case.hit);
                out.flagged += usize::from(case.multiple_in_hypothesis);
            }
            out.cases.push(case);
        }
    }
    out.accuracy = if out.applicable == 0 {
        0.0
    } else {
        out.hits as f64 / out.applicable as f64
    };
    Ok(out)
}
