//! Joint byte-pair-encoding vocabulary.
//!
//! Sentences are split on whitespace; each word becomes a sequence of
//! characters whose last symbol carries the end-of-word marker `</w>`. Merges
//! are learned over the pooled word counts of both languages. Ids 0–5 are
//! reserved for the special tokens, followed by the base alphabet (sorted) and
//! then one token per merge in training order.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const SEP: u32 = 4;
pub const MASK: u32 = 5;

pub const SPECIAL_TOKENS: [&str; 6] = ["<pad>", "<s>", "</s>", "<unk>", "[SEP]", "[MASK]"];
const NUM_SPECIAL: u32 = SPECIAL_TOKENS.len() as u32;
const END_OF_WORD: &str = "</w>";

pub fn is_special(id: u32) -> bool {
    id < NUM_SPECIAL
}

/// Sequence of vocabulary ids.
pub type TokenSequence = Vec<u32>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    requested_merges: usize,
    merges: Vec<(String, String)>,
    alphabet: Vec<String>,
    tokens: Vec<String>,
    token_to_id: HashMap<String, u32>,
    merge_rank: HashMap<(String, String), usize>,
}

fn word_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let last = chars.len() - 1;
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i == last {
                format!("{c}{END_OF_WORD}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

impl Vocab {
    /// Learns `num_merges` merges from the pooled corpus.
    ///
    /// The most frequent adjacent pair is merged first; equal counts are
    /// resolved by the lexicographically smallest pair. Training stops early
    /// when no adjacent pair is left.
    pub fn train<I, S>(corpus: I, num_merges: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut word_counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut sentences = 0usize;
        for line in corpus {
            sentences += 1;
            for w in line.as_ref().split_whitespace() {
                *word_counts.entry(w.to_string()).or_default() += 1;
            }
        }
        if sentences == 0 {
            return Err(Error::input("cannot train a vocabulary on an empty corpus"));
        }

        let mut words: Vec<(Vec<String>, usize)> = word_counts
            .iter()
            .map(|(w, &c)| (word_symbols(w), c))
            .collect();
        let mut alphabet: Vec<String> = words
            .iter()
            .flat_map(|(syms, _)| syms.iter().cloned())
            .collect();
        alphabet.sort();
        alphabet.dedup();

        let mut merges = Vec::new();
        while merges.len() < num_merges {
            let mut pair_counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
            for (syms, count) in &words {
                for pair in syms.windows(2) {
                    *pair_counts.entry((&pair[0], &pair[1])).or_default() += count;
                }
            }
            // BTreeMap iterates pairs in lexicographic order, so the first
            // maximum found is the tie-break winner.
            let mut best: Option<((&str, &str), usize)> = None;
            for (pair, &count) in &pair_counts {
                if best.is_none_or(|(_, c)| count > c) {
                    best = Some((*pair, count));
                }
            }
            let Some(((left, right), _)) = best else { break };
            let (left, right) = (left.to_string(), right.to_string());
            let merged = format!("{left}{right}");
            for (syms, _) in &mut words {
                apply_merge(syms, &left, &right, &merged);
            }
            merges.push((left, right));
        }
        Ok(Self::assemble(num_merges, merges, alphabet))
    }

    fn assemble(requested: usize, merges: Vec<(String, String)>, alphabet: Vec<String>) -> Self {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut token_to_id = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            token_to_id.insert(t.clone(), i as u32);
        }
        let mut push = |t: String, tokens: &mut Vec<String>| {
            if !token_to_id.contains_key(&t) {
                token_to_id.insert(t.clone(), tokens.len() as u32);
                tokens.push(t);
            }
        };
        for a in &alphabet {
            push(a.clone(), &mut tokens);
        }
        for (l, r) in &merges {
            push(format!("{l}{r}"), &mut tokens);
        }
        let merge_rank = merges
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        Self {
            requested_merges: requested,
            merges,
            alphabet,
            tokens,
            token_to_id,
            merge_rank,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Merge count requested at training time (may exceed the merges learned).
    pub fn requested_merges(&self) -> usize {
        self.requested_merges
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    fn encode_word(&self, word: &str, out: &mut TokenSequence) {
        let mut syms = word_symbols(word);
        loop {
            let best = syms
                .windows(2)
                .enumerate()
                .filter_map(|(i, p)| {
                    self.merge_rank
                        .get(&(p[0].clone(), p[1].clone()))
                        .map(|&rank| (rank, i))
                })
                .min();
            let Some((rank, _)) = best else { break };
            let (l, r) = &self.merges[rank];
            let merged = format!("{l}{r}");
            apply_merge(&mut syms, l, r, &merged);
        }
        out.extend(syms.iter().map(|s| self.id(s).unwrap_or(UNK)));
    }

    /// Applies learned merges in training order; unseen symbols map to UNK.
    pub fn encode(&self, text: &str) -> TokenSequence {
        let mut out = Vec::new();
        for w in text.split_whitespace() {
            self.encode_word(w, &mut out);
        }
        out
    }

    /// Tokens of each whitespace-separated word, kept apart.
    pub fn encode_words(&self, text: &str) -> Vec<TokenSequence> {
        text.split_whitespace()
            .map(|w| {
                let mut out = Vec::new();
                self.encode_word(w, &mut out);
                out
            })
            .collect()
    }

    /// Inverse of [`encode`](Self::encode) on single-spaced text.
    ///
    /// PAD is dropped, BOS/EOS carry no text, SEP/MASK/UNK render as their
    /// marker strings.
    pub fn decode(&self, tokens: &[u32]) -> Result<String> {
        let mut out = String::new();
        let mut open_word = false;
        for &id in tokens {
            let tok = self
                .token(id)
                .ok_or_else(|| Error::input(format!("token id {id} outside vocabulary of {}", self.len())))?;
            match id {
                PAD | BOS | EOS => continue,
                UNK | SEP | MASK => {
                    if open_word {
                        out.push(' ');
                    }
                    if !out.is_empty() && !out.ends_with(' ') {
                        out.push(' ');
                    }
                    out.push_str(tok);
                    out.push(' ');
                    open_word = false;
                }
                _ => {
                    if let Some(stem) = tok.strip_suffix(END_OF_WORD) {
                        out.push_str(stem);
                        out.push(' ');
                        open_word = false;
                    } else {
                        out.push_str(tok);
                        open_word = true;
                    }
                }
            }
        }
        Ok(out.trim_end().to_string())
    }

    /// Display form of a single token (for attention labels).
    pub fn label(&self, id: u32) -> String {
        self.token(id).unwrap_or("<?>").to_string()
    }

    /// Text form: header `BPE v1 <requested merges>`, one `left right` line per
    /// merge, then one line per base-alphabet symbol.
    pub fn to_text(&self) -> String {
        let mut s = format!("BPE v1 {}\n", self.requested_merges);
        for (l, r) in &self.merges {
            let _ = writeln!(s, "{l} {r}");
        }
        for a in &self.alphabet {
            let _ = writeln!(s, "{a}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let parse_err = |line: usize, msg: &str| Error::Parse {
            path: "<vocab>".into(),
            line,
            msg: msg.into(),
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
        let requested = header
            .strip_prefix("BPE v1 ")
            .and_then(|n| n.trim().parse::<usize>().ok())
            .ok_or_else(|| parse_err(1, "expected header `BPE v1 <num_merges>`"))?;
        let mut merges = Vec::new();
        let mut alphabet = Vec::new();
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(' ').collect();
            match fields.as_slice() {
                [""] => {}
                [sym] => alphabet.push(sym.to_string()),
                [l, r] => merges.push((l.to_string(), r.to_string())),
                _ => return Err(parse_err(i + 2, "expected `left right` or a single symbol")),
            }
        }
        Ok(Self::assemble(requested, merges, alphabet))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse {
                path: path.display().to_string(),
                line,
                msg,
            },
            other => other,
        })
    }
}

fn apply_merge(syms: &mut Vec<String>, left: &str, right: &str, merged: &str) {
    let mut i = 0;
    while i + 1 < syms.len() {
        if syms[i] == left && syms[i + 1] == right {
            syms[i] = merged.to_string();
            syms.remove(i + 1);
        }
        i += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const CORPUS: [&str; 4] = [
        "ready stock kids medical mask",
        "现货 儿童 医用 口罩",
        "facial mask 10 pieces",
        "面膜 10 片",
    ];

    #[test]
    fn zero_merges_is_character_level() {
        let v = Vocab::train(CORPUS, 0).unwrap();
        assert!(v.merges().is_empty());
        assert_eq!(v.token(SEP), Some("[SEP]"));
        let ids = v.encode("mask");
        assert_eq!(ids.len(), 4);
        assert!(ids.iter().all(|&i| !is_special(i)));
    }

    #[test]
    fn first_merge_of_abab_is_a_b() {
        let corpus = vec!["abab"; 100];
        let v = Vocab::train(corpus, 1).unwrap();
        assert_eq!(v.merges()[0], ("a".to_string(), "b".to_string()));
    }

    #[test]
    fn ties_break_lexicographically() {
        // ("x","y</w>") and ("c","d</w>") both occur once
        let v = Vocab::train(["xy cd"], 1).unwrap();
        assert_eq!(v.merges()[0], ("c".to_string(), "d</w>".to_string()));
    }

    #[test]
    fn records_requested_merge_count() {
        let v = Vocab::train(CORPUS, 11_000).unwrap();
        assert_eq!(v.requested_merges(), 11_000);
        assert!(v.merges().len() < 11_000);
        assert!(v.to_text().starts_with("BPE v1 11000\n"));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(Vocab::train(Vec::<String>::new(), 10).is_err());
    }

    #[test]
    fn empty_and_control_sequences_decode_to_empty() {
        let v = Vocab::train(CORPUS, 20).unwrap();
        assert!(v.encode("").is_empty());
        assert_eq!(v.decode(&[]).unwrap(), "");
        assert_eq!(v.decode(&[BOS, EOS]).unwrap(), "");
        assert!(v.decode(&[v.len() as u32]).is_err());
    }

    #[test]
    fn unknown_symbol_maps_to_unk() {
        let v = Vocab::train(CORPUS, 20).unwrap();
        assert!(v.encode("mask ☃").contains(&UNK));
    }

    #[test]
    fn markers_render_between_words() {
        let v = Vocab::train(CORPUS, 50).unwrap();
        let mut ids = v.encode("medical mask");
        ids.push(SEP);
        ids.extend(v.encode("口罩"));
        assert_eq!(v.decode(&ids).unwrap(), "medical mask [SEP] 口罩");
    }

    #[test]
    fn training_is_deterministic_and_file_roundtrips() {
        let a = Vocab::train(CORPUS, 30).unwrap();
        let b = Vocab::train(CORPUS, 30).unwrap();
        assert_eq!(a.merges(), b.merges());
        let c = Vocab::from_text(&a.to_text()).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn malformed_vocab_file() {
        assert!(Vocab::from_text("BPE v2 3\n").is_err());
        assert!(Vocab::from_text("BPE v1 3\na b c\n").is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_on_training_sentences(
            sents in proptest::collection::vec("[a-f]{1,6}( [a-f]{1,6}){0,5}", 1..20),
            merges in 0usize..40,
        ) {
            let v = Vocab::train(&sents, merges).unwrap();
            for s in &sents {
                prop_assert_eq!(&v.decode(&v.encode(s)).unwrap(), s);
            }
        }
    }
}
