use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleKind {
    /// (source, target, image)
    Triplet,
    /// (source, target)
    Parallel,
    /// (target, image)
    Caption,
}

impl SampleKind {
    pub const ALL: [SampleKind; 3] = [SampleKind::Triplet, SampleKind::Parallel, SampleKind::Caption];

    pub fn as_str(self) -> &'static str {
        match self {
            SampleKind::Triplet => "triplet",
            SampleKind::Parallel => "parallel",
            SampleKind::Caption => "caption",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SampleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SampleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SampleKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown corpus kind `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub kind: SampleKind,
    pub source: Option<String>,
    pub target: String,
    pub image_id: Option<String>,
    /// 1-based line in the file the sample came from (0 when built in memory).
    #[serde(skip)]
    pub line: usize,
}

impl Sample {
    pub fn triplet(source: impl Into<String>, target: impl Into<String>, image_id: impl Into<String>) -> Self {
        Self {
            kind: SampleKind::Triplet,
            source: Some(source.into()),
            target: target.into(),
            image_id: Some(image_id.into()),
            line: 0,
        }
    }

    pub fn parallel(source: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            kind: SampleKind::Parallel,
            source: Some(source.into()),
            target: target.into(),
            image_id: None,
            line: 0,
        }
    }

    pub fn caption(target: impl Into<String>, image_id: impl Into<String>) -> Self {
        Self {
            kind: SampleKind::Caption,
            source: None,
            target: target.into(),
            image_id: Some(image_id.into()),
            line: 0,
        }
    }
}

/// One corpus line: `{"src": .., "tgt": .., "img": ..}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src: Option<String>,
    pub tgt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub img: Option<String>,
}

impl From<&Sample> for CorpusLine {
    fn from(s: &Sample) -> Self {
        Self {
            src: s.source.clone(),
            tgt: s.target.clone(),
            img: s.image_id.clone(),
        }
    }
}

/// Parses JSON-lines corpus text. Blank lines are skipped; when `expected` is
/// given every line must be of that kind.
pub fn parse_corpus(text: &str, origin: &str, expected: Option<SampleKind>) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let parsed: CorpusLine = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        let kind = match (&parsed.src, &parsed.img) {
            (Some(_), Some(_)) => SampleKind::Triplet,
            (Some(_), None) => SampleKind::Parallel,
            (None, Some(_)) => SampleKind::Caption,
            (None, None) => return Err(err("line has neither `src` nor `img`".into())),
        };
        if let Some(k) = expected {
            if k != kind {
                return Err(err(format!("expected a {k} line, found a {kind} line")));
            }
        }
        out.push(Sample {
            kind,
            source: parsed.src,
            target: parsed.tgt,
            image_id: parsed.img,
            line,
        });
    }
    Ok(out)
}

pub fn load_corpus(path: &Path, expected: Option<SampleKind>) -> Result<Vec<Sample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, &path.display().to_string(), expected)
}

pub fn corpus_to_jsonl(samples: &[Sample]) -> String {
    samples
        .iter()
        .map(|s| serde_json::to_string(&CorpusLine::from(s)).expect("plain strings serialize") + "\n")
        .collect()
}

pub fn save_corpus(path: &Path, samples: &[Sample]) -> Result<()> {
    std::fs::write(path, corpus_to_jsonl(samples)).map_err(|e| Error::io(path, e))
}
