//! Metrics and analyses: BLEU, glossary word accuracy, modality ratio,
//! input ablations, paired bootstrap and attention export.

mod bleu;
mod glossary;
mod inference;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{shuffle_images, FeatureStore, Sample};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::Rng;
use crate::tokenizer::Vocab;

pub use bleu::{bleu, corpus_stats, BleuStats, MAX_ORDER};
pub use glossary::{word_accuracy, Glossary, WordAccuracy, WordCase};
pub use inference::{resolve_image, InputUse, PromptSource, TranslationOutput, Translator};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModalityRatio {
    pub ratio: f64,
    pub positions: usize,
    /// Rows skipped because `H_text` had zero norm.
    pub excluded: usize,
}

fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Mean over token positions of `‖gated term‖ / ‖H_text‖`. Inputs without an
/// image contribute zeros.
pub fn modality_ratio<'a, I>(model: &Model, inputs: I) -> Result<ModalityRatio>
where
    I: IntoIterator<Item = (&'a [u32], Option<&'a [f64]>)>,
{
    let mut sum = 0.0;
    let mut out = ModalityRatio::default();
    for (tokens, image) in inputs {
        let s = model.encoder_state(tokens, image)?;
        for r in 0..s.h_text.rows() {
            let base = row_norm(s.h_text.row(r));
            if base == 0.0 {
                out.excluded += 1;
                continue;
            }
            if let Some(g) = &s.gated {
                sum += row_norm(g.row(r)) / base;
            }
            out.positions += 1;
        }
    }
    if out.excluded > 0 {
        log::warn!("modality ratio: skipped {} zero-norm rows", out.excluded);
    }
    out.ratio = if out.positions == 0 { 0.0 } else { sum / out.positions as f64 };
    Ok(out)
}

/// Modality ratio over image-bearing samples, with inputs built as the
/// model's mode builds them.
pub fn sample_modality_ratio(
    translator: &Translator<'_>,
    samples: &[Sample],
    features: &FeatureStore,
) -> Result<ModalityRatio> {
    let mut inputs = Vec::new();
    for s in samples.iter().filter(|s| s.image_id.is_some() && s.source.is_some()) {
        let image = resolve_image(s, Some(features), true)?;
        let source = translator.vocab.encode(s.source.as_deref().unwrap_or_default());
        let prompt = if translator.model.config().mode.uses_prompt() {
            let kw = translator.prompt_for(image, &PromptSource::FromImage)?;
            translator.vocab.encode(&kw.join(" "))
        } else {
            Vec::new()
        };
        inputs.push((Model::prompted(&source, Some(&prompt)), image));
    }
    modality_ratio(translator.model, inputs.iter().map(|(t, i)| (t.as_slice(), *i)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationMode {
    Normal,
    /// Image zeroed (indicator 0) and prompt stripped.
    Absent,
    /// Images deranged across the test set; prompts follow the wrong image.
    Adversarial,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] = [AblationMode::Normal, AblationMode::Absent, AblationMode::Adversarial];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Normal => "normal",
            AblationMode::Absent => "absent",
            AblationMode::Adversarial => "adversarial",
        }
    }
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown ablation mode `{s}`")))
    }
}

/// Which visual channel an ablation perturbs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationTarget {
    /// Every channel the model uses.
    #[default]
    All,
    Image,
    Prompt,
}

impl std::str::FromStr for AblationTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(AblationTarget::All),
            "image" => Ok(AblationTarget::Image),
            "prompt" => Ok(AblationTarget::Prompt),
            _ => Err(Error::config(format!("unknown ablation target `{s}` (all|image|prompt)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub mode: AblationMode,
    pub bleu: f64,
    pub word_accuracy: Option<WordAccuracy>,
    pub hyps: Vec<String>,
}

/// Decodes `test` with the chosen perturbation of its visual inputs.
pub fn run_ablation(
    translator: &Translator<'_>,
    test: &[Sample],
    features: &FeatureStore,
    mode: AblationMode,
    target: AblationTarget,
    glossary: Option<&Glossary>,
    seed: u64,
) -> Result<AblationResult> {
    let m = translator.model.config().mode;
    let (hit_image, hit_prompt) = match target {
        AblationTarget::All => (m.uses_fusion(), m.uses_prompt()),
        AblationTarget::Image => (true, false),
        AblationTarget::Prompt => (false, true),
    };
    if mode != AblationMode::Normal {
        if (hit_image && !m.uses_fusion()) || (hit_prompt && !m.uses_prompt()) || !(hit_image || hit_prompt) {
            return Err(Error::config(format!("a {m} model has no {target:?} input to ablate")));
        }
    }
    let shuffled;
    let wrong: &[Sample] = if mode == AblationMode::Adversarial {
        shuffled = shuffle_images(test, &mut Rng::new(seed).stream("ablation/shuffle"))?;
        &shuffled
    } else {
        test
    };
    let mut hyps = Vec::with_capacity(test.len());
    for (s, w) in test.iter().zip(wrong) {
        let source = s
            .source
            .as_deref()
            .ok_or_else(|| Error::input(format!("test sample on line {} has no source", s.line)))?;
        let true_img = resolve_image(s, Some(features), m.uses_fusion() || m.uses_prompt())?;
        let wrong_img = resolve_image(w, Some(features), m.uses_fusion() || m.uses_prompt())?;
        let pick = |hit: bool| match (mode, hit) {
            (AblationMode::Normal, _) | (_, false) => true_img,
            (AblationMode::Absent, true) => None,
            (AblationMode::Adversarial, true) => wrong_img,
        };
        let fused = if m.uses_fusion() { pick(hit_image) } else { None };
        let keywords = if m.uses_prompt() {
            translator.prompt_for(pick(hit_prompt), &PromptSource::FromImage)?
        } else {
            Vec::new()
        };
        hyps.push(translator.translate(source, fused, &PromptSource::Explicit(keywords))?.hyp);
    }
    let refs: Vec<&str> = test.iter().map(|s| s.target.as_str()).collect();
    let sources: Vec<&str> = test.iter().filter_map(|s| s.source.as_deref()).collect();
    let word_accuracy = glossary
        .map(|g| word_accuracy(&sources, &hyps, &refs, g))
        .transpose()?;
    Ok(AblationResult {
        mode,
        bleu: bleu(&hyps, &refs, false)?,
        word_accuracy,
        hyps,
    })
}

/// Paired bootstrap: fraction of resamples in which system B scores at least
/// as well as system A.
pub fn bootstrap_significance<A, B, R>(
    hyps_a: &[A],
    hyps_b: &[B],
    refs: &[R],
    resamples: usize,
    seed: u64,
) -> Result<f64>
where
    A: AsRef<str>,
    B: AsRef<str>,
    R: AsRef<str>,
{
    if resamples < 1000 {
        return Err(Error::input(format!("need at least 1000 resamples, got {resamples}")));
    }
    let a = corpus_stats(hyps_a, refs)?;
    let b = corpus_stats(hyps_b, refs)?;
    let n = a.len();
    let mut rng = Rng::new(seed);
    let mut not_worse = 0usize;
    for _ in 0..resamples {
        let (mut sa, mut sb) = (BleuStats::default(), BleuStats::default());
        for _ in 0..n {
            let i = rng.below(n);
            sa += a[i];
            sb += b[i];
        }
        if sb.score(false) >= sa.score(false) {
            not_worse += 1;
        }
    }
    Ok(not_worse as f64 / resamples as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub bleu: f64,
    /// BLEU minus the normal-mode BLEU.
    pub bleu_delta: f64,
    pub word_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub word_accuracy: Option<WordAccuracy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modality_ratio: Option<f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub ablation: BTreeMap<String, AblationSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub significance: Option<f64>,
    /// Scores from external metrics.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

impl EvalReport {
    /// Report for the normal run, with every result listed under `ablation`.
    pub fn from_ablations(results: &[AblationResult]) -> Self {
        let normal = results.iter().find(|r| r.mode == AblationMode::Normal);
        let base = normal.map_or(0.0, |r| r.bleu);
        let mut report = EvalReport {
            bleu: base,
            word_accuracy: normal.and_then(|r| r.word_accuracy.clone()),
            ..Self::default()
        };
        for r in results {
            report.ablation.insert(
                r.mode.as_str().to_string(),
                AblationSummary {
                    bleu: r.bleu,
                    bleu_delta: r.bleu - base,
                    word_accuracy: r.word_accuracy.as_ref().map(|w| w.accuracy),
                },
            );
        }
        report
    }
}

fn write_matrix(path: &Path, rows: &[String], cols: &[String], m: &crate::numerics::Tensor) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let header = std::iter::once(String::new()).chain(cols.iter().cloned());
    w.write_record(header).map_err(|e| Error::io(path, e.into()))?;
    for (r, label) in rows.iter().enumerate() {
        let record = std::iter::once(label.clone()).chain(m.row(r).iter().map(|v| format!("{v:.9}")));
        w.write_record(record).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes one CSV per layer and head for encoder self-attention, decoder
/// self-attention and decoder cross-attention. Rows are queries, columns
/// keys; the header row and first column hold token strings.
pub fn export_attention(
    model: &Model,
    vocab: &Vocab,
    source: &[u32],
    target: &[u32],
    image: Option<&[f64]>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let maps = model.attention_weights(source, target, image)?;
    let (dec_in, _) = Model::shift_target(target);
    let src_labels: Vec<String> = source.iter().map(|&t| vocab.label(t)).collect();
    let dec_labels: Vec<String> = dec_in.iter().map(|&t| vocab.label(t)).collect();
    let mut written = Vec::new();
    let groups = [
        ("enc_self", &maps.encoder_self, &src_labels, &src_labels),
        ("dec_self", &maps.decoder_self, &dec_labels, &dec_labels),
        ("dec_cross", &maps.decoder_cross, &dec_labels, &src_labels),
    ];
    for (name, layers, rows, cols) in groups {
        for (l, heads) in layers.iter().enumerate() {
            for (h, m) in heads.iter().enumerate() {
                let path = out_dir.join(format!("{name}_l{l}_h{h}.csv"));
                write_matrix(&path, rows, cols, m)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests;
