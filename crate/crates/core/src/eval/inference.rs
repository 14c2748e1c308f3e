use serde::{Deserialize, Serialize};

use crate::data::{FeatureStore, Sample};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::prompter::KeywordIndex;
use crate::tokenizer::Vocab;

/// Where a prompt comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum PromptSource {
    None,
    Explicit(Vec<String>),
    /// Keywords retrieved for the image (no prompt without an image).
    FromImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslationOutput {
    pub hyp: String,
    pub score: f64,
    pub prompt_used: Vec<String>,
}

/// Which inputs reach the model at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InputUse {
    pub image: bool,
    pub prompt: bool,
}

impl InputUse {
    /// Everything the model's mode consumes.
    pub fn full(model: &Model) -> Self {
        Self {
            image: model.config().mode.uses_fusion(),
            prompt: model.config().mode.uses_prompt(),
        }
    }

    pub fn none() -> Self {
        Self {
            image: false,
            prompt: false,
        }
    }
}

/// Model, vocabulary and keyword retriever bundled for decoding text.
#[derive(Clone, Debug)]
pub struct Translator<'a> {
    pub model: &'a Model,
    pub vocab: &'a Vocab,
    pub index: Option<&'a KeywordIndex>,
    pub prompt_k: usize,
    pub beam: usize,
}

impl Translator<'_> {
    pub fn prompt_for(&self, image: Option<&[f64]>, source: &PromptSource) -> Result<Vec<String>> {
        match (source, image) {
            (PromptSource::None, _) | (PromptSource::FromImage, None) => Ok(Vec::new()),
            (PromptSource::Explicit(k), _) => Ok(k.clone()),
            (PromptSource::FromImage, Some(img)) => {
                let index = self
                    .index
                    .ok_or_else(|| Error::config("prompting from images needs a keyword index"))?;
                index.predict_keywords(img, self.prompt_k)
            }
        }
    }

    pub fn translate(
        &self,
        source: &str,
        image: Option<&[f64]>,
        prompt: &PromptSource,
    ) -> Result<TranslationOutput> {
        let tokens = self.vocab.encode(source);
        let keywords = self.prompt_for(image, prompt)?;
        let prompt_tokens = self.vocab.encode(&keywords.join(" "));
        let fused = if self.model.has_fusion() { image } else { None };
        let t = self.model.translate(&tokens, fused, Some(&prompt_tokens), self.beam)?;
        Ok(TranslationOutput {
            hyp: self.vocab.decode(&t.tokens)?,
            score: t.score,
            prompt_used: keywords,
        })
    }

    /// Decodes every sample with a source. Image lookups must resolve.
    pub fn translate_samples(
        &self,
        samples: &[Sample],
        features: Option<&FeatureStore>,
        uses: InputUse,
    ) -> Result<Vec<TranslationOutput>> {
        samples
            .iter()
            .map(|s| {
                let source = s
                    .source
                    .as_deref()
                    .ok_or_else(|| Error::input(format!("sample on line {} has no source", s.line)))?;
                let image = resolve_image(s, features, uses.image || uses.prompt)?;
                let image = image.filter(|_| uses.image || uses.prompt);
                let prompt = if uses.prompt { PromptSource::FromImage } else { PromptSource::None };
                let fused = image.filter(|_| uses.image);
                // The prompt needs the image even when fusion is off.
                let keywords = self.prompt_for(image, &prompt)?;
                self.translate(source, fused, &PromptSource::Explicit(keywords))
            })
            .collect()
    }
}

/// The sample's image vector, when it has one and `wanted` is set.
pub fn resolve_image<'f>(s: &Sample, features: Option<&'f FeatureStore>, wanted: bool) -> Result<Option<&'f [f64]>> {
    match (&s.image_id, wanted) {
        (Some(id), true) => {
            let store = features.ok_or_else(|| Error::config("image input requested without a feature file"))?;
            store
                .get(id)
                .map(Some)
                .ok_or_else(|| Error::Resolution(vec![id.clone()]))
        }
        _ => Ok(None),
    }
}
