//! Corpora, image features, the three training tasks and their mixing.

mod corpus;
mod features;
mod mix;
mod tasks;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tokenizer::{Vocab, SEP};

pub use corpus::{corpus_to_jsonl, load_corpus, parse_corpus, save_corpus, CorpusLine, Sample, SampleKind};
pub use features::{FeatureStore, ImageFeature, FEATURE_MAGIC};
pub use mix::{
    derangement, effective_temperature, epoch_order, rates_from_probabilities, stream_of,
    temperature_probabilities, FractionalSampler, MixPlan, RateReport, Slot,
};
pub use tasks::{
    make_denoising_example, make_prompted_source, mask_tokens, sample_pseudo_prompt, strip_prompt,
    MaskUnit, Stopwords, TaskTag, TrainingExample,
};

/// The three training streams.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpora {
    pub triplets: Vec<Sample>,
    pub parallel: Vec<Sample>,
    pub captions: Vec<Sample>,
}

impl Corpora {
    pub fn stream(&self, kind: SampleKind) -> &[Sample] {
        match kind {
            SampleKind::Triplet => &self.triplets,
            SampleKind::Parallel => &self.parallel,
            SampleKind::Caption => &self.captions,
        }
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.triplets.len(), self.parallel.len(), self.captions.len()]
    }

    /// Sorts mixed samples into streams by kind.
    pub fn from_samples(samples: impl IntoIterator<Item = Sample>) -> Self {
        let mut c = Self::default();
        for s in samples {
            match s.kind {
                SampleKind::Triplet => c.triplets.push(s),
                SampleKind::Parallel => c.parallel.push(s),
                SampleKind::Caption => c.captions.push(s),
            }
        }
        c
    }

    /// Every text side, for vocabulary training.
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        SampleKind::ALL
            .into_iter()
            .flat_map(move |k| self.stream(k))
            .flat_map(|s| s.source.as_deref().into_iter().chain(std::iter::once(s.target.as_str())))
    }
}

/// How samples turn into training examples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamOptions {
    /// Attach image features (fusion path).
    pub fusion: bool,
    /// Append pseudo prompts sampled from the target (prompt path).
    pub prompt: bool,
    pub mask_ratio: f64,
    pub mask_unit: MaskUnit,
    pub min_k: usize,
    pub max_k: usize,
    /// Train the decoder to emit `target [SEP] keywords`.
    pub echo_prompt: bool,
}

impl Default for StreamOptions {
    fn default() -> Self {
        Self {
            fusion: true,
            prompt: true,
            mask_ratio: 0.3,
            mask_unit: MaskUnit::Token,
            min_k: 1,
            max_k: 3,
            echo_prompt: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Prepared {
    source: Option<Vec<u32>>,
    words: Vec<String>,
    word_tokens: Vec<Vec<u32>>,
    image: Option<usize>,
}

/// Tokenized corpora with resolved image features.
#[derive(Clone, Debug)]
pub struct Dataset {
    streams: [Vec<Prepared>; 3],
    features: FeatureStore,
    vocab: Vocab,
    stopwords: Stopwords,
}

impl Dataset {
    /// Tokenizes every sample and resolves image ids; all unresolved ids are
    /// reported together.
    pub fn prepare(corpora: &Corpora, vocab: &Vocab, features: &FeatureStore, stopwords: &Stopwords) -> Result<Self> {
        let ids = SampleKind::ALL
            .into_iter()
            .flat_map(|k| corpora.stream(k))
            .filter_map(|s| s.image_id.as_deref());
        features.resolve(ids)?;
        let prep = |s: &Sample| Prepared {
            source: s.source.as_deref().map(|t| vocab.encode(t)),
            words: s.target.split_whitespace().map(str::to_string).collect(),
            word_tokens: vocab.encode_words(&s.target),
            image: s.image_id.as_deref().and_then(|id| features.position(id)),
        };
        Ok(Self {
            streams: SampleKind::ALL.map(|k| corpora.stream(k).iter().map(prep).collect()),
            features: features.clone(),
            vocab: vocab.clone(),
            stopwords: stopwords.clone(),
        })
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.streams[0].len(), self.streams[1].len(), self.streams[2].len()]
    }

    pub fn has_image(&self, stream: usize, index: usize) -> bool {
        self.streams[stream][index].image.is_some()
    }

    /// Builds the training example for one sample. `drop_image` removes the
    /// image and the prompt together.
    pub fn example(
        &self,
        kind: SampleKind,
        index: usize,
        drop_image: bool,
        options: &StreamOptions,
        rng: &mut Rng,
    ) -> Result<TrainingExample> {
        let p = self
            .streams[kind.index()]
            .get(index)
            .ok_or_else(|| Error::input(format!("{kind} sample {index} out of range")))?;
        let image = match (options.fusion && !drop_image, p.image) {
            (true, Some(i)) => Some(self.features.features()[i].vector.clone()),
            _ => None,
        };
        let target: Vec<u32> = p.word_tokens.concat();
        match kind {
            SampleKind::Caption => Ok(TrainingExample {
                encoder_tokens: mask_tokens(&p.word_tokens, options.mask_ratio, options.mask_unit, rng),
                decoder_target: target,
                image,
                task_tag: TaskTag::Denoise,
                kind,
                prompt: Vec::new(),
            }),
            SampleKind::Triplet | SampleKind::Parallel => {
                let source = p.source.clone().unwrap_or_default();
                let prompt = if options.prompt && !drop_image {
                    let words: Vec<&str> = p.words.iter().map(String::as_str).collect();
                    let picked =
                        sample_pseudo_prompt(&words, &self.stopwords, options.min_k, options.max_k, rng);
                    self.vocab.encode(&picked.join(" "))
                } else {
                    Vec::new()
                };
                let mut decoder_target = target;
                if options.echo_prompt && !prompt.is_empty() {
                    decoder_target.push(SEP);
                    decoder_target.extend_from_slice(&prompt);
                }
                Ok(TrainingExample {
                    encoder_tokens: make_prompted_source(&source, &prompt),
                    decoder_target,
                    image,
                    task_tag: TaskTag::Translate,
                    kind,
                    prompt,
                })
            }
        }
    }
}

/// One shuffled epoch; examples are materialized on demand, each from its own
/// random stream so that any position can be rebuilt independently.
#[derive(Clone, Debug)]
pub struct Epoch<'a> {
    dataset: &'a Dataset,
    options: StreamOptions,
    order: Vec<Slot>,
    rng: Rng,
}

impl Epoch<'_> {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn slots(&self) -> &[Slot] {
        &self.order
    }

    pub fn get(&self, position: usize) -> Result<TrainingExample> {
        let slot = self
            .order
            .get(position)
            .ok_or_else(|| Error::input(format!("epoch position {position} out of range")))?;
        let mut rng = self.rng.stream(&format!("example/{position}"));
        self.dataset.example(
            SampleKind::ALL[slot.stream as usize],
            slot.index as usize,
            slot.drop_image,
            &self.options,
            &mut rng,
        )
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<TrainingExample>> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }
}

/// Replicates, shuffles and drops images according to `plan`.
pub fn build_mixed_stream<'a>(
    dataset: &'a Dataset,
    plan: &MixPlan,
    options: &StreamOptions,
    rng: &mut Rng,
) -> Result<Epoch<'a>> {
    if plan.sizes.as_slice() != dataset.sizes() {
        return Err(Error::input(format!(
            "plan sizes {:?} do not match the dataset {:?}",
            plan.sizes,
            dataset.sizes()
        )));
    }
    let order = epoch_order(plan, |s, i| dataset.has_image(s, i), rng);
    let seed = rng.next_u64();
    Ok(Epoch {
        dataset,
        options: options.clone(),
        order,
        rng: Rng::new(seed),
    })
}

/// Reassigns image ids among the image-bearing samples by a derangement, so
/// that none keeps its own image.
pub fn shuffle_images(samples: &[Sample], rng: &mut Rng) -> Result<Vec<Sample>> {
    let carriers: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].image_id.is_some()).collect();
    let perm = derangement(carriers.len(), rng)?;
    let mut out = samples.to_vec();
    for (slot, &from) in carriers.iter().zip(&perm) {
        out[*slot].image_id = samples[carriers[from]].image_id.clone();
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
