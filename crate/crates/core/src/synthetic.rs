//! Generated disambiguation task.
//!
//! Every sentence holds one ambiguous source word whose target translation is
//! fixed only by the paired image. Image vectors concatenate a per-word
//! prototype and a per-sense-slot prototype, plus Gaussian noise, so the
//! slot half carries the sense and the word half lets nearest-neighbour
//! retrieval find the right keyword.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{save_corpus, Corpora, FeatureStore, ImageFeature, MaskUnit, Sample, Stopwords};
use crate::error::{Error, Result};
use crate::eval::{word_accuracy, Glossary, WordAccuracy};
use crate::model::{Mode, ModelConfig};
use crate::rng::Rng;
use crate::tokenizer::Vocab;
use crate::train::{RunConfig, TrainConfig, TrainInputs};

/// Ambiguous source words with their senses, most frequent first.
pub const AMBIGUOUS: &[(&str, &[(&str, f64)])] = &[
    ("mask", &[("口罩", 0.5), ("面具", 0.3), ("面膜", 0.2)]),
    ("bow", &[("弓箭", 0.5), ("蝴蝶结", 0.3), ("鞠躬", 0.2)]),
    ("top", &[("陀螺", 0.6), ("上衣", 0.4)]),
    ("clip", &[("夹子", 0.55), ("片段", 0.45)]),
    ("nail", &[("钉子", 0.6), ("指甲", 0.4)]),
    ("iron", &[("熨斗", 0.55), ("铁块", 0.45)]),
    ("brush", &[("画笔", 0.5), ("牙刷", 0.3), ("毛刷", 0.2)]),
    ("ring", &[("戒指", 0.6), ("铃声", 0.4)]),
    ("chip", &[("芯片", 0.6), ("薯条", 0.4)]),
    ("pipe", &[("管道", 0.55), ("烟斗", 0.45)]),
    ("bass", &[("鲈鱼", 0.6), ("贝斯", 0.4)]),
    ("crane", &[("起重机", 0.6), ("仙鹤", 0.4)]),
    ("slide", &[("滑梯", 0.6), ("幻灯", 0.4)]),
    ("tape", &[("胶带", 0.5), ("磁带", 0.3), ("录像", 0.2)]),
];

/// Unambiguous context words and their translations.
pub const CONTEXT: &[(&str, &str)] = &[
    ("new", "崭新"),
    ("old", "陈旧"),
    ("big", "巨大"),
    ("small", "微小"),
    ("red", "红色"),
    ("blue", "蓝色"),
    ("green", "绿色"),
    ("black", "黑色"),
    ("see", "看见"),
    ("buy", "购买"),
    ("find", "找到"),
    ("keep", "保存"),
    ("clean", "清洁"),
    ("sell", "出售"),
    ("lose", "丢失"),
    ("want", "想要"),
    ("cheap", "便宜"),
    ("heavy", "沉重"),
    ("today", "今天"),
    ("here", "此处"),
];

pub const MAX_SENSES: usize = 4;

/// Enough merges to make every synthetic word a single token.
pub const NUM_MERGES: usize = 400;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub train_templates: usize,
    pub dev_templates: usize,
    pub test_templates: usize,
    /// Triplet instances per training template.
    pub train_copies: usize,
    /// Parallel (image-less) instances per training template.
    pub parallel_copies: usize,
    /// Caption instances per training template.
    pub caption_copies: usize,
    pub dev_copies: usize,
    pub test_copies: usize,
    /// Half of the feature dimension encodes the word, half the sense slot.
    pub feature_dim: usize,
    pub noise: f64,
    pub min_context: usize,
    pub max_context: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            train_templates: 384,
            dev_templates: 64,
            test_templates: 64,
            train_copies: 4,
            parallel_copies: 4,
            caption_copies: 4,
            dev_copies: 2,
            test_copies: 8,
            feature_dim: 16,
            noise: 0.1,
            min_context: 2,
            max_context: 3,
        }
    }
}

impl SyntheticConfig {
    pub fn templates(&self) -> usize {
        self.train_templates + self.dev_templates + self.test_templates
    }
}

/// One sentence pattern: context words around a single ambiguous word.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Template {
    pub word: usize,
    /// Indices into [`CONTEXT`], with `None` marking the ambiguous slot.
    pub slots: Vec<Option<usize>>,
}

impl Template {
    pub fn source(&self) -> String {
        self.render(|c| CONTEXT[c].0, AMBIGUOUS[self.word].0)
    }

    pub fn target(&self, sense: usize) -> String {
        self.render(|c| CONTEXT[c].1, AMBIGUOUS[self.word].1[sense].0)
    }

    fn render<'a>(&self, ctx: impl Fn(usize) -> &'a str, amb: &'a str) -> String {
        self.slots
            .iter()
            .map(|s| s.map_or(amb, &ctx))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub templates: Vec<Template>,
    pub triplets: Vec<Sample>,
    pub parallel: Vec<Sample>,
    pub captions: Vec<Sample>,
    pub dev: Vec<Sample>,
    pub test: Vec<Sample>,
    pub features: FeatureStore,
    pub glossary: Glossary,
}

/// Tiny-model run settings sized for the synthetic task.
pub fn run_config(mode: Mode, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig {
        mode,
        enc_layers: 2,
        dec_layers: 2,
        heads: 4,
        d_model: 32,
        d_ff: 64,
        feature_dim: 16,
        img_dim: 16,
        max_positions: 32,
        dropout: 0.1,
        label_smoothing: 0.1,
        ..ModelConfig::default()
    };
    cfg.train = TrainConfig {
        seed: Some(seed),
        lr: 2e-3,
        warmup_steps: 200,
        batch_tokens: 256,
        max_steps: 3000,
        eval_every: 500,
        checkpoint_every: 0,
        patience: 0,
        dev_beam: 1,
        ..TrainConfig::default()
    };
    cfg.data.mask_unit = MaskUnit::Word;
    cfg.data.num_merges = NUM_MERGES;
    cfg.data.prompt_k = 1;
    cfg
}

fn prototype(dim: usize, rng: &mut Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / norm).collect()
}

pub fn glossary() -> Glossary {
    let mut g = Glossary::default();
    for (word, senses) in AMBIGUOUS {
        g.insert(word, senses.iter().map(|(s, _)| (*s).to_string()).collect())
            .expect("static glossary is valid");
    }
    g
}

/// Builds the task. Templates are split into disjoint train, dev and test
/// sets; senses are drawn from each word's prior.
pub fn generate(cfg: &SyntheticConfig, seed: u64) -> Result<SyntheticTask> {
    if cfg.feature_dim < 2 || cfg.feature_dim % 2 != 0 {
        return Err(Error::config("synthetic feature_dim must be even and >= 2"));
    }
    if cfg.min_context == 0 || cfg.min_context > cfg.max_context || cfg.max_context > CONTEXT.len() {
        return Err(Error::config("synthetic context length range is invalid"));
    }
    if cfg.noise < 0.0 || !cfg.noise.is_finite() {
        return Err(Error::config("synthetic noise must be finite and >= 0"));
    }
    let root = Rng::new(seed);
    let half = cfg.feature_dim / 2;
    let mut proto_rng = root.stream("synthetic/prototypes");
    let word_protos: Vec<Vec<f64>> = AMBIGUOUS.iter().map(|_| prototype(half, &mut proto_rng)).collect();
    let slot_protos: Vec<Vec<f64>> = (0..MAX_SENSES).map(|_| prototype(half, &mut proto_rng)).collect();

    let templates = sample_templates(cfg, &mut root.stream("synthetic/templates"))?;
    let (train, rest) = templates.split_at(cfg.train_templates);
    let (dev, test) = rest.split_at(cfg.dev_templates);

    let mut features = FeatureStore::new(cfg.feature_dim);
    let mut sense_rng = root.stream("synthetic/senses");
    let mut noise_rng = root.stream("synthetic/noise");
    let mut instance = |t: &Template, split: &str, n: usize, features: &mut FeatureStore| -> Result<(String, String)> {
        let priors: Vec<f64> = AMBIGUOUS[t.word].1.iter().map(|(_, p)| *p).collect();
        let sense = sense_rng.categorical(&priors);
        let id = format!("{split}-{n:05}");
        let vector = word_protos[t.word]
            .iter()
            .chain(&slot_protos[sense])
            .map(|x| x + cfg.noise * noise_rng.normal())
            .collect();
        features.push(ImageFeature { id: id.clone(), vector })?;
        Ok((id, t.target(sense)))
    };

    let mut triplets = Vec::new();
    let mut captions = Vec::new();
    let mut parallel = Vec::new();
    for t in train {
        for _ in 0..cfg.train_copies {
            let (id, target) = instance(t, "train", triplets.len(), &mut features)?;
            triplets.push(Sample::triplet(t.source(), target, id));
        }
        for _ in 0..cfg.caption_copies {
            let (id, target) = instance(t, "caption", captions.len(), &mut features)?;
            captions.push(Sample::caption(target, id));
        }
    }
    // Image-less parallel text: the sense follows the prior alone.
    let mut par_rng = root.stream("synthetic/parallel");
    for t in train {
        for _ in 0..cfg.parallel_copies {
            let priors: Vec<f64> = AMBIGUOUS[t.word].1.iter().map(|(_, p)| *p).collect();
            parallel.push(Sample::parallel(t.source(), t.target(par_rng.categorical(&priors))));
        }
    }
    let mut split = |ts: &[Template], name: &str, copies: usize, features: &mut FeatureStore| -> Result<Vec<Sample>> {
        let mut out = Vec::new();
        for t in ts {
            for _ in 0..copies {
                let (id, target) = instance(t, name, out.len(), features)?;
                out.push(Sample::triplet(t.source(), target, id));
            }
        }
        Ok(out)
    };
    let dev = split(dev, "dev", cfg.dev_copies, &mut features)?;
    let test = split(test, "test", cfg.test_copies, &mut features)?;
    Ok(SyntheticTask {
        templates,
        triplets,
        parallel,
        captions,
        dev,
        test,
        features,
        glossary: glossary(),
    })
}

fn sample_templates(cfg: &SyntheticConfig, rng: &mut Rng) -> Result<Vec<Template>> {
    let wanted = cfg.templates();
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(wanted);
    let mut attempts = 0usize;
    while out.len() < wanted {
        attempts += 1;
        if attempts > wanted * 1000 {
            return Err(Error::config(format!("cannot draw {wanted} distinct synthetic templates")));
        }
        let n = rng.range_inclusive(cfg.min_context, cfg.max_context);
        let mut slots: Vec<Option<usize>> = rng.choose_indices(CONTEXT.len(), n).into_iter().map(Some).collect();
        slots.insert(rng.below(n + 1), None);
        let t = Template {
            word: rng.below(AMBIGUOUS.len()),
            slots,
        };
        if seen.insert(t.clone()) {
            out.push(t);
        }
    }
    Ok(out)
}

impl SyntheticTask {
    pub fn corpora(&self) -> Corpora {
        Corpora {
            triplets: self.triplets.clone(),
            parallel: self.parallel.clone(),
            captions: self.captions.clone(),
        }
    }

    /// Training inputs over all three streams, with a vocabulary learned
    /// from them.
    pub fn train_inputs(&self) -> Result<TrainInputs> {
        let corpora = self.corpora();
        let vocab = Vocab::train(corpora.texts(), NUM_MERGES)?;
        Ok(TrainInputs {
            corpora,
            features: self.features.clone(),
            dev: self.dev.clone(),
            vocab,
            stopwords: Stopwords::default(),
        })
    }

    /// Ambiguous-word accuracy of `hyps` against `samples`.
    pub fn accuracy<H: AsRef<str>>(&self, samples: &[Sample], hyps: &[H]) -> Result<WordAccuracy> {
        let sources: Vec<&str> = samples.iter().map(|s| s.source.as_deref().unwrap_or("")).collect();
        let refs: Vec<&str> = samples.iter().map(|s| s.target.as_str()).collect();
        word_accuracy(&sources, hyps, &refs, &self.glossary)
    }

    /// Accuracy of always emitting each word's most frequent sense.
    pub fn chance_rate(&self, samples: &[Sample]) -> Result<f64> {
        let hyps: Vec<String> = samples
            .iter()
            .map(|s| {
                let src = s.source.as_deref().unwrap_or("");
                src.split_whitespace()
                    .map(|w| match AMBIGUOUS.iter().find(|(a, _)| *a == w) {
                        Some((_, senses)) => senses[0].0,
                        None => "",
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        Ok(self.accuracy(samples, &hyps)?.accuracy)
    }

    /// Writes `triplets.jsonl`, `parallel.jsonl`, `captions.jsonl`,
    /// `dev.jsonl`, `test.jsonl`, `features.imf` and `glossary.tsv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_corpus(&dir.join("triplets.jsonl"), &self.triplets)?;
        save_corpus(&dir.join("parallel.jsonl"), &self.parallel)?;
        save_corpus(&dir.join("captions.jsonl"), &self.captions)?;
        save_corpus(&dir.join("dev.jsonl"), &self.dev)?;
        save_corpus(&dir.join("test.jsonl"), &self.test)?;
        self.features.save(&dir.join("features.imf"))?;
        let p = dir.join("glossary.tsv");
        std::fs::write(&p, self.glossary.to_tsv()).map_err(|e| Error::io(p, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn target_words() -> Vec<&'static str> {
        AMBIGUOUS
            .iter()
            .flat_map(|(_, s)| s.iter().map(|(w, _)| *w))
            .chain(CONTEXT.iter().map(|(_, t)| *t))
            .collect()
    }

    // Glossary matching ignores whitespace, so no sense may appear across a
    // word boundary or inside another word.
    #[test]
    fn senses_never_match_spuriously() {
        let words = target_words();
        for (_, senses) in AMBIGUOUS {
            for (sense, _) in *senses {
                for a in &words {
                    for b in &words {
                        let joined = format!("{a}{b}");
                        if joined.contains(sense) {
                            assert!(a == sense || b == sense, "{sense} inside {a}|{b}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn priors_are_normalized_and_majority_first() {
        for (w, senses) in AMBIGUOUS {
            assert!((2..=MAX_SENSES).contains(&senses.len()), "{w}");
            assert!((senses.iter().map(|s| s.1).sum::<f64>() - 1.0).abs() < 1e-12, "{w}");
            assert!(senses.windows(2).all(|p| p[0].1 >= p[1].1), "{w}");
        }
    }

    #[test]
    fn task_shape_and_disjoint_splits() {
        let cfg = SyntheticConfig::default();
        let t = generate(&cfg, 3).unwrap();
        assert_eq!(t.templates.len(), 512);
        assert_eq!(t.triplets.len(), 384 * 4);
        assert_eq!(t.test.len(), 64 * 8);
        let train: BTreeSet<_> = t.triplets.iter().map(|s| s.source.clone()).collect();
        assert!(t.test.iter().all(|s| !train.contains(&s.source)));
        assert!(t.dev.iter().all(|s| !train.contains(&s.source)));
        let ids = t.triplets.iter().chain(&t.captions).chain(&t.dev).chain(&t.test);
        t.features.resolve(ids.filter_map(|s| s.image_id.as_deref())).unwrap();
        assert!(t.parallel.iter().all(|s| s.image_id.is_none()));
    }

    #[test]
    fn references_are_fully_applicable() {
        let t = generate(&SyntheticConfig::default(), 3).unwrap();
        let refs: Vec<&str> = t.test.iter().map(|s| s.target.as_str()).collect();
        let acc = t.accuracy(&t.test, &refs).unwrap();
        assert_eq!(acc.applicable, t.test.len());
        assert_eq!(acc.hits, t.test.len());
        let chance = t.chance_rate(&t.test).unwrap();
        assert!(chance > 0.4 && chance < 0.75, "{chance}");
    }

    #[test]
    fn generation_is_seeded() {
        let cfg = SyntheticConfig::default();
        let (a, b) = (generate(&cfg, 9).unwrap(), generate(&cfg, 9).unwrap());
        assert_eq!(a.triplets, b.triplets);
        assert_eq!(a.features, b.features);
        assert_ne!(generate(&cfg, 10).unwrap().triplets, a.triplets);
    }

    #[test]
    fn same_sense_images_are_nearest() {
        let t = generate(&SyntheticConfig::default(), 3).unwrap();
        let g = &t.glossary;
        let sense_of = |s: &Sample| {
            let w = s.source.as_deref().unwrap().split_whitespace().find(|w| g.get(w).is_some()).unwrap();
            g.get(w).unwrap().iter().position(|a| s.target.contains(a.as_str())).map(|k| (w.to_string(), k))
        };
        let mut agree = 0;
        for q in t.test.iter().take(100) {
            let qv = t.features.get(q.image_id.as_deref().unwrap()).unwrap();
            let best = t
                .triplets
                .iter()
                .max_by(|a, b| {
                    let ca = crate::prompter::cosine(qv, t.features.get(a.image_id.as_deref().unwrap()).unwrap());
                    let cb = crate::prompter::cosine(qv, t.features.get(b.image_id.as_deref().unwrap()).unwrap());
                    ca.total_cmp(&cb)
                })
                .unwrap();
            agree += usize::from(sense_of(best) == sense_of(q));
        }
        assert!(agree >= 99, "{agree}");
    }
}
