//! Mixed-task training: Adam with inverse-square-root warmup over the epoch
//! stream, periodic dev evaluation and checkpoints.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    build_mixed_stream, Corpora, Dataset, FeatureStore, MixPlan, Sample, SampleKind, Stopwords, TaskTag,
    TrainingExample,
};
use crate::error::{Error, Result};
use crate::eval::{bleu, resolve_image, sample_modality_ratio, InputUse, PromptSource, Translator};
use crate::model::{save_checkpoint, Mode, Model, Seq2Seq};
use crate::numerics::{Graph, ParamId, Tensor, Var};
use crate::prompter::{KeywordExtractor, KeywordIndex};
use crate::rng::Rng;
use crate::tokenizer::Vocab;

pub use config::{DataConfig, RunConfig, TrainConfig, SEED_ENV};

/// Mean label-smoothed cross-entropy over the non-PAD positions of
/// `targets` (PAD positions are `None`).
pub fn loss(g: &mut Graph, logits: Var, targets: &[Option<usize>], smoothing: f64) -> Result<Var> {
    let count = targets.iter().filter(|t| t.is_some()).count();
    if count == 0 {
        return Err(Error::input("every target position is padding"));
    }
    let total = g.cross_entropy(logits, targets, smoothing)?;
    g.scale(total, 1.0 / count as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    lr: f64,
    warmup: usize,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: usize,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            lr: cfg.lr,
            warmup: cfg.warmup_steps,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    /// `lr · min(s / w, sqrt(w / s))` for step `s` (1-based), constant when
    /// there is no warmup.
    pub fn learning_rate(&self, step: usize) -> f64 {
        if self.warmup == 0 {
            return self.lr;
        }
        let (s, w) = (step.max(1) as f64, self.warmup as f64);
        self.lr * (s / w).min((w / s).sqrt())
    }

    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        self.step += 1;
        let t = self.step as i32;
        let lr = self.learning_rate(self.step);
        let (b1, b2) = (self.beta1, self.beta2);
        let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Loss and per-parameter gradients (mean over target tokens) of a batch.
pub fn batch_gradients(
    model: &Model,
    batch: &[TrainingExample],
    rng: Option<&Rng>,
) -> Result<(f64, usize, Vec<Tensor>)> {
    let mut g = Graph::new();
    let p = model.bind(&mut g, true);
    let mut total: Option<Var> = None;
    let mut count = 0;
    for (i, ex) in batch.iter().enumerate() {
        let mut dropout = rng.map(|r| r.stream(&format!("dropout/{i}")));
        let seq = Seq2Seq {
            source: &ex.encoder_tokens,
            target: &ex.decoder_target,
            image: ex.image.as_deref(),
        };
        let (l, n) = model.loss_nodes(&mut g, &p, seq, dropout.as_mut())?;
        count += n;
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
    }
    let total = total.ok_or_else(|| Error::input("empty batch"))?;
    let mean = g.scale(total, 1.0 / count as f64)?;
    let value = g.value(mean).item();
    let grads = g.backward(mean)?;
    let grads = model
        .params()
        .tensors()
        .iter()
        .enumerate()
        .map(|(i, t)| grads.param(ParamId(i)).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    Ok((value, count, grads))
}

/// One optimizer step. A non-finite loss or gradient aborts with the step
/// number and the batch's example ids.
pub fn train_step(
    model: &mut Model,
    batch: &[TrainingExample],
    ids: &[usize],
    opt: &mut Adam,
    grad_clip: f64,
    rng: &Rng,
) -> Result<f64> {
    let step = opt.steps() + 1;
    let abort = || Error::Abort {
        step,
        examples: ids.to_vec(),
    };
    let (loss, _, mut grads) = match batch_gradients(model, batch, Some(rng)) {
        Ok(r) => r,
        Err(Error::Numeric { .. }) => return Err(abort()),
        Err(e) => return Err(e),
    };
    if !loss.is_finite() || !grads.iter().all(Tensor::is_finite) {
        return Err(abort());
    }
    if grad_clip > 0.0 {
        let norm = grads.iter().flat_map(|g| g.data()).map(|x| x * x).sum::<f64>().sqrt();
        if norm > grad_clip {
            let s = grad_clip / norm;
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|x| *x *= s);
            }
        }
    }
    opt.update(model.params_mut().tensors_mut(), &grads);
    Ok(loss)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_bleu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality_ratio: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("log entries serialize") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Parse {
                    path: "train log".into(),
                    line: i + 1,
                    msg: e.to_string(),
                })
            })
            .collect::<Result<Vec<LogEntry>>>()?;
        Ok(Self { entries })
    }

    pub fn losses(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.loss).collect()
    }

    pub fn evaluations(&self) -> impl Iterator<Item = &LogEntry> {
        self.entries.iter().filter(|e| e.dev_bleu.is_some() || e.dev_loss.is_some())
    }
}

/// Everything a run reads besides its configuration.
#[derive(Clone, Debug)]
pub struct TrainInputs {
    pub corpora: Corpora,
    pub features: FeatureStore,
    pub dev: Vec<Sample>,
    pub vocab: Vocab,
    pub stopwords: Stopwords,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub best: Option<(usize, Model)>,
    pub log: TrainLog,
    pub index: Option<KeywordIndex>,
    pub steps: usize,
}

/// Groups an epoch into batches of one task each, emitted as soon as a
/// task's pending examples reach `batch_tokens`.
pub fn make_batches(examples: Vec<(usize, TrainingExample)>, batch_tokens: usize) -> Vec<Vec<(usize, TrainingExample)>> {
    let mut out = Vec::new();
    let mut pending: [(Vec<(usize, TrainingExample)>, usize); 2] = Default::default();
    for (id, ex) in examples {
        let slot = match ex.task_tag {
            TaskTag::Translate => 0,
            TaskTag::Denoise => 1,
        };
        let size = ex.encoder_tokens.len() + ex.decoder_target.len() + 1;
        pending[slot].0.push((id, ex));
        pending[slot].1 += size;
        if pending[slot].1 >= batch_tokens {
            out.push(std::mem::take(&mut pending[slot].0));
            pending[slot].1 = 0;
        }
    }
    out.extend(pending.into_iter().map(|(b, _)| b).filter(|b| !b.is_empty()));
    out
}

/// Keyword index over the image-bearing training samples.
pub fn build_keyword_index(
    corpora: &Corpora,
    features: &FeatureStore,
    stopwords: &Stopwords,
    k: usize,
) -> Result<KeywordIndex> {
    let targets = SampleKind::ALL
        .into_iter()
        .flat_map(|kind| corpora.stream(kind))
        .map(|s| s.target.as_str());
    let extractor = KeywordExtractor::new(targets, stopwords.clone());
    let mut pairs = Vec::new();
    for s in corpora.triplets.iter().chain(&corpora.captions) {
        if let Some(v) = resolve_image(s, Some(features), true)? {
            pairs.push((v, s.target.as_str()));
        }
    }
    KeywordIndex::build(pairs, &extractor, k)
}

/// Teacher-forced cross-entropy (no smoothing) per target token, with the
/// inputs the model's mode uses at inference.
pub fn dev_loss(translator: &Translator<'_>, dev: &[Sample], features: &FeatureStore) -> Result<f64> {
    let model = translator.model;
    let uses = InputUse::full(model);
    let (mut total, mut count) = (0.0, 0usize);
    for s in dev {
        let Some(src) = s.source.as_deref() else { continue };
        let image = resolve_image(s, Some(features), uses.image || uses.prompt)?;
        let keywords = if uses.prompt {
            translator.prompt_for(image, &PromptSource::FromImage)?
        } else {
            Vec::new()
        };
        let source = Model::prompted(&translator.vocab.encode(src), Some(&translator.vocab.encode(&keywords.join(" "))));
        let target = translator.vocab.encode(&s.target);
        let mut g = Graph::new();
        let p = model.bind(&mut g, false);
        let seq = Seq2Seq {
            source: &source,
            target: &target,
            image: image.filter(|_| uses.image),
        };
        let (logits, _) = model.logits_nodes(&mut g, &p, seq, None, None)?;
        let (_, out) = Model::shift_target(&target);
        let targets: Vec<Option<usize>> = out.iter().map(|&t| Some(t as usize)).collect();
        let l = g.cross_entropy(logits, &targets, 0.0)?;
        total += g.value(l).item();
        count += targets.len();
    }
    if count == 0 {
        return Err(Error::input("dev set has no translatable samples"));
    }
    Ok(total / count as f64)
}

struct Evaluation {
    bleu: f64,
    loss: f64,
    ratio: Option<f64>,
}

fn evaluate(cfg: &RunConfig, translator: &Translator<'_>, dev: &[Sample], features: &FeatureStore) -> Result<Evaluation> {
    let hyps: Vec<String> = translator
        .translate_samples(dev, Some(features), InputUse::full(translator.model))?
        .into_iter()
        .map(|o| o.hyp)
        .collect();
    let refs: Vec<&str> = dev.iter().map(|s| s.target.as_str()).collect();
    let ratio = if translator.model.has_fusion() {
        Some(sample_modality_ratio(translator, dev, features)?.ratio)
    } else {
        None
    };
    Ok(Evaluation {
        bleu: bleu(&hyps, &refs, cfg.train.bleu_add_one)?,
        loss: dev_loss(translator, dev, features)?,
        ratio,
    })
}

fn write_checkpoint_file(dir: &Path, name: &str, model: &Model) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    save_checkpoint(model, &path)?;
    Ok(path)
}

/// Trains one model of the configured mode. With `out_dir`, writes
/// `checkpoints/step_<n>.ckpt`, `best.ckpt`, `final.ckpt` and
/// `train_log.jsonl` there.
pub fn run_training(cfg: &RunConfig, inputs: &TrainInputs, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let mut model_cfg = cfg.model.clone();
    model_cfg.vocab_size = inputs.vocab.len();
    model_cfg.seed = seed;
    let mut model = Model::new(model_cfg)?;
    let mode = cfg.model.mode;

    let mut corpora = inputs.corpora.clone();
    if mode == Mode::TextOnly {
        // Images are never read, so they need not resolve.
        for s in corpora.triplets.iter_mut().chain(&mut corpora.captions) {
            s.image_id = None;
        }
    }
    if cfg.data.discard_triplet_images {
        for mut s in std::mem::take(&mut corpora.triplets) {
            s.kind = SampleKind::Parallel;
            s.image_id = None;
            corpora.parallel.push(s);
        }
    }
    let dataset = Dataset::prepare(&corpora, &inputs.vocab, &inputs.features, &inputs.stopwords)?;
    let plan = MixPlan::new(&dataset.sizes(), cfg.data.temperature, cfg.data.drop_ratio)?;
    log::info!(
        "mode {mode}: streams {:?}, rates {:?}, epoch {} examples",
        plan.sizes,
        plan.rates,
        plan.epoch_length()
    );
    let options = cfg.stream_options();
    let index = if mode.uses_prompt() {
        Some(build_keyword_index(&corpora, &inputs.features, &inputs.stopwords, cfg.data.prompt_k)?)
    } else {
        None
    };
    let dev: Vec<Sample> = match cfg.train.dev_limit {
        0 => inputs.dev.clone(),
        n => inputs.dev.iter().take(n).cloned().collect(),
    };

    let root = Rng::new(seed);
    let mut opt = Adam::new(&cfg.train, model.params().tensors());
    let mut log = TrainLog::default();
    let mut best: Option<(usize, f64, Model)> = None;
    let mut stale = 0usize;
    let mut log_file = match out_dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            let p = d.join("train_log.jsonl");
            Some((std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?, p))
        }
        None => None,
    };
    let ckpt_dir = out_dir.map(|d| d.join("checkpoints"));

    let mut step = 0usize;
    let mut epoch_no = 0usize;
    'outer: while step < cfg.train.max_steps && (cfg.train.max_epochs == 0 || epoch_no < cfg.train.max_epochs) {
        let mut epoch_rng = root.stream(&format!("epoch/{epoch_no}"));
        let epoch = build_mixed_stream(&dataset, &plan, &options, &mut epoch_rng)?;
        let examples = epoch
            .iter()
            .enumerate()
            .map(|(i, ex)| ex.map(|e| (i, e)))
            .collect::<Result<Vec<_>>>()?;
        let batches = make_batches(examples, cfg.train.batch_tokens);
        for batch in batches {
            let ids: Vec<usize> = batch.iter().map(|(i, _)| *i).collect();
            let exs: Vec<TrainingExample> = batch.into_iter().map(|(_, e)| e).collect();
            let step_rng = root.stream(&format!("step/{}", step + 1));
            let loss = train_step(&mut model, &exs, &ids, &mut opt, cfg.train.grad_clip, &step_rng)
                .map_err(|e| match e {
                    Error::Abort { .. } => e,
                    other => Error::State(format!("epoch {epoch_no}, step {}: {other}", step + 1)),
                })?;
            step += 1;
            let mut entry = LogEntry {
                step,
                loss,
                ..LogEntry::default()
            };
            let mut stop = false;
            if cfg.train.eval_every > 0 && step % cfg.train.eval_every == 0 && !dev.is_empty() {
                let translator = Translator {
                    model: &model,
                    vocab: &inputs.vocab,
                    index: index.as_ref(),
                    prompt_k: cfg.data.prompt_k,
                    beam: cfg.train.dev_beam,
                };
                let ev = evaluate(cfg, &translator, &dev, &inputs.features)?;
                log::info!("step {step}: loss {loss:.4}, dev bleu {:.2}, dev loss {:.4}", ev.bleu, ev.loss);
                entry.dev_bleu = Some(ev.bleu);
                entry.dev_loss = Some(ev.loss);
                entry.modality_ratio = ev.ratio;
                if best.as_ref().is_none_or(|b| ev.bleu > b.1) {
                    best = Some((step, ev.bleu, model.clone()));
                    stale = 0;
                    if let Some(d) = out_dir {
                        write_checkpoint_file(d, "best.ckpt", &model)?;
                    }
                } else {
                    stale += 1;
                    stop = cfg.train.patience > 0 && stale >= cfg.train.patience;
                }
            }
            if let (Some(dir), true) = (&ckpt_dir, cfg.train.checkpoint_every > 0) {
                if step % cfg.train.checkpoint_every == 0 {
                    write_checkpoint_file(dir, &format!("step_{step}.ckpt"), &model)?;
                }
            }
            if let Some((f, p)) = &mut log_file {
                let line = serde_json::to_string(&entry).expect("log entries serialize");
                writeln!(f, "{line}").map_err(|e| Error::io(p.as_path(), e))?;
            }
            log.entries.push(entry);
            if stop {
                log::info!("early stop at step {step}");
                break 'outer;
            }
            if step >= cfg.train.max_steps {
                break 'outer;
            }
        }
        epoch_no += 1;
    }
    if let Some(d) = out_dir {
        write_checkpoint_file(d, "final.ckpt", &model)?;
    }
    Ok(TrainOutcome {
        model,
        best: best.map(|(s, _, m)| (s, m)),
        log,
        index,
        steps: step,
    })
}
