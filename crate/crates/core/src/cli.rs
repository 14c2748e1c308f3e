//! Command-line front end. Exit codes: 0 ok, 2 configuration error, 3 data
//! error, 4 numeric abort.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{
    effective_temperature, load_corpus, Corpora, FeatureStore, MixPlan, Sample, SampleKind, Stopwords,
};
use crate::error::{Error, Result};
use crate::eval::{
    bleu, bootstrap_significance, export_attention, run_ablation, sample_modality_ratio, word_accuracy,
    AblationMode, AblationResult, AblationTarget, EvalReport, Glossary, PromptSource, Translator,
};
use crate::manifest::RunManifest;
use crate::model::{load_checkpoint, save_checkpoint, Mode, Model};
use crate::prompter::KeywordIndex;
use crate::tokenizer::Vocab;
use crate::train::{build_keyword_index, run_training, RunConfig, TrainInputs};

#[derive(Debug, Parser)]
#[command(name = "tritri", version, about = "Multimodal translation with gated image fusion and keyword prompts")]
pub struct Cli {
    /// Where to write the run manifest (default: next to the main output).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a TOML run configuration.
    Train(TrainArgs),
    /// Translate a JSON-lines file of `{"src", "img"?, "prompt"?}` objects.
    Translate(TranslateArgs),
    /// Score hypotheses against a test corpus.
    Evaluate(EvaluateArgs),
    /// Decode a test set with normal, absent or shuffled visual inputs.
    Ablate(AblateArgs),
    /// Print stream probabilities and integer rates for temperature mixing.
    MixStats(MixStatsArgs),
    /// Build the image-to-keyword index used for prompts.
    BuildIndex(BuildIndexArgs),
    /// Write attention matrices for one sentence as CSV files.
    ExportAttention(ExportAttentionArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config value, e.g. `--set train.lr=0.001`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Model artifacts; vocabulary and index default to the checkpoint's
/// directory (`vocab.txt`, `keywords.imf`).
#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub beam: usize,
    /// Keywords retrieved per image.
    #[arg(long, default_value_t = 2)]
    pub prompt_k: usize,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub input: PathBuf,
    /// Output JSON lines (default: stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Feed image features to the fusion layer.
    #[arg(long)]
    pub use_image: bool,
    /// Prepend keyword prompts (explicit `prompt` field, else retrieved from the image).
    #[arg(long)]
    pub use_prompt: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Hypotheses: JSON lines with a `hyp` field, or plain text lines.
    #[arg(long)]
    pub hyps: PathBuf,
    /// Test corpus (JSON lines with `src` and `tgt`).
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub glossary: Option<PathBuf>,
    /// Baseline hypotheses for a paired bootstrap test.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Add-one smoothing for n-gram orders above one.
    #[arg(long)]
    pub add_one: bool,
    /// Checkpoint for the modality ratio on the test images.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub prompt_k: usize,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub test: PathBuf,
    /// normal, absent, adversarial or all.
    #[arg(long, default_value = "all")]
    pub mode: String,
    #[arg(long, default_value = "all")]
    pub target: AblationTarget,
    #[arg(long)]
    pub glossary: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MixStatsArgs {
    /// Stream sizes: triplets, parallel, captions.
    #[arg(long, value_delimiter = ',', required = true)]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 5.0)]
    pub temperature: f64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildIndexArgs {
    /// Image-bearing corpora (triplets or captions); repeatable.
    #[arg(long, required = true)]
    pub corpus: Vec<PathBuf>,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportAttentionArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub src: String,
    /// Target to force-decode; translated with the model when absent.
    #[arg(long)]
    pub tgt: Option<String>,
    #[arg(long)]
    pub img: Option<String>,
    /// Space-separated keywords; retrieved from the image when absent.
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let name = command_name(&cli.command);
    let argv = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let mut manifest = RunManifest::start(name, argv);
    let outcome = dispatch(&cli.command, &mut manifest);
    manifest.finish(&outcome);
    let path = cli.manifest.clone().unwrap_or_else(|| default_manifest_path(&cli.command));
    if let Err(e) = manifest.save(&path) {
        log::warn!("could not write manifest: {e}");
    }
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Train(_) => "train",
        Command::Translate(_) => "translate",
        Command::Evaluate(_) => "evaluate",
        Command::Ablate(_) => "ablate",
        Command::MixStats(_) => "mix-stats",
        Command::BuildIndex(_) => "build-index",
        Command::ExportAttention(_) => "export-attention",
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn default_manifest_path(c: &Command) -> PathBuf {
    let output = match c {
        Command::Train(a) => return a.out.join("manifest.json"),
        Command::ExportAttention(a) => return a.out.join("manifest.json"),
        Command::BuildIndex(a) => Some(&a.output),
        Command::Translate(a) => a.output.as_ref(),
        Command::Evaluate(a) => a.output.as_ref(),
        Command::Ablate(a) => a.output.as_ref(),
        Command::MixStats(a) => a.output.as_ref(),
    };
    match output {
        Some(p) => sibling(p, ".manifest.json"),
        None => PathBuf::from(format!("tritri-{}.manifest.json", command_name(c))),
    }
}

fn dispatch(c: &Command, m: &mut RunManifest) -> Result<()> {
    match c {
        Command::Train(a) => cmd_train(a, m),
        Command::Translate(a) => cmd_translate(a, m),
        Command::Evaluate(a) => cmd_evaluate(a, m),
        Command::Ablate(a) => cmd_ablate(a, m),
        Command::MixStats(a) => cmd_mix_stats(a, m),
        Command::BuildIndex(a) => cmd_build_index(a, m),
        Command::ExportAttention(a) => cmd_export_attention(a, m),
    }
}

fn emit(output: Option<&Path>, text: &str, m: &mut RunManifest) -> Result<()> {
    match output {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            std::fs::write(p, text).map_err(|e| Error::io(p, e))?;
            m.output(p);
            Ok(())
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|()| out.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize") + "\n"
}

fn corpus(path: &Path, kind: Option<SampleKind>, m: &mut RunManifest) -> Result<Vec<Sample>> {
    m.input(path);
    load_corpus(path, kind)
}

fn features(path: &Path, m: &mut RunManifest) -> Result<FeatureStore> {
    m.input(path);
    FeatureStore::load(path)
}

pub fn cmd_train(a: &TrainArgs, m: &mut RunManifest) -> Result<()> {
    m.input(&a.config);
    let cfg = RunConfig::load(&a.config, &a.overrides)?;
    cfg.validate()?;
    m.config = Some(cfg.to_toml());
    m.seed = Some(cfg.seed()?);
    let d = &cfg.data;
    let mut corpora = Corpora::default();
    for (path, kind) in [
        (&d.triplets, SampleKind::Triplet),
        (&d.parallel, SampleKind::Parallel),
        (&d.captions, SampleKind::Caption),
    ] {
        if let Some(p) = path {
            let samples = corpus(p, Some(kind), m)?;
            match kind {
                SampleKind::Triplet => corpora.triplets = samples,
                SampleKind::Parallel => corpora.parallel = samples,
                SampleKind::Caption => corpora.captions = samples,
            }
        }
    }
    if corpora.sizes().iter().all(|&n| n == 0) {
        return Err(Error::config("no training data: set data.triplets, data.parallel or data.captions"));
    }
    let dev = match &d.dev {
        Some(p) => corpus(p, None, m)?,
        None => Vec::new(),
    };
    let mode = cfg.model.mode;
    let features = match (&d.features, mode) {
        (_, Mode::TextOnly) => FeatureStore::new(cfg.model.feature_dim),
        (Some(p), _) => features(p, m)?,
        (None, _) => return Err(Error::config(format!("data.features is required in {mode} mode"))),
    };
    let stopwords = match &d.stopwords {
        Some(p) => {
            m.input(p);
            Stopwords::load(p)?
        }
        None => Stopwords::default(),
    };
    let vocab = match &d.vocab {
        Some(p) => {
            m.input(p);
            Vocab::load(p)?
        }
        None => Vocab::train(corpora.texts(), d.num_merges)?,
    };
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let vocab_path = a.out.join("vocab.txt");
    vocab.save(&vocab_path)?;
    m.output(&vocab_path);
    let cfg_path = a.out.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
    m.output(&cfg_path);

    let inputs = TrainInputs {
        corpora,
        features,
        dev,
        vocab,
        stopwords,
    };
    let outcome = run_training(&cfg, &inputs, Some(&a.out))?;
    if let Some(index) = &outcome.index {
        let p = a.out.join("keywords.imf");
        index.save(&p)?;
        m.output(&p);
        m.output(KeywordIndex::sidecar_path(&p));
    }
    if outcome.best.is_none() {
        // Without dev evaluation the final model doubles as the best one.
        save_checkpoint(&outcome.model, &a.out.join("best.ckpt"))?;
    }
    for f in ["final.ckpt", "best.ckpt", "train_log.jsonl"] {
        m.output(a.out.join(f));
    }
    log::info!("trained {} steps; artifacts in {}", outcome.steps, a.out.display());
    Ok(())
}

struct Loaded {
    model: Model,
    vocab: Vocab,
    index: Option<KeywordIndex>,
    features: Option<FeatureStore>,
}

impl Loaded {
    fn translator(&self, beam: usize, prompt_k: usize) -> Translator<'_> {
        Translator {
            model: &self.model,
            vocab: &self.vocab,
            index: self.index.as_ref(),
            prompt_k,
            beam,
        }
    }

    fn image(&self, id: Option<&str>, line: usize) -> Result<Option<&[f64]>> {
        let Some(id) = id else {
            log::warn!("line {line}: no image; decoding with the image indicator off");
            return Ok(None);
        };
        let store = self
            .features
            .as_ref()
            .ok_or_else(|| Error::config("image inputs need --features"))?;
        store
            .get(id)
            .map(Some)
            .ok_or_else(|| Error::Resolution(vec![id.to_string()]))
    }
}

fn load_model(
    checkpoint: &Path,
    vocab: Option<&Path>,
    index: Option<&Path>,
    feats: Option<&Path>,
    m: &mut RunManifest,
) -> Result<Loaded> {
    m.input(checkpoint);
    let model = load_checkpoint(checkpoint)?;
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    let vocab_path = vocab.map_or_else(|| dir.join("vocab.txt"), Path::to_path_buf);
    m.input(&vocab_path);
    let vocab = Vocab::load(&vocab_path)?;
    if vocab.len() != model.config().vocab_size {
        return Err(Error::config(format!(
            "{} has {} tokens but the checkpoint expects {}",
            vocab_path.display(),
            vocab.len(),
            model.config().vocab_size
        )));
    }
    let index_path = index.map(Path::to_path_buf).or_else(|| {
        let p = dir.join("keywords.imf");
        (model.config().mode.uses_prompt() && p.exists()).then_some(p)
    });
    let index = match index_path {
        Some(p) => {
            m.input(&p);
            Some(KeywordIndex::load(&p)?)
        }
        None => None,
    };
    let features = feats.map(|p| features(p, m)).transpose()?;
    Ok(Loaded {
        model,
        vocab,
        index,
        features,
    })
}

#[derive(Debug, Deserialize)]
struct TranslateLine {
    src: String,
    #[serde(default)]
    img: Option<String>,
    #[serde(default)]
    prompt: Option<String>,
}

pub fn cmd_translate(a: &TranslateArgs, m: &mut RunManifest) -> Result<()> {
    let ma = &a.model;
    let loaded = load_model(&ma.checkpoint, ma.vocab.as_deref(), ma.index.as_deref(), ma.features.as_deref(), m)?;
    let mode = loaded.model.config().mode;
    if a.use_image && !mode.uses_fusion() {
        return Err(Error::config(format!("--use-image needs a fusion model, checkpoint is {mode}")));
    }
    if a.use_prompt && !mode.uses_prompt() {
        return Err(Error::config(format!("--use-prompt needs a prompt model, checkpoint is {mode}")));
    }
    if ma.beam == 0 {
        return Err(Error::config("--beam must be at least 1"));
    }
    let translator = loaded.translator(ma.beam, ma.prompt_k);
    m.input(&a.input);
    let text = std::fs::read_to_string(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let mut out = String::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line: TranslateLine = serde_json::from_str(raw).map_err(|e| Error::Parse {
            path: a.input.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        let explicit = line.prompt.as_ref().filter(|_| a.use_prompt);
        let wants_image = a.use_image || (a.use_prompt && explicit.is_none());
        let image = if wants_image {
            loaded.image(line.img.as_deref(), i + 1)?
        } else {
            None
        };
        let prompt = match (a.use_prompt, explicit) {
            (false, _) => PromptSource::None,
            (true, Some(p)) => PromptSource::Explicit(p.split_whitespace().map(str::to_string).collect()),
            (true, None) => PromptSource::FromImage,
        };
        let keywords = translator.prompt_for(image, &prompt)?;
        let fused = image.filter(|_| a.use_image);
        let o = translator.translate(&line.src, fused, &PromptSource::Explicit(keywords))?;
        out.push_str(&serde_json::to_string(&o).expect("outputs serialize"));
        out.push('\n');
    }
    emit(a.output.as_deref(), &out, m)
}

/// Reads hypotheses written by `translate` (JSON lines) or plain text.
pub fn read_hypotheses(path: &Path) -> Result<Vec<String>> {
    #[derive(Deserialize)]
    struct Hyp {
        hyp: String,
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let json = text.lines().find(|l| !l.trim().is_empty()).is_some_and(|l| l.trim_start().starts_with('{'));
    if !json {
        return Ok(text.lines().map(str::to_string).collect());
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<Hyp>(l).map(|h| h.hyp).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

fn aligned(what: &Path, n: usize, expected: usize) -> Result<()> {
    if n != expected {
        return Err(Error::input(format!(
            "{} has {n} lines but the test set has {expected}",
            what.display()
        )));
    }
    Ok(())
}

pub fn cmd_evaluate(a: &EvaluateArgs, m: &mut RunManifest) -> Result<()> {
    let test = corpus(&a.test, None, m)?;
    m.input(&a.hyps);
    let hyps = read_hypotheses(&a.hyps)?;
    aligned(&a.hyps, hyps.len(), test.len())?;
    let refs: Vec<&str> = test.iter().map(|s| s.target.as_str()).collect();
    let mut report = EvalReport {
        bleu: bleu(&hyps, &refs, a.add_one)?,
        ..EvalReport::default()
    };
    if let Some(g) = &a.glossary {
        m.input(g);
        let glossary = Glossary::load(g)?;
        let sources: Vec<&str> = test.iter().map(|s| s.source.as_deref().unwrap_or("")).collect();
        report.word_accuracy = Some(word_accuracy(&sources, &hyps, &refs, &glossary)?);
    }
    if let Some(b) = &a.baseline {
        m.input(b);
        let base = read_hypotheses(b)?;
        aligned(b, base.len(), test.len())?;
        report.significance = Some(bootstrap_significance(&hyps, &base, &refs, a.resamples, a.seed)?);
    }
    if let Some(c) = &a.checkpoint {
        let loaded = load_model(c, a.vocab.as_deref(), a.index.as_deref(), a.features.as_deref(), m)?;
        if loaded.model.has_fusion() {
            let store = loaded
                .features
                .as_ref()
                .ok_or_else(|| Error::config("the modality ratio needs --features"))?;
            let ratio = sample_modality_ratio(&loaded.translator(1, a.prompt_k), &test, store)?;
            report.modality_ratio = Some(ratio.ratio);
        } else {
            log::warn!("{} has no fusion layer; modality ratio skipped", c.display());
        }
    }
    emit(a.output.as_deref(), &to_json(&report), m)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AblationOutput {
    pub report: EvalReport,
    pub results: Vec<AblationResult>,
}

pub fn cmd_ablate(a: &AblateArgs, m: &mut RunManifest) -> Result<()> {
    let modes: Vec<AblationMode> = match a.mode.as_str() {
        "all" => AblationMode::ALL.to_vec(),
        other => vec![other.parse()?],
    };
    let ma = &a.model;
    let loaded = load_model(&ma.checkpoint, ma.vocab.as_deref(), ma.index.as_deref(), ma.features.as_deref(), m)?;
    let test = corpus(&a.test, None, m)?;
    let store = match &loaded.features {
        Some(f) => f.clone(),
        None if loaded.model.config().mode == Mode::TextOnly => FeatureStore::new(loaded.model.config().feature_dim),
        None => return Err(Error::config("ablation of a visual model needs --features")),
    };
    let glossary = match &a.glossary {
        Some(g) => {
            m.input(g);
            Some(Glossary::load(g)?)
        }
        None => None,
    };
    let translator = loaded.translator(ma.beam, ma.prompt_k);
    let results = modes
        .into_iter()
        .map(|mode| run_ablation(&translator, &test, &store, mode, a.target, glossary.as_ref(), a.seed))
        .collect::<Result<Vec<_>>>()?;
    let out = AblationOutput {
        report: EvalReport::from_ablations(&results),
        results,
    };
    emit(a.output.as_deref(), &to_json(&out), m)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MixStats {
    pub sizes: Vec<usize>,
    pub temperature: f64,
    pub probabilities: Vec<f64>,
    /// Rates before rounding.
    pub exact_rates: Vec<f64>,
    pub rates: Vec<usize>,
    pub effective_temperature: Option<f64>,
    pub epoch_length: usize,
}

pub fn mix_stats(sizes: &[usize], temperature: f64) -> Result<MixStats> {
    let plan = MixPlan::new(sizes, temperature, 0.0)?;
    let f: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    Ok(MixStats {
        sizes: sizes.to_vec(),
        temperature,
        effective_temperature: effective_temperature(&f, &plan.rates)?,
        epoch_length: plan.epoch_length(),
        probabilities: plan.probabilities,
        exact_rates: plan.exact_rates,
        rates: plan.rates,
    })
}

pub fn cmd_mix_stats(a: &MixStatsArgs, m: &mut RunManifest) -> Result<()> {
    let stats = mix_stats(&a.sizes, a.temperature).map_err(|e| match e {
        Error::Input(msg) => Error::Config(msg),
        other => other,
    })?;
    emit(a.output.as_deref(), &to_json(&stats), m)
}

pub fn cmd_build_index(a: &BuildIndexArgs, m: &mut RunManifest) -> Result<()> {
    let mut samples = Vec::new();
    for p in &a.corpus {
        samples.extend(corpus(p, None, m)?);
    }
    let store = features(&a.features, m)?;
    let stopwords = match &a.stopwords {
        Some(p) => {
            m.input(p);
            Stopwords::load(p)?
        }
        None => Stopwords::default(),
    };
    let index = build_keyword_index(&Corpora::from_samples(samples), &store, &stopwords, a.k)?;
    if index.is_empty() {
        return Err(Error::input("no image-bearing sample yielded a keyword"));
    }
    if let Some(dir) = a.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    index.save(&a.output)?;
    m.output(&a.output);
    m.output(KeywordIndex::sidecar_path(&a.output));
    log::info!("indexed {} images", index.len());
    Ok(())
}

pub fn cmd_export_attention(a: &ExportAttentionArgs, m: &mut RunManifest) -> Result<()> {
    let ma = &a.model;
    let loaded = load_model(&ma.checkpoint, ma.vocab.as_deref(), ma.index.as_deref(), ma.features.as_deref(), m)?;
    let mode = loaded.model.config().mode;
    let image = match &a.img {
        Some(id) => loaded.image(Some(id), 1)?,
        None => None,
    };
    let translator = loaded.translator(ma.beam.max(1), ma.prompt_k);
    let prompt = match (&a.prompt, mode.uses_prompt()) {
        (Some(p), _) => PromptSource::Explicit(p.split_whitespace().map(str::to_string).collect()),
        (None, true) => PromptSource::FromImage,
        (None, false) => PromptSource::None,
    };
    let keywords = translator.prompt_for(image, &prompt)?;
    let fused = image.filter(|_| mode.uses_fusion());
    let target = match &a.tgt {
        Some(t) => t.clone(),
        None => {
            translator
                .translate(&a.src, fused, &PromptSource::Explicit(keywords.clone()))?
                .hyp
        }
    };
    let vocab = &loaded.vocab;
    let source = Model::prompted(&vocab.encode(&a.src), Some(&vocab.encode(&keywords.join(" "))));
    let files = export_attention(&loaded.model, vocab, &source, &vocab.encode(&target), fused, &a.out)?;
    let meta = BTreeMap::from([
        ("source", a.src.clone()),
        ("target", target),
        ("prompt", keywords.join(" ")),
    ]);
    let meta_path = a.out.join("sentence.json");
    std::fs::write(&meta_path, to_json(&meta)).map_err(|e| Error::io(&meta_path, e))?;
    m.output(meta_path);
    for f in files {
        m.output(f);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_stats_for_reference_sizes() {
        let s = mix_stats(&[22_000, 750_000, 103_000], 5.0).unwrap();
        assert_eq!(s.rates, vec![17, 1, 5]);
        let t = s.effective_temperature.unwrap();
        assert!((t - 5.08).abs() < 0.01, "{t}");
        assert!((s.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hypotheses_from_json_or_text() {
        let dir = tempfile::tempdir().unwrap();
        let j = dir.path().join("h.jsonl");
        std::fs::write(&j, "{\"hyp\":\"a b\",\"score\":-1.0,\"prompt_used\":[]}\n{\"hyp\":\"\"}\n").unwrap();
        assert_eq!(read_hypotheses(&j).unwrap(), vec!["a b".to_string(), String::new()]);
        let t = dir.path().join("h.txt");
        std::fs::write(&t, "a b\nc\n").unwrap();
        assert_eq!(read_hypotheses(&t).unwrap(), vec!["a b".to_string(), "c".to_string()]);
    }

    #[test]
    fn default_manifest_locations() {
        let cli = Cli::try_parse_from(["tritri", "mix-stats", "--sizes", "1,2,3", "--output", "o/stats.json"]).unwrap();
        assert_eq!(default_manifest_path(&cli.command), PathBuf::from("o/stats.json.manifest.json"));
        let cli = Cli::try_parse_from(["tritri", "train", "--config", "c.toml", "--out", "run"]).unwrap();
        assert_eq!(default_manifest_path(&cli.command), PathBuf::from("run/manifest.json"));
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["tritri", "no-such-command"]), 2);
        assert_eq!(run(["tritri", "--help"]), 0);
    }
}
