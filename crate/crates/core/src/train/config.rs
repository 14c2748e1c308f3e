//! Run configuration: a TOML file with `[model]`, `[train]` and `[data]`
//! sections, plus `section.key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{MaskUnit, StreamOptions};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Falls back to `TRITRI_SEED`, then 1.
    pub seed: Option<u64>,
    pub lr: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables it.
    pub grad_clip: f64,
    /// Encoder plus decoder tokens per batch.
    pub batch_tokens: usize,
    pub max_steps: usize,
    /// 0 means no epoch limit.
    pub max_epochs: usize,
    /// 0 disables dev evaluation.
    pub eval_every: usize,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Evaluations without dev BLEU improvement before stopping; 0 disables.
    pub patience: usize,
    pub dev_beam: usize,
    /// 0 evaluates the whole dev set.
    pub dev_limit: usize,
    pub bleu_add_one: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: None,
            lr: 5e-4,
            warmup_steps: 4000,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            grad_clip: 0.0,
            batch_tokens: 4096,
            max_steps: 100_000,
            max_epochs: 0,
            eval_every: 1000,
            checkpoint_every: 5000,
            patience: 10,
            dev_beam: 4,
            dev_limit: 0,
            bleu_add_one: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub triplets: Option<PathBuf>,
    pub parallel: Option<PathBuf>,
    pub captions: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    /// Existing vocabulary; trained on the corpora when absent.
    pub vocab: Option<PathBuf>,
    pub num_merges: usize,
    pub temperature: f64,
    pub drop_ratio: f64,
    pub mask_ratio: f64,
    pub mask_unit: MaskUnit,
    pub min_k: usize,
    pub max_k: usize,
    pub echo_prompt: bool,
    /// Treat triplets as parallel text (their images are dropped).
    pub discard_triplet_images: bool,
    /// Keywords retrieved per image at inference.
    pub prompt_k: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            triplets: None,
            parallel: None,
            captions: None,
            features: None,
            dev: None,
            stopwords: None,
            vocab: None,
            num_merges: 8000,
            temperature: 5.0,
            drop_ratio: 0.3,
            mask_ratio: 0.3,
            mask_unit: MaskUnit::Token,
            min_k: 1,
            max_k: 3,
            echo_prompt: false,
            discard_triplet_images: false,
            prompt_k: 2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

pub const SEED_ENV: &str = "TRITRI_SEED";

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with(text, &[])
    }

    /// Parses `text` after applying `section.key=value` overrides.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        for o in overrides {
            let (path, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override `{o}` is not key=value")))?;
            let keys: Vec<&str> = path.trim().split('.').collect();
            let (last, parents) = keys.split_last().expect("split yields one item");
            let mut t = &mut table;
            for k in parents {
                t = t
                    .entry(k.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::config(format!("`{k}` in `{path}` is not a section")))?;
            }
            t.insert(last.to_string(), parse_value(raw.trim()));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_with(&text, overrides)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Makes relative data paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let d = &mut self.data;
        for p in [
            &mut d.triplets,
            &mut d.parallel,
            &mut d.captions,
            &mut d.features,
            &mut d.dev,
            &mut d.stopwords,
            &mut d.vocab,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Seed from the config, else `TRITRI_SEED`, else 1.
    pub fn seed(&self) -> Result<u64> {
        if let Some(s) = self.train.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("{SEED_ENV}=`{v}` is not an integer"))),
            Err(_) => Ok(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if !(t.lr > 0.0) {
            return Err(Error::config(format!("train.lr must be positive, got {}", t.lr)));
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) || !(t.eps > 0.0) {
            return Err(Error::config("adam betas must lie in [0, 1) and eps be positive"));
        }
        if t.batch_tokens == 0 || t.dev_beam == 0 {
            return Err(Error::config("train.batch_tokens and train.dev_beam must be at least 1"));
        }
        let d = &self.data;
        if !(d.temperature > 0.0) {
            return Err(Error::config("data.temperature must be positive"));
        }
        for (name, p) in [("drop_ratio", d.drop_ratio), ("mask_ratio", d.mask_ratio)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("data.{name} must lie in [0, 1]")));
            }
        }
        if d.min_k > d.max_k || d.prompt_k == 0 {
            return Err(Error::config("need data.min_k <= data.max_k and data.prompt_k >= 1"));
        }
        Ok(())
    }

    pub fn stream_options(&self) -> StreamOptions {
        StreamOptions {
            fusion: self.model.mode.uses_fusion(),
            prompt: self.model.mode.uses_prompt(),
            mask_ratio: self.data.mask_ratio,
            mask_unit: self.data.mask_unit,
            min_k: self.data.min_k,
            max_k: self.data.max_k,
            echo_prompt: self.data.echo_prompt,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Mode;

    #[test]
    fn sections_and_overrides() {
        let text = "[model]\nmode = \"prompt\"\nd_model = 32\n[train]\nlr = 0.001\n";
        let cfg = RunConfig::from_toml_with(
            text,
            &["train.lr=0.01".into(), "data.mask_unit=word".into(), "model.mode=fusion".into()],
        )
        .unwrap();
        assert_eq!(cfg.model.d_model, 32);
        assert_eq!(cfg.model.mode, Mode::Fusion);
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.data.mask_unit, MaskUnit::Word);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn bad_configs_rejected() {
        assert!(matches!(RunConfig::from_toml("[train]\nbogus = 1\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[model]\nmode = \"both\"\n"), Err(Error::Config(_))));
        let cfg = RunConfig::from_toml_with("", &["train.lr=0".into()]).unwrap();
        assert!(cfg.validate().is_err());
        assert!(RunConfig::from_toml_with("", &["nonsense".into()]).is_err());
    }

    #[test]
    fn explicit_seed_wins() {
        let cfg = RunConfig::from_toml("[train]\nseed = 77\n").unwrap();
        assert_eq!(cfg.seed().unwrap(), 77);
    }
}
