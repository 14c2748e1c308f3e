use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which visual pathway a model (and its training run) uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "text-only")]
    TextOnly,
    #[serde(rename = "fusion")]
    Fusion,
    #[serde(rename = "prompt")]
    Prompt,
    #[serde(rename = "fusion+prompt")]
    FusionPrompt,
}

impl Mode {
    pub fn uses_fusion(self) -> bool {
        matches!(self, Mode::Fusion | Mode::FusionPrompt)
    }

    pub fn uses_prompt(self) -> bool {
        matches!(self, Mode::Prompt | Mode::FusionPrompt)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::TextOnly => "text-only",
            Mode::Fusion => "fusion",
            Mode::Prompt => "prompt",
            Mode::FusionPrompt => "fusion+prompt",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text-only" | "text" => Ok(Mode::TextOnly),
            "fusion" => Ok(Mode::Fusion),
            "prompt" => Ok(Mode::Prompt),
            "fusion+prompt" | "fusion-prompt" => Ok(Mode::FusionPrompt),
            other => Err(Error::config(format!(
                "unknown mode `{other}` (expected fusion, prompt, fusion+prompt or text-only)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub mode: Mode,
    pub vocab_size: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    /// Width of the externally supplied image feature.
    pub feature_dim: usize,
    /// Width of the adapted image representation concatenated to the text.
    pub img_dim: usize,
    pub max_positions: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    /// Beam scores are divided by `length^length_penalty`.
    pub length_penalty: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        // transformer-base shape
        Self {
            mode: Mode::FusionPrompt,
            vocab_size: 0,
            enc_layers: 6,
            dec_layers: 6,
            heads: 8,
            d_model: 256,
            d_ff: 512,
            feature_dim: 768,
            img_dim: 256,
            max_positions: 256,
            dropout: 0.1,
            label_smoothing: 0.1,
            length_penalty: 0.7,
            seed: 1,
        }
    }
}

impl ModelConfig {
    /// Small shape for tests and desk-scale experiments.
    pub fn tiny(mode: Mode, vocab_size: usize) -> Self {
        Self {
            mode,
            vocab_size,
            enc_layers: 1,
            dec_layers: 1,
            heads: 2,
            d_model: 8,
            d_ff: 16,
            feature_dim: 4,
            img_dim: 4,
            max_positions: 64,
            dropout: 0.0,
            label_smoothing: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("heads", self.heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("feature_dim", self.feature_dim),
            ("img_dim", self.img_dim),
            ("max_positions", self.max_positions),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be at least 1")));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::config(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        for (name, p) in [("dropout", self.dropout), ("label_smoothing", self.label_smoothing)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(format!("{name} must lie in [0, 1), got {p}")));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// `key=value` lines, as stored in checkpoints.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.kv_pairs() {
            s.push_str(&k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    fn kv_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("mode".into(), self.mode.to_string()),
            ("vocab_size".into(), self.vocab_size.to_string()),
            ("enc_layers".into(), self.enc_layers.to_string()),
            ("dec_layers".into(), self.dec_layers.to_string()),
            ("heads".into(), self.heads.to_string()),
            ("d_model".into(), self.d_model.to_string()),
            ("d_ff".into(), self.d_ff.to_string()),
            ("feature_dim".into(), self.feature_dim.to_string()),
            ("img_dim".into(), self.img_dim.to_string()),
            ("max_positions".into(), self.max_positions.to_string()),
            ("dropout".into(), format!("{:?}", self.dropout)),
            ("label_smoothing".into(), format!("{:?}", self.label_smoothing)),
            ("length_penalty".into(), format!("{:?}", self.length_penalty)),
            ("seed".into(), self.seed.to_string()),
        ]
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("malformed config line `{line}`")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut cfg = ModelConfig::default();
        fn num<T: FromStr>(map: &BTreeMap<String, String>, key: &str, slot: &mut T) -> Result<()> {
            if let Some(v) = map.get(key) {
                *slot = v
                    .parse()
                    .map_err(|_| Error::config(format!("bad value `{v}` for {key}")))?;
            }
            Ok(())
        }
        if let Some(m) = map.get("mode") {
            cfg.mode = m.parse()?;
        }
        num(&map, "vocab_size", &mut cfg.vocab_size)?;
        num(&map, "enc_layers", &mut cfg.enc_layers)?;
        num(&map, "dec_layers", &mut cfg.dec_layers)?;
        num(&map, "heads", &mut cfg.heads)?;
        num(&map, "d_model", &mut cfg.d_model)?;
        num(&map, "d_ff", &mut cfg.d_ff)?;
        num(&map, "feature_dim", &mut cfg.feature_dim)?;
        num(&map, "img_dim", &mut cfg.img_dim)?;
        num(&map, "max_positions", &mut cfg.max_positions)?;
        num(&map, "dropout", &mut cfg.dropout)?;
        num(&map, "label_smoothing", &mut cfg.label_smoothing)?;
        num(&map, "length_penalty", &mut cfg.length_penalty)?;
        num(&map, "seed", &mut cfg.seed)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
