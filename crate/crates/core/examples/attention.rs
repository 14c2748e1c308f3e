//! Exports attention maps of an untrained fusion model as CSV files.
//!
//! cargo run --release --example attention -- [out_dir]

use std::path::PathBuf;

use tritri::eval::export_attention;
use tritri::model::{Mode, Model, ModelConfig};
use tritri::tokenizer::Vocab;

fn main() -> tritri::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("tritri-attention"), PathBuf::from);
    let corpus = ["a man wears a mask", "一个 男人 戴 着 面具"];
    let vocab = Vocab::train(corpus.iter().copied(), 20)?;
    let model = Model::new(ModelConfig::tiny(Mode::Fusion, vocab.len()))?;
    let source = vocab.encode(corpus[0]);
    let target = vocab.encode(corpus[1]);
    let image: Vec<f64> = (0..model.config().feature_dim).map(|i| i as f64 / 10.0).collect();
    let files = export_attention(&model, &vocab, &source, &target, Some(&image), &out)?;
    println!("wrote {} attention maps to {}", files.len(), out.display());
    Ok(())
}
