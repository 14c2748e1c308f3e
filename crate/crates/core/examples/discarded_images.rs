//! Triplet-unavailable regime: triplet images are discarded, so images reach
//! training only through caption denoising and the keyword index. Compares
//! dev loss of a fusion+prompt model against a text-only model trained on the
//! parallel text alone.
//!
//! cargo run --release --example discarded_images -- [steps] [seed]

use tritri::model::Mode;
use tritri::synthetic::{self, SyntheticConfig};
use tritri::train::run_training;

fn main() -> tritri::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(3000);
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);

    let task = synthetic::generate(&SyntheticConfig::default(), seed)?;
    let with_captions = task.train_inputs()?;
    let mut text_only = with_captions.clone();
    text_only.corpora.captions.clear();

    let mut fusion = synthetic::run_config(Mode::FusionPrompt, seed);
    fusion.data.discard_triplet_images = true;
    fusion.train.max_steps = steps;
    let mut text = synthetic::run_config(Mode::TextOnly, seed);
    text.data.discard_triplet_images = true;
    text.train.max_steps = steps;

    for (name, cfg, inputs) in [("fusion+prompt", &fusion, &with_captions), ("text-only", &text, &text_only)] {
        let out = run_training(cfg, inputs, None)?;
        let last = out.log.evaluations().last().and_then(|e| e.dev_loss);
        println!("{name:<18} final dev loss {:.4}", last.unwrap_or(f64::NAN));
    }
    Ok(())
}
