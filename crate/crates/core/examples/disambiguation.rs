//! Trains a tiny model on the generated disambiguation task and reports
//! ambiguous-word accuracy under normal, absent and adversarial inputs.
//!
//! cargo run --release --example disambiguation -- [mode] [steps] [seed]

use std::time::Instant;

use tritri::eval::{run_ablation, AblationMode, AblationTarget, Translator};
use tritri::model::Mode;
use tritri::synthetic::{self, SyntheticConfig};
use tritri::train::run_training;

fn main() -> tritri::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mode: Mode = args.first().map_or(Ok(Mode::Fusion), |m| m.parse())?;
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);

    let task = synthetic::generate(&SyntheticConfig::default(), seed)?;
    let inputs = task.train_inputs()?;
    let mut cfg = synthetic::run_config(mode, seed);
    cfg.train.max_steps = steps;
    let start = Instant::now();
    let out = run_training(&cfg, &inputs, None)?;
    println!("trained {} steps in {:.1}s", out.steps, start.elapsed().as_secs_f64());

    let translator = Translator {
        model: &out.model,
        vocab: &inputs.vocab,
        index: out.index.as_ref(),
        prompt_k: cfg.data.prompt_k,
        beam: 1,
    };
    println!("chance rate {:.3}", task.chance_rate(&task.test)?);
    let modes: &[AblationMode] = if mode == Mode::TextOnly { &[AblationMode::Normal] } else { &AblationMode::ALL };
    for &m in modes {
        let r = run_ablation(&translator, &task.test, &task.features, m, AblationTarget::All, Some(&task.glossary), seed)?;
        let acc = r.word_accuracy.expect("glossary given");
        println!("{:<12} accuracy {:.3} ({}/{}), bleu {:.2}", m.as_str(), acc.accuracy, acc.hits, acc.applicable, r.bleu);
    }
    Ok(())
}
