//! Finite-difference check of the full model's reverse-mode gradients.
//!
//! cargo run --release --example gradcheck -- [mode]

use tritri::model::{Mode, Model, ModelConfig, Seq2Seq};
use tritri::numerics::{check_gradients, DEFAULT_STEP};

fn main() -> tritri::Result<()> {
    let mode: Mode = std::env::args().nth(1).map_or(Ok(Mode::Fusion), |s| s.parse())?;
    let cfg = ModelConfig {
        dropout: 0.0,
        ..ModelConfig::tiny(mode, 12)
    };
    let model = Model::new(cfg)?;
    let dim = model.config().feature_dim;
    let image: Vec<f64> = (0..dim).map(|i| (i as f64 * 0.7).sin()).collect();
    let image = mode.uses_fusion().then_some(image.as_slice());
    let params = model.params().tensors().to_vec();
    let r = check_gradients(&params, DEFAULT_STEP, |g, p| {
        let (loss, n) = model.loss_nodes(g, p, Seq2Seq { source: &[4, 5, 6], target: &[7, 8, 9], image }, None)?;
        g.scale(loss, 1.0 / n as f64)
    })?;
    println!(
        "{mode}: {} coordinates, max relative deviation {:.3e} (param {}, index {}: analytic {:.6e}, numeric {:.6e})",
        r.checked, r.max_relative, r.worst_param, r.worst_index, r.analytic, r.numeric
    );
    Ok(())
}
