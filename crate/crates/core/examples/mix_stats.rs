//! Temperature-based corpus mixing: sampling probabilities, integer
//! upsampling rates and a fractional sampler check.
//!
//! cargo run --release --example mix_stats -- [temperature] [sizes...]

use tritri::data::{rates_from_probabilities, temperature_probabilities, FractionalSampler, MixPlan};
use tritri::rng::Rng;

fn main() -> tritri::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let temperature: f64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(5.0);
    let mut sizes: Vec<usize> = args.iter().skip(1).filter_map(|s| s.parse().ok()).collect();
    if sizes.is_empty() {
        sizes = vec![22_000, 750_000, 103_000];
    }
    let sizes_f: Vec<f64> = sizes.iter().map(|&d| d as f64).collect();
    let probs = temperature_probabilities(&sizes_f, temperature)?;
    let report = rates_from_probabilities(&sizes_f, &probs)?;
    println!("T = {temperature}");
    for (i, d) in sizes.iter().enumerate() {
        println!(
            "corpus {i}: size {d:>8}  p {:.4}  exact rate {:>7.3}  rate {}",
            probs[i], report.exact[i], report.rates[i]
        );
    }
    match report.effective_temperature {
        Some(t) => println!("effective temperature of the integer rates: {t:.3}"),
        None => println!("integer rates correspond to no single temperature"),
    }

    let plan = MixPlan::new(&sizes, temperature, 0.0)?;
    println!("epoch length with integer rates: {}", plan.epoch_length());
    let sampler = FractionalSampler::new(&plan);
    let mut rng = Rng::new(1);
    let mut counts = vec![0usize; sizes.len()];
    let draws = 100_000;
    for _ in 0..draws {
        counts[sampler.draw(&mut rng)] += 1;
    }
    for (i, c) in counts.iter().enumerate() {
        println!("fractional sampler corpus {i}: {:.4} (target {:.4})", *c as f64 / draws as f64, probs[i]);
    }
    Ok(())
}
