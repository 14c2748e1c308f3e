//! Runs every acceptance criterion and prints one PASS/FAIL line for each.
//! Exits non-zero when any criterion fails.

use std::path::Path;
use std::time::{Duration, Instant};

use serde_json::Value;
use tritri::data::{rates_from_probabilities, temperature_probabilities, FractionalSampler, MixPlan};
use tritri::eval::{
    bleu, bootstrap_significance, run_ablation, sample_modality_ratio, word_accuracy, AblationMode, AblationTarget,
    Glossary, Translator,
};
use tritri::model::{Mode, Model, ModelConfig, Seq2Seq};
use tritri::numerics::{check_gradients, Tensor, DEFAULT_STEP};
use tritri::rng::Rng;
use tritri::synthetic::{self, SyntheticConfig, SyntheticTask};
use tritri::train::{run_training, RunConfig, TrainInputs, TrainOutcome};

const SYNTHETIC_SEED: u64 = 1;
const SYNTHETIC_STEPS: usize = 5000;

type Checked = tritri::Result<(bool, String)>;

struct Report {
    failed: Vec<String>,
}

impl Report {
    fn record(&mut self, id: &str, limit: Duration, f: impl FnOnce() -> Checked) {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok((ok, detail)) => {
                let in_time = elapsed <= limit;
                let mut detail = detail;
                if !in_time {
                    detail.push_str(&format!("; over the {}s limit", limit.as_secs()));
                }
                (ok && in_time, detail)
            }
            Err(e) => (false, format!("error: {e}")),
        };
        println!(
            "{} criterion {id} ({:.1}s): {detail}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        if !pass {
            self.failed.push(id.to_string());
        }
    }
}

fn fixture(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

// 1. Gate identities.
fn gate_identities() -> Checked {
    let mut absent_ok = 0;
    let mut zero_gate_ok = 0;
    let mut live = 0;
    let draws = 1000u64;
    for i in 0..draws {
        let mut rng = Rng::new(i);
        let mut cfg = ModelConfig::tiny(Mode::Fusion, 24);
        cfg.seed = i;
        let mut model = Model::new(cfg)?;
        let scale = 0.1 + 3.0 * rng.uniform();
        for t in model.params_mut().tensors_mut() {
            for x in t.data_mut() {
                *x = scale * rng.normal();
            }
        }
        let len = rng.range_inclusive(1, 12);
        let tokens: Vec<u32> = (0..len).map(|_| 4 + rng.below(20) as u32).collect();
        let img_scale = 0.01 + 10.0 * rng.uniform();
        let image: Vec<f64> = (0..4).map(|_| img_scale * rng.normal()).collect();

        let s = model.encoder_state(&tokens, None)?;
        absent_ok += usize::from(s.h_out == s.h_text && s.gated.is_none());
        let s = model.encoder_state(&tokens, Some(&image))?;
        live += usize::from(s.h_out != s.h_text);

        for name in ["fusion.gate.w", "fusion.gate.b"] {
            let shape = model.params().get(name).expect("fusion model has a gate").shape().to_vec();
            model.params_mut().set(name, Tensor::zeros(&shape))?;
        }
        let s = model.encoder_state(&tokens, Some(&image))?;
        zero_gate_ok += usize::from(s.h_out == s.h_text);
    }
    let n = draws as usize;
    Ok((
        absent_ok == n && zero_gate_ok == n,
        format!(
            "image absent exact {absent_ok}/{n}, zero gate exact {zero_gate_ok}/{n} (live gate changed H in {live}/{n})"
        ),
    ))
}

// 2. Gradient correctness on a 2-layer, d_model 16 fusion model.
fn gradient_check() -> Checked {
    let cfg = ModelConfig {
        mode: Mode::Fusion,
        vocab_size: 16,
        enc_layers: 2,
        dec_layers: 2,
        heads: 4,
        d_model: 16,
        d_ff: 32,
        feature_dim: 6,
        img_dim: 8,
        max_positions: 16,
        dropout: 0.0,
        label_smoothing: 0.1,
        seed: 7,
        ..ModelConfig::default()
    };
    let model = Model::new(cfg)?;
    let image = [0.4, -1.2, 0.3, 0.9, -0.1, 0.5];
    let batch: [(&[u32], &[u32], Option<&[f64]>); 3] = [
        (&[5, 6, 7, 8], &[9, 10, 11], Some(&image)),
        (&[12, 7], &[13, 9], None),
        (&[4, 14, 15], &[10, 12, 13, 14], Some(&image)),
    ];
    let params = model.params().tensors().to_vec();
    let r = check_gradients(&params, DEFAULT_STEP, |g, p| {
        let mut total = None;
        let mut count = 0;
        for &(source, target, image) in &batch {
            let (l, n) = model.loss_nodes(g, p, Seq2Seq { source, target, image }, None)?;
            count += n;
            total = Some(match total {
                Some(t) => g.add(t, l)?,
                None => l,
            });
        }
        g.scale(total.expect("non-empty batch"), 1.0 / count as f64)
    })?;
    Ok((
        r.max_relative < 1e-3,
        format!("max relative deviation {:.3e} over {} coordinates (< 1e-3)", r.max_relative, r.checked),
    ))
}

struct Synthetic {
    task: SyntheticTask,
    inputs: TrainInputs,
}

fn synthetic_config(mode: Mode) -> RunConfig {
    let mut cfg = synthetic::run_config(mode, SYNTHETIC_SEED);
    cfg.train.max_steps = SYNTHETIC_STEPS;
    cfg.train.checkpoint_every = 1000;
    cfg
}

fn train_timed(cfg: &RunConfig, inputs: &TrainInputs, out: Option<&Path>) -> tritri::Result<(TrainOutcome, Duration)> {
    let start = Instant::now();
    let o = run_training(cfg, inputs, out)?;
    Ok((o, start.elapsed()))
}

struct Accuracies {
    normal: f64,
    absent: f64,
    adversarial: f64,
}

fn accuracies(s: &Synthetic, out: &TrainOutcome, cfg: &RunConfig) -> tritri::Result<Accuracies> {
    let t = Translator {
        model: &out.model,
        vocab: &s.inputs.vocab,
        index: out.index.as_ref(),
        prompt_k: cfg.data.prompt_k,
        beam: 1,
    };
    let acc = |mode| -> tritri::Result<f64> {
        let r = run_ablation(&t, &s.task.test, &s.task.features, mode, AblationTarget::All, Some(&s.task.glossary), 1)?;
        Ok(r.word_accuracy.map_or(0.0, |w| w.accuracy))
    };
    let normal = acc(AblationMode::Normal)?;
    if out.model.config().mode == Mode::TextOnly {
        return Ok(Accuracies {
            normal,
            absent: normal,
            adversarial: normal,
        });
    }
    Ok(Accuracies {
        normal,
        absent: acc(AblationMode::Absent)?,
        adversarial: acc(AblationMode::Adversarial)?,
    })
}

// 3. Synthetic disambiguation; keeps the fusion run for criteria 4 and 7.
fn disambiguation(s: &Synthetic, fusion_dir: &Path, keep: &mut Option<TrainOutcome>) -> Checked {
    let chance = s.task.chance_rate(&s.task.test)?;
    let mut ok = true;
    let mut parts = vec![format!("chance {chance:.3}")];
    for mode in [Mode::Fusion, Mode::Prompt, Mode::TextOnly] {
        let cfg = synthetic_config(mode);
        let out_dir = (mode == Mode::Fusion).then_some(fusion_dir);
        let (out, took) = train_timed(&cfg, &s.inputs, out_dir)?;
        let a = accuracies(s, &out, &cfg)?;
        let in_budget = out.steps <= 20_000 && took <= Duration::from_secs(30 * 60);
        ok &= in_budget;
        let line = if mode == Mode::TextOnly {
            let within = (a.normal - chance).abs() <= 0.10;
            ok &= within;
            format!("text-only {:.3} (|Δ chance| {:.3} <= 0.10)", a.normal, (a.normal - chance).abs())
        } else {
            let reaches = a.normal >= 0.95;
            let gap = a.normal - a.absent;
            let order = gap >= 0.25 && a.adversarial <= a.absent;
            ok &= reaches && order;
            format!(
                "{mode} normal {:.3} (>= 0.95) absent {:.3} adversarial {:.3} (gap {:.3} >= 0.25, adversarial <= absent)",
                a.normal, a.absent, a.adversarial, gap
            )
        };
        println!("  {line}; {} steps in {:.0}s", out.steps, took.as_secs_f64());
        parts.push(line);
        if mode == Mode::Fusion {
            *keep = Some(out);
        }
    }
    Ok((ok, parts.join("; ")))
}

// 4. Modality ratio on the converged fusion model.
fn modality_liveness(s: &Synthetic, fusion: &TrainOutcome) -> Checked {
    let t = Translator {
        model: &fusion.model,
        vocab: &s.inputs.vocab,
        index: None,
        prompt_k: 1,
        beam: 1,
    };
    let r = sample_modality_ratio(&t, &s.task.test, &s.task.features)?;
    Ok((r.ratio > 0.05, format!("modality ratio {:.4} over {} positions (> 0.05)", r.ratio, r.positions)))
}

// 5. Temperature sampler and the integer triplet rate.
fn sampler() -> Checked {
    let sizes = [22_000usize, 750_000, 103_000];
    let sizes_f: Vec<f64> = sizes.iter().map(|&d| d as f64).collect();
    let mut worst: f64 = 0.0;
    let mut closed_form: f64 = 0.0;
    for t in [1.0, 2.0, 5.0, 100.0] {
        let probs = temperature_probabilities(&sizes_f, t)?;
        let w: Vec<f64> = sizes_f.iter().map(|d| d.powf(1.0 / t)).collect();
        let z: f64 = w.iter().sum();
        for (p, w) in probs.iter().zip(&w) {
            closed_form = closed_form.max((p - w / z).abs());
        }
        let plan = MixPlan::new(&sizes, t, 0.0)?;
        let sampler = FractionalSampler::new(&plan);
        let mut rng = Rng::new(5).stream(&format!("acceptance/sampler/{t}"));
        let mut counts = [0usize; 3];
        let draws = 100_000;
        for _ in 0..draws {
            counts[sampler.draw(&mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip(&probs) {
            worst = worst.max((*c as f64 / draws as f64 - p).abs());
        }
    }
    let probs = temperature_probabilities(&sizes_f, 5.0)?;
    let report = rates_from_probabilities(&sizes_f, &probs)?;
    let freq_ok = worst <= 0.02 && closed_form < 1e-12;
    let rate_ok = report.rates[0] == 15;
    Ok((
        freq_ok && rate_ok,
        format!(
            "max |empirical - p| {worst:.4} (<= 0.02); triplet rate at T=5 is {} (exact {:.3}, stated 15), rates {:?}, \
             effective temperature {:.3}",
            report.rates[0],
            report.exact[0],
            report.rates,
            report.effective_temperature.unwrap_or(f64::NAN)
        ),
    ))
}

// 6. Metric oracles.
fn metrics() -> Checked {
    let cases: Vec<Value> = serde_json::from_str(&fixture("bleu_reference.json")).expect("fixture parses");
    let strings = |v: &Value| -> Vec<String> {
        v.as_array().expect("array").iter().map(|s| s.as_str().expect("string").to_string()).collect()
    };
    let mut bleu_dev: f64 = 0.0;
    for c in &cases {
        let (h, r) = (strings(&c["hyps"]), strings(&c["refs"]));
        bleu_dev = bleu_dev.max((bleu(&h, &r, false)? - c["bleu"].as_f64().expect("number")).abs());
        bleu_dev = bleu_dev.max((bleu(&h, &r, true)? - c["bleu_add_one"].as_f64().expect("number")).abs());
    }
    let bleu_ok = cases.len() == 50 && bleu_dev <= 0.01;

    let glossary = Glossary::parse("mask\t面膜,口罩,面罩,面具\n", "appendix")?;
    let mut labelled = 0;
    let mut agree = 0;
    let (mut src, mut hyp, mut refs) = (Vec::new(), Vec::new(), Vec::new());
    for line in fixture("word_accuracy_cases.jsonl").lines().filter(|l| !l.trim().is_empty()) {
        let c: Value = serde_json::from_str(line).expect("case parses");
        let (s, h, r) = (c["src"].as_str().unwrap(), c["hyp"].as_str().unwrap(), c["ref"].as_str().unwrap());
        let one = word_accuracy(&[s], &[h], &[r], &glossary)?;
        let got = match (one.applicable, one.hits) {
            (0, _) => "skip",
            (_, 0) => "miss",
            _ => "hit",
        };
        let flagged = c["flagged"].as_bool().unwrap_or(false);
        labelled += 1;
        agree += usize::from(got == c["expected"].as_str().unwrap() && (one.flagged == 1) == flagged);
        src.push(s.to_string());
        hyp.push(h.to_string());
        refs.push(r.to_string());
    }
    let all = word_accuracy(&src, &hyp, &refs, &glossary)?;
    let wa_ok = labelled == 20 && agree == 20 && all.hits == 10 && all.applicable == 16;

    let (refs, better, worse) = bootstrap_fixture();
    let p_same = bootstrap_significance(&better, &better, &refs, 1000, 11)?;
    let p_dominated = bootstrap_significance(&better, &worse, &refs, 1000, 11)?;
    let boot_ok = p_same >= 0.99 && p_dominated < 0.05;
    Ok((
        bleu_ok && wa_ok && boot_ok,
        format!(
            "BLEU max deviation {bleu_dev:.2e} on {} corpora (<= 0.01); word accuracy {agree}/{labelled} cases agree, \
             {}/{} overall; bootstrap p identical {p_same:.3}, dominated {p_dominated:.3}",
            cases.len(),
            all.hits,
            all.applicable
        ),
    ))
}

/// 200 references; the better system corrupts one token per sentence, the
/// worse one corrupts the same token plus two more.
fn bootstrap_fixture() -> (Vec<String>, Vec<String>, Vec<String>) {
    let mut rng = Rng::new(200);
    let (mut refs, mut better, mut worse) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..200 {
        let len = rng.range_inclusive(8, 12);
        let words: Vec<String> = (0..len).map(|_| format!("w{}", rng.below(30))).collect();
        let picks = rng.choose_indices(len, 3);
        let mut b = words.clone();
        b[picks[0]] = "oov".into();
        let mut w = b.clone();
        w[picks[1]] = "oov".into();
        w[picks[2]] = "oov".into();
        refs.push(words.join(" "));
        better.push(b.join(" "));
        worse.push(w.join(" "));
    }
    (refs, better, worse)
}

// 7. Determinism of the synthetic fusion run.
fn determinism(s: &Synthetic, first_dir: &Path, first: &TrainOutcome, second_dir: &Path) -> Checked {
    let (second, _) = train_timed(&synthetic_config(Mode::Fusion), &s.inputs, Some(second_dir))?;
    let mut files = vec!["final.ckpt".to_string(), "best.ckpt".into(), "train_log.jsonl".into()];
    for step in (1000..=SYNTHETIC_STEPS).step_by(1000) {
        files.push(format!("checkpoints/step_{step}.ckpt"));
    }
    let mut same = 0;
    for f in &files {
        let a = std::fs::read(first_dir.join(f)).map_err(|e| tritri::Error::io(first_dir.join(f), e))?;
        let b = std::fs::read(second_dir.join(f)).map_err(|e| tritri::Error::io(second_dir.join(f), e))?;
        same += usize::from(a == b);
    }
    let logs_equal = first.log == second.log;
    Ok((
        same == files.len() && logs_equal,
        format!("{same}/{} artifacts byte-identical, train logs identical: {logs_equal}", files.len()),
    ))
}

// 8. Triplet images discarded, caption denoising and parallel text kept.
fn triplets_without_images(s: &Synthetic) -> Checked {
    let mut with_images = synthetic_config(Mode::FusionPrompt);
    with_images.data.discard_triplet_images = true;
    with_images.train.checkpoint_every = 0;
    let mut text = synthetic_config(Mode::TextOnly);
    text.data.discard_triplet_images = true;
    text.train.checkpoint_every = 0;
    let mut text_inputs = s.inputs.clone();
    text_inputs.corpora.captions.clear();

    let dev_loss = |o: &TrainOutcome| o.log.evaluations().last().and_then(|e| e.dev_loss).unwrap_or(f64::INFINITY);
    let (a, _) = train_timed(&with_images, &s.inputs, None)?;
    let (b, _) = train_timed(&text, &text_inputs, None)?;
    let (la, lb) = (dev_loss(&a), dev_loss(&b));
    Ok((
        la < lb,
        format!("dev loss fusion+prompt with captions {la:.4} < text-only on parallel text {lb:.4}"),
    ))
}

fn main() {
    let mut report = Report { failed: Vec::new() };
    let minute = Duration::from_secs(60);
    report.record("1 gate identities", minute, gate_identities);
    report.record("2 gradient check", 5 * minute, gradient_check);

    let task = synthetic::generate(&SyntheticConfig::default(), SYNTHETIC_SEED).expect("synthetic task");
    let inputs = task.train_inputs().expect("synthetic inputs");
    let s = Synthetic { task, inputs };
    let dirs = tempfile::tempdir().expect("temp dir");
    let (first_dir, second_dir) = (dirs.path().join("fusion-a"), dirs.path().join("fusion-b"));
    let mut fusion = None;
    report.record("3 synthetic disambiguation", 90 * minute, || {
        disambiguation(&s, &first_dir, &mut fusion)
    });
    match &fusion {
        Some(f) => {
            report.record("4 modality ratio liveness", minute, || modality_liveness(&s, f));
            report.record("7 end-to-end determinism", 30 * minute, || {
                determinism(&s, &first_dir, f, &second_dir)
            });
        }
        None => {
            report.record("4 modality ratio liveness", minute, || Ok((false, "no fusion model".into())));
            report.record("7 end-to-end determinism", minute, || Ok((false, "no fusion model".into())));
        }
    }
    report.record("5 temperature sampler", minute, sampler);
    report.record("6 metric oracles", 5 * minute, metrics);
    report.record("8 triplet-unavailable regime", 30 * minute, || triplets_without_images(&s));

    if report.failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed {}", report.failed.join(", "));
        std::process::exit(1);
    }
}
