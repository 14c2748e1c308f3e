use super::*;
use crate::model::{Mode, ModelConfig};
use crate::numerics::Tensor;

fn model(mode: Mode, vocab: &Vocab) -> Model {
    let mut cfg = ModelConfig::tiny(mode, vocab.len());
    cfg.feature_dim = 2;
    Model::new(cfg).unwrap()
}

fn fixture() -> (Vocab, FeatureStore, Vec<Sample>) {
    let samples = vec![
        Sample::triplet("a mask", "一个 口罩", "i0"),
        Sample::triplet("a mask", "一个 面具", "i1"),
        Sample::triplet("the bow", "那 琴弓", "i2"),
    ];
    let vocab = Vocab::train(samples.iter().flat_map(|s| [s.source.as_deref().unwrap(), &s.target]), 5).unwrap();
    let feats = FeatureStore::from_features(
        2,
        vec![
            crate::data::ImageFeature { id: "i0".into(), vector: vec![1.0, 0.0] },
            crate::data::ImageFeature { id: "i1".into(), vector: vec![0.0, 1.0] },
            crate::data::ImageFeature { id: "i2".into(), vector: vec![1.0, 1.0] },
        ],
    )
    .unwrap();
    (vocab, feats, samples)
}

#[test]
fn zero_gate_and_absent_images_give_zero_ratio() {
    let (vocab, feats, _) = fixture();
    let mut m = model(Mode::Fusion, &vocab);
    let toks = vocab.encode("a mask");
    let img = feats.get("i0").unwrap();
    let live = modality_ratio(&m, [(toks.as_slice(), Some(img))]).unwrap();
    assert!(live.ratio > 0.0);
    let absent = modality_ratio(&m, [(toks.as_slice(), None)]).unwrap();
    assert_eq!(absent.ratio, 0.0);
    let (r, c) = m.params().get("fusion.gate.w").unwrap().dims2();
    m.params_mut().set("fusion.gate.w", Tensor::zeros(&[r, c])).unwrap();
    assert_eq!(modality_ratio(&m, [(toks.as_slice(), Some(img))]).unwrap().ratio, 0.0);
}

#[test]
fn absent_ablation_matches_text_only_decoding() {
    let (vocab, feats, test) = fixture();
    let m = model(Mode::Fusion, &vocab);
    let t = Translator { model: &m, vocab: &vocab, index: None, prompt_k: 1, beam: 2 };
    let absent = run_ablation(&t, &test, &feats, AblationMode::Absent, AblationTarget::All, None, 1).unwrap();
    let plain = t.translate_samples(&test, Some(&feats), InputUse::none()).unwrap();
    let plain: Vec<String> = plain.into_iter().map(|o| o.hyp).collect();
    assert_eq!(absent.hyps, plain);
}

#[test]
fn ablation_mode_mismatch_is_a_config_error() {
    let (vocab, feats, test) = fixture();
    let m = model(Mode::Fusion, &vocab);
    let t = Translator { model: &m, vocab: &vocab, index: None, prompt_k: 1, beam: 1 };
    let r = run_ablation(&t, &test, &feats, AblationMode::Absent, AblationTarget::Prompt, None, 1);
    assert!(matches!(r, Err(Error::Config(_))));
    let text = model(Mode::TextOnly, &vocab);
    let t = Translator { model: &text, ..t };
    let r = run_ablation(&t, &test, &feats, AblationMode::Adversarial, AblationTarget::All, None, 1);
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn ablation_is_deterministic() {
    let (vocab, feats, test) = fixture();
    let m = model(Mode::Fusion, &vocab);
    let t = Translator { model: &m, vocab: &vocab, index: None, prompt_k: 1, beam: 1 };
    let g = Glossary::parse("mask\t口罩,面具\n", "g").unwrap();
    let a = run_ablation(&t, &test, &feats, AblationMode::Adversarial, AblationTarget::All, Some(&g), 3).unwrap();
    let b = run_ablation(&t, &test, &feats, AblationMode::Adversarial, AblationTarget::All, Some(&g), 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.word_accuracy.unwrap().applicable, 2);
}

#[test]
fn bootstrap_identical_and_dominated_systems() {
    let refs: Vec<String> = (0..60).map(|i| format!("w{} x{} y{} z{} q", i % 7, i % 5, i % 3, i % 11)).collect();
    let p = bootstrap_significance(&refs, &refs, &refs, 1000, 4).unwrap();
    assert_eq!(p, 1.0);
    let worse: Vec<String> = refs.iter().map(|r| r.split(' ').take(3).collect::<Vec<_>>().join(" ") + " junk").collect();
    let p = bootstrap_significance(&refs, &worse, &refs, 1000, 4).unwrap();
    assert_eq!(p, 0.0);
    assert!(bootstrap_significance(&refs, &worse[..3], &refs, 1000, 4).is_err());
    assert!(bootstrap_significance(&refs, &worse, &refs, 10, 4).is_err());
}

#[test]
fn bootstrap_is_seed_reproducible() {
    let refs: Vec<String> = (0..40).map(|i| format!("a{} b{} c d e", i % 4, i % 6)).collect();
    let noisy: Vec<String> = refs
        .iter()
        .enumerate()
        .map(|(i, r)| if i % 3 == 0 { "c d e".to_string() } else { r.clone() })
        .collect();
    let other: Vec<String> = refs
        .iter()
        .enumerate()
        .map(|(i, r)| if i % 4 == 0 { "a0 c".to_string() } else { r.clone() })
        .collect();
    let p1 = bootstrap_significance(&noisy, &other, &refs, 2000, 99).unwrap();
    let p2 = bootstrap_significance(&noisy, &other, &refs, 2000, 99).unwrap();
    assert_eq!(p1.to_bits(), p2.to_bits());
    assert!(p1 > 0.0 && p1 < 1.0);
}

#[test]
fn attention_export_writes_stochastic_labelled_csvs() {
    let (vocab, feats, _) = fixture();
    let m = model(Mode::FusionPrompt, &vocab);
    let dir = tempfile::tempdir().unwrap();
    let src = Model::prompted(&vocab.encode("a mask"), Some(&vocab.encode("口罩")));
    let tgt = vocab.encode("一个 口罩");
    let files = export_attention(&m, &vocab, &src, &tgt, feats.get("i0"), dir.path()).unwrap();
    assert_eq!(files.len(), 3 * 2);
    for f in &files {
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(f).unwrap();
        let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
        let header: Vec<&str> = rows[0].iter().skip(1).collect();
        let ids: Vec<u32> = header.iter().map(|l| vocab.id(l).unwrap()).collect();
        let name = f.file_name().unwrap().to_str().unwrap();
        if name.starts_with("dec_self") {
            assert_eq!(ids, Model::shift_target(&tgt).0);
        } else {
            assert_eq!(ids, src);
        }
        for row in &rows[1..] {
            let sum: f64 = row.iter().skip(1).map(|v| v.parse::<f64>().unwrap()).sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn report_serializes_deltas() {
    let mk = |mode, bleu| AblationResult { mode, bleu, word_accuracy: None, hyps: vec![] };
    let r = EvalReport::from_ablations(&[mk(AblationMode::Normal, 30.0), mk(AblationMode::Absent, 20.0)]);
    assert_eq!(r.bleu, 30.0);
    assert_eq!(r.ablation["absent"].bleu_delta, -10.0);
    let json = serde_json::to_string(&r).unwrap();
    assert!(json.contains("\"absent\""));
}
