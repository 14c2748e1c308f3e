use super::*;
use crate::tokenizer::MASK;

fn fixture() -> (Corpora, Vocab, FeatureStore) {
    let corpora = Corpora {
        triplets: vec![
            Sample::triplet("a red cat", "一只 红色 猫", "i0"),
            Sample::triplet("a blue dog", "一只 蓝色 狗", "i1"),
        ],
        parallel: vec![Sample::parallel("the cat", "猫"), Sample::parallel("a dog runs", "狗 跑")],
        captions: vec![Sample::caption("红色 的 猫 在 跑", "i2")],
    };
    let vocab = Vocab::train(corpora.texts(), 10).unwrap();
    let feats = FeatureStore::from_features(
        2,
        (0..3).map(|i| ImageFeature { id: format!("i{i}"), vector: vec![i as f64, 1.0] }).collect(),
    )
    .unwrap();
    (corpora, vocab, feats)
}

#[test]
fn missing_image_ids_are_listed() {
    let (mut c, v, f) = fixture();
    c.triplets.push(Sample::triplet("x", "y", "nope"));
    c.captions.push(Sample::caption("y", "gone"));
    match Dataset::prepare(&c, &v, &f, &Stopwords::default()) {
        Err(Error::Resolution(ids)) => assert_eq!(ids, vec!["gone", "nope"]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn epoch_examples_respect_task_contracts() {
    let (c, v, f) = fixture();
    let ds = Dataset::prepare(&c, &v, &f, &Stopwords::default()).unwrap();
    let plan = MixPlan::with_rates(&ds.sizes(), &[3, 1, 2], 0.3).unwrap();
    let opts = StreamOptions::default();
    let epoch = build_mixed_stream(&ds, &plan, &opts, &mut Rng::new(2)).unwrap();
    assert_eq!(epoch.len(), 10);
    for (slot, ex) in epoch.slots().iter().zip(epoch.iter()) {
        let ex = ex.unwrap();
        match ex.task_tag {
            TaskTag::Denoise => {
                assert_eq!(ex.kind, SampleKind::Caption);
                assert_eq!(ex.encoder_tokens.len(), ex.decoder_target.len());
                assert!(ex.prompt.is_empty());
            }
            TaskTag::Translate => {
                assert!(!ex.encoder_tokens.contains(&MASK));
                let src = c.stream(ex.kind)[slot.index as usize].source.as_deref().unwrap();
                assert_eq!(strip_prompt(&ex.encoder_tokens), v.encode(src).as_slice());
                assert_ne!(ex.encoder_tokens.last(), Some(&SEP));
            }
        }
        if slot.drop_image {
            assert!(ex.image.is_none() && ex.prompt.is_empty());
        }
        if ex.kind == SampleKind::Parallel {
            assert!(ex.image.is_none());
        }
    }
    let again = build_mixed_stream(&ds, &plan, &opts, &mut Rng::new(2)).unwrap();
    for i in 0..epoch.len() {
        assert_eq!(epoch.get(i).unwrap(), again.get(i).unwrap());
    }
}

#[test]
fn full_dropout_leaves_no_images_or_prompts_on_image_samples() {
    let (c, v, f) = fixture();
    let ds = Dataset::prepare(&c, &v, &f, &Stopwords::default()).unwrap();
    let plan = MixPlan::with_rates(&ds.sizes(), &[2, 1, 2], 1.0).unwrap();
    let epoch = build_mixed_stream(&ds, &plan, &StreamOptions::default(), &mut Rng::new(0)).unwrap();
    for ex in epoch.iter() {
        let ex = ex.unwrap();
        assert!(ex.image.is_none());
        if ex.kind != SampleKind::Parallel {
            assert!(ex.prompt.is_empty());
        }
    }
}

#[test]
fn echo_mode_appends_prompt_to_target() {
    let (c, v, f) = fixture();
    let ds = Dataset::prepare(&c, &v, &f, &Stopwords::default()).unwrap();
    let opts = StreamOptions { echo_prompt: true, ..StreamOptions::default() };
    let ex = ds.example(SampleKind::Parallel, 1, false, &opts, &mut Rng::new(1)).unwrap();
    assert!(!ex.prompt.is_empty());
    assert_eq!(strip_prompt(&ex.decoder_target), v.encode("狗 跑").as_slice());
}

#[test]
fn plan_size_mismatch_rejected() {
    let (c, v, f) = fixture();
    let ds = Dataset::prepare(&c, &v, &f, &Stopwords::default()).unwrap();
    let plan = MixPlan::with_rates(&[1, 1, 1], &[1, 1, 1], 0.0).unwrap();
    assert!(build_mixed_stream(&ds, &plan, &StreamOptions::default(), &mut Rng::new(0)).is_err());
}

#[test]
fn shuffled_images_never_stay_put() {
    let samples: Vec<Sample> = (0..10).map(|i| Sample::triplet("s", "t", format!("img{i}"))).collect();
    let out = shuffle_images(&samples, &mut Rng::new(5)).unwrap();
    for (a, b) in samples.iter().zip(&out) {
        assert_ne!(a.image_id, b.image_id);
        assert_eq!(a.source, b.source);
    }
    assert_eq!(out, shuffle_images(&samples, &mut Rng::new(5)).unwrap());
    let two = &samples[..2];
    let swapped = shuffle_images(two, &mut Rng::new(1)).unwrap();
    assert_eq!(swapped[0].image_id, two[1].image_id);
    assert_eq!(swapped[1].image_id, two[0].image_id);
    assert!(shuffle_images(&samples[..1], &mut Rng::new(1)).is_err());
}
