//! Corpus BLEU, ambiguous-word accuracy and paired bootstrap significance.
//!
//! cargo run --release --example metrics

use tritri::eval::{bleu, bootstrap_significance, word_accuracy, Glossary};

fn main() -> tritri::Result<()> {
    let refs = [
        "一个 护士 戴 着 外科 口罩",
        "一个 舞者 在 派对 上 戴 着 面具",
        "一个 女人 敷 着 面膜 休息",
        "一个 男人 在 街上 走",
    ];
    let sources = [
        "a nurse wears a surgical mask",
        "a dancer wears a mask at the party",
        "a woman relaxes with a face mask",
        "a man walks on the street",
    ];
    let good = [
        "一个 护士 戴 着 外科 口罩",
        "一个 舞者 在 派对 上 戴 着 面具",
        "一个 女人 敷 着 面膜",
        "一个 男人 在 街上 走",
    ];
    let weak = [
        "一个 护士 戴 着 面具",
        "一个 舞者 戴 着 口罩",
        "一个 女人 戴 着 口罩 休息",
        "一个 男人 走",
    ];
    let glossary = Glossary::parse("mask\t口罩,面具,面膜\n", "inline")?;
    for (name, hyps) in [("good", &good), ("weak", &weak)] {
        let wa = word_accuracy(&sources, hyps, &refs, &glossary)?;
        println!(
            "{name}: BLEU {:.2} (add-one {:.2}), word accuracy {}/{} = {:.3}",
            bleu(hyps, &refs, false)?,
            bleu(hyps, &refs, true)?,
            wa.hits,
            wa.applicable,
            wa.accuracy
        );
    }
    let p = bootstrap_significance(&good, &weak, &refs, 1000, 1)?;
    println!("fraction of resamples where weak >= good: {p:.3}");
    Ok(())
}
