//! Joint BPE vocabulary: training, encoding, decoding and the text format.
//!
//! cargo run --release --example bpe -- [num_merges]

use tritri::tokenizer::Vocab;

fn main() -> tritri::Result<()> {
    let merges: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let corpus = [
        "a man wears a mask at the party",
        "一个 男人 在 派对 上 戴 着 面具",
        "the nurse puts on a surgical mask",
        "护士 戴上 外科 口罩",
        "she applies a face mask before sleep",
        "她 睡前 敷 面膜",
    ];
    let vocab = Vocab::train(corpus.iter().copied(), merges)?;
    println!("{} merges learned, {} tokens", vocab.merges().len(), vocab.len());
    for sentence in ["a nurse wears a mask", "护士 戴 着 口罩"] {
        let ids = vocab.encode(sentence);
        let pieces: Vec<String> = ids.iter().map(|&t| vocab.label(t)).collect();
        println!("{sentence:?} -> {pieces:?}");
        println!("  decoded {:?}", vocab.decode(&ids)?);
    }
    let back = Vocab::from_text(&vocab.to_text())?;
    println!("text format roundtrip equal: {}", back == vocab);
    Ok(())
}
