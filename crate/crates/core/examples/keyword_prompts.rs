//! Image keyword prompts: extract keywords from captions, index them by image
//! feature and retrieve keywords for an unseen image.
//!
//! cargo run --release --example keyword_prompts

use tritri::data::Stopwords;
use tritri::prompter::{KeywordExtractor, KeywordIndex};

fn main() -> tritri::Result<()> {
    let captions = [
        (vec![1.0, 0.0, 0.1], "a nurse wears a surgical mask"),
        (vec![0.0, 1.0, 0.1], "a dancer wears a carnival mask at the party"),
        (vec![0.1, 0.1, 1.0], "a woman relaxes with a face mask"),
    ];
    let extractor = KeywordExtractor::new(captions.iter().map(|(_, t)| *t), Stopwords::default());
    let index = KeywordIndex::build(captions.iter().map(|(v, t)| (v.as_slice(), *t)), &extractor, 2)?;
    for e in index.entries() {
        println!("{:?} -> {:?}", e.vector, e.keywords);
    }
    let query = [0.9, 0.2, 0.0];
    println!("query {query:?} -> {:?}", index.predict_keywords(&query, 2)?);
    Ok(())
}
