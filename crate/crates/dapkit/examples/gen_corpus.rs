//! Generate a synthetic parallel corpus and inspect a few pairs.

use dapkit::corpus::{generate_corpus, LanguageSpec};

fn main() -> dapkit::error::Result<()> {
    let spec = LanguageSpec {
        n_langs: 3,
        n_concepts: 50,
        reorder_period: 2,
        len_min: 4,
        len_max: 9,
        zipf_exponent: 1.1,
        seed: 0,
    };
    let pairs = generate_corpus(&spec, 8, 42)?;
    for (i, p) in pairs.iter().enumerate() {
        println!("pair {i} (lang {}):", p.lang_id);
        println!("  src    {:?}", p.src);
        println!("  pivot  {:?}", p.pivot);
        println!("  align  {:?}", p.alignment);
        // tokens decode to the same concept across aligned positions
        let concepts: Vec<usize> = p
            .src
            .iter()
            .map(|&t| spec.decode_concept(p.lang_id, t).unwrap())
            .collect();
        println!("  concepts {concepts:?}");
    }
    println!("\nvocab size: {}", spec.vocab_size());
    Ok(())
}
