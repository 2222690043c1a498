//! Generates the synthetic graded benchmark under `tests/fixtures/synth50`.
//!
//! Each query owns a private vocabulary. Relevant passages talk about the query's topic but
//! only partly reuse the query words; the grade-0 distractors drop some query words into
//! off-topic text, so lexical matching ranks many of them too high.
//!
//! ```text
//! cargo run -p listrank --example gen_synth -- crates/core/tests/fixtures/synth50
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20230505;
const QUERIES: usize = 50;
const QUERY_TERMS: usize = 3;
// (grade, count) per query
const LAYOUT: [(u32, usize); 4] = [(3, 2), (2, 3), (1, 4), (0, 21)];

const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const CODAS: [&str; 6] = ["", "n", "r", "l", "s", "k"];
const FILLER: [&str; 24] = [
    "the", "a", "of", "and", "in", "to", "is", "for", "with", "on", "that", "by", "this", "from", "as", "are", "it",
    "was", "at", "be", "or", "which", "an", "also",
];

fn word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(2..=3);
    (0..syllables)
        .map(|_| {
            format!(
                "{}{}{}",
                ONSETS.choose(rng).unwrap(),
                VOWELS.choose(rng).unwrap(),
                CODAS.choose(rng).unwrap()
            )
        })
        .collect()
}

fn sentence(rng: &mut ChaCha8Rng, content: &[&str], len: usize) -> String {
    let mut words: Vec<&str> = Vec::with_capacity(len);
    for i in 0..len {
        if i % 2 == 0 || content.is_empty() {
            words.push(FILLER.choose(rng).unwrap());
        } else {
            words.push(content.choose(rng).unwrap());
        }
    }
    words.join(" ")
}

fn main() -> std::io::Result<()> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "synth50".into()).into();
    std::fs::create_dir_all(&out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);

    let mut corpus = BufWriter::new(File::create(out.join("corpus.jsonl"))?);
    let mut queries = BufWriter::new(File::create(out.join("queries.tsv"))?);
    let mut qrels = BufWriter::new(File::create(out.join("qrels.txt"))?);

    let mut used = std::collections::HashSet::new();
    let mut fresh = |rng: &mut ChaCha8Rng| loop {
        let w = word(rng);
        if used.insert(w.clone()) {
            return w;
        }
    };

    let mut doc = 0usize;
    for q in 0..QUERIES {
        let qid = format!("s{:02}", q + 1);
        let terms: Vec<String> = (0..QUERY_TERMS).map(|_| fresh(&mut rng)).collect();
        let topic: Vec<String> = (0..12).map(|_| fresh(&mut rng)).collect();
        let offtopic: Vec<String> = (0..12).map(|_| fresh(&mut rng)).collect();
        writeln!(queries, "{qid}\t{}", terms.join(" "))?;

        let mut docs = Vec::new();
        for (grade, count) in LAYOUT {
            for _ in 0..count {
                let mut content: Vec<&str> = Vec::new();
                let len = if grade > 0 {
                    content.extend(topic.iter().map(String::as_str));
                    // higher grades mention more of the query, but never all of it
                    let mentions = (grade as usize).min(QUERY_TERMS - 1);
                    let mut picked: Vec<&str> = terms.iter().map(String::as_str).collect();
                    picked.shuffle(&mut rng);
                    content.extend(picked.into_iter().take(rng.random_range(1..=mentions)));
                    rng.random_range(30..60)
                } else {
                    content.extend(offtopic.iter().map(String::as_str));
                    for t in &terms {
                        if rng.random_bool(0.4) {
                            content.push(t);
                        }
                    }
                    rng.random_range(20..50)
                };
                docs.push((grade, sentence(&mut rng, &content, len)));
            }
        }
        docs.shuffle(&mut rng);
        for (grade, text) in docs {
            doc += 1;
            let pid = format!("p{doc:05}");
            let row = serde_json::json!({ "id": pid, "contents": text });
            writeln!(corpus, "{row}")?;
            writeln!(qrels, "{qid} 0 {pid} {grade}")?;
        }
    }
    corpus.flush()?;
    queries.flush()?;
    qrels.flush()
}
