//! Synthetic corpora with known structure, used by tests and for quick
//! smoke runs when no real dataset is at hand.

use std::fs;
use std::path::Path;

use rand::Rng as _;

use crate::matrix::{seeded_rng, sub_seed};
use crate::training::Example;
use crate::Result;

/// Two-class corpus separable by the presence of a single marker token.
/// Returns already-encoded (train, test, vocab_size); sequences have
/// length 20 (ids: 0 pad, 1 unk, 2 marker, 3..13 fillers).
pub fn marker_corpus(
    train_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> (Vec<Example>, Vec<Example>, usize) {
    const SL: usize = 20;
    const MARKER: usize = 2;
    const FILLERS: std::ops::Range<usize> = 3..13;
    let mut rng = seeded_rng(sub_seed(seed, "marker-corpus"));
    let mut gen = |label: usize| {
        let len = rng.gen_range(8..SL);
        let mut ids: Vec<usize> = (0..len).map(|_| rng.gen_range(FILLERS)).collect();
        if label == 1 {
            let pos = rng.gen_range(0..len);
            ids[pos] = MARKER;
        }
        ids.resize(SL, 0);
        Example { ids, label }
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    for label in 0..2 {
        for _ in 0..train_per_class {
            train.push(gen(label));
        }
        for _ in 0..test_per_class {
            test.push(gen(label));
        }
    }
    (train, test, 13)
}

const ORDER_CLASSES: [(&str, &str, &str); 4] = [
    ("first_alpha", "alpha", "beta"),
    ("first_beta", "beta", "alpha"),
    ("first_gamma", "gamma", "delta"),
    ("first_delta", "delta", "gamma"),
];

const FILLER_WORDS: [&str; 40] = [
    "the", "of", "and", "to", "in", "that", "was", "for", "with", "his", "is", "on", "as",
    "had", "you", "not", "be", "her", "this", "but", "at", "from", "they", "she", "which",
    "all", "will", "are", "one", "when", "about", "time", "people", "like", "make", "into",
    "year", "some", "could", "them",
];

/// Write a four-category dataset directory whose classes differ only in
/// word order: each class pairs two marker words and is defined by
/// which comes first. Unigram content is identical within a pair, so
/// order-insensitive models cannot separate them.
pub fn write_order_dataset(root: &Path, docs_per_class: usize, seed: u64) -> Result<()> {
    let mut rng = seeded_rng(sub_seed(seed, "order-corpus"));
    for (name, first, second) in ORDER_CLASSES {
        let dir = root.join(name);
        fs::create_dir_all(&dir)?;
        for i in 0..docs_per_class {
            let len = rng.gen_range(30..100);
            let mut words: Vec<&str> = (0..len)
                .map(|_| FILLER_WORDS[rng.gen_range(0..FILLER_WORDS.len())])
                .collect();
            // three occurrences of each marker at distinct positions,
            // class order preserved
            let mut positions = rand::seq::index::sample(&mut rng, len, 6).into_vec();
            positions.sort_unstable();
            for (k, &pos) in positions.iter().enumerate() {
                words[pos] = if k < 3 { first } else { second };
            }
            fs::write(dir.join(format!("doc{i:04}.txt")), words.join(" "))?;
        }
    }
    Ok(())
}

/// Write the marker corpus as a two-category dataset directory, for
/// exercising the end-to-end command-line pipeline.
pub fn write_marker_dataset(root: &Path, docs_per_class: usize, seed: u64) -> Result<()> {
    let mut rng = seeded_rng(sub_seed(seed, "marker-dataset"));
    for (label, name) in ["plain", "marked"].iter().enumerate() {
        let dir = root.join(name);
        fs::create_dir_all(&dir)?;
        for i in 0..docs_per_class {
            let len = rng.gen_range(8..20);
            let mut words: Vec<&str> = (0..len)
                .map(|_| FILLER_WORDS[rng.gen_range(0..10)])
                .collect();
            if label == 1 {
                let pos = rng.gen_range(0..len);
                words[pos] = "zebra";
            }
            fs::write(dir.join(format!("doc{i:04}.txt")), words.join(" "))?;
        }
    }
    Ok(())
}
