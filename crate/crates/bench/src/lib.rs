//! Fixtures shared by the benchmarks.

use std::collections::{BTreeSet, HashMap};

use extractbench::corpus::{generate_corpus, Corpus};
use extractbench::features::{TokenSequence, TrigramSet, trigram_set};
use extractbench::rng::SplitMix64;

/// A speaker-major synthetic corpus of `n` clips between 2 and 6 seconds.
pub fn corpus(n: u32, seed: u64) -> Corpus {
    generate_corpus(4, n.div_ceil(4), (2.0, 6.0), seed).expect("valid corpus parameters")
}

/// Random token sequences over a `vocab`-symbol alphabet, keyed by clip id.
pub fn trigram_sets(corpus: &Corpus, len: usize, vocab: u32, seed: u64) -> HashMap<String, TrigramSet> {
    let mut rng = SplitMix64::new(seed);
    corpus
        .clips()
        .iter()
        .map(|c| {
            let raw: Vec<u32> = (0..len).map(|_| rng.below(vocab as usize) as u32).collect();
            (c.id.clone(), trigram_set(&TokenSequence::from_raw(&raw)))
        })
        .collect()
}

pub fn layers() -> BTreeSet<usize> {
    [4, 8, 12].into_iter().collect()
}
