//! Deterministic toy corpus where every entity owns a disjoint vocabulary.
//!
//! Entity `e` is named `entity{e:02}` and owns the words `ent{e}word0` to
//! `ent{e}word{words_per_entity - 1}`. Each of its documents draws tokens
//! uniformly from those words only, so a model that learns anything should
//! rank `e` first for a query made of its words.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToySpec {
    pub entities: usize,
    pub words_per_entity: usize,
    pub docs_per_entity: usize,
    pub doc_length: usize,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            entities: 20,
            words_per_entity: 10,
            docs_per_entity: 50,
            doc_length: 12,
            seed: 2016,
        }
    }
}

/// The three input files of a toy experiment, as text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToyCorpus {
    /// `doc_id<TAB>text` lines.
    pub corpus: String,
    /// `doc_id<TAB>entity_name` lines.
    pub associations: String,
    /// One query per entity listing all of its words: `q{e:02}<TAB>words`.
    pub queries: String,
}

pub fn entity_name(e: usize) -> String {
    format!("entity{e:02}")
}

pub fn entity_word(e: usize, w: usize) -> String {
    format!("ent{e}word{w}")
}

pub fn generate(spec: &ToySpec) -> ToyCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut corpus = String::new();
    let mut associations = String::new();
    let mut queries = String::new();
    for e in 0..spec.entities {
        for d in 0..spec.docs_per_entity {
            let doc_id = format!("doc{e:02}_{d:03}");
            let words: Vec<String> = (0..spec.doc_length)
                .map(|_| entity_word(e, rng.random_range(0..spec.words_per_entity)))
                .collect();
            writeln!(corpus, "{doc_id}\t{}", words.join(" ")).unwrap();
            writeln!(associations, "{doc_id}\t{}", entity_name(e)).unwrap();
        }
        let words: Vec<String> = (0..spec.words_per_entity).map(|w| entity_word(e, w)).collect();
        writeln!(queries, "q{e:02}\t{}", words.join(" ")).unwrap();
    }
    ToyCorpus {
        corpus,
        associations,
        queries,
    }
}
