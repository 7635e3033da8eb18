use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};

use super::dataset::EntityDescription;
use super::rdf::Term;

/// Trims and collapses internal whitespace runs to single spaces.
pub fn normalize_literal(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// The word a predicate or object contributes to the word vocabulary.
///
/// IRIs map to their local name (after the last `#`, else after the last
/// `/`); literals map to their normalized lexical form. Never empty: falls
/// back to the full IRI, or to `""` for a blank literal.
pub fn extract_word(term: &Term) -> String {
    match term {
        Term::Iri { value } => {
            let local = match value.rfind('#') {
                Some(i) => &value[i + 1..],
                None => value.rfind('/').map_or(value.as_str(), |i| &value[i + 1..]),
            };
            if local.is_empty() {
                value.clone()
            } else {
                local.to_string()
            }
        }
        Term::Literal { value, .. } => {
            let norm = normalize_literal(value);
            if norm.is_empty() {
                "\"\"".to_string()
            } else {
                norm
            }
        }
    }
}

/// Word, entity and relation id maps over a corpus.
///
/// Ids are dense from 0 in sorted order. Words reserve one extra OOV id equal
/// to the number of known words; entities and relations have no OOV row and
/// unknown lookups yield `None`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    entities: Vec<String>,
    relations: Vec<String>,
    word_ids: BTreeMap<String, usize>,
    entity_ids: BTreeMap<String, usize>,
    relation_ids: BTreeMap<String, usize>,
}

pub const OOV_TOKEN: &str = "<oov>";

fn index(items: &[String]) -> BTreeMap<String, usize> {
    items.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect()
}

impl Vocabulary {
    pub fn from_parts(words: BTreeSet<String>, entities: BTreeSet<String>, relations: BTreeSet<String>) -> Self {
        let words: Vec<String> = words.into_iter().collect();
        let entities: Vec<String> = entities.into_iter().collect();
        let relations: Vec<String> = relations.into_iter().collect();
        Self {
            word_ids: index(&words),
            entity_ids: index(&entities),
            relation_ids: index(&relations),
            words,
            entities,
            relations,
        }
    }

    pub fn oov_id(&self) -> usize {
        self.words.len()
    }

    /// Rows needed for a word table, OOV included.
    pub fn word_table_rows(&self) -> usize {
        self.words.len() + 1
    }

    pub fn word_id(&self, word: &str) -> usize {
        self.word_ids.get(word).copied().unwrap_or(self.oov_id())
    }

    pub fn known_word(&self, word: &str) -> bool {
        self.word_ids.contains_key(word)
    }

    pub fn word(&self, id: usize) -> &str {
        self.words.get(id).map_or(OOV_TOKEN, String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn entity_id(&self, iri: &str) -> Option<usize> {
        self.entity_ids.get(iri).copied()
    }

    pub fn relation_id(&self, iri: &str) -> Option<usize> {
        self.relation_ids.get(iri).copied()
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    /// SHA-256 over the three id maps; embeddings and model checkpoints are
    /// keyed by it.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (tag, items) in [("w", &self.words), ("e", &self.entities), ("r", &self.relations)] {
            h.update(tag.as_bytes());
            h.update((items.len() as u64).to_le_bytes());
            for item in items {
                h.update((item.len() as u64).to_le_bytes());
                h.update(item.as_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Builds the vocabulary from every description triple: predicate and object
/// words, subject/object IRIs as entities, predicate IRIs as relations.
pub fn build_vocab(descriptions: &[EntityDescription]) -> Vocabulary {
    let mut words = BTreeSet::new();
    let mut entities = BTreeSet::new();
    let mut relations = BTreeSet::new();
    for d in descriptions {
        for (i, t) in d.triples.iter().enumerate() {
            words.insert(extract_word(&Term::iri(t.predicate.as_str())));
            words.insert(extract_word(&d.value_term(i)));
            entities.insert(t.subject.clone());
            if let Term::Iri { value } = &t.object {
                entities.insert(value.clone());
            }
            relations.insert(t.predicate.clone());
        }
    }
    Vocabulary::from_parts(words, entities, relations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Source, Triple};
    use proptest::prelude::*;

    #[test]
    fn extract_word_examples() {
        assert_eq!(
            extract_word(&Term::iri("http://dbpedia.org/ontology/goldMedalist")),
            "goldMedalist"
        );
        assert_eq!(
            extract_word(&Term::iri("http://www.w3.org/1999/02/22-rdf-syntax-ns#type")),
            "type"
        );
        assert_eq!(extract_word(&Term::literal("Berlin")), "Berlin");
        assert_eq!(extract_word(&Term::literal("  New \t York ")), "New York");
    }

    #[test]
    fn extract_word_fallbacks_are_never_empty() {
        assert_eq!(extract_word(&Term::iri("http://x.org/a/")), "http://x.org/a/");
        assert_eq!(extract_word(&Term::iri("http://x.org/a#")), "http://x.org/a#");
        assert_eq!(extract_word(&Term::literal("  ")), "\"\"");
        assert_eq!(extract_word(&Term::literal("")), "\"\"");
    }

    fn description(triples: Vec<Triple>) -> EntityDescription {
        EntityDescription {
            entity_id: "1".into(),
            subject: triples[0].subject.clone(),
            source: Source::DBpedia,
            triples,
        }
    }

    #[test]
    fn words_are_deduplicated_and_sorted() {
        let d = description(vec![
            Triple::new("http://s", "http://x/a", Term::literal("b")),
            Triple::new("http://s", "http://x/a", Term::literal("a")),
        ]);
        let v = build_vocab(&[d]);
        assert_eq!(v.word_id("a"), 0);
        assert_eq!(v.word_id("b"), 1);
        assert_eq!(v.oov_id(), 2);
        assert_eq!(v.word_id("zzz"), 2);
        assert_eq!(v.word_table_rows(), 3);
    }

    #[test]
    fn single_iri_triple_entities_and_relations() {
        let d = description(vec![Triple::new("http://s", "http://p", Term::iri("http://o"))]);
        let v = build_vocab(&[d]);
        assert_eq!(v.entities(), &["http://o".to_string(), "http://s".to_string()]);
        assert_eq!(v.relations(), &["http://p".to_string()]);
        assert_eq!(v.entity_id("http://s"), Some(1));
        assert_eq!(v.relation_id("http://o"), None);
    }

    #[test]
    fn hash_depends_on_contents() {
        let a = build_vocab(&[description(vec![Triple::new("http://s", "http://p", Term::literal("x"))])]);
        let b = build_vocab(&[description(vec![Triple::new("http://s", "http://p", Term::literal("y"))])]);
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
    }

    proptest! {
        #[test]
        fn extract_word_is_idempotent(s in any::<String>(), iri in "[a-z]{1,5}://[a-zA-Z0-9/#._-]{0,20}") {
            for term in [Term::literal(s.clone()), Term::iri(iri.clone())] {
                let w = extract_word(&term);
                prop_assert!(!w.is_empty());
                prop_assert_eq!(extract_word(&Term::literal(w.clone())), w);
            }
        }
    }
}
