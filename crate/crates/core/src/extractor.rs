//! Triple representation and the feature-extraction BiLSTM.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::ingest::{extract_word, EntityDescription, Term, Vocabulary};
use crate::lstm::BiLstm;
use crate::numeric::{Graph, NumericError, ParamId, Var};
use crate::Scalar;

/// Vocabulary ids of one entity's triples, in description order.
///
/// Each triple becomes `[word(p) ‖ graph(p) ‖ word(o) ‖ graph(o)]`, where
/// `o` is the value term (the subject for incoming triples). Literal and
/// unknown graph terms have no row and read as zeros.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedEntity {
    pub entity_id: String,
    pub predicate_words: Vec<Option<usize>>,
    pub predicate_graph: Vec<Option<usize>>,
    pub object_words: Vec<Option<usize>>,
    pub object_graph: Vec<Option<usize>>,
}

impl EncodedEntity {
    pub fn new(desc: &EntityDescription, vocab: &Vocabulary) -> Self {
        let n = desc.triples.len();
        let mut out = Self {
            entity_id: desc.entity_id.clone(),
            predicate_words: Vec::with_capacity(n),
            predicate_graph: Vec::with_capacity(n),
            object_words: Vec::with_capacity(n),
            object_graph: Vec::with_capacity(n),
        };
        for (i, t) in desc.triples.iter().enumerate() {
            let p = Term::iri(t.predicate.as_str());
            let o = desc.value_term(i);
            out.predicate_words.push(Some(vocab.word_id(&extract_word(&p))));
            out.predicate_graph.push(vocab.relation_id(&t.predicate));
            out.object_words.push(Some(vocab.word_id(&extract_word(&o))));
            out.object_graph.push(o.as_iri().and_then(|iri| vocab.entity_id(iri)));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.predicate_words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicate_words.is_empty()
    }
}

/// Which sequence a permutation is drawn for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Triples,
    Users,
}

impl Stream {
    fn tag(self) -> &'static [u8] {
        match self {
            Stream::Triples => b"triples",
            Stream::Users => b"users",
        }
    }
}

pub enum PermMode<'a> {
    /// A fresh permutation from the training stream on every call.
    Train(&'a mut ChaCha8Rng),
    /// A fixed permutation per `(seed, entity)`.
    Eval { seed: u64, entity_id: &'a str },
}

/// A random ordering of `0..n` for reading a sequence.
pub fn permute(n: usize, mode: &mut PermMode<'_>, stream: Stream) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    match mode {
        PermMode::Train(rng) => order.shuffle(*rng),
        PermMode::Eval { seed, entity_id } => {
            let mut h = Sha256::new();
            h.update(seed.to_le_bytes());
            h.update((entity_id.len() as u64).to_le_bytes());
            h.update(entity_id.as_bytes());
            h.update(stream.tag());
            let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
            order.shuffle(&mut rng);
        }
    }
    order
}

/// Lookup tables plus the optional BiLSTM. Without the BiLSTM the
/// representations pass through unchanged and the context is their mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Extractor {
    pub word: ParamId,
    pub graph_entity: ParamId,
    pub graph_relation: ParamId,
    pub lstm: Option<BiLstm>,
}

impl Extractor {
    /// `n × (2·word_dim + 2·graph_dim)` input matrix.
    pub fn represent<T: Scalar>(&self, g: &mut Graph<'_, T>, enc: &EncodedEntity) -> Result<Var, NumericError> {
        let parts = [
            g.gather_rows(self.word, &enc.predicate_words)?,
            g.gather_rows(self.graph_relation, &enc.predicate_graph)?,
            g.gather_rows(self.word, &enc.object_words)?,
            g.gather_rows(self.graph_entity, &enc.object_graph)?,
        ];
        g.concat_cols(&parts)
    }

    /// Features `h` (one row per triple, description order) and context `c`.
    pub fn extract<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        enc: &EncodedEntity,
        order: &[usize],
    ) -> Result<(Var, Var), NumericError> {
        if enc.is_empty() {
            return Err(NumericError::Empty { op: "extract" });
        }
        let e = self.represent(g, enc)?;
        match &self.lstm {
            Some(lstm) => lstm.encode(g, e, order),
            None => {
                let c = g.mean_rows(e)?;
                Ok((e, c))
            }
        }
    }
}
