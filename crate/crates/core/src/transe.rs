//! Translational graph embeddings (`h + r ≈ t`), pretrained once over the
//! whole corpus and then used as frozen lookup tables.

use std::collections::{BTreeSet, HashSet};

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{EntityDescription, Term, Vocabulary};
use crate::numeric::{uniform, Checkpoint, CheckpointError};
use crate::Scalar;

pub const CHECKPOINT_KIND: &str = "graph-embeddings";

#[derive(Debug, Error)]
pub enum TranseError {
    #[error("no IRI-valued triples to train on")]
    EmptyGraph,
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranseConfig {
    pub dim: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TranseConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            margin: 1.0,
            learning_rate: 0.01,
            epochs: 500,
            seed: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Entity,
    Relation,
}

/// Entity and relation tables, one row per vocabulary id.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphEmbeddings<T> {
    pub entity: Array2<T>,
    pub relation: Array2<T>,
    pub config: TranseConfig,
}

#[derive(Clone, Debug)]
pub struct TranseRun<T> {
    pub embeddings: GraphEmbeddings<T>,
    /// Mean margin loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// A `(head, relation, tail)` fact in vocabulary ids.
pub type Fact = (usize, usize, usize);

/// L2 norm of `h + r − t`.
pub fn transe_score<T: Scalar>(h: &[T], r: &[T], t: &[T]) -> Result<T, TranseError> {
    if h.len() != r.len() || h.len() != t.len() {
        return Err(TranseError::Dimension(h.len(), if h.len() != r.len() { r.len() } else { t.len() }));
    }
    Ok(distance(h.iter().zip(r).zip(t).map(|((&h, &r), &t)| h + r - t)))
}

fn distance<T: Scalar>(diff: impl Iterator<Item = T>) -> T {
    diff.map(|x| x * x).sum::<T>().sqrt()
}

/// Distinct facts whose object is an IRI. Literals have no graph identity.
pub fn graph_facts(descriptions: &[EntityDescription], vocab: &Vocabulary) -> Vec<Fact> {
    let mut facts = BTreeSet::new();
    for d in descriptions {
        for t in &d.triples {
            if let Term::Iri { value } = &t.object {
                if let (Some(h), Some(r), Some(o)) = (
                    vocab.entity_id(&t.subject),
                    vocab.relation_id(&t.predicate),
                    vocab.entity_id(value),
                ) {
                    facts.insert((h, r, o));
                }
            }
        }
    }
    facts.into_iter().collect()
}

fn project_to_unit_ball<T: Scalar>(table: &mut Array2<T>) {
    for mut row in table.rows_mut() {
        let norm = distance(row.iter().copied());
        if norm > T::one() {
            row.mapv_inplace(|x| x / norm);
        }
    }
}

/// Seeded initial tables: uniform in ±6/√dim, relation rows normalized,
/// entity rows projected into the unit ball.
pub fn initial_embeddings<T: Scalar>(vocab: &Vocabulary, config: &TranseConfig) -> GraphEmbeddings<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bound = 6.0 / (config.dim as f64).sqrt();
    let mut entity: Array2<T> = uniform(vocab.entities().len(), config.dim, bound, &mut rng);
    let mut relation: Array2<T> = uniform(vocab.relations().len(), config.dim, bound, &mut rng);
    for mut row in relation.rows_mut() {
        let norm = distance(row.iter().copied());
        if norm > T::zero() {
            row.mapv_inplace(|x| x / norm);
        }
    }
    project_to_unit_ball(&mut entity);
    GraphEmbeddings {
        entity,
        relation,
        config: config.clone(),
    }
}

/// Margin-ranking SGD with one corrupted fact per positive (head or tail
/// replaced uniformly at random). Entity rows are projected back into the
/// unit ball after every epoch.
pub fn train_transe<T: Scalar>(
    descriptions: &[EntityDescription],
    vocab: &Vocabulary,
    config: &TranseConfig,
) -> Result<TranseRun<T>, TranseError> {
    let facts = graph_facts(descriptions, vocab);
    train_on_facts(&facts, vocab, config)
}

pub fn train_on_facts<T: Scalar>(
    facts: &[Fact],
    vocab: &Vocabulary,
    config: &TranseConfig,
) -> Result<TranseRun<T>, TranseError> {
    if facts.is_empty() {
        return Err(TranseError::EmptyGraph);
    }
    let mut emb = initial_embeddings::<T>(vocab, config);
    // Separate stream from initialization so epoch-0 tables do not depend on
    // how much randomness training consumes.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let n_entities = emb.entity.nrows();
    let lr = T::of(config.learning_rate);
    let margin = T::of(config.margin);
    let mut order: Vec<usize> = (0..facts.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &fi in &order {
            let (h, r, t) = facts[fi];
            let corrupt_head = rng.random_bool(0.5);
            let mut other = rng.random_range(0..n_entities);
            if n_entities > 1 {
                let original = if corrupt_head { h } else { t };
                while other == original {
                    other = rng.random_range(0..n_entities);
                }
            }
            let (h2, t2) = if corrupt_head { (other, t) } else { (h, other) };
            total += sgd_step(&mut emb, (h, r, t), (h2, t2), margin, lr).as_f64();
        }
        project_to_unit_ball(&mut emb.entity);
        epoch_losses.push(total / facts.len() as f64);
    }
    Ok(TranseRun {
        embeddings: emb,
        epoch_losses,
    })
}

fn unit_diff<T: Scalar>(h: ArrayView1<T>, r: ArrayView1<T>, t: ArrayView1<T>) -> (T, Vec<T>) {
    let diff: Vec<T> = h.iter().zip(r).zip(t).map(|((&h, &r), &t)| h + r - t).collect();
    let norm = distance(diff.iter().copied());
    let dir = if norm > T::zero() {
        diff.iter().map(|&x| x / norm).collect()
    } else {
        vec![T::zero(); diff.len()]
    };
    (norm, dir)
}

fn sgd_step<T: Scalar>(
    emb: &mut GraphEmbeddings<T>,
    (h, r, t): Fact,
    (h2, t2): (usize, usize),
    margin: T,
    lr: T,
) -> T {
    let (d_pos, g_pos) = unit_diff(emb.entity.row(h), emb.relation.row(r), emb.entity.row(t));
    let (d_neg, g_neg) = unit_diff(emb.entity.row(h2), emb.relation.row(r), emb.entity.row(t2));
    let loss = margin + d_pos - d_neg;
    if loss <= T::zero() {
        return T::zero();
    }
    let step = |emb: &mut Array2<T>, row: usize, g: &[T], sign: T| {
        for (x, &g) in emb.row_mut(row).iter_mut().zip(g) {
            *x -= sign * lr * g;
        }
    };
    let one = T::one();
    step(&mut emb.entity, h, &g_pos, one);
    step(&mut emb.entity, t, &g_pos, -one);
    step(&mut emb.entity, h2, &g_neg, -one);
    step(&mut emb.entity, t2, &g_neg, one);
    let g_rel: Vec<T> = g_pos.iter().zip(&g_neg).map(|(&p, &n)| p - n).collect();
    step(&mut emb.relation, r, &g_rel, one);
    loss
}

impl<T: Scalar> GraphEmbeddings<T> {
    pub fn dim(&self) -> usize {
        self.entity.ncols()
    }

    /// The row for `term`, or zeros for literals and unknown IRIs.
    pub fn lookup(&self, vocab: &Vocabulary, term: &Term, role: Role) -> Vec<T> {
        let row = match (term, role) {
            (Term::Iri { value }, Role::Entity) => vocab.entity_id(value).map(|i| self.entity.row(i)),
            (Term::Iri { value }, Role::Relation) => vocab.relation_id(value).map(|i| self.relation.row(i)),
            (Term::Literal { .. }, _) => None,
        };
        row.map_or_else(|| vec![T::zero(); self.dim()], |r| r.to_vec())
    }

    pub fn to_checkpoint(&self, vocab_hash: &str) -> Checkpoint {
        let mut ck = Checkpoint::new(
            CHECKPOINT_KIND,
            serde_json::to_value(&self.config).expect("config serializes"),
            vocab_hash,
        );
        ck.tensors
            .push(crate::numeric::NamedTensor::from_array("entity", &self.entity));
        ck.tensors
            .push(crate::numeric::NamedTensor::from_array("relation", &self.relation));
        ck
    }

    /// Loads tables, refusing embeddings built for a different vocabulary.
    pub fn from_checkpoint(ck: &Checkpoint, vocab_hash: &str) -> Result<Self, TranseError> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        ck.expect_vocab(vocab_hash)?;
        let config: TranseConfig = serde_json::from_value(ck.header.model_config.clone())
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        Ok(Self {
            entity: ck.tensor("entity")?.to_array()?,
            relation: ck.tensor("relation")?.to_array()?,
            config,
        })
    }
}

/// Filtered mean rank of the true tail over all entities, by brute force.
/// Other known tails of the same `(head, relation)` are not counted.
pub fn filtered_mean_rank<T: Scalar>(emb: &GraphEmbeddings<T>, facts: &[Fact]) -> f64 {
    if facts.is_empty() {
        return f64::NAN;
    }
    let known: HashSet<Fact> = facts.iter().copied().collect();
    let ranks: Vec<f64> = facts
        .par_iter()
        .map(|&(h, r, t)| {
            let target: Vec<T> = emb
                .entity
                .row(h)
                .iter()
                .zip(emb.relation.row(r))
                .map(|(&a, &b)| a + b)
                .collect();
            let dist = |e: usize| distance(target.iter().zip(emb.entity.row(e)).map(|(&a, &b)| a - b));
            let d_true = dist(t);
            let better = (0..emb.entity.nrows())
                .filter(|&e| e != t && !known.contains(&(h, r, e)) && dist(e) < d_true)
                .count();
            (better + 1) as f64
        })
        .collect();
    ranks.iter().sum::<f64>() / ranks.len() as f64
}
