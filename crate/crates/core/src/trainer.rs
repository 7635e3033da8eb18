//! Cross-entropy training against gold attention, five-fold plans and the
//! per-fold epoch loop with best-epoch selection.

use std::collections::BTreeSet;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::eval::{EntityScores, EvalError};
use crate::extractor::{EncodedEntity, PermMode};
use crate::ingest::{build_vocab, Dataset, Vocabulary};
use crate::model::{ModelConfig, ModelError, SummaryModel, Variant};
use crate::numeric::{log_sum_exp, Adam, AdamConfig, NumericError};
use crate::transe::GraphEmbeddings;
use crate::Scalar;

pub const FOLDS: usize = 5;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("loss over {n} triples given a target of length {target}")]
    Length { n: usize, target: usize },
    #[error("{count} entities cannot be split into {FOLDS} folds")]
    TooFewEntities { count: usize },
    #[error("fold {fold} diverged at epoch {epoch} (entity {entity}): {detail}")]
    Divergence {
        fold: usize,
        epoch: usize,
        entity: String,
        detail: String,
    },
    #[error("unknown entity id {0} in fold plan")]
    UnknownEntity(String),
}

/// Validation quantity that picks the reported epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMetric {
    /// Mean of F@5 and F@10.
    #[default]
    MeanF,
    /// Mean of MAP@5 and MAP@10.
    MeanMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub variant: Variant,
    /// Attention layers; A5 always uses one.
    pub layers: usize,
    pub word_dim: usize,
    /// Extractor hidden size per direction.
    pub hidden: usize,
    /// User-phase hidden size per direction.
    pub user_hidden: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    pub stop_metric: StopMetric,
    /// Epochs without a new best validation score before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            variant: Variant::Full,
            layers: 6,
            word_dim: 100,
            hidden: 100,
            user_hidden: 100,
            optimizer: AdamConfig::default(),
            seed: 1,
            stop_metric: StopMetric::MeanF,
            patience: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.layers == 0 {
            return Err(TrainError::Config("layers must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(TrainError::Config("patience must be at least 1".into()));
        }
        Ok(())
    }

    pub fn effective_layers(&self) -> usize {
        if self.variant == Variant::A5 {
            1
        } else {
            self.layers
        }
    }

    pub fn model_config(&self, graph_dim: usize, max_triples: usize) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            layers: self.effective_layers(),
            word_dim: self.word_dim,
            graph_dim,
            hidden: self.hidden,
            user_hidden: self.user_hidden,
            max_triples,
        }
    }
}

/// `−Σ ā_i log softmax(z)_i` for logits `z`.
pub fn loss<T: Scalar>(logits: &[T], target: &[T]) -> Result<T, TrainError> {
    if logits.len() != target.len() {
        return Err(TrainError::Length {
            n: logits.len(),
            target: target.len(),
        });
    }
    let lse = log_sum_exp(logits.iter().copied());
    Ok(logits
        .iter()
        .zip(target)
        .fold(T::zero(), |acc, (&z, &t)| acc - t * (z - lse)))
}

/// A 64-bit seed derived from `seed`, a purpose tag and an index.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Which folds play which role in one cross-validation round.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldRoles {
    pub round: usize,
    pub test: usize,
    pub validation: usize,
    pub train: Vec<usize>,
}

/// Five disjoint entity-id lists covering the corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub folds: Vec<Vec<String>>,
}

impl FoldPlan {
    /// Round `r` tests on fold `r`, validates on fold `r + 1` and trains on
    /// the other three.
    pub fn roles(&self, round: usize) -> FoldRoles {
        let validation = (round + 1) % FOLDS;
        FoldRoles {
            round,
            test: round,
            validation,
            train: (0..FOLDS).filter(|&f| f != round && f != validation).collect(),
        }
    }

    /// The round whose test fold holds `entity_id`.
    pub fn test_round(&self, entity_id: &str) -> Option<usize> {
        self.folds.iter().position(|f| f.iter().any(|e| e == entity_id))
    }

    /// Dataset positions of the given folds, in fold then plan order.
    pub fn positions(&self, dataset: &Dataset, folds: &[usize]) -> Result<Vec<usize>, TrainError> {
        folds
            .iter()
            .flat_map(|&f| &self.folds[f])
            .map(|id| dataset.position(id).ok_or_else(|| TrainError::UnknownEntity(id.clone())))
            .collect()
    }
}

/// Seeded uniform partition of `entity_ids` into five folds whose sizes
/// differ by at most one.
pub fn five_fold_split(entity_ids: &[String], seed: u64) -> Result<FoldPlan, TrainError> {
    let unique: BTreeSet<&String> = entity_ids.iter().collect();
    if unique.len() < FOLDS {
        return Err(TrainError::TooFewEntities { count: unique.len() });
    }
    let mut ids: Vec<String> = unique.into_iter().cloned().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "folds", 0)));
    let n = ids.len();
    let folds = (0..FOLDS)
        .map(|f| ids[f * n / FOLDS..(f + 1) * n / FOLDS].to_vec())
        .collect();
    Ok(FoldPlan { seed, folds })
}

/// A dataset with its vocabulary and model-ready encodings.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub dataset: Dataset,
    pub vocab: Vocabulary,
    pub encoded: Vec<EncodedEntity>,
}

impl Corpus {
    pub fn new(dataset: Dataset) -> Self {
        let vocab = build_vocab(&dataset.entities);
        Self::with_vocab(dataset, vocab)
    }

    pub fn with_vocab(dataset: Dataset, vocab: Vocabulary) -> Self {
        let encoded = dataset
            .entities
            .iter()
            .map(|d| EncodedEntity::new(d, &vocab))
            .collect();
        Self {
            dataset,
            vocab,
            encoded,
        }
    }

    pub fn entity_ids(&self) -> Vec<String> {
        self.dataset.entities.iter().map(|e| e.entity_id.clone()).collect()
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub fold: usize,
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(rename = "val_F5")]
    pub val_f5: f64,
    #[serde(rename = "val_F10")]
    pub val_f10: f64,
    #[serde(rename = "val_MAP")]
    pub val_map: f64,
}

impl EpochRecord {
    pub fn score(&self, metric: StopMetric) -> f64 {
        match metric {
            StopMetric::MeanF => (self.val_f5 + self.val_f10) / 2.0,
            StopMetric::MeanMap => self.val_map,
        }
    }
}

/// Line-delimited JSON of `records`.
pub fn to_jsonl(records: &[EpochRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

#[derive(Clone, Debug)]
pub struct FoldOutcome<T> {
    pub model: SummaryModel<T>,
    pub log: Vec<EpochRecord>,
    /// Epoch the returned parameters come from; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
}

/// Mean validation F@5, F@10 and MAP (averaged over both k).
pub fn validate<T: Scalar>(
    model: &SummaryModel<T>,
    corpus: &Corpus,
    entities: &[usize],
    seed: u64,
) -> Result<(f64, f64, f64), TrainError> {
    if entities.is_empty() {
        return Ok((0.0, 0.0, 0.0));
    }
    let (mut f5, mut f10, mut map) = (0.0, 0.0, 0.0);
    for &i in entities {
        let enc = &corpus.encoded[i];
        let a = model.attention(
            enc,
            &mut PermMode::Eval {
                seed,
                entity_id: &enc.entity_id,
            },
        )?;
        let source = corpus.dataset.entities[i].source;
        let gold = &corpus.dataset.gold[i];
        let s5 = EntityScores::compute(source, &a, gold, 5)?;
        let s10 = EntityScores::compute(source, &a, gold, 10)?;
        f5 += s5.f();
        f10 += s10.f();
        map += (s5.ap() + s10.ap()) / 2.0;
    }
    let n = entities.len() as f64;
    Ok((f5 / n, f10 / n, map / n))
}

/// Trains one fold: one Adam step per training entity per epoch, entities
/// shuffled every epoch, parameters of the best validation epoch returned
/// (the latest one on ties).
/// `config.epochs == 0` is allowed here and returns the initialization.
pub fn train_fold<T: Scalar>(
    corpus: &Corpus,
    graph: &GraphEmbeddings<T>,
    train: &[usize],
    validation: &[usize],
    fold: usize,
    config: &TrainConfig,
) -> Result<FoldOutcome<T>, TrainError> {
    if config.epochs > 0 {
        config.validate()?;
    }
    let model_config = config.model_config(graph.dim(), corpus.dataset.max_triples().max(1));
    let mut model = SummaryModel::new(
        &model_config,
        &corpus.vocab,
        graph,
        derive_seed(config.seed, "init", fold as u64),
    )?;
    let mut adam = Adam::new(config.optimizer.clone());
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "order", fold as u64));
    let mut perm_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "permute", fold as u64));
    let targets: Vec<Vec<T>> = corpus
        .dataset
        .gold
        .iter()
        .map(|g| g.gold_attention.iter().map(|&x| T::of(x)).collect())
        .collect();

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, SummaryModel<T>)> = None;
    let mut order = train.to_vec();
    let mut stale = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for &i in &order {
            let enc = &corpus.encoded[i];
            let diverged = |detail: String| TrainError::Divergence {
                fold,
                epoch,
                entity: enc.entity_id.clone(),
                detail,
            };
            let (l, grads) = model.loss_and_gradients(enc, &targets[i], &mut PermMode::Train(&mut perm_rng))?;
            if !l.is_finite() {
                return Err(diverged(format!("loss is {l}")));
            }
            total += l.as_f64();
            model.store.accumulate(&grads);
            adam.step(&mut model.store).map_err(|e| match e {
                NumericError::NanGradient(_) => diverged(e.to_string()),
                other => TrainError::Model(other.into()),
            })?;
        }
        let (val_f5, val_f10, val_map) = validate(&model, corpus, validation, config.seed)?;
        let record = EpochRecord {
            fold,
            epoch,
            train_loss: total / order.len().max(1) as f64,
            val_f5,
            val_f10,
            val_map,
        };
        debug!(
            "fold {fold} epoch {epoch}: loss {:.5} val F@5 {:.4} F@10 {:.4} MAP {:.4}",
            record.train_loss, val_f5, val_f10, val_map
        );
        let score = record.score(config.stop_metric);
        log.push(record);
        match &best {
            Some((b, _, _)) if score < *b => stale += 1,
            Some((b, _, _)) if score == *b => {
                stale += 1;
                best = Some((score, epoch, model.clone()));
            }
            _ => {
                stale = 0;
                best = Some((score, epoch, model.clone()));
            }
        }
        if stale >= config.patience {
            info!("fold {fold}: no improvement for {stale} epochs, stopping at {epoch}");
            break;
        }
    }
    Ok(match best {
        Some((score, epoch, model)) => {
            info!("fold {fold}: best epoch {epoch} (validation {score:.4})");
            FoldOutcome {
                model,
                log,
                best_epoch: Some(epoch),
            }
        }
        None => FoldOutcome {
            model,
            log,
            best_epoch: None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{EntityDescription, GoldAnnotation, Source, Term, Triple};
    use crate::transe::{initial_embeddings, TranseConfig};
    use proptest::prelude::*;

    fn entropy(p: &[f64]) -> f64 {
        -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
    }

    #[test]
    fn loss_examples() {
        let u = [0.25; 4];
        assert!((loss(&[0.0f64; 4], &u).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!((loss(&[3.0f64; 7], &[0., 0., 1., 0., 0., 0., 0.]).unwrap() - 7f64.ln()).abs() < 1e-12);
        assert!(matches!(loss(&[0.0f64; 3], &u), Err(TrainError::Length { n: 3, target: 4 })));
    }

    proptest! {
        #[test]
        fn loss_is_bounded_by_target_entropy(
            pairs in proptest::collection::vec((-8.0f64..8.0, 0.0f64..1.0), 1..12),
        ) {
            let z: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let raw: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-6);
            let t: Vec<f64> = raw.iter().map(|x| x / total).collect();
            prop_assert!(loss(&z, &t).unwrap() >= entropy(&t) - 1e-9);
            let zt: Vec<f64> = t.iter().map(|x| x.max(1e-300).ln()).collect();
            prop_assert!((loss(&zt, &t).unwrap() - entropy(&t)).abs() < 1e-9);
        }

        #[test]
        fn folds_partition(count in 5usize..80, seed in any::<u64>()) {
            let ids: Vec<String> = (0..count).map(|i| i.to_string()).collect();
            let plan = five_fold_split(&ids, seed).unwrap();
            let mut all: Vec<String> = plan.folds.concat();
            all.sort();
            let mut want = ids.clone();
            want.sort();
            prop_assert_eq!(all, want);
            let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for id in &ids {
                let r = plan.test_round(id).unwrap();
                prop_assert_eq!(plan.roles(r).test, r);
            }
        }
    }

    #[test]
    fn fold_plan_examples() {
        let ids: Vec<String> = (0..175).map(|i| format!("e{i}")).collect();
        let plan = five_fold_split(&ids, 3).unwrap();
        assert!(plan.folds.iter().all(|f| f.len() == 35));
        assert_eq!(plan, five_fold_split(&ids, 3).unwrap());
        assert_ne!(plan, five_fold_split(&ids, 4).unwrap());
        assert!(matches!(
            five_fold_split(&ids[..4], 1),
            Err(TrainError::TooFewEntities { count: 4 })
        ));
        let r = plan.roles(4);
        assert_eq!((r.test, r.validation, r.train), (4, 0, vec![1, 2, 3]));
    }

    fn toy(entities: usize, n: usize) -> Corpus {
        let entities: Vec<EntityDescription> = (0..entities)
            .map(|e| {
                let s = format!("http://x/e{e}");
                EntityDescription {
                    entity_id: e.to_string(),
                    subject: s.clone(),
                    source: Source::DBpedia,
                    triples: (0..n)
                        .map(|i| Triple::new(&s, format!("http://x/p{i}"), Term::iri(format!("http://x/o{}", (i + e) % 7))))
                        .collect(),
                }
            })
            .collect();
        let gold = entities
            .iter()
            .map(|d| {
                let first: Vec<usize> = vec![0];
                GoldAnnotation::from_selections(
                    &d.entity_id,
                    n,
                    vec![first.clone(); 5],
                    vec![first; 5],
                )
                .unwrap()
            })
            .collect();
        Corpus::new(Dataset { entities, gold })
    }

    fn small(epochs: usize, variant: Variant) -> TrainConfig {
        TrainConfig {
            epochs,
            variant,
            layers: 2,
            word_dim: 6,
            hidden: 6,
            user_hidden: 6,
            optimizer: AdamConfig {
                learning_rate: 0.01,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    fn graph(corpus: &Corpus) -> GraphEmbeddings<f64> {
        initial_embeddings(
            &corpus.vocab,
            &TranseConfig {
                dim: 6,
                ..TranseConfig::default()
            },
        )
    }

    #[test]
    fn zero_epochs_return_initialization() {
        let c = toy(1, 4);
        let g = graph(&c);
        let cfg = small(0, Variant::Full);
        let out = train_fold(&c, &g, &[0], &[0], 0, &cfg).unwrap();
        assert!(out.log.is_empty());
        assert_eq!(out.best_epoch, None);
        let init = SummaryModel::new(&cfg.model_config(6, 4), &c.vocab, &g, derive_seed(cfg.seed, "init", 0)).unwrap();
        for ((_, a), (_, b)) in out.model.store.iter().zip(init.store.iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn one_hot_target_becomes_argmax() {
        let c = toy(1, 4);
        let g = graph(&c);
        for variant in Variant::ALL {
            let out = train_fold(&c, &g, &[0], &[0], 0, &small(200, variant)).unwrap();
            let a = out
                .model
                .attention(&c.encoded[0], &mut PermMode::Eval { seed: 1, entity_id: "0" })
                .unwrap();
            let arg = crate::eval::top_k(&a, 1)[0];
            assert_eq!(arg, 0, "{variant}: {a:?}");
            assert_eq!(out.log.len(), 200);
        }
    }

    #[test]
    fn best_epoch_and_frozen_tables() {
        let c = toy(6, 5);
        let g = graph(&c);
        let cfg = small(15, Variant::Full);
        let out = train_fold(&c, &g, &[0, 1, 2, 3], &[4, 5], 2, &cfg).unwrap();
        let best = out.best_epoch.unwrap();
        let score = out.log[best - 1].score(cfg.stop_metric);
        assert!(out.log.iter().all(|r| r.score(cfg.stop_metric) <= score));
        let (f5, f10, _) = validate(&out.model, &c, &[4, 5], cfg.seed).unwrap();
        assert_eq!((f5, f10), (out.log[best - 1].val_f5, out.log[best - 1].val_f10));
        let store = &out.model.store;
        assert_eq!(store.value(store.id("graph.entity").unwrap()), &g.entity);
        assert_eq!(store.value(store.id("graph.relation").unwrap()), &g.relation);
        let again = train_fold(&c, &g, &[0, 1, 2, 3], &[4, 5], 2, &cfg).unwrap();
        assert_eq!(to_jsonl(&out.log), to_jsonl(&again.log));
        for ((_, a), (_, b)) in out.model.store.iter().zip(again.model.store.iter()) {
            assert_eq!(a.value, b.value);
        }
        let line = to_jsonl(&out.log[..1]);
        for key in ["\"fold\":2", "\"epoch\":1", "train_loss", "val_F5", "val_F10", "val_MAP"] {
            assert!(line.contains(key), "{line}");
        }
    }

    #[test]
    fn patience_stops_early() {
        let c = toy(6, 5);
        let g = graph(&c);
        let cfg = TrainConfig {
            patience: 1,
            ..small(30, Variant::A3)
        };
        let out = train_fold(&c, &g, &[0, 1, 2, 3], &[4, 5], 0, &cfg).unwrap();
        assert!(out.log.len() < 30);
    }

    #[test]
    fn a5_forces_one_layer() {
        let cfg = TrainConfig {
            variant: Variant::A5,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.model_config(100, 10).layers, 1);
        assert_eq!(TrainConfig::default().model_config(100, 10).layers, 6);
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
    }
}
