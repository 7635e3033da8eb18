//! Pretraining, fold-parallel cross-validation, out-of-fold evaluation and
//! the artifacts that connect them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::RunConfig;
use crate::eval::{build_report, BaselineTable, EntityScores, EvalError, MetricsReport, SystemRun};
use crate::extractor::PermMode;
use crate::model::{ModelError, SummaryModel, Variant};
use crate::numeric::checkpoint::write_atomic;
use crate::numeric::{Checkpoint, CheckpointError};
use crate::trainer::{five_fold_split, to_jsonl, Corpus, EpochRecord, FoldOutcome, FoldPlan, TrainConfig, TrainError, FOLDS};
use crate::transe::{train_transe, GraphEmbeddings, TranseConfig, TranseError, TranseRun};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Transe(#[from] TranseError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// What every artifact records about the inputs that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub run_config: RunConfig,
    pub corpus_hash: String,
    pub vocab_hash: String,
}

impl Provenance {
    pub fn new(config: &RunConfig, corpus: &Corpus) -> Self {
        Self {
            run_config: config.clone(),
            corpus_hash: corpus.dataset.corpus_hash(),
            vocab_hash: corpus.vocab.hash(),
        }
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("provenance serializes")
    }
}

pub fn pretrain<T: Scalar>(corpus: &Corpus, config: &TranseConfig) -> Result<TranseRun<T>, PipelineError> {
    info!("pretraining graph embeddings: dim {}, {} epochs", config.dim, config.epochs);
    Ok(train_transe(&corpus.dataset.entities, &corpus.vocab, config)?)
}

#[derive(Clone, Debug)]
pub struct CrossValidation<T> {
    pub plan: FoldPlan,
    /// Indexed by round; round `r` tests on fold `r`.
    pub folds: Vec<FoldOutcome<T>>,
}

impl<T: Scalar> CrossValidation<T> {
    pub fn models(&self) -> Vec<&SummaryModel<T>> {
        self.folds.iter().map(|f| &f.model).collect()
    }

    pub fn log(&self) -> Vec<EpochRecord> {
        self.folds.iter().flat_map(|f| f.log.iter().cloned()).collect()
    }
}

/// Five rounds trained concurrently, each on three folds with the next
/// fold for validation.
pub fn cross_validate<T: Scalar>(
    corpus: &Corpus,
    graph: &GraphEmbeddings<T>,
    config: &TrainConfig,
) -> Result<CrossValidation<T>, PipelineError> {
    config.validate()?;
    let plan = five_fold_split(&corpus.entity_ids(), config.seed)?;
    info!(
        "cross-validating variant {} for {} epochs on {} entities",
        config.variant,
        config.epochs,
        corpus.dataset.len()
    );
    let folds = (0..FOLDS)
        .into_par_iter()
        .map(|round| {
            let roles = plan.roles(round);
            let train = plan.positions(&corpus.dataset, &roles.train)?;
            let validation = plan.positions(&corpus.dataset, &[roles.validation])?;
            crate::trainer::train_fold(corpus, graph, &train, &validation, round, config)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CrossValidation { plan, folds })
}

/// Scores every entity with the model of the round that tested it.
pub fn out_of_fold<T: Scalar>(
    corpus: &Corpus,
    plan: &FoldPlan,
    models: &[&SummaryModel<T>],
    ks: &[usize],
    seed: u64,
    system: &str,
) -> Result<SystemRun, PipelineError> {
    if models.len() != FOLDS {
        return Err(PipelineError::Integrity(format!(
            "{} fold models given, {FOLDS} required",
            models.len()
        )));
    }
    let per_entity = (0..corpus.dataset.len())
        .into_par_iter()
        .map(|i| {
            let enc = &corpus.encoded[i];
            let round = plan.test_round(&enc.entity_id).ok_or_else(|| {
                PipelineError::Integrity(format!("entity {} is in no test fold", enc.entity_id))
            })?;
            let a = models[round].attention(
                enc,
                &mut PermMode::Eval {
                    seed,
                    entity_id: &enc.entity_id,
                },
            )?;
            let source = corpus.dataset.entities[i].source;
            ks.iter()
                .map(|&k| Ok(EntityScores::compute(source, &a, &corpus.dataset.gold[i], k)?))
                .collect::<Result<Vec<_>, PipelineError>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SystemRun {
        system: system.to_string(),
        scores: per_entity.into_iter().flatten().collect(),
    })
}

/// Outputs of one pretrain → cross-validate → evaluate run.
#[derive(Clone, Debug)]
pub struct PipelineRun<T> {
    pub graph: TranseRun<T>,
    pub variants: Vec<(Variant, CrossValidation<T>)>,
    pub report: MetricsReport,
}

/// Runs the configured pipeline for each variant, sharing one pretraining,
/// and reports every variant against the baselines.
pub fn run_pipeline<T: Scalar>(
    corpus: &Corpus,
    config: &RunConfig,
    variants: &[Variant],
) -> Result<PipelineRun<T>, PipelineError> {
    config.validate().map_err(|e| PipelineError::Integrity(e.to_string()))?;
    let graph = pretrain::<T>(corpus, &config.pretrain_config())?;
    let mut done = Vec::with_capacity(variants.len());
    let mut runs = Vec::with_capacity(variants.len());
    for &variant in variants {
        let train = TrainConfig {
            variant,
            ..config.train_config()
        };
        let cv = cross_validate(corpus, &graph.embeddings, &train)?;
        runs.push(out_of_fold(corpus, &cv.plan, &cv.models(), &config.ks, train.seed, variant.name())?);
        done.push((variant, cv));
    }
    let report = build_report(
        runs,
        &BaselineTable::embedded(),
        &config.report_options(),
        Provenance::new(config, corpus).to_value(),
    )?;
    Ok(PipelineRun {
        graph,
        variants: done,
        report,
    })
}

/// Hex SHA-256 of a file's contents.
pub fn file_sha256(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub const EMBEDDINGS_FILE: &str = "embeddings.ckpt";
pub const PLAN_FILE: &str = "plan.json";

pub fn fold_checkpoint_path(dir: &Path, round: usize) -> PathBuf {
    dir.join(format!("fold_{round}.ckpt"))
}

pub fn fold_log_path(dir: &Path, round: usize) -> PathBuf {
    dir.join(format!("fold_{round}.jsonl"))
}

/// Metadata stored in every fold checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldMetadata {
    pub round: usize,
    pub best_epoch: Option<usize>,
    pub plan: FoldPlan,
    pub provenance: Provenance,
}

pub fn save_embeddings<T: Scalar>(
    path: &Path,
    graph: &GraphEmbeddings<T>,
    provenance: &Provenance,
) -> Result<(), PipelineError> {
    let mut ck = graph.to_checkpoint(&provenance.vocab_hash);
    ck.header.metadata = provenance.to_value();
    ck.save(path)?;
    Ok(())
}

/// Loads embeddings, refusing tables built for a different vocabulary.
pub fn load_embeddings<T: Scalar>(path: &Path, corpus: &Corpus) -> Result<GraphEmbeddings<T>, PipelineError> {
    let ck = Checkpoint::load(path)?;
    Ok(GraphEmbeddings::from_checkpoint(&ck, &corpus.vocab.hash())?)
}

/// Writes one checkpoint and one JSONL log per round plus the fold plan.
pub fn save_cross_validation<T: Scalar>(
    dir: &Path,
    cv: &CrossValidation<T>,
    provenance: &Provenance,
) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    for (round, fold) in cv.folds.iter().enumerate() {
        let meta = FoldMetadata {
            round,
            best_epoch: fold.best_epoch,
            plan: cv.plan.clone(),
            provenance: provenance.clone(),
        };
        let ck = fold
            .model
            .to_checkpoint(&provenance.vocab_hash, serde_json::to_value(&meta).expect("metadata serializes"));
        ck.save(&fold_checkpoint_path(dir, round))?;
        let log_path = fold_log_path(dir, round);
        write_atomic(&log_path, to_jsonl(&fold.log).as_bytes())?;
    }
    let plan = serde_json::to_string_pretty(&cv.plan).expect("plan serializes");
    write_atomic(&dir.join(PLAN_FILE), plan.as_bytes())?;
    Ok(())
}

/// Fold models and their shared plan, checked against `corpus`.
#[derive(Clone, Debug)]
pub struct LoadedFolds<T> {
    pub plan: FoldPlan,
    pub models: Vec<SummaryModel<T>>,
    pub metadata: Vec<FoldMetadata>,
}

impl<T: Scalar> LoadedFolds<T> {
    pub fn model_refs(&self) -> Vec<&SummaryModel<T>> {
        self.models.iter().collect()
    }

    /// The model that never trained on `entity_id`.
    pub fn model_for(&self, entity_id: &str) -> Option<&SummaryModel<T>> {
        self.plan.test_round(entity_id).map(|r| &self.models[r])
    }
}

/// Loads all five fold checkpoints. A missing fold, a plan that does not
/// partition the corpus, or artifacts from another corpus are errors.
pub fn load_cross_validation<T: Scalar>(
    dir: &Path,
    corpus: &Corpus,
    graph: &GraphEmbeddings<T>,
) -> Result<LoadedFolds<T>, PipelineError> {
    let corpus_hash = corpus.dataset.corpus_hash();
    let mut models = Vec::with_capacity(FOLDS);
    let mut metadata: Vec<FoldMetadata> = Vec::with_capacity(FOLDS);
    for round in 0..FOLDS {
        let path = fold_checkpoint_path(dir, round);
        if !path.exists() {
            return Err(PipelineError::Integrity(format!(
                "missing checkpoint for fold {round} ({}); refusing to evaluate a partial cross-validation",
                path.display()
            )));
        }
        let ck = Checkpoint::load(&path)?;
        let meta: FoldMetadata = serde_json::from_value(ck.header.metadata.clone())
            .map_err(|e| CheckpointError::Malformed(format!("{}: fold metadata: {e}", path.display())))?;
        if meta.round != round {
            return Err(PipelineError::Integrity(format!(
                "{} holds fold {}, expected {round}",
                path.display(),
                meta.round
            )));
        }
        if meta.provenance.corpus_hash != corpus_hash {
            return Err(PipelineError::Integrity(format!(
                "{} was trained on a different corpus (hash {}, current {corpus_hash})",
                path.display(),
                meta.provenance.corpus_hash
            )));
        }
        if let Some(first) = metadata.first() {
            if first.plan != meta.plan {
                return Err(PipelineError::Integrity(format!(
                    "{} uses a different fold plan than fold 0",
                    path.display()
                )));
            }
        }
        models.push(SummaryModel::from_checkpoint(&ck, &corpus.vocab, graph)?);
        metadata.push(meta);
    }
    let plan = metadata[0].plan.clone();
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for (f, ids) in plan.folds.iter().enumerate() {
        for id in ids {
            if let Some(prev) = seen.insert(id, f) {
                return Err(PipelineError::Integrity(format!(
                    "entity {id} is in test folds {prev} and {f}"
                )));
            }
        }
    }
    for e in &corpus.dataset.entities {
        if !seen.contains_key(e.entity_id.as_str()) {
            return Err(PipelineError::Integrity(format!(
                "entity {} is in no test fold",
                e.entity_id
            )));
        }
    }
    if seen.len() != corpus.dataset.len() {
        return Err(PipelineError::Integrity(
            "fold plan names entities that are not in the corpus".into(),
        ));
    }
    Ok(LoadedFolds {
        plan,
        models,
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, SyntheticSpec};

    fn tiny_config() -> RunConfig {
        let mut c = RunConfig::default();
        c.pretrain.dim = 6;
        c.pretrain.epochs = 5;
        c.train.epochs = 2;
        c.train.layers = 2;
        c.train.word_dim = 6;
        c.train.hidden = 4;
        c.train.user_hidden = 4;
        c
    }

    fn corpus() -> Corpus {
        Corpus::new(generate(&SyntheticSpec {
            dbpedia: 6,
            linkedmdb: 4,
            ..SyntheticSpec::default()
        }))
    }

    #[test]
    fn end_to_end_is_deterministic_and_out_of_fold() {
        let c = corpus();
        let cfg = tiny_config();
        let a = run_pipeline::<f64>(&c, &cfg, &[Variant::Full, Variant::A3]).unwrap();
        let b = run_pipeline::<f64>(&c, &cfg, &[Variant::Full, Variant::A3]).unwrap();
        assert_eq!(a.report.to_json(), b.report.to_json());
        assert!(a.report.row("full").is_some() && a.report.row("a3").is_some());
        assert!(a.report.constants_only);
        let run = &a.report.runs[0];
        assert_eq!(run.scores.len(), 2 * c.dataset.len());
        let (_, cv) = &a.variants[0];
        for (round, fold) in cv.folds.iter().enumerate() {
            assert_eq!(fold.log.len(), 2);
            assert!(fold.log.iter().all(|r| r.fold == round));
        }
    }

    #[test]
    fn artifacts_round_trip_and_refuse_partial_runs() {
        let c = corpus();
        let cfg = tiny_config();
        let graph = pretrain::<f64>(&c, &cfg.pretrain_config()).unwrap();
        let cv = cross_validate(&c, &graph.embeddings, &cfg.train_config()).unwrap();
        let prov = Provenance::new(&cfg, &c);
        let dir = tempfile::tempdir().unwrap();
        save_embeddings(&dir.path().join(EMBEDDINGS_FILE), &graph.embeddings, &prov).unwrap();
        save_cross_validation(dir.path(), &cv, &prov).unwrap();
        let emb = load_embeddings::<f64>(&dir.path().join(EMBEDDINGS_FILE), &c).unwrap();
        assert_eq!(emb, graph.embeddings);
        let loaded = load_cross_validation(dir.path(), &c, &emb).unwrap();
        let direct = out_of_fold(&c, &cv.plan, &cv.models(), &[5, 10], 1, "full").unwrap();
        let reloaded = out_of_fold(&c, &loaded.plan, &loaded.model_refs(), &[5, 10], 1, "full").unwrap();
        assert_eq!(direct, reloaded);

        let other = Corpus::new(generate(&SyntheticSpec {
            dbpedia: 6,
            linkedmdb: 4,
            seed: 2,
            ..SyntheticSpec::default()
        }));
        assert!(load_embeddings::<f64>(&dir.path().join(EMBEDDINGS_FILE), &other).is_err());

        fs::remove_file(fold_checkpoint_path(dir.path(), 3)).unwrap();
        let err = load_cross_validation(dir.path(), &c, &emb).unwrap_err();
        assert!(err.to_string().contains("fold 3"), "{err}");
    }
}
