//! The full summarizer: representation, extractor and simulator wired
//! according to a [`Variant`].

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extractor::{permute, EncodedEntity, Extractor, PermMode, Stream};
use crate::ingest::Vocabulary;
use crate::lstm::BiLstm;
use crate::numeric::{
    glorot_uniform, softmax, uniform, Checkpoint, CheckpointError, Gradients, Graph, NumericError, ParamStore, Var,
};
use crate::simulator::{Simulator, SimulatorVars, UserPhase};
use crate::transe::GraphEmbeddings;
use crate::Scalar;

pub const CHECKPOINT_KIND: &str = "summary-model";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("entity {entity} has {n} triples, more than the configured maximum {max}")]
    TooManyTriples { entity: String, n: usize, max: usize },
    #[error("entity {0} has no triples")]
    EmptyEntity(String),
    #[error("target has {target} entries for {n} triples")]
    TargetLength { target: usize, n: usize },
}

/// The full model and its ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Full,
    /// No extractor BiLSTM.
    A1,
    /// No user-phase BiLSTM; all users weighted equally.
    A2,
    /// A1 and A2 together.
    A3,
    /// User-phase BiLSTM replaced by a tanh layer.
    A4,
    /// A single attention layer.
    A5,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::A1,
        Variant::A2,
        Variant::A3,
        Variant::A4,
        Variant::A5,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::A1 => "a1",
            Variant::A2 => "a2",
            Variant::A3 => "a3",
            Variant::A4 => "a4",
            Variant::A5 => "a5",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ModelError::Config(format!("unknown variant {s:?}; expected one of full, a1, a2, a3, a4, a5")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UserPhaseKind {
    BiLstm,
    Fcn,
    Equal,
}

/// Structural choices implied by a variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Wiring {
    pub extractor_lstm: bool,
    pub users: UserPhaseKind,
    pub layers: usize,
}

pub fn apply_variant(variant: Variant, layers: usize) -> Wiring {
    let (extractor_lstm, users) = match variant {
        Variant::Full | Variant::A5 => (true, UserPhaseKind::BiLstm),
        Variant::A1 => (false, UserPhaseKind::BiLstm),
        Variant::A2 => (true, UserPhaseKind::Equal),
        Variant::A3 => (false, UserPhaseKind::Equal),
        Variant::A4 => (true, UserPhaseKind::Fcn),
    };
    Wiring {
        extractor_lstm,
        users,
        layers: if variant == Variant::A5 { 1 } else { layers },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Attention layers (aspects / simulated users).
    pub layers: usize,
    pub word_dim: usize,
    pub graph_dim: usize,
    /// Extractor hidden size per direction.
    pub hidden: usize,
    /// User-phase hidden size per direction.
    pub user_hidden: usize,
    /// Longest description the user phase accepts.
    pub max_triples: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            layers: 6,
            word_dim: 100,
            graph_dim: 100,
            hidden: 100,
            user_hidden: 100,
            max_triples: 1,
        }
    }
}

impl ModelConfig {
    pub fn wiring(&self) -> Wiring {
        apply_variant(self.variant, self.layers)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("layers", self.layers),
            ("word_dim", self.word_dim),
            ("graph_dim", self.graph_dim),
            ("hidden", self.hidden),
            ("user_hidden", self.user_hidden),
            ("max_triples", self.max_triples),
        ] {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    fn input_dim(&self) -> usize {
        2 * (self.word_dim + self.graph_dim)
    }
}

/// Everything one forward pass exposes, as plain numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub entity_id: String,
    /// Per-layer triple scores, `m × n`.
    pub s: Vec<Vec<f64>>,
    /// Simulated user preferences, `m × n` (equal to `s`).
    pub u: Vec<Vec<f64>>,
    /// Encoded users, `m × 2H*`; absent when the user phase is skipped.
    pub u_star: Option<Vec<Vec<f64>>>,
    pub c_star: Option<Vec<f64>>,
    /// Preference weights, length `m`.
    pub a_star: Vec<f64>,
    /// Final attention, length `n`.
    pub a: Vec<f64>,
}

fn rows<T: Scalar>(g: &Graph<'_, T>, v: Var) -> Vec<Vec<f64>> {
    g.value(v)
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|x| x.as_f64()).collect())
        .collect()
}

fn flat<T: Scalar>(g: &Graph<'_, T>, v: Var) -> Vec<f64> {
    g.value(v).iter().map(|x| x.as_f64()).collect()
}

#[derive(Clone, Debug)]
pub struct SummaryModel<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub extractor: Extractor,
    pub simulator: Simulator,
}

impl<T: Scalar> SummaryModel<T> {
    /// A freshly initialized model. The graph tables are copied in frozen;
    /// everything else is drawn from `seed`.
    pub fn new(
        config: &ModelConfig,
        vocab: &Vocabulary,
        graph: &GraphEmbeddings<T>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        if graph.dim() != config.graph_dim {
            return Err(ModelError::Config(format!(
                "graph embeddings have dimension {}, config says {}",
                graph.dim(),
                config.graph_dim
            )));
        }
        if graph.entity.nrows() != vocab.entities().len() || graph.relation.nrows() != vocab.relations().len() {
            return Err(ModelError::Config("graph embeddings do not match the vocabulary".into()));
        }
        let wiring = config.wiring();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let word = store.insert(
            "embed.word",
            glorot_uniform(vocab.word_table_rows(), config.word_dim, &mut rng),
            true,
        )?;
        let graph_entity = store.insert("graph.entity", graph.entity.clone(), false)?;
        let graph_relation = store.insert("graph.relation", graph.relation.clone(), false)?;
        let lstm = if wiring.extractor_lstm {
            Some(BiLstm::new(&mut store, "extractor", config.input_dim(), config.hidden, &mut rng)?)
        } else {
            None
        };
        let feat = if wiring.extractor_lstm {
            2 * config.hidden
        } else {
            config.input_dim()
        };
        let mut aspects = Vec::with_capacity(wiring.layers);
        for j in 0..wiring.layers {
            aspects.push(store.insert(
                &format!("simulator.aspect.{j}"),
                glorot_uniform(feat, feat, &mut rng),
                true,
            )?);
        }
        let user_feat = 2 * config.user_hidden;
        let users = match wiring.users {
            UserPhaseKind::BiLstm => {
                let lstm = BiLstm::new(
                    &mut store,
                    "simulator.users",
                    config.max_triples,
                    config.user_hidden,
                    &mut rng,
                )?;
                let w_star = store.insert(
                    "simulator.user_score",
                    glorot_uniform(user_feat, user_feat, &mut rng),
                    true,
                )?;
                UserPhase::BiLstm { lstm, w_star }
            }
            UserPhaseKind::Fcn => {
                let w = store.insert(
                    "simulator.fcn.w",
                    glorot_uniform(config.max_triples, user_feat, &mut rng),
                    true,
                )?;
                let b = store.insert("simulator.fcn.b", Array2::zeros((1, user_feat)), true)?;
                let w_star = store.insert(
                    "simulator.user_score",
                    glorot_uniform(user_feat, user_feat, &mut rng),
                    true,
                )?;
                UserPhase::Fcn { w, b, w_star }
            }
            UserPhaseKind::Equal => UserPhase::Equal,
        };
        Ok(Self {
            config: config.clone(),
            store,
            extractor: Extractor {
                word,
                graph_entity,
                graph_relation,
                lstm,
            },
            simulator: Simulator { aspects, users },
        })
    }

    fn check(&self, enc: &EncodedEntity) -> Result<(), ModelError> {
        if enc.is_empty() {
            return Err(ModelError::EmptyEntity(enc.entity_id.clone()));
        }
        if enc.len() > self.config.max_triples && self.config.wiring().users != UserPhaseKind::Equal {
            return Err(ModelError::TooManyTriples {
                entity: enc.entity_id.clone(),
                n: enc.len(),
                max: self.config.max_triples,
            });
        }
        Ok(())
    }

    /// Records one forward pass on `g`.
    pub fn forward(
        &self,
        g: &mut Graph<'_, T>,
        enc: &EncodedEntity,
        mode: &mut PermMode<'_>,
    ) -> Result<SimulatorVars, ModelError> {
        self.check(enc)?;
        let order = permute(enc.len(), mode, Stream::Triples);
        let (h, c) = self.extractor.extract(g, enc, &order)?;
        let user_order = if self.simulator.reads_user_sequence() {
            permute(self.simulator.layers(), mode, Stream::Users)
        } else {
            Vec::new()
        };
        Ok(self.simulator.run(g, h, c, &user_order)?)
    }

    pub fn trace(&self, enc: &EncodedEntity, mode: &mut PermMode<'_>) -> Result<AttentionTrace, ModelError> {
        let mut g = Graph::new(&self.store);
        let v = self.forward(&mut g, enc, mode)?;
        let z: Vec<T> = g.value(v.z).iter().copied().collect();
        Ok(AttentionTrace {
            entity_id: enc.entity_id.clone(),
            s: rows(&g, v.s),
            u: rows(&g, v.u),
            u_star: v.u_star.map(|x| rows(&g, x)),
            c_star: v.c_star.map(|x| flat(&g, x)),
            a_star: flat(&g, v.a_star),
            a: softmax(&z).into_iter().map(|x| x.as_f64()).collect(),
        })
    }

    /// Final attention over the triples.
    pub fn attention(&self, enc: &EncodedEntity, mode: &mut PermMode<'_>) -> Result<Vec<f64>, ModelError> {
        let mut g = Graph::new(&self.store);
        let v = self.forward(&mut g, enc, mode)?;
        let z: Vec<T> = g.value(v.z).iter().copied().collect();
        Ok(softmax(&z).into_iter().map(|x| x.as_f64()).collect())
    }

    /// Records the cross-entropy between the model's attention and `target`.
    pub fn loss_node(
        &self,
        g: &mut Graph<'_, T>,
        enc: &EncodedEntity,
        target: &[T],
        mode: &mut PermMode<'_>,
    ) -> Result<Var, ModelError> {
        if target.len() != enc.len() {
            return Err(ModelError::TargetLength {
                target: target.len(),
                n: enc.len(),
            });
        }
        let v = self.forward(g, enc, mode)?;
        Ok(g.cross_entropy(v.z, target)?)
    }

    pub fn loss_and_gradients(
        &self,
        enc: &EncodedEntity,
        target: &[T],
        mode: &mut PermMode<'_>,
    ) -> Result<(T, Gradients<T>), ModelError> {
        let mut g = Graph::new(&self.store);
        let l = self.loss_node(&mut g, enc, target, mode)?;
        let grads = g.backward(l)?;
        Ok((g.scalar(l)?, grads))
    }

    /// Trainable parameters only; the graph tables live in their own file.
    pub fn to_checkpoint(&self, vocab_hash: &str, metadata: serde_json::Value) -> Checkpoint {
        let mut ck = Checkpoint::new(
            CHECKPOINT_KIND,
            serde_json::to_value(&self.config).expect("config serializes"),
            vocab_hash,
        );
        ck.header.metadata = metadata;
        ck.push_params(&self.store, true);
        ck
    }

    pub fn from_checkpoint(
        ck: &Checkpoint,
        vocab: &Vocabulary,
        graph: &GraphEmbeddings<T>,
    ) -> Result<Self, ModelError> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        ck.expect_vocab(&vocab.hash())?;
        let config: ModelConfig = serde_json::from_value(ck.header.model_config.clone())
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let mut model = Self::new(&config, vocab, graph, 0)?;
        for (_, p) in model.store.iter().filter(|(_, p)| p.trainable) {
            ck.tensor(&p.name)?;
        }
        ck.restore_into(&mut model.store)?;
        Ok(model)
    }

    /// Replaces every parameter, graph tables included, with seeded draws
    /// from `U(−limit, limit)`. At the regular initialization the user-phase
    /// gradients are far below what finite differences can resolve, so
    /// gradient checks run from such a point instead.
    pub fn redraw_uniform(&mut self, limit: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<_> = self.store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let (r, c) = self.store.value(id).dim();
            self.store
                .set_value(id, uniform(r, c, limit, &mut rng))
                .expect("same shape");
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count(true)
    }
}
