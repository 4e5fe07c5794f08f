//! Dual-graph aspect model: encoder, semantic and syntactic graph networks,
//! gated fusion, scope-filtered pooling, and an affine head.
//!
//! One [`Model`] serves one task. Extraction scores each candidate noun or
//! pronoun with a single logit; sentiment classification scores each aspect
//! span with three logits.

pub mod config;
pub mod encoder;
pub mod heads;
pub mod jmasa;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contrast::{asi_loss, ContrastError};
use crate::graphs::{bind_gnn, gnn_forward, init_gnn, layer_names, sem_adjacency, syn_adjacency};
use crate::ingest::{candidate_targets, AnnotatedSample, DepTree};
use crate::scope::{compute_scope, Scope, ScopeError};
use crate::tensor::{Bound, NamedTensor, ParamSet, Tape, Tensor, TensorError, Var};

pub use config::{ConfigError, TrainConfig};
pub use encoder::{EncoderShape, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Mate,
    Masc,
}

impl Task {
    pub fn classes(self) -> usize {
        match self {
            Task::Mate => 1,
            Task::Masc => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Contrast(#[from] ContrastError),
    #[error(transparent)]
    Scope(#[from] ScopeError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("model file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Trained or freshly initialized parameters for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: TrainConfig,
    pub task: Task,
    pub vocab: Vocab,
    pub params: ParamSet,
}

/// On-disk form: `{config, task, vocab, tensors: [{name, shape, data}]}`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    config: TrainConfig,
    task: Task,
    vocab: Vocab,
    tensors: Vec<NamedTensor>,
}

/// Intermediate values of one sentence's forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Encoded<'t> {
    pub h: Var<'t>,
    pub h_syn: Var<'t>,
    pub h_sem: Var<'t>,
    pub fused: Var<'t>,
}

/// Loss pieces for one sample.
#[derive(Debug, Clone, Copy)]
pub struct SampleLoss<'t> {
    pub task: Var<'t>,
    pub asi: Var<'t>,
    pub total: Var<'t>,
}

impl Model {
    pub fn new(task: Task, config: TrainConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let d = config.dim;
        encoder::init_encoder(
            &mut params,
            Self::encoder_shape_for(&config, &vocab),
            &mut rng,
        );
        let bound = 1.0 / (d as f64).sqrt();
        params.insert_uniform("sem.wq", &[d, d], bound, &mut rng);
        params.insert_uniform("sem.wk", &[d, d], bound, &mut rng);
        init_gnn(&mut params, "sem", d, config.layers, &mut rng);
        init_gnn(&mut params, "syn", d, config.layers, &mut rng);
        params.insert_uniform(
            "gate.w",
            &[2 * d, d],
            1.0 / ((2 * d) as f64).sqrt(),
            &mut rng,
        );
        params.insert("gate.b", Tensor::zeros(&[d]));
        let c = task.classes();
        params.insert_uniform(
            "head.w",
            &[3 * d, c],
            1.0 / ((3 * d) as f64).sqrt(),
            &mut rng,
        );
        params.insert("head.b", Tensor::zeros(&[c]));
        Ok(Self {
            config,
            task,
            vocab,
            params,
        })
    }

    /// Vocabulary over every token form in `samples`.
    pub fn vocab_for(samples: &[AnnotatedSample]) -> Vocab {
        Vocab::build(
            samples
                .iter()
                .flat_map(|s| s.tree.tokens().iter().map(|t| t.form.as_str())),
        )
    }

    fn encoder_shape_for(config: &TrainConfig, vocab: &Vocab) -> EncoderShape {
        EncoderShape {
            vocab: vocab.len(),
            dim: config.dim,
            mixing: config.mixing,
            radius: config.mix_radius,
        }
    }

    pub fn encoder_shape(&self) -> EncoderShape {
        Self::encoder_shape_for(&self.config, &self.vocab)
    }

    /// Every parameter name with the shape this configuration requires.
    pub fn expected_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.config.dim;
        let mut v = encoder::encoder_shapes(self.encoder_shape());
        v.push(("sem.wq".into(), vec![d, d]));
        v.push(("sem.wk".into(), vec![d, d]));
        for prefix in ["sem", "syn"] {
            for (w, b) in layer_names(prefix, self.config.layers) {
                v.push((w, vec![d, d]));
                v.push((b, vec![d]));
            }
        }
        v.push(("gate.w".into(), vec![2 * d, d]));
        v.push(("gate.b".into(), vec![d]));
        v.push(("head.w".into(), vec![3 * d, self.task.classes()]));
        v.push(("head.b".into(), vec![self.task.classes()]));
        v
    }

    /// Checks that the parameters are exactly those the config implies.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let expected = self.expected_shapes();
        if expected.len() != self.params.len() {
            return Err(ModelError::Format(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.params.len()
            )));
        }
        for (name, shape) in expected {
            match self.params.get(&name) {
                None => return Err(ModelError::Format(format!("missing tensor {name}"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(ModelError::Format(format!(
                        "tensor {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            config: self.config.clone(),
            task: self.task,
            vocab: self.vocab.clone(),
            tensors: self.params.to_named(),
        };
        serde_json::to_string(&file).expect("plain data") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| ModelError::Format(e.to_string()))?;
        let model = Self {
            config: file.config,
            task: file.task,
            vocab: file.vocab,
            params: ParamSet::from_named(file.tensors)?,
        };
        model.validate()?;
        Ok(model)
    }

    /// Scopes used for graph losses and pooling: the true scopes, or the
    /// whole sentence when scope is ablated.
    pub fn scopes_for(&self, tree: &DepTree, spans: &[(usize, usize)]) -> Result<Vec<Scope>> {
        spans
            .iter()
            .map(|&(s, e)| {
                let mut sc = compute_scope(tree, s, e)?;
                if self.config.ablate_scope {
                    sc.start = 1;
                    sc.end = tree.len();
                }
                Ok(sc)
            })
            .collect()
    }

    /// Encoder, both graph networks, and fusion for one sentence.
    pub fn encode<'t>(&self, bound: &Bound<'t>, tree: &DepTree) -> Result<Encoded<'t>> {
        let ids = self.vocab.ids(&tree.forms());
        let h = encoder::encode(bound, &ids, self.encoder_shape())?;
        let tape = h.tape();
        let a_syn = tape.leaf(syn_adjacency(tree, self.config.syn_row_normalize));
        let a_sem = sem_adjacency(h, bound.get("sem.wq"), bound.get("sem.wk"))?;
        let h_syn = gnn_forward(a_syn, h, &bind_gnn(bound, "syn", self.config.layers))?;
        let h_sem = gnn_forward(a_sem, h, &bind_gnn(bound, "sem", self.config.layers))?;
        let fused = heads::gated_fuse(h_sem, h_syn, bound.get("gate.w"), bound.get("gate.b"))?;
        Ok(Encoded {
            h,
            h_syn,
            h_sem,
            fused,
        })
    }

    /// Logits for each scope: `[N]` for extraction, `[N, 3]` for sentiment.
    pub fn logits<'t>(
        &self,
        bound: &Bound<'t>,
        enc: &Encoded<'t>,
        scopes: &[Scope],
        len: usize,
    ) -> Result<Var<'t>> {
        let c = self.task.classes();
        let mut rows = Vec::with_capacity(scopes.len());
        for sc in scopes {
            let feat = heads::target_features(enc.fused, enc.h_sem, enc.h, &sc.mask(len))?;
            let d3 = feat.numel();
            rows.push(
                feat.reshape(&[1, d3])?
                    .matmul(bound.get("head.w"))?
                    .add_row(bound.get("head.b"))?,
            );
        }
        let flat = Var::concat(&rows)?;
        Ok(match self.task {
            Task::Mate => flat.reshape(&[scopes.len()])?,
            Task::Masc => flat.reshape(&[scopes.len(), c])?,
        })
    }

    /// Target spans and labels for this task, or `None` when the sample has
    /// nothing to score.
    pub fn targets(&self, sample: &AnnotatedSample) -> Option<(Vec<(usize, usize)>, Labels)> {
        match self.task {
            Task::Mate => {
                let cands = candidate_targets(&sample.tree);
                if cands.is_empty() {
                    return None;
                }
                let labels = cands
                    .iter()
                    .map(|&i| {
                        let inside = sample.aspects.iter().any(|a| a.start <= i && i <= a.end);
                        if inside {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect();
                Some((
                    cands.iter().map(|&i| (i, i)).collect(),
                    Labels::Binary(labels),
                ))
            }
            Task::Masc => {
                if sample.aspects.is_empty() {
                    return None;
                }
                Some((
                    sample.spans(),
                    Labels::Classes(sample.aspects.iter().map(|a| a.polarity.index()).collect()),
                ))
            }
        }
    }

    /// Task loss, contrastive loss and `task + λ·asi` for one sample, or
    /// `None` when the sample has no targets.
    pub fn sample_loss<'t>(
        &self,
        bound: &Bound<'t>,
        sample: &AnnotatedSample,
        lambda: f64,
    ) -> Result<Option<SampleLoss<'t>>> {
        let Some((spans, labels)) = self.targets(sample) else {
            log::debug!("sample {} has no targets; skipped", sample.sample_id);
            return Ok(None);
        };
        let scopes = self.scopes_for(&sample.tree, &spans)?;
        let enc = self.encode(bound, &sample.tree)?;
        let logits = self.logits(bound, &enc, &scopes, sample.tree.len())?;
        let task = match &labels {
            Labels::Binary(y) => heads::bce_mean(logits.sigmoid(), y)?,
            Labels::Classes(y) => heads::nll_mean(logits.log_softmax_rows(), y)?,
        };
        let asi = asi_loss(enc.h_syn, enc.h_sem, &scopes, self.config.tau)?.total;
        let total = heads::with_asi(task, asi, lambda)?;
        Ok(Some(SampleLoss { task, asi, total }))
    }

    /// Probabilities per target span: `[N]` acceptance probabilities or
    /// `[N, 3]` class distributions.
    pub fn predict_proba(&self, tree: &DepTree, spans: &[(usize, usize)]) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape);
        let scopes = self.scopes_for(tree, spans)?;
        let enc = self.encode(&bound, tree)?;
        let logits = self.logits(&bound, &enc, &scopes, tree.len())?;
        Ok(match self.task {
            Task::Mate => logits.sigmoid().value(),
            Task::Masc => logits.softmax_rows().value(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Binary(Vec<f64>),
    Classes(Vec<usize>),
}
