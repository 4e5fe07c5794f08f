//! Continued pretraining at toy scale: aspect-consistency discrimination,
//! image-text matching, and aspect-level sentiment classification over a
//! shared encoder.
//!
//! The pair classifiers score how well `[text-pool ‖ scene-pool]`,
//! projected into image space, reconstructs the image vector. The sentiment
//! classifier sees the encoder output pooled over each aspect span.

pub mod objectives;
pub mod pairs;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::ingest::AnnotatedSample;
use crate::model::encoder::{self, EncoderShape, Vocab, MASK};
use crate::model::train::split_indices;
use crate::model::{ConfigError, TrainConfig};
use crate::tensor::{Bound, ParamSet, Tape, Tensor, TensorError, Var};

pub use objectives::{aoe_loss, assc_loss, itm_loss, joint_pretrain_loss, PretrainLoss};
pub use pairs::{build_aoe_pairs, build_itm_pairs, dump_pairs, AoePair, ItmPair, Triple};

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("pretraining needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("sample {0} has no image feature")]
    MissingImage(String),
    #[error("sample {sample_id}: image feature of length {found}, expected {expected}")]
    ImageDim {
        sample_id: String,
        expected: usize,
        found: usize,
    },
    #[error("training diverged at epoch {0}")]
    Divergence(usize),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Encoder plus the three pretraining heads.
#[derive(Debug, Clone)]
pub struct PretrainModel {
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub image_dim: usize,
    pub params: ParamSet,
}

/// Per-sample instances: aspect-consistency pair, image-text pair, and the
/// sample itself for sentiment.
#[derive(Debug, Clone)]
pub struct PretrainItem {
    pub aoe: AoePair,
    pub itm: ItmPair,
    pub sample: AnnotatedSample,
}

impl PretrainModel {
    pub fn new(config: TrainConfig, vocab: Vocab, image_dim: usize) -> Result<Self, PretrainError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.dim;
        let mut params = ParamSet::new();
        encoder::init_encoder(
            &mut params,
            EncoderShape {
                vocab: vocab.len(),
                dim: d,
                mixing: config.mixing,
                radius: config.mix_radius,
            },
            &mut rng,
        );
        for head in ["aoe", "itm"] {
            params.insert_uniform(
                format!("{head}.proj"),
                &[2 * d, image_dim],
                1.0 / (2.0 * d as f64).sqrt(),
                &mut rng,
            );
            params.insert(format!("{head}.b"), Tensor::zeros(&[1]));
        }
        params.insert_uniform("assc.w", &[d, 3], 1.0 / (d as f64).sqrt(), &mut rng);
        params.insert("assc.b", Tensor::zeros(&[3]));
        Ok(Self {
            config,
            vocab,
            image_dim,
            params,
        })
    }

    fn shape(&self) -> EncoderShape {
        EncoderShape {
            vocab: self.vocab.len(),
            dim: self.config.dim,
            mixing: self.config.mixing,
            radius: self.config.mix_radius,
        }
    }

    /// Encoded tokens, or `None` for an empty sequence.
    fn encode_tokens<'t>(
        &self,
        bound: &Bound<'t>,
        tokens: &[String],
    ) -> Result<Option<Var<'t>>, TensorError> {
        if tokens.is_empty() {
            return Ok(None);
        }
        encoder::encode(bound, &self.vocab.ids(tokens), self.shape()).map(Some)
    }

    /// Context-free token embeddings; scene graphs are sets of relation
    /// words, not sentences.
    fn embed_tokens<'t>(
        &self,
        bound: &Bound<'t>,
        tokens: &[String],
    ) -> Result<Option<Var<'t>>, TensorError> {
        if tokens.is_empty() {
            return Ok(None);
        }
        bound
            .get("enc.emb")
            .select_rows(&self.vocab.ids(tokens))
            .map(Some)
    }

    /// Match probability from the `aoe` or `itm` head,
    /// `σ(b − ‖[t ‖ s]P − v‖²)`. `t` is the mean of the encoded text and
    /// `s` the sum of the scene-graph embeddings.
    pub fn pair_prob<'t>(
        &self,
        bound: &Bound<'t>,
        head: &str,
        t: &Triple,
    ) -> Result<Var<'t>, TensorError> {
        let tape = bound.get("enc.emb").tape();
        let d = self.config.dim;
        let zeros = || tape.leaf(Tensor::zeros(&[d]));
        let text = match self.encode_tokens(bound, &t.text)? {
            Some(h) => h.masked_mean_pool(&vec![true; t.text.len()])?,
            None => zeros(),
        };
        let scene_sum = match self.embed_tokens(bound, &t.scene)? {
            Some(h) => h
                .masked_mean_pool(&vec![true; t.scene.len()])?
                .scale(t.scene.len() as f64),
            None => zeros(),
        };
        let image = tape.leaf(Tensor::vector(t.image.clone()));
        let predicted = Var::concat(&[text, scene_sum])?
            .reshape(&[1, 2 * d])?
            .matmul(bound.get(&format!("{head}.proj")))?;
        let residual = predicted.sub(image.reshape(&[1, self.image_dim])?)?;
        let distance = residual.mul(residual)?.sum();
        Ok(bound
            .get(&format!("{head}.b"))
            .reshape(&[])?
            .sub(distance)?
            .sigmoid())
    }

    fn aspect_masks(sample: &AnnotatedSample) -> Vec<Vec<bool>> {
        let n = sample.tree.len();
        sample
            .aspects
            .iter()
            .map(|a| (1..=n).map(|i| a.start <= i && i <= a.end).collect())
            .collect()
    }

    /// Sentiment class probabilities per aspect, `[N, 3]`.
    pub fn assc_logits<'t>(
        &self,
        bound: &Bound<'t>,
        sample: &AnnotatedSample,
    ) -> Result<Var<'t>, TensorError> {
        let ids = self.vocab.ids(&sample.tree.forms());
        let h = encoder::encode(bound, &ids, self.shape())?;
        objectives::pool_aspects(h, &Self::aspect_masks(sample))?
            .matmul(bound.get("assc.w"))?
            .add_row(bound.get("assc.b"))
    }

    /// The joint loss for one item: mean BCE over the positive and negative
    /// of each pair, plus sentiment NLL over the sample's aspects.
    pub fn item_loss<'t>(
        &self,
        bound: &Bound<'t>,
        item: &PretrainItem,
        q: Option<Var<'t>>,
    ) -> Result<PretrainLoss<'t>, TensorError> {
        let aoe = aoe_loss(true, self.pair_prob(bound, "aoe", &item.aoe.positive)?)?
            .add(aoe_loss(
                false,
                self.pair_prob(bound, "aoe", &item.aoe.negative)?,
            )?)?
            .scale(0.5);
        let itm = itm_loss(true, self.pair_prob(bound, "itm", &item.itm.positive)?)?
            .add(itm_loss(
                false,
                self.pair_prob(bound, "itm", &item.itm.negative)?,
            )?)?
            .scale(0.5);
        let labels: Vec<usize> = item
            .sample
            .aspects
            .iter()
            .map(|a| a.polarity.index())
            .collect();
        let assc = crate::model::heads::nll_mean(
            self.assc_logits(bound, &item.sample)?.log_softmax_rows(),
            &labels,
        )?;
        joint_pretrain_loss(q, aoe, itm, assc)
    }
}

/// Pairs every aspect-bearing sample with its two pair instances.
pub fn build_items(
    samples: &[AnnotatedSample],
    seed: u64,
) -> Result<Vec<PretrainItem>, PretrainError> {
    let with_aspects: Vec<AnnotatedSample> = samples
        .iter()
        .filter(|s| !s.aspects.is_empty())
        .cloned()
        .collect();
    if with_aspects.len() < 2 {
        return Err(PretrainError::TooFewSamples(with_aspects.len()));
    }
    let aoe = build_aoe_pairs(&with_aspects)?;
    let itm = build_itm_pairs(&with_aspects, seed)?;
    Ok(aoe
        .into_iter()
        .zip(itm)
        .zip(with_aspects)
        .map(|((aoe, itm), sample)| PretrainItem { aoe, itm, sample })
        .collect())
}

/// Held-out accuracies and the mean loss decomposition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PretrainReport {
    pub train_items: usize,
    pub heldout_items: usize,
    pub aoe_acc: f64,
    pub itm_acc: f64,
    pub assc_acc: f64,
    pub l_q: f64,
    pub l_aoe: f64,
    pub l_itm: f64,
    pub l_assc: f64,
    /// Sum of the four components above.
    pub l_p: f64,
}

fn accuracy(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

/// Evaluates held-out accuracies and mean losses on `items`.
pub fn evaluate(
    model: &PretrainModel,
    items: &[PretrainItem],
) -> Result<PretrainReport, PretrainError> {
    let (mut aoe_ok, mut itm_ok, mut assc_ok, mut assc_n) = (0, 0, 0, 0);
    let (mut q, mut aoe, mut itm, mut assc) = (0.0, 0.0, 0.0, 0.0);
    for item in items {
        let tape = Tape::new();
        let bound = model.params.bind(&tape);
        for (head, pos, neg) in [
            ("aoe", &item.aoe.positive, &item.aoe.negative),
            ("itm", &item.itm.positive, &item.itm.negative),
        ] {
            let ok = usize::from(model.pair_prob(&bound, head, pos)?.item() > 0.5)
                + usize::from(model.pair_prob(&bound, head, neg)?.item() <= 0.5);
            if head == "aoe" {
                aoe_ok += ok;
            } else {
                itm_ok += ok;
            }
        }
        let logits = model.assc_logits(&bound, &item.sample)?.value();
        for (r, a) in item.sample.aspects.iter().enumerate() {
            let row = logits.row(r);
            let best = (1..3).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            assc_ok += usize::from(best == a.polarity.index());
            assc_n += 1;
        }
        let l = model.item_loss(&bound, item, None)?;
        q += l.q.item();
        aoe += l.aoe.item();
        itm += l.itm.item();
        assc += l.assc.item();
    }
    let n = items.len().max(1) as f64;
    let (q, aoe, itm, assc) = (q / n, aoe / n, itm / n, assc / n);
    Ok(PretrainReport {
        train_items: 0,
        heldout_items: items.len(),
        aoe_acc: accuracy(aoe_ok, 2 * items.len()),
        itm_acc: accuracy(itm_ok, 2 * items.len()),
        assc_acc: accuracy(assc_ok, assc_n),
        l_q: q,
        l_aoe: aoe,
        l_itm: itm,
        l_assc: assc,
        l_p: q + aoe + itm + assc,
    })
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub model: PretrainModel,
    pub report: PretrainReport,
    pub items: Vec<PretrainItem>,
}

/// Trains all three heads and the encoder with plain SGD on the training
/// share of items, then reports on the held-out share.
pub fn pretrain(
    samples: &[AnnotatedSample],
    config: &TrainConfig,
) -> Result<PretrainOutcome, PretrainError> {
    config.validate()?;
    let items = build_items(samples, config.seed)?;
    let image_dim = items[0].itm.positive.image.len();
    let vocab = Vocab::build(
        items
            .iter()
            .flat_map(|it| it.aoe.positive.text.iter().chain(&it.aoe.positive.scene))
            .map(String::as_str)
            .chain([MASK]),
    );
    let mut model = PretrainModel::new(config.clone(), vocab, image_dim)?;
    let dev_fraction = if config.dev_fraction > 0.0 {
        config.dev_fraction
    } else {
        0.2
    };
    let (train_idx, dev_idx) = split_indices(items.len(), dev_fraction, config.seed);
    let mut order = train_idx.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let freeze = config.freeze_encoder;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let tape = Tape::new();
            let bound = model.params.bind(&tape);
            let mut total: Option<Var<'_>> = None;
            for &i in batch {
                let l = model.item_loss(&bound, &items[i], None)?.total;
                total = Some(match total {
                    Some(t) => t.add(l)?,
                    None => l,
                });
            }
            let loss = total
                .expect("non-empty batch")
                .scale(1.0 / batch.len() as f64);
            if !loss.item().is_finite() {
                return Err(PretrainError::Divergence(epoch));
            }
            tape.backward(loss)?;
            model
                .params
                .sgd_step(&bound, config.lr, |n| !(freeze && n.starts_with("enc.")));
        }
    }
    let heldout: Vec<PretrainItem> = dev_idx.iter().map(|&i| items[i].clone()).collect();
    let mut report = evaluate(&model, &heldout)?;
    report.train_items = train_idx.len();
    Ok(PretrainOutcome {
        model,
        report,
        items,
    })
}
