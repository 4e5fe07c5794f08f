//! Plain SGD training with a held-out split and per-epoch metrics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use super::{Model, ModelError, Task, TrainConfig};
use crate::harness::metrics::{
    masc_metrics, span_prf, ClassMetrics, MatchMode, Prf, SpanPrediction,
};
use crate::ingest::{candidate_targets, AnnotatedSample, Polarity};
use crate::tensor::Tape;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("no sample in the corpus has targets for this task")]
    NoTargets,
    #[error("training diverged at epoch {epoch} (sample {sample_id}): non-finite {what}")]
    Divergence {
        epoch: usize,
        sample_id: String,
        what: &'static str,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum EvalMetrics {
    Spans(Prf),
    Classes(ClassMetrics),
}

impl EvalMetrics {
    /// F1 for extraction, accuracy for sentiment.
    pub fn headline(&self) -> f64 {
        match self {
            EvalMetrics::Spans(p) => p.f1,
            EvalMetrics::Classes(c) => c.acc,
        }
    }
}

/// One line of the metric trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub task: Task,
    pub train_loss: f64,
    pub task_loss: f64,
    pub asi_loss: f64,
    pub skipped: usize,
    pub eval_split: &'static str,
    #[serde(flatten)]
    pub eval: EvalMetrics,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub trace: Vec<EpochMetrics>,
    pub train_ids: Vec<String>,
    pub dev_ids: Vec<String>,
}

/// Deterministic train/dev split; the dev share is rounded down.
pub fn split_indices(n: usize, dev_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0d5e));
    let dev = (n as f64 * dev_fraction).floor() as usize;
    let dev_idx: Vec<usize> = idx[..dev].to_vec();
    let mut train_idx: Vec<usize> = idx[dev..].to_vec();
    train_idx.sort_unstable();
    let mut dev_sorted = dev_idx;
    dev_sorted.sort_unstable();
    (train_idx, dev_sorted)
}

/// Trains a fresh model. Encoder parameters stay fixed under
/// `freeze_encoder`.
pub fn train(
    task: Task,
    samples: &[AnnotatedSample],
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let vocab = Model::vocab_for(samples);
    let mut model = Model::new(task, config.clone(), vocab)?;
    if samples.iter().all(|s| model.targets(s).is_none()) {
        return Err(TrainError::NoTargets);
    }
    let (train_idx, dev_idx) = split_indices(samples.len(), config.dev_fraction, config.seed);
    let (eval_idx, eval_split) = if dev_idx.is_empty() {
        (train_idx.clone(), "train")
    } else {
        (dev_idx.clone(), "dev")
    };
    let eval_set: Vec<AnnotatedSample> = eval_idx.iter().map(|&i| samples[i].clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let freeze = config.freeze_encoder;
    let trainable = |name: &str| !(freeze && name.starts_with("enc."));
    let mut order = train_idx.clone();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut sum_total, mut sum_task, mut sum_asi) = (0.0, 0.0, 0.0);
        let (mut counted, mut skipped) = (0usize, 0usize);
        for batch in order.chunks(config.batch_size) {
            let tape = Tape::new();
            let bound = model.params.bind(&tape);
            let mut losses = Vec::new();
            for &i in batch {
                match model.sample_loss(&bound, &samples[i], config.lambda)? {
                    Some(l) => {
                        if !l.total.item().is_finite() {
                            return Err(TrainError::Divergence {
                                epoch,
                                sample_id: samples[i].sample_id.clone(),
                                what: "loss",
                            });
                        }
                        sum_total += l.total.item();
                        sum_task += l.task.item();
                        sum_asi += l.asi.item();
                        losses.push(l.total);
                    }
                    None => skipped += 1,
                }
            }
            if losses.is_empty() {
                continue;
            }
            counted += losses.len();
            let mut loss = losses[0];
            for l in &losses[1..] {
                loss = loss.add(*l).map_err(ModelError::from)?;
            }
            let loss = loss.scale(1.0 / losses.len() as f64);
            tape.backward(loss).map_err(ModelError::from)?;
            model.params.sgd_step(&bound, config.lr, trainable);
            if model.params.iter().any(|(_, t)| !t.is_finite()) {
                return Err(TrainError::Divergence {
                    epoch,
                    sample_id: samples[batch[0]].sample_id.clone(),
                    what: "parameter",
                });
            }
        }
        let denom = counted.max(1) as f64;
        let eval = evaluate(&model, &eval_set)?;
        let m = EpochMetrics {
            epoch,
            task,
            train_loss: sum_total / denom,
            task_loss: sum_task / denom,
            asi_loss: sum_asi / denom,
            skipped,
            eval_split,
            eval,
        };
        log::info!("{}", serde_json::to_string(&m).expect("plain data"));
        trace.push(m);
    }
    let ids = |v: &[usize]| v.iter().map(|&i| samples[i].sample_id.clone()).collect();
    Ok(TrainOutcome {
        model,
        trace,
        train_ids: ids(&train_idx),
        dev_ids: ids(&dev_idx),
    })
}

/// Accepted candidates (probability above 0.5), with runs of adjacent
/// accepted tokens merged into one span.
pub fn predict_spans(
    model: &Model,
    sample: &AnnotatedSample,
) -> Result<Vec<(usize, usize)>, ModelError> {
    let cands = candidate_targets(&sample.tree);
    if cands.is_empty() {
        return Ok(Vec::new());
    }
    let spans: Vec<(usize, usize)> = cands.iter().map(|&i| (i, i)).collect();
    let probs = model.predict_proba(&sample.tree, &spans)?;
    let accepted: Vec<usize> = cands
        .iter()
        .zip(probs.data())
        .filter(|(_, &p)| p > 0.5)
        .map(|(&i, _)| i)
        .collect();
    Ok(merge_adjacent(&accepted))
}

/// Groups ascending token indices into maximal runs of consecutive values.
pub fn merge_adjacent(tokens: &[usize]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for &i in tokens {
        match out.last_mut() {
            Some((_, end)) if *end + 1 == i => *end = i,
            _ => out.push((i, i)),
        }
    }
    out
}

/// Most probable polarity for each span; ties go to the lower class index.
pub fn predict_polarities(
    model: &Model,
    sample: &AnnotatedSample,
    spans: &[(usize, usize)],
) -> Result<Vec<Polarity>, ModelError> {
    if spans.is_empty() {
        return Ok(Vec::new());
    }
    let probs = model.predict_proba(&sample.tree, spans)?;
    Ok((0..spans.len())
        .map(|r| {
            let row = probs.row(r);
            let best = (1..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            Polarity::from_index(best).expect("three classes")
        })
        .collect())
}

pub fn gold_spans(samples: &[AnnotatedSample]) -> Vec<SpanPrediction> {
    samples
        .iter()
        .map(|s| SpanPrediction::spans_only(s.sample_id.clone(), s.spans()))
        .collect()
}

pub fn gold_pairs(samples: &[AnnotatedSample]) -> Vec<SpanPrediction> {
    samples
        .iter()
        .map(|s| {
            SpanPrediction::with_polarities(
                s.sample_id.clone(),
                s.aspects
                    .iter()
                    .map(|a| ((a.start, a.end), a.polarity))
                    .collect(),
            )
        })
        .collect()
}

/// Span P/R/F1 for extraction, or accuracy/macro-F1 on gold spans for
/// sentiment.
pub fn evaluate(model: &Model, samples: &[AnnotatedSample]) -> Result<EvalMetrics, ModelError> {
    match model.task {
        Task::Mate => {
            let pred = samples
                .iter()
                .map(|s| {
                    Ok(SpanPrediction::spans_only(
                        s.sample_id.clone(),
                        predict_spans(model, s)?,
                    ))
                })
                .collect::<Result<Vec<_>, ModelError>>()?;
            let prf = span_prf(&gold_spans(samples), &pred, MatchMode::Span)
                .expect("ids come from the same samples");
            Ok(EvalMetrics::Spans(prf))
        }
        Task::Masc => {
            let mut gold = Vec::new();
            let mut pred = Vec::new();
            for s in samples {
                gold.extend(s.aspects.iter().map(|a| a.polarity));
                pred.extend(predict_polarities(model, s, &s.spans())?);
            }
            Ok(EvalMetrics::Classes(
                masc_metrics(&gold, &pred).expect("one prediction per aspect"),
            ))
        }
    }
}
