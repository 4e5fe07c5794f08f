//! Exact-span precision/recall/F1 and polarity accuracy/macro-F1.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Polarity;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("prediction for unknown sample {0:?}")]
    UnknownSample(String),
    #[error("sample {0:?} listed twice")]
    DuplicateSample(String),
    #[error("sample {0:?}: {1} spans but {2} polarities")]
    PolarityCount(String, usize, usize),
    #[error("{gold} gold labels but {predicted} predictions")]
    LengthMismatch { gold: usize, predicted: usize },
}

/// Spans (1-based, inclusive) for one sample, optionally with polarities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub sample_id: String,
    pub spans: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polarities: Option<Vec<Polarity>>,
}

impl SpanPrediction {
    pub fn spans_only(sample_id: impl Into<String>, spans: Vec<(usize, usize)>) -> Self {
        Self {
            sample_id: sample_id.into(),
            spans,
            polarities: None,
        }
    }

    pub fn with_polarities(
        sample_id: impl Into<String>,
        pairs: Vec<((usize, usize), Polarity)>,
    ) -> Self {
        let (spans, pols) = pairs.into_iter().unzip();
        Self {
            sample_id: sample_id.into(),
            spans,
            polarities: Some(pols),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchMode {
    Span,
    SpanAndPolarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    #[serde(rename = "P")]
    pub precision: f64,
    #[serde(rename = "R")]
    pub recall: f64,
    #[serde(rename = "F1")]
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(tp: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

type Key = (usize, usize, Option<Polarity>);

fn keys(p: &SpanPrediction, mode: MatchMode) -> Result<HashSet<Key>, MetricsError> {
    match (mode, &p.polarities) {
        (MatchMode::Span, _) => Ok(p.spans.iter().map(|&(s, e)| (s, e, None)).collect()),
        (MatchMode::SpanAndPolarity, Some(pols)) if pols.len() == p.spans.len() => Ok(p
            .spans
            .iter()
            .zip(pols)
            .map(|(&(s, e), &y)| (s, e, Some(y)))
            .collect()),
        (MatchMode::SpanAndPolarity, pols) => Err(MetricsError::PolarityCount(
            p.sample_id.clone(),
            p.spans.len(),
            pols.as_ref().map_or(0, Vec::len),
        )),
    }
}

/// Micro-averaged exact-match P/R/F1. Gold samples missing from `predicted`
/// count as predicting nothing.
pub fn span_prf(
    gold: &[SpanPrediction],
    predicted: &[SpanPrediction],
    mode: MatchMode,
) -> Result<Prf, MetricsError> {
    let mut gold_keys: HashMap<&str, HashSet<Key>> = HashMap::new();
    for g in gold {
        if gold_keys.insert(&g.sample_id, keys(g, mode)?).is_some() {
            return Err(MetricsError::DuplicateSample(g.sample_id.clone()));
        }
    }
    let mut seen = HashSet::new();
    let (mut tp, mut n_pred) = (0, 0);
    for p in predicted {
        let g = gold_keys
            .get(p.sample_id.as_str())
            .ok_or_else(|| MetricsError::UnknownSample(p.sample_id.clone()))?;
        if !seen.insert(p.sample_id.as_str()) {
            return Err(MetricsError::DuplicateSample(p.sample_id.clone()));
        }
        let pk = keys(p, mode)?;
        n_pred += pk.len();
        tp += pk.intersection(g).count();
    }
    let n_gold = gold_keys.values().map(HashSet::len).sum();
    Ok(Prf::from_counts(tp, n_pred, n_gold))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub acc: f64,
    pub macro_f1: f64,
}

/// Accuracy and the unweighted mean of per-class F1 over all three
/// polarities; a class absent from both sides scores 0.
pub fn masc_metrics(
    gold: &[Polarity],
    predicted: &[Polarity],
) -> Result<ClassMetrics, MetricsError> {
    if gold.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            gold: gold.len(),
            predicted: predicted.len(),
        });
    }
    let correct = gold.iter().zip(predicted).filter(|(g, p)| g == p).count();
    let acc = if gold.is_empty() {
        0.0
    } else {
        correct as f64 / gold.len() as f64
    };
    let macro_f1 = Polarity::ALL
        .iter()
        .map(|&c| {
            let tp = gold
                .iter()
                .zip(predicted)
                .filter(|&(&g, &p)| g == c && p == c)
                .count();
            let n_pred = predicted.iter().filter(|&&p| p == c).count();
            let n_gold = gold.iter().filter(|&&g| g == c).count();
            Prf::from_counts(tp, n_pred, n_gold).f1
        })
        .sum::<f64>()
        / 3.0;
    Ok(ClassMetrics { acc, macro_f1 })
}

/// `{task, P, R, F1}` as emitted by the CLI.
#[derive(Debug, Clone, Serialize)]
pub struct SpanReport<'a> {
    pub task: &'a str,
    #[serde(flatten)]
    pub prf: Prf,
}

/// `{task, acc, macro_f1}` as emitted by the CLI.
#[derive(Debug, Clone, Serialize)]
pub struct ClassReport<'a> {
    pub task: &'a str,
    #[serde(flatten)]
    pub metrics: ClassMetrics,
}
