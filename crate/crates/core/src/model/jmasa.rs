//! Extraction followed by sentiment classification of the extracted spans.

use thiserror::Error;

use super::train::{gold_pairs, predict_polarities, predict_spans};
use super::{Model, ModelError, Task};
use crate::harness::metrics::{span_prf, MatchMode, Prf, SpanPrediction};
use crate::ingest::AnnotatedSample;

#[derive(Debug, Error)]
pub enum JmasaError {
    #[error("{role} model has task {found:?}")]
    WrongTask { role: &'static str, found: Task },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn check(mate: &Model, masc: &Model) -> Result<(), JmasaError> {
    if mate.task != Task::Mate {
        return Err(JmasaError::WrongTask {
            role: "extraction",
            found: mate.task,
        });
    }
    if masc.task != Task::Masc {
        return Err(JmasaError::WrongTask {
            role: "sentiment",
            found: masc.task,
        });
    }
    mate.validate()?;
    masc.validate()?;
    Ok(())
}

/// Predicted `(span, polarity)` pairs for every sample. The sentiment model
/// scores each span with the scope of the predicted span, not a gold one.
pub fn jmasa_infer(
    mate: &Model,
    masc: &Model,
    samples: &[AnnotatedSample],
) -> Result<Vec<SpanPrediction>, JmasaError> {
    check(mate, masc)?;
    samples
        .iter()
        .map(|s| {
            let spans = predict_spans(mate, s)?;
            let pols = predict_polarities(masc, s, &spans)?;
            Ok(SpanPrediction::with_polarities(
                s.sample_id.clone(),
                spans.into_iter().zip(pols).collect(),
            ))
        })
        .collect()
}

/// Pair-level P/R/F1: a pair counts only when span and polarity both match.
pub fn eval_jmasa(
    mate: &Model,
    masc: &Model,
    samples: &[AnnotatedSample],
) -> Result<Prf, JmasaError> {
    let pred = jmasa_infer(mate, masc, samples)?;
    Ok(
        span_prf(&gold_pairs(samples), &pred, MatchMode::SpanAndPolarity)
            .expect("ids come from the same samples"),
    )
}
