//! Positive/negative instances for aspect-consistency and image-text
//! matching.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::PretrainError;
use crate::ingest::AnnotatedSample;
use crate::model::encoder::MASK;

/// Text tokens, image feature, and scene-graph tokens of one instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Triple {
    pub text: Vec<String>,
    pub image: Vec<f64>,
    pub scene: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AoePair {
    pub sample_id: String,
    pub positive: Triple,
    /// Aspect tokens replaced by the mask token in text and scene graph.
    pub negative: Triple,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItmPair {
    pub sample_id: String,
    pub donor_id: String,
    pub positive: Triple,
    /// Same text and scene graph, image taken from `donor_id`.
    pub negative: Triple,
}

pub(crate) fn image_of(s: &AnnotatedSample) -> Result<&[f64], PretrainError> {
    s.image_feature
        .as_deref()
        .ok_or_else(|| PretrainError::MissingImage(s.sample_id.clone()))
}

pub(crate) fn triple(s: &AnnotatedSample) -> Result<Triple, PretrainError> {
    Ok(Triple {
        text: s.tree.forms().into_iter().map(str::to_string).collect(),
        image: image_of(s)?.to_vec(),
        scene: s.scene_graph.clone().unwrap_or_default(),
    })
}

/// One pair per sample with at least one aspect; samples without aspects
/// are skipped.
pub fn build_aoe_pairs(samples: &[AnnotatedSample]) -> Result<Vec<AoePair>, PretrainError> {
    let mut out = Vec::new();
    for s in samples.iter().filter(|s| !s.aspects.is_empty()) {
        let positive = triple(s)?;
        let mut negative = positive.clone();
        let mut aspect_forms = HashSet::new();
        for a in &s.aspects {
            for i in a.start..=a.end {
                aspect_forms.insert(positive.text[i - 1].clone());
                negative.text[i - 1] = MASK.to_string();
            }
        }
        for tok in &mut negative.scene {
            if aspect_forms.contains(tok) {
                *tok = MASK.to_string();
            }
        }
        out.push(AoePair {
            sample_id: s.sample_id.clone(),
            positive,
            negative,
        });
    }
    Ok(out)
}

/// One pair per sample; the mismatched image comes from a different sample
/// drawn uniformly.
pub fn build_itm_pairs(
    samples: &[AnnotatedSample],
    seed: u64,
) -> Result<Vec<ItmPair>, PretrainError> {
    if samples.len() < 2 {
        return Err(PretrainError::TooFewSamples(samples.len()));
    }
    let dim = image_of(&samples[0])?.len();
    for s in samples {
        let len = image_of(s)?.len();
        if len != dim {
            return Err(PretrainError::ImageDim {
                sample_id: s.sample_id.clone(),
                expected: dim,
                found: len,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut j = rng.gen_range(0..samples.len() - 1);
            if j >= i {
                j += 1;
            }
            let positive = triple(s)?;
            let negative = Triple {
                image: image_of(&samples[j])?.to_vec(),
                ..positive.clone()
            };
            Ok(ItmPair {
                sample_id: s.sample_id.clone(),
                donor_id: samples[j].sample_id.clone(),
                positive,
                negative,
            })
        })
        .collect()
}

/// One JSON object per instance, positives before negatives.
pub fn dump_pairs(aoe: &[AoePair], itm: &[ItmPair]) -> String {
    #[derive(Serialize)]
    struct Line<'a> {
        kind: &'a str,
        sample_id: &'a str,
        #[serde(skip_serializing_if = "Option::is_none")]
        donor_id: Option<&'a str>,
        label: u8,
        #[serde(flatten)]
        triple: &'a Triple,
    }
    let mut out = String::new();
    let mut push = |line: Line<'_>| {
        out.push_str(&serde_json::to_string(&line).expect("plain data"));
        out.push('\n');
    };
    for p in aoe {
        for (label, triple) in [(1, &p.positive), (0, &p.negative)] {
            push(Line {
                kind: "aoe",
                sample_id: &p.sample_id,
                donor_id: None,
                label,
                triple,
            });
        }
    }
    for p in itm {
        for (label, triple) in [(1, &p.positive), (0, &p.negative)] {
            push(Line {
                kind: "itm",
                sample_id: &p.sample_id,
                donor_id: Some(&p.donor_id),
                label,
                triple,
            });
        }
    }
    out
}
