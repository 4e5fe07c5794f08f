//! JSON-lines aspect annotations joined onto parsed trees.
//!
//! One object per line:
//!
//! ```text
//! {"sample_id": "s1", "conllu_ref": "s1",
//!  "aspects": [{"start": 2, "end": 2, "polarity": "POS"}],
//!  "image_feature": [0.1, -0.3], "scene_graph": ["food", "on", "table"]}
//! ```
//!
//! `conllu_ref` names the `# sent_id` of the tree; it defaults to the sample
//! id. Trees without a `sent_id` are addressable by their 1-based ordinal.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::conllu::DepTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Pos = 0,
    Neu = 1,
    Neg = 2,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Pos, Polarity::Neu, Polarity::Neg];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            Polarity::Pos => "POS",
            Polarity::Neu => "NEU",
            Polarity::Neg => "NEG",
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Polarity::Pos => Polarity::Neg,
            Polarity::Neg => Polarity::Pos,
            Polarity::Neu => Polarity::Neu,
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "POS" => Ok(Polarity::Pos),
            "NEU" => Ok(Polarity::Neu),
            "NEG" => Ok(Polarity::Neg),
            _ => Err(s.to_string()),
        }
    }
}

impl Serialize for Polarity {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Polarity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse()
            .map_err(|bad| serde::de::Error::custom(format!("unknown polarity label {bad:?}")))
    }
}

/// Inclusive 1-based token span carrying one sentiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Aspect {
    pub start: usize,
    pub end: usize,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSample {
    pub sample_id: String,
    pub tree: DepTree,
    pub aspects: Vec<Aspect>,
    pub image_feature: Option<Vec<f64>>,
    pub scene_graph: Option<Vec<String>>,
}

impl AnnotatedSample {
    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    pub fn spans(&self) -> Vec<(usize, usize)> {
        self.aspects.iter().map(|a| (a.start, a.end)).collect()
    }
}

/// Line-level record as it appears in the annotation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub sample_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conllu_ref: Option<String>,
    #[serde(default, deserialize_with = "lenient_aspects")]
    pub aspects: Vec<AspectRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_feature: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_graph: Option<Vec<String>>,
}

/// Aspect entry with the polarity still as raw text, so that an unknown label
/// surfaces as its own error rather than a generic JSON failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectRecord {
    pub start: usize,
    pub end: usize,
    pub polarity: String,
}

fn lenient_aspects<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<AspectRecord>, D::Error> {
    Ok(Option::<Vec<AspectRecord>>::deserialize(d)?.unwrap_or_default())
}

impl From<&AnnotatedSample> for AnnotationRecord {
    fn from(s: &AnnotatedSample) -> Self {
        Self {
            sample_id: s.sample_id.clone(),
            conllu_ref: s.tree.sent_id().map(str::to_string),
            aspects: s
                .aspects
                .iter()
                .map(|a| AspectRecord {
                    start: a.start,
                    end: a.end,
                    polarity: a.polarity.label().to_string(),
                })
                .collect(),
            image_feature: s.image_feature.clone(),
            scene_graph: s.scene_graph.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: read failed: {source}")]
    Io { line: usize, source: std::io::Error },
    #[error("line {line}: no tree for sample {sample_id:?} (ref {reference:?})")]
    UnknownSample {
        line: usize,
        sample_id: String,
        reference: String,
    },
    #[error("line {line}: aspect [{start}, {end}] ends before it starts")]
    ReversedSpan {
        line: usize,
        start: usize,
        end: usize,
    },
    #[error("line {line}: aspect [{start}, {end}] outside sentence of {len} tokens")]
    OutOfRange {
        line: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("line {line}: aspects [{}, {}] and [{}, {}] overlap", .first.0, .first.1, .second.0, .second.1)]
    Overlap {
        line: usize,
        first: (usize, usize),
        second: (usize, usize),
    },
    #[error("line {line}: unknown polarity label {label:?}")]
    UnknownPolarity { line: usize, label: String },
}

/// Checks a sample's aspect list against its sentence length, returning the
/// validated aspects sorted by start.
fn validate_aspects(
    line: usize,
    records: &[AspectRecord],
    len: usize,
) -> Result<Vec<Aspect>, AnnotationError> {
    let mut aspects = Vec::with_capacity(records.len());
    for r in records {
        if r.end < r.start {
            return Err(AnnotationError::ReversedSpan {
                line,
                start: r.start,
                end: r.end,
            });
        }
        if r.start == 0 || r.end > len {
            return Err(AnnotationError::OutOfRange {
                line,
                start: r.start,
                end: r.end,
                len,
            });
        }
        let polarity = r
            .polarity
            .parse()
            .map_err(|label| AnnotationError::UnknownPolarity { line, label })?;
        aspects.push(Aspect {
            start: r.start,
            end: r.end,
            polarity,
        });
    }
    aspects.sort_by_key(|a| (a.start, a.end));
    for pair in aspects.windows(2) {
        if pair[1].start <= pair[0].end {
            return Err(AnnotationError::Overlap {
                line,
                first: (pair[0].start, pair[0].end),
                second: (pair[1].start, pair[1].end),
            });
        }
    }
    Ok(aspects)
}

/// Key under which a tree can be referenced from an annotation.
pub fn tree_key(tree: &DepTree, ordinal: usize) -> String {
    tree.sent_id()
        .map(str::to_string)
        .unwrap_or_else(|| (ordinal + 1).to_string())
}

/// Reads JSON-lines annotations and joins each onto its tree.
pub fn load_annotations(
    reader: impl BufRead,
    trees: &[DepTree],
) -> Result<Vec<AnnotatedSample>, AnnotationError> {
    let index: HashMap<String, &DepTree> = trees
        .iter()
        .enumerate()
        .map(|(i, t)| (tree_key(t, i), t))
        .collect();
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| AnnotationError::Io {
            line: line_no,
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AnnotationRecord =
            serde_json::from_str(&line).map_err(|source| AnnotationError::Json {
                line: line_no,
                source,
            })?;
        let reference = record
            .conllu_ref
            .clone()
            .unwrap_or_else(|| record.sample_id.clone());
        let tree = *index
            .get(&reference)
            .ok_or_else(|| AnnotationError::UnknownSample {
                line: line_no,
                sample_id: record.sample_id.clone(),
                reference: reference.clone(),
            })?;
        let aspects = validate_aspects(line_no, &record.aspects, tree.len())?;
        samples.push(AnnotatedSample {
            sample_id: record.sample_id,
            tree: tree.clone(),
            aspects,
            image_feature: record.image_feature,
            scene_graph: record.scene_graph,
        });
    }
    Ok(samples)
}

/// Renders samples as JSON lines (the inverse of [`load_annotations`]).
pub fn to_jsonl(samples: &[AnnotatedSample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(&AnnotationRecord::from(s)).expect("plain data"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::conllu::parse_conllu;

    fn tree() -> Vec<DepTree> {
        let text = "# sent_id = t1\n\
            1\tthe\t_\tDET\t_\t_\t2\tdet\t_\t_\n\
            2\tfood\t_\tNOUN\t_\t_\t4\tnsubj\t_\t_\n\
            3\tis\t_\tAUX\t_\t_\t4\tcop\t_\t_\n\
            4\tgood\t_\tADJ\t_\t_\t0\troot\t_\t_\n";
        parse_conllu(text).unwrap()
    }

    fn load(line: &str) -> Result<Vec<AnnotatedSample>, AnnotationError> {
        load_annotations(line.as_bytes(), &tree())
    }

    #[test]
    fn empty_aspects_are_valid() {
        let s = load(r#"{"sample_id":"t1","aspects":[]}"#).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s[0].aspects.is_empty());
    }

    #[test]
    fn polarity_is_case_insensitive() {
        let s = load(r#"{"sample_id":"x","conllu_ref":"t1","aspects":[{"start":2,"end":2,"polarity":"neg"}]}"#)
            .unwrap();
        assert_eq!(s[0].aspects[0].polarity, Polarity::Neg);
        assert_eq!(s[0].aspects[0].polarity.index(), 2);
    }

    #[test]
    fn rejects_bad_records() {
        assert!(matches!(
            load(r#"{"sample_id":"t1","aspects":[{"start":3,"end":2,"polarity":"POS"}]}"#),
            Err(AnnotationError::ReversedSpan { line: 1, .. })
        ));
        assert!(matches!(
            load(r#"{"sample_id":"t1","aspects":[{"start":4,"end":5,"polarity":"POS"}]}"#),
            Err(AnnotationError::OutOfRange { len: 4, .. })
        ));
        assert!(matches!(
            load(
                r#"{"sample_id":"t1","aspects":[{"start":1,"end":2,"polarity":"POS"},{"start":2,"end":3,"polarity":"NEG"}]}"#
            ),
            Err(AnnotationError::Overlap { .. })
        ));
        assert!(matches!(
            load(r#"{"sample_id":"t1","aspects":[{"start":2,"end":2,"polarity":"GOOD"}]}"#),
            Err(AnnotationError::UnknownPolarity { ref label, .. }) if label == "GOOD"
        ));
        assert!(matches!(
            load(r#"{"sample_id":"nope","aspects":[]}"#),
            Err(AnnotationError::UnknownSample { .. })
        ));
        assert!(matches!(
            load("{not json"),
            Err(AnnotationError::Json { line: 1, .. })
        ));
    }

    #[test]
    fn optional_fields_round_trip() {
        let line = r#"{"sample_id":"t1","aspects":[{"start":2,"end":2,"polarity":"POS"}],"image_feature":[0.5,-1.0],"scene_graph":["food","plate"]}"#;
        let samples = load(line).unwrap();
        assert_eq!(samples[0].image_feature.as_deref(), Some(&[0.5, -1.0][..]));
        let again = load(to_jsonl(&samples).trim()).unwrap();
        assert_eq!(again, samples);
    }
}
