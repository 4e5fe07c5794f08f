//! Evaluation metrics, synthetic corpora, and shared fixtures.

pub mod metrics;
pub mod synth;

pub use metrics::{masc_metrics, span_prf, MatchMode, Prf, SpanPrediction};
pub use synth::{gen_synthetic, random_tree, write_synthetic, SynthCorpus, SynthSpec};

/// Nine-token sentence with subject, adverb, and compound object, used as a
/// worked example for scopes and graphs.
pub const STUDENT_CONLLU: &str = include_str!("../../tests/fixtures/student.conllu");

/// Annotations for [`STUDENT_CONLLU`]: "student" positive, "circuit problem"
/// negative.
pub const STUDENT_JSONL: &str = include_str!("../../tests/fixtures/student.jsonl");
