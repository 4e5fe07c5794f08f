//! Corpus ingestion: dependency trees from CoNLL-U plus aspect annotations.

pub mod annotations;
pub mod conllu;

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use annotations::{load_annotations, AnnotatedSample, Aspect, Polarity};
pub use conllu::{candidate_targets, parse_conllu, to_conllu, DepTree, Token};

pub const CONLLU_FILE: &str = "corpus.conllu";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Conllu {
        path: PathBuf,
        source: conllu::ConlluError,
    },
    #[error("{path}: {source}")]
    Annotations {
        path: PathBuf,
        source: annotations::AnnotationError,
    },
}

/// Loads `corpus.conllu` and `annotations.jsonl` from a corpus directory.
pub fn load_corpus(dir: &Path) -> Result<Vec<AnnotatedSample>, CorpusError> {
    let conllu_path = dir.join(CONLLU_FILE);
    let text = fs::read_to_string(&conllu_path).map_err(|source| CorpusError::Io {
        path: conllu_path.clone(),
        source,
    })?;
    let trees = parse_conllu(&text).map_err(|source| CorpusError::Conllu {
        path: conllu_path,
        source,
    })?;
    let ann_path = dir.join(ANNOTATIONS_FILE);
    let file = fs::File::open(&ann_path).map_err(|source| CorpusError::Io {
        path: ann_path.clone(),
        source,
    })?;
    load_annotations(BufReader::new(file), &trees).map_err(|source| CorpusError::Annotations {
        path: ann_path,
        source,
    })
}

/// Writes a corpus directory readable by [`load_corpus`].
pub fn write_corpus(dir: &Path, samples: &[AnnotatedSample]) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let trees: Vec<DepTree> = samples.iter().map(|s| s.tree.clone()).collect();
    fs::write(dir.join(CONLLU_FILE), to_conllu(&trees))?;
    fs::write(dir.join(ANNOTATIONS_FILE), annotations::to_jsonl(samples))
}
