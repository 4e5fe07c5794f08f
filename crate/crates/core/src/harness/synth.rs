//! Seeded template corpora whose sentiment cues sit inside each aspect's
//! scope, plus random-tree sampling for property tests.
//!
//! Sentences are built from clauses of the form
//! `DET [FILLER] [NOUN] NOUN AUX [ADV] CUE`, where the cue adjective heads
//! the clause, the noun is its subject, and later clauses attach to the
//! first one through `conj` with a leading coordinator. Aspect clauses carry
//! the sentiment of their own cue; distractor clauses carry a cue about a
//! non-aspect noun, outside every aspect's scope.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{self, AnnotatedSample, Aspect, DepTree, Polarity, Token};

pub const MIN_VOCAB: usize = 20;

const DETS: [&str; 2] = ["the", "a"];
const AUXES: [&str; 2] = ["is", "was"];
const ADVS: [&str; 3] = ["very", "really", "quite"];
const CCONJS: [&str; 2] = ["but", "while"];

const FILLER_RATE: f64 = 0.3;
const COMPOUND_RATE: f64 = 0.25;
const ADV_RATE: f64 = 0.3;
const IMAGE_NOISE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub sentences: usize,
    pub vocab_size: usize,
    #[serde(default)]
    pub distractor_rate: f64,
    #[serde(default)]
    pub two_aspect_rate: f64,
    #[serde(default = "default_image_dim")]
    pub image_dim: usize,
}

fn default_image_dim() -> usize {
    16
}

impl SynthSpec {
    pub fn new(seed: u64, sentences: usize, vocab_size: usize) -> Self {
        Self {
            seed,
            sentences,
            vocab_size,
            distractor_rate: 0.0,
            two_aspect_rate: 0.0,
            image_dim: default_image_dim(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.sentences == 0 {
            return Err(SynthError::Infeasible("sentences must be positive".into()));
        }
        if self.vocab_size < MIN_VOCAB {
            return Err(SynthError::Infeasible(format!(
                "vocab_size {} below minimum {MIN_VOCAB}",
                self.vocab_size
            )));
        }
        for (name, r) in [
            ("distractor_rate", self.distractor_rate),
            ("two_aspect_rate", self.two_aspect_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(SynthError::Infeasible(format!("{name} {r} outside [0, 1]")));
            }
        }
        if self.image_dim == 0 {
            return Err(SynthError::Infeasible("image_dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible spec: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Word lists by role. Content words are pronounceable pseudo-words so that
/// nothing about a word's role leaks from its spelling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Lexicon {
    pub aspects: Vec<String>,
    pub distractors: Vec<String>,
    pub positive: Vec<String>,
    pub neutral: Vec<String>,
    pub negative: Vec<String>,
    pub fillers: Vec<String>,
}

impl Lexicon {
    pub fn function_words() -> usize {
        DETS.len() + AUXES.len() + ADVS.len() + CCONJS.len()
    }

    pub fn build(vocab_size: usize, rng: &mut impl Rng) -> Self {
        let content = vocab_size - Self::function_words();
        let share = |f: f64| ((content as f64 * f).floor() as usize).max(1);
        let (d, p, n, u, f) = (
            share(0.15),
            share(0.15),
            share(0.15),
            share(0.10),
            share(0.15),
        );
        let a = content - d - p - n - u - f;
        let mut words: Vec<String> = (0..content).map(pseudo_word).collect();
        words.shuffle(rng);
        let mut it = words.into_iter();
        let mut take = |k: usize| it.by_ref().take(k).collect::<Vec<_>>();
        Self {
            aspects: take(a),
            distractors: take(d),
            positive: take(p),
            neutral: take(u),
            negative: take(n),
            fillers: take(f),
        }
    }

    pub fn cues(&self, polarity: Polarity) -> &[String] {
        match polarity {
            Polarity::Pos => &self.positive,
            Polarity::Neu => &self.neutral,
            Polarity::Neg => &self.negative,
        }
    }
}

/// Distinct consonant-vowel word for each index.
fn pseudo_word(mut i: usize) -> String {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let mut s = String::new();
    loop {
        s.push(C[i % C.len()] as char);
        i /= C.len();
        s.push(V[i % V.len()] as char);
        i /= V.len();
        if i == 0 {
            break;
        }
        i -= 1;
    }
    if s.len() < 4 {
        s.push('n');
    }
    s
}

struct Clause {
    tokens: Vec<(String, &'static str, &'static str)>,
    /// Local (0-based) head for each token; `None` marks the cue.
    heads: Vec<Option<usize>>,
    cue: usize,
    noun_span: (usize, usize),
}

fn pick<'a>(rng: &mut impl Rng, words: &'a [impl AsRef<str>]) -> &'a str {
    words[rng.gen_range(0..words.len())].as_ref()
}

fn clause(
    rng: &mut impl Rng,
    nouns: &[String],
    cue: &str,
    fillers: &[String],
    compound: bool,
) -> Clause {
    let mut tokens = Vec::new();
    let mut heads = Vec::new();
    tokens.push((pick(rng, &DETS).to_string(), "DET", "det"));
    heads.push(None);
    if rng.gen_bool(FILLER_RATE) {
        tokens.push((pick(rng, fillers).to_string(), "ADJ", "amod"));
        heads.push(None);
    }
    let first_noun = tokens.len();
    if compound && rng.gen_bool(COMPOUND_RATE) {
        tokens.push((pick(rng, nouns).to_string(), "NOUN", "compound"));
        heads.push(None);
    }
    let noun = tokens.len();
    tokens.push((pick(rng, nouns).to_string(), "NOUN", "nsubj"));
    heads.push(None);
    tokens.push((pick(rng, &AUXES).to_string(), "AUX", "cop"));
    heads.push(None);
    if rng.gen_bool(ADV_RATE) {
        tokens.push((pick(rng, &ADVS).to_string(), "ADV", "advmod"));
        heads.push(None);
    }
    let cue_at = tokens.len();
    tokens.push((cue.to_string(), "ADJ", "root"));
    heads.push(None);
    for (i, h) in heads.iter_mut().enumerate() {
        *h = match i {
            _ if i == cue_at => None,
            _ if i < noun => Some(noun),
            _ => Some(cue_at),
        };
    }
    Clause {
        tokens,
        heads,
        cue: cue_at,
        noun_span: (first_noun, noun),
    }
}

struct SentencePlan {
    clauses: Vec<(Clause, Option<Polarity>)>,
}

/// Lays clauses out left to right, joining later ones to the first.
fn assemble(plan: SentencePlan, sent_id: &str, rng: &mut impl Rng) -> (DepTree, Vec<Aspect>) {
    let mut tokens: Vec<Token> = Vec::new();
    let mut aspects = Vec::new();
    let mut first_cue = 0;
    for (ci, (c, pol)) in plan.clauses.into_iter().enumerate() {
        let mut cc_at = None;
        if ci > 0 {
            tokens.push(Token {
                index: tokens.len() + 1,
                form: pick(rng, &CCONJS).to_string(),
                upos: "CCONJ".into(),
                head: 0,
                deprel: "cc".into(),
            });
            cc_at = Some(tokens.len() - 1);
        }
        let base = tokens.len() + 1;
        let cue_index = base + c.cue;
        for (i, ((form, upos, deprel), head)) in c.tokens.into_iter().zip(c.heads).enumerate() {
            let (head, deprel) = match head {
                Some(h) => (base + h, deprel),
                None if ci == 0 => (0, "root"),
                None => (first_cue, "conj"),
            };
            tokens.push(Token {
                index: base + i,
                form,
                upos: upos.into(),
                head,
                deprel: deprel.into(),
            });
        }
        if ci == 0 {
            first_cue = cue_index;
        }
        if let Some(at) = cc_at {
            tokens[at].head = cue_index;
        }
        if let Some(polarity) = pol {
            aspects.push(Aspect {
                start: base + c.noun_span.0,
                end: base + c.noun_span.1,
                polarity,
            });
        }
    }
    let tree = DepTree::new(Some(sent_id.to_string()), tokens).expect("template trees are valid");
    (tree, aspects)
}

/// Generated samples together with the lexicon that produced them.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub spec: SynthSpec,
    pub lexicon: Lexicon,
    pub samples: Vec<AnnotatedSample>,
}

pub fn gen_synthetic(spec: &SynthSpec) -> Result<SynthCorpus, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lexicon = Lexicon::build(spec.vocab_size, &mut rng);
    let prototypes: Vec<Vec<f64>> = lexicon
        .aspects
        .iter()
        .map(|_| {
            (0..spec.image_dim)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect()
        })
        .collect();
    let mut samples = Vec::with_capacity(spec.sentences);
    for k in 0..spec.sentences {
        let id = format!("syn-{:05}", k + 1);
        let mut clauses = Vec::new();
        if rng.gen_bool(spec.two_aspect_rate) {
            let first = if rng.gen_bool(0.5) {
                Polarity::Pos
            } else {
                Polarity::Neg
            };
            for pol in [first, first.opposite()] {
                let cue = pick(&mut rng, lexicon.cues(pol)).to_string();
                clauses.push((
                    clause(&mut rng, &lexicon.aspects, &cue, &lexicon.fillers, true),
                    Some(pol),
                ));
            }
        } else {
            let pol = Polarity::ALL[rng.gen_range(0..3)];
            let cue = pick(&mut rng, lexicon.cues(pol)).to_string();
            clauses.push((
                clause(&mut rng, &lexicon.aspects, &cue, &lexicon.fillers, true),
                Some(pol),
            ));
        }
        if rng.gen_bool(spec.distractor_rate) {
            let pol = Polarity::ALL[rng.gen_range(0..3)];
            let cue = pick(&mut rng, lexicon.cues(pol)).to_string();
            let d = clause(
                &mut rng,
                &lexicon.distractors,
                &cue,
                &lexicon.fillers,
                false,
            );
            let at = if rng.gen_bool(0.5) { 0 } else { clauses.len() };
            clauses.insert(at, (d, None));
        }
        let (tree, aspects) = assemble(SentencePlan { clauses }, &id, &mut rng);
        let mut image = vec![0.0; spec.image_dim];
        let mut scene = Vec::new();
        for a in &aspects {
            for i in a.start..=a.end {
                let form = &tree.token(i).form;
                let w = lexicon
                    .aspects
                    .iter()
                    .position(|x| x == form)
                    .expect("aspect noun");
                for (v, p) in image.iter_mut().zip(&prototypes[w]) {
                    *v += p;
                }
                scene.push(form.clone());
            }
        }
        for v in &mut image {
            *v += rng.gen_range(-IMAGE_NOISE..IMAGE_NOISE);
        }
        scene.push("in".into());
        scene.push(pick(&mut rng, &lexicon.distractors).to_string());
        samples.push(AnnotatedSample {
            sample_id: id,
            tree,
            aspects,
            image_feature: Some(image),
            scene_graph: Some(scene),
        });
    }
    Ok(SynthCorpus {
        spec: spec.clone(),
        lexicon,
        samples,
    })
}

pub const SPEC_ECHO_FILE: &str = "spec-echo.json";

/// Writes `corpus.conllu`, `annotations.jsonl` and `spec-echo.json`.
pub fn write_synthetic(dir: &Path, corpus: &SynthCorpus) -> Result<(), SynthError> {
    ingest::write_corpus(dir, &corpus.samples)?;
    let echo = serde_json::to_string_pretty(&corpus.spec).expect("plain data") + "\n";
    std::fs::write(dir.join(SPEC_ECHO_FILE), echo)?;
    Ok(())
}

const RANDOM_UPOS: [&str; 7] = ["NOUN", "PROPN", "PRON", "VERB", "ADJ", "DET", "ADV"];

/// Uniformly shaped random tree: tokens are attached in a random order, each
/// to a random already-placed token.
pub fn random_tree(rng: &mut impl Rng, n: usize) -> DepTree {
    assert!(n >= 1);
    let mut order: Vec<usize> = (1..=n).collect();
    order.shuffle(rng);
    let mut heads = vec![0; n + 1];
    for k in 1..n {
        heads[order[k]] = order[rng.gen_range(0..k)];
    }
    let tokens = (1..=n)
        .map(|i| Token {
            index: i,
            form: format!("w{i}"),
            upos: pick(rng, &RANDOM_UPOS).to_string(),
            head: heads[i],
            deprel: if heads[i] == 0 {
                "root".into()
            } else {
                "dep".into()
            },
        })
        .collect();
    DepTree::new(None, tokens).expect("attachment order yields a tree")
}
