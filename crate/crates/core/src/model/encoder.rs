//! Trainable stand-in for a pretrained text encoder: an embedding table and
//! an optional position-mixing layer with a residual connection.
//!
//! The mixing layer computes `ReLU((C E) W_e + b_e) + E`, where `C[i][j]`
//! is a learned weight for offset `j - i` within `±radius`.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Bound, ParamSet, Result, Tape, Tensor, Var};

pub const UNK: &str = "<unk>";
pub const MASK: &str = "<mask>";
pub const UNK_ID: usize = 0;
pub const MASK_ID: usize = 1;

/// Token-to-id map with reserved unknown and mask entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Self { words, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

impl Vocab {
    /// Reserved entries first, then the distinct words in sorted order.
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let distinct: BTreeSet<&str> = words
            .into_iter()
            .filter(|w| *w != UNK && *w != MASK)
            .collect();
        let mut all = vec![UNK.to_string(), MASK.to_string()];
        all.extend(distinct.into_iter().map(str::to_string));
        all.into()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn ids<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderShape {
    pub vocab: usize,
    pub dim: usize,
    pub mixing: bool,
    pub radius: usize,
}

/// Registers `enc.*` parameters.
pub fn init_encoder(params: &mut ParamSet, shape: EncoderShape, rng: &mut impl Rng) {
    let d = shape.dim;
    params.insert_uniform("enc.emb", &[shape.vocab, d], 1.0, rng);
    if shape.mixing {
        let width = 2 * shape.radius + 1;
        let mut kernel: Vec<f64> = (0..width).map(|_| rng.gen_range(-0.1..0.1)).collect();
        kernel[shape.radius] = 1.0;
        params.insert("enc.mix", Tensor::vector(kernel));
        params.insert_uniform("enc.w", &[d, d], 1.0 / (d as f64).sqrt(), rng);
        params.insert("enc.b", Tensor::zeros(&[d]));
    }
}

/// Expected encoder parameter shapes, for validating loaded models.
pub fn encoder_shapes(shape: EncoderShape) -> Vec<(String, Vec<usize>)> {
    let d = shape.dim;
    let mut v = vec![("enc.emb".to_string(), vec![shape.vocab, d])];
    if shape.mixing {
        v.push(("enc.mix".into(), vec![2 * shape.radius + 1]));
        v.push(("enc.w".into(), vec![d, d]));
        v.push(("enc.b".into(), vec![d]));
    }
    v
}

/// S×S matrix selecting row `i + offset` into row `i`.
fn shift_matrix(s: usize, offset: isize) -> Tensor {
    let mut t = Tensor::zeros(&[s, s]);
    let data = t.data_mut();
    for i in 0..s {
        let j = i as isize + offset;
        if (0..s as isize).contains(&j) {
            data[i * s + j as usize] = 1.0;
        }
    }
    t
}

/// Encodes token ids into an S×D matrix.
pub fn encode<'t>(bound: &Bound<'t>, ids: &[usize], shape: EncoderShape) -> Result<Var<'t>> {
    let e = bound.get("enc.emb").select_rows(ids)?;
    if !shape.mixing {
        return Ok(e);
    }
    let tape: &'t Tape = e.tape();
    let s = ids.len();
    let r = shape.radius as isize;
    let kernel = bound.get("enc.mix");
    let mut mixed: Option<Var<'t>> = None;
    for (k, offset) in (-r..=r).enumerate() {
        if offset.unsigned_abs() >= s {
            continue;
        }
        let weight = kernel.gather(&[k])?.reshape(&[])?;
        let term = tape.leaf(shift_matrix(s, offset)).matmul(e)?.mul(weight)?;
        mixed = Some(match mixed {
            Some(m) => m.add(term)?,
            None => term,
        });
    }
    let mixed = mixed.expect("offset 0 is always present");
    mixed
        .matmul(bound.get("enc.w"))?
        .add_row(bound.get("enc.b"))?
        .relu()
        .add(e)
}
