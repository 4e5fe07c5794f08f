//! Brute-force oracles shared by the integration tests. They work on plain
//! vectors and head arrays and share no code with the library paths they
//! check.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scopenet::harness::{STUDENT_CONLLU, STUDENT_JSONL};
use scopenet::ingest::{load_annotations, parse_conllu, AnnotatedSample, DepTree};
use scopenet::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn student() -> AnnotatedSample {
    let trees = parse_conllu(STUDENT_CONLLU).unwrap();
    load_annotations(STUDENT_JSONL.as_bytes(), &trees)
        .unwrap()
        .remove(0)
}

/// `heads[i]` is the head of token `i` (1-based); `heads[0]` is unused.
pub fn heads_of(tree: &DepTree) -> Vec<usize> {
    let mut h = vec![0];
    h.extend(tree.tokens().iter().map(|t| t.head));
    h
}

/// Whether `node` lies below `ancestor`, walking heads upward.
fn below(heads: &[usize], mut node: usize, ancestor: usize) -> bool {
    for _ in 0..heads.len() {
        node = heads[node];
        if node == 0 {
            return false;
        }
        if node == ancestor {
            return true;
        }
    }
    false
}

/// Target, every descendant, and the immediate head.
pub fn path_set_oracle(heads: &[usize], target: usize) -> Vec<usize> {
    let n = heads.len() - 1;
    let mut out: Vec<usize> = (1..=n)
        .filter(|&j| j == target || below(heads, j, target))
        .collect();
    if heads[target] != 0 {
        out.push(heads[target]);
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// `(start, end, anchor)` of the scope of the span `[s, e]`.
pub fn scope_oracle(heads: &[usize], s: usize, e: usize) -> (usize, usize, usize) {
    let all: Vec<usize> = (s..=e).flat_map(|t| path_set_oracle(heads, t)).collect();
    let anchor = (s..=e)
        .find(|&t| heads[t] == 0 || heads[t] < s || heads[t] > e)
        .expect("a span of a tree has a token headed outside it");
    (
        *all.iter().min().unwrap(),
        *all.iter().max().unwrap(),
        anchor,
    )
}

pub fn random_rows(rng: &mut ChaCha8Rng, s: usize, d: usize) -> Vec<Vec<f64>> {
    (0..s)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

pub fn tensor(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb + 1e-12)
}

/// `(anchor, start, end)`, 1-based.
pub type ScopeTriple = (usize, usize, usize);

/// Mean over targets of `Σ_j −log(e^{cos(n_a,n_j)/τ} / Σ_i e^{cos(n_a,n_i)/τ})`
/// over in-scope `j ≠ a`.
pub fn scope_loss_oracle(nodes: &[Vec<f64>], scopes: &[ScopeTriple], tau: f64) -> f64 {
    if scopes.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for &(a, start, end) in scopes {
        let na = &nodes[a - 1];
        let denom: f64 = nodes.iter().map(|n| (cos(na, n) / tau).exp()).sum();
        for j in start..=end {
            if j != a {
                total -= ((cos(na, &nodes[j - 1]) / tau).exp() / denom).ln();
            }
        }
    }
    total / scopes.len() as f64
}

/// Anchors from one graph, candidates from the other; the aligned
/// similarity `ω` appears alone and as a weight in each numerator.
pub fn graph_loss_oracle(
    anchors: &[Vec<f64>],
    others: &[Vec<f64>],
    scopes: &[ScopeTriple],
    tau: f64,
) -> f64 {
    if scopes.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for &(a, start, end) in scopes {
        let na = &anchors[a - 1];
        let omega = cos(na, &others[a - 1]);
        let denom: f64 = others.iter().map(|m| (cos(na, m) / tau).exp()).sum();
        for j in start..=end {
            if j != a {
                let num = (omega / tau).exp() + (omega * cos(na, &others[j - 1]) / tau).exp();
                total -= (num / denom).ln();
            }
        }
    }
    total / scopes.len() as f64
}

pub fn asi_oracle(syn: &[Vec<f64>], sem: &[Vec<f64>], scopes: &[ScopeTriple], tau: f64) -> f64 {
    scope_loss_oracle(syn, scopes, tau)
        + scope_loss_oracle(sem, scopes, tau)
        + graph_loss_oracle(syn, sem, scopes, tau)
        + graph_loss_oracle(sem, syn, scopes, tau)
}
