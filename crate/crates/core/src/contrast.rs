//! Scope-aware contrastive losses over graph node embeddings.
//!
//! Each target contributes one anchor row and the in-scope rows as positives.
//! The anchor is never its own positive but always sits in the denominator.

use thiserror::Error;

use crate::scope::Scope;
use crate::tensor::{TensorError, Var};

pub const DEFAULT_TAU: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContrastError {
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("scope [{start}, {end}] with anchor {anchor} does not fit {len} nodes")]
    ScopeRange {
        anchor: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ContrastError>;

fn check(nodes: Var<'_>, scopes: &[Scope], tau: f64) -> Result<usize> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(ContrastError::Temperature(tau));
    }
    let shape = nodes.shape();
    if shape.len() != 2 {
        return Err(TensorError::Shape {
            op: "contrast",
            left: shape,
            right: vec![],
        }
        .into());
    }
    let s = shape[0];
    for sc in scopes {
        if sc.start == 0 || sc.end > s || sc.start > sc.end || !sc.contains(sc.anchor) {
            return Err(ContrastError::ScopeRange {
                anchor: sc.anchor,
                start: sc.start,
                end: sc.end,
                len: s,
            });
        }
    }
    Ok(s)
}

/// Flat (anchor, positive) index pairs, 0-based, row-major over S×S.
fn positive_pairs(scopes: &[Scope]) -> Vec<(usize, usize)> {
    scopes
        .iter()
        .flat_map(|sc| {
            (sc.start..=sc.end)
                .filter(move |&j| j != sc.anchor)
                .map(move |j| (sc.anchor - 1, j - 1))
        })
        .collect()
}

/// Within-graph InfoNCE: mean over targets of the summed negative
/// log-probabilities of each in-scope node under a softmax over all nodes.
pub fn cross_scope_loss<'t>(nodes: Var<'t>, scopes: &[Scope], tau: f64) -> Result<Var<'t>> {
    let s = check(nodes, scopes, tau)?;
    let tape = nodes.tape();
    if scopes.is_empty() {
        return Ok(tape.scalar(0.0));
    }
    let pairs = positive_pairs(scopes);
    if pairs.is_empty() {
        return Ok(tape.scalar(0.0));
    }
    let log_p = nodes
        .cosine_matrix(nodes)?
        .scale(1.0 / tau)
        .log_softmax_rows();
    let idx: Vec<usize> = pairs.iter().map(|&(a, j)| a * s + j).collect();
    Ok(log_p.gather(&idx)?.sum().scale(-1.0 / scopes.len() as f64))
}

/// Cross-graph contrast with anchors from one graph and candidates from the
/// other. The aligned node's similarity `ω` enters every numerator both on
/// its own and as a weight on the positive's similarity.
pub fn cross_graph_loss<'t>(
    anchors: Var<'t>,
    others: Var<'t>,
    scopes: &[Scope],
    tau: f64,
) -> Result<Var<'t>> {
    let s = check(anchors, scopes, tau)?;
    if others.shape() != anchors.shape() {
        return Err(TensorError::Shape {
            op: "cross_graph_loss",
            left: anchors.shape(),
            right: others.shape(),
        }
        .into());
    }
    let tape = anchors.tape();
    let pairs = positive_pairs(scopes);
    if pairs.is_empty() {
        return Ok(tape.scalar(0.0));
    }
    let cos = anchors.cosine_matrix(others)?;
    let lse = cos.scale(1.0 / tau).log_sum_exp_rows();
    let aligned: Vec<usize> = pairs.iter().map(|&(a, _)| a * s + a).collect();
    let positive: Vec<usize> = pairs.iter().map(|&(a, j)| a * s + j).collect();
    let rows: Vec<usize> = pairs.iter().map(|&(a, _)| a).collect();
    let omega = cos.gather(&aligned)?;
    let weighted = omega.mul(cos.gather(&positive)?)?.scale(1.0 / tau);
    let numerator = omega.scale(1.0 / tau).log_add_exp(weighted)?;
    let per_pair = lse.gather(&rows)?.sub(numerator)?;
    Ok(per_pair.sum().scale(1.0 / scopes.len() as f64))
}

/// The four directional terms and their sum.
#[derive(Debug, Clone, Copy)]
pub struct AsiLoss<'t> {
    pub scope_syn: Var<'t>,
    pub scope_sem: Var<'t>,
    pub graph_syn: Var<'t>,
    pub graph_sem: Var<'t>,
    pub total: Var<'t>,
}

/// Within-graph terms for both graphs plus cross-graph terms in both
/// directions, sharing one scope list.
pub fn asi_loss<'t>(syn: Var<'t>, sem: Var<'t>, scopes: &[Scope], tau: f64) -> Result<AsiLoss<'t>> {
    let scope_syn = cross_scope_loss(syn, scopes, tau)?;
    let scope_sem = cross_scope_loss(sem, scopes, tau)?;
    let graph_syn = cross_graph_loss(syn, sem, scopes, tau)?;
    let graph_sem = cross_graph_loss(sem, syn, scopes, tau)?;
    let total = scope_syn.add(scope_sem)?.add(graph_syn)?.add(graph_sem)?;
    Ok(AsiLoss {
        scope_syn,
        scope_sem,
        graph_syn,
        graph_sem,
        total,
    })
}
