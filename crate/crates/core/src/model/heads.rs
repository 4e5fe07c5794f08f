//! Fusion, scope-filtered pooling, and the classification losses.

use crate::tensor::{Result, Tensor, TensorError, Var, EPS};

/// `g = σ([H_syn ‖ H_sem] W_g + b_g)`, `F = g ⊙ H_syn + (1 − g) ⊙ H_sem`.
pub fn gated_fuse<'t>(
    h_sem: Var<'t>,
    h_syn: Var<'t>,
    w_g: Var<'t>,
    b_g: Var<'t>,
) -> Result<Var<'t>> {
    if h_sem.shape() != h_syn.shape() {
        return Err(TensorError::Shape {
            op: "gated_fuse",
            left: h_sem.shape(),
            right: h_syn.shape(),
        });
    }
    let g = Var::concat(&[h_syn, h_sem])?
        .matmul(w_g)?
        .add_row(b_g)?
        .sigmoid();
    g.mul(h_syn)?.add(g.one_minus().mul(h_sem)?)
}

/// `[pool(F, mask) ‖ pool(H_sem, mask) ‖ pool(H, all)]`.
pub fn target_features<'t>(
    f: Var<'t>,
    h_sem: Var<'t>,
    h: Var<'t>,
    mask: &[bool],
) -> Result<Var<'t>> {
    let all = vec![true; mask.len()];
    Var::concat(&[
        f.masked_mean_pool(mask)?,
        h_sem.masked_mean_pool(mask)?,
        h.masked_mean_pool(&all)?,
    ])
}

/// Mean binary cross-entropy of probabilities against 0/1 labels, with both
/// log arguments floored at `EPS`.
pub fn bce_mean<'t>(probs: Var<'t>, labels: &[f64]) -> Result<Var<'t>> {
    if probs.numel() != labels.len() || labels.is_empty() {
        return Err(TensorError::Shape {
            op: "bce_mean",
            left: probs.shape(),
            right: vec![labels.len()],
        });
    }
    let tape = probs.tape();
    let p = probs.reshape(&[labels.len()])?;
    let y = tape.leaf(Tensor::vector(labels.to_vec()));
    let pos = y.mul(p.clamp_min(EPS).ln()?)?;
    let neg = y.one_minus().mul(p.one_minus().clamp_min(EPS).ln()?)?;
    Ok(pos.add(neg)?.mean().neg())
}

/// Mean negative log-likelihood of the gold class in each row of an M×C
/// log-probability matrix.
pub fn nll_mean<'t>(log_probs: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
    let shape = log_probs.shape();
    if shape.len() != 2 || shape[0] != labels.len() || labels.is_empty() {
        return Err(TensorError::Shape {
            op: "nll_mean",
            left: shape,
            right: vec![labels.len()],
        });
    }
    let c = shape[1];
    let idx: Vec<usize> = labels.iter().enumerate().map(|(r, &y)| r * c + y).collect();
    Ok(log_probs.gather(&idx)?.mean().neg())
}

/// Task loss plus `λ` times the contrastive term.
pub fn with_asi<'t>(task: Var<'t>, asi: Var<'t>, lambda: f64) -> Result<Var<'t>> {
    task.add(asi.scale(lambda))
}
