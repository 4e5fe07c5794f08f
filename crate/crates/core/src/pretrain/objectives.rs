//! Pretraining losses.

use crate::model::heads::{bce_mean, nll_mean};
use crate::tensor::{Result, Tensor, TensorError, Var};

/// `−[L log L̂ + (1 − L) log(1 − L̂)]` for one prediction; shared by the
/// aspect-consistency and image-text matching objectives.
pub fn pair_bce<'t>(label: bool, prob: Var<'t>) -> Result<Var<'t>> {
    bce_mean(prob, &[if label { 1.0 } else { 0.0 }])
}

pub fn aoe_loss<'t>(label: bool, prob: Var<'t>) -> Result<Var<'t>> {
    pair_bce(label, prob)
}

pub fn itm_loss<'t>(label: bool, prob: Var<'t>) -> Result<Var<'t>> {
    pair_bce(label, prob)
}

/// Per-aspect mean pooling of `h` (S×D) done as one product with an N×S
/// matrix of normalized mask rows.
pub fn pool_aspects<'t>(h: Var<'t>, masks: &[Vec<bool>]) -> Result<Var<'t>> {
    let s = h.shape().first().copied().unwrap_or(0);
    let mut weights = Vec::with_capacity(masks.len() * s);
    for m in masks {
        let count = m.iter().filter(|&&b| b).count();
        if m.len() != s {
            return Err(TensorError::Shape {
                op: "pool_aspects",
                left: h.shape(),
                right: vec![m.len()],
            });
        }
        if count == 0 {
            return Err(TensorError::EmptyScope);
        }
        weights.extend(m.iter().map(|&b| if b { 1.0 / count as f64 } else { 0.0 }));
    }
    let w = h.tape().leaf(Tensor::new(vec![masks.len(), s], weights)?);
    w.matmul(h)
}

/// Mean negative log-likelihood of each aspect's gold class, classifying
/// the aspect-pooled rows of `h` with `w` (D×3) and `b` (3).
pub fn assc_loss<'t>(
    h: Var<'t>,
    masks: &[Vec<bool>],
    labels: &[usize],
    w: Var<'t>,
    b: Var<'t>,
) -> Result<Var<'t>> {
    let logits = pool_aspects(h, masks)?.matmul(w)?.add_row(b)?;
    nll_mean(logits.log_softmax_rows(), labels)
}

/// The four pretraining components and their sum.
#[derive(Debug, Clone, Copy)]
pub struct PretrainLoss<'t> {
    pub q: Var<'t>,
    pub aoe: Var<'t>,
    pub itm: Var<'t>,
    pub assc: Var<'t>,
    pub total: Var<'t>,
}

/// `L_Q + L_AOE + L_ITM + L_ASSC`; an absent query-encoder term counts as 0.
pub fn joint_pretrain_loss<'t>(
    q: Option<Var<'t>>,
    aoe: Var<'t>,
    itm: Var<'t>,
    assc: Var<'t>,
) -> Result<PretrainLoss<'t>> {
    let q = q.unwrap_or_else(|| aoe.tape().scalar(0.0));
    let total = q.add(aoe)?.add(itm)?.add(assc)?;
    Ok(PretrainLoss {
        q,
        aoe,
        itm,
        assc,
        total,
    })
}
