//! Semantic and syntactic adjacencies and the graph networks run over them.

use rand::Rng;

use crate::ingest::DepTree;
use crate::tensor::{ParamSet, Result, Tape, Tensor, Var};

/// Row-stochastic attention adjacency:
/// `softmax_rows((H W_q)(H W_k)ᵀ / √D)`.
pub fn sem_adjacency<'t>(h: Var<'t>, w_q: Var<'t>, w_k: Var<'t>) -> Result<Var<'t>> {
    let d = h.shape().last().copied().unwrap_or(1);
    let q = h.matmul(w_q)?;
    let k = h.matmul(w_k)?;
    Ok(q.matmul(k.transpose())?
        .scale(1.0 / (d as f64).sqrt())
        .softmax_rows())
}

/// Binary, symmetric adjacency with self-loops over head–dependent edges.
/// With `row_normalize` every row is divided by its sum.
pub fn syn_adjacency(tree: &DepTree, row_normalize: bool) -> Tensor {
    let n = tree.len();
    let mut a = Tensor::zeros(&[n, n]);
    let data = a.data_mut();
    for i in 0..n {
        data[i * n + i] = 1.0;
    }
    for tok in tree.tokens() {
        if tok.head != 0 {
            let (i, j) = (tok.index - 1, tok.head - 1);
            data[i * n + j] = 1.0;
            data[j * n + i] = 1.0;
        }
    }
    if row_normalize {
        for row in data.chunks_mut(n) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    a
}

/// Weight and bias of one graph layer.
#[derive(Debug, Clone, Copy)]
pub struct GnnLayer<'t> {
    pub w: Var<'t>,
    pub b: Var<'t>,
}

/// `H_l = ReLU(A H_{l-1} W_l + b_l)` for each layer in turn.
pub fn gnn_forward<'t>(a: Var<'t>, h0: Var<'t>, layers: &[GnnLayer<'t>]) -> Result<Var<'t>> {
    let mut h = h0;
    for layer in layers {
        h = a.matmul(h)?.matmul(layer.w)?.add_row(layer.b)?.relu();
    }
    Ok(h)
}

/// Parameter names for a network with `layers` layers under `prefix`.
pub fn layer_names(prefix: &str, layers: usize) -> Vec<(String, String)> {
    (1..=layers)
        .map(|l| (format!("{prefix}.w{l}"), format!("{prefix}.b{l}")))
        .collect()
}

/// Adds `layers` D×D weights and zero biases, weights uniform in `±1/√D`.
pub fn init_gnn(params: &mut ParamSet, prefix: &str, d: usize, layers: usize, rng: &mut impl Rng) {
    let bound = 1.0 / (d as f64).sqrt();
    for (w, b) in layer_names(prefix, layers) {
        params.insert_uniform(w, &[d, d], bound, rng);
        params.insert(b, Tensor::zeros(&[d]));
    }
}

/// Binds the layers registered by [`init_gnn`].
pub fn bind_gnn<'t>(
    bound: &crate::tensor::Bound<'t>,
    prefix: &str,
    layers: usize,
) -> Vec<GnnLayer<'t>> {
    layer_names(prefix, layers)
        .iter()
        .map(|(w, b)| GnnLayer {
            w: bound.get(w),
            b: bound.get(b),
        })
        .collect()
}

/// Convenience for callers holding plain tensors.
pub fn leaf_layers<'t>(tape: &'t Tape, layers: &[(Tensor, Tensor)]) -> Vec<GnnLayer<'t>> {
    layers
        .iter()
        .map(|(w, b)| GnnLayer {
            w: tape.leaf(w.clone()),
            b: tape.leaf(b.clone()),
        })
        .collect()
}
