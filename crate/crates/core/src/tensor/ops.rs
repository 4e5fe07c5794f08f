use super::{Node, Op, Result, Tensor, TensorError, Var, EPS};

fn broadcast_pair(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape == b.shape || b.numel() == 1 {
        Ok(a.shape.clone())
    } else if a.numel() == 1 {
        Ok(b.shape.clone())
    } else {
        Err(TensorError::Shape {
            op,
            left: a.shape.clone(),
            right: b.shape.clone(),
        })
    }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, shape: Vec<usize>, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let n: usize = shape.iter().product();
    let pick = |t: &Tensor, i: usize| if t.numel() == 1 { t.data[0] } else { t.data[i] };
    let data = (0..n).map(|i| f(pick(a, i), pick(b, i))).collect();
    Tensor { shape, data }
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|&v| f(v)).collect(),
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn row_log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl<'t> Var<'t> {
    fn unary(&self, op: Op, f: impl FnOnce(&Tensor) -> Tensor) -> Var<'t> {
        let out = self.with_value(f);
        self.tape.push(out, op)
    }

    fn binary(
        &self,
        other: Var<'t>,
        op: Op,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
    ) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id].value, &nodes[other.id].value)?
        };
        Ok(self.tape.push(out, op))
    }

    /// Matrix product of two rank-2 values.
    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::MatMul(self.id, other.id), |a, b| {
            if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
                return Err(TensorError::Shape {
                    op: "matmul",
                    left: a.shape.clone(),
                    right: b.shape.clone(),
                });
            }
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            let mut data = vec![0.0; m * n];
            for i in 0..m {
                for p in 0..k {
                    let aip = a.data[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let brow = &b.data[p * n..(p + 1) * n];
                    let orow = &mut data[i * n..(i + 1) * n];
                    for (o, bv) in orow.iter_mut().zip(brow) {
                        *o += aip * bv;
                    }
                }
            }
            Ok(Tensor {
                shape: vec![m, n],
                data,
            })
        })
    }

    pub fn transpose(&self) -> Var<'t> {
        self.unary(Op::Transpose(self.id), |a| {
            let (m, n) = a.dims2();
            let mut data = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    data[j * m + i] = a.data[i * n + j];
                }
            }
            Tensor {
                shape: vec![n, m],
                data,
            }
        })
    }

    /// Elementwise sum; a single-entry operand broadcasts.
    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| {
            let shape = broadcast_pair("add", a, b)?;
            Ok(zip_broadcast(a, b, shape, |x, y| x + y))
        })
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| {
            let shape = broadcast_pair("sub", a, b)?;
            Ok(zip_broadcast(a, b, shape, |x, y| x - y))
        })
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| {
            let shape = broadcast_pair("mul", a, b)?;
            Ok(zip_broadcast(a, b, shape, |x, y| x * y))
        })
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |a| map(a, |v| v * c))
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_const(&self, c: f64) -> Var<'t> {
        self.unary(Op::AddConst(self.id), |a| map(a, |v| v + c))
    }

    /// `1 - x`, elementwise.
    pub fn one_minus(&self) -> Var<'t> {
        self.neg().add_const(1.0)
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |a| map(a, |v| v.max(0.0)))
    }

    /// `max(x, floor)`, elementwise; clamped entries pass no gradient.
    pub fn clamp_min(&self, floor: f64) -> Var<'t> {
        self.unary(Op::ClampMin(self.id, floor), |a| map(a, |v| v.max(floor)))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), |a| map(a, stable_sigmoid))
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp(self.id), |a| map(a, f64::exp))
    }

    /// Natural log; fails on any non-positive entry.
    pub fn ln(&self) -> Result<Var<'t>> {
        let bad = self.with_value(|a| {
            a.data
                .iter()
                .position(|&v| v <= 0.0 || v.is_nan())
                .map(|i| (i, a.data[i]))
        });
        if let Some((index, value)) = bad {
            return Err(TensorError::Domain {
                op: "log",
                index,
                value,
            });
        }
        Ok(self.unary(Op::Log(self.id), |a| map(a, f64::ln)))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> Var<'t> {
        self.unary(Op::SoftmaxRows(self.id), |a| {
            let (m, n) = a.dims2();
            let mut data = a.data.clone();
            for r in 0..m {
                let row = &mut data[r * n..(r + 1) * n];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    total += *v;
                }
                for v in row.iter_mut() {
                    *v /= total;
                }
            }
            Tensor {
                shape: a.shape.clone(),
                data,
            }
        })
    }

    pub fn log_softmax_rows(&self) -> Var<'t> {
        self.unary(Op::LogSoftmaxRows(self.id), |a| {
            let (m, n) = a.dims2();
            let mut data = a.data.clone();
            for r in 0..m {
                let row = &mut data[r * n..(r + 1) * n];
                let lse = row_log_sum_exp(row);
                for v in row.iter_mut() {
                    *v -= lse;
                }
            }
            Tensor {
                shape: a.shape.clone(),
                data,
            }
        })
    }

    /// `log Σ_j exp(x_ij)` per row; output is a vector with one entry per row.
    pub fn log_sum_exp_rows(&self) -> Var<'t> {
        self.unary(Op::LogSumExpRows(self.id), |a| {
            let (m, n) = a.dims2();
            let data = (0..m)
                .map(|r| row_log_sum_exp(&a.data[r * n..(r + 1) * n]))
                .collect();
            Tensor {
                shape: vec![m],
                data,
            }
        })
    }

    /// Elementwise `log(exp(a) + exp(b))`.
    pub fn log_add_exp(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::LogAddExp(self.id, other.id), |a, b| {
            if a.shape != b.shape {
                return Err(TensorError::Shape {
                    op: "log_add_exp",
                    left: a.shape.clone(),
                    right: b.shape.clone(),
                });
            }
            Ok(zip_broadcast(a, b, a.shape.clone(), log_add_exp))
        })
    }

    pub fn sum(&self) -> Var<'t> {
        self.unary(Op::Sum(self.id), |a| Tensor::scalar(a.data.iter().sum()))
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.numel().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Adds a length-n vector to every row of an m×n matrix.
    pub fn add_row(&self, bias: Var<'t>) -> Result<Var<'t>> {
        self.binary(bias, Op::AddRow(self.id, bias.id), |x, b| {
            let (m, n) = x.dims2();
            if x.shape.len() != 2 || b.numel() != n {
                return Err(TensorError::Shape {
                    op: "add_row",
                    left: x.shape.clone(),
                    right: b.shape.clone(),
                });
            }
            let mut data = x.data.clone();
            for r in 0..m {
                for (v, bv) in data[r * n..(r + 1) * n].iter_mut().zip(&b.data) {
                    *v += bv;
                }
            }
            Ok(Tensor {
                shape: x.shape.clone(),
                data,
            })
        })
    }

    /// Flat-index selection; the result is a vector.
    pub fn gather(&self, indices: &[usize]) -> Result<Var<'t>> {
        let len = self.numel();
        if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
            return Err(TensorError::Index {
                op: "gather",
                index: bad,
                len,
            });
        }
        let idx = indices.to_vec();
        Ok(self.unary(Op::Gather(self.id, idx.clone()), |a| {
            Tensor::vector(idx.iter().map(|&i| a.data[i]).collect())
        }))
    }

    pub fn row(&self, r: usize) -> Result<Var<'t>> {
        let (m, n) = self.with_value(Tensor::dims2);
        if r >= m {
            return Err(TensorError::Index {
                op: "row",
                index: r,
                len: m,
            });
        }
        self.gather(&(r * n..(r + 1) * n).collect::<Vec<_>>())
    }

    /// Selects whole rows of a matrix, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Var<'t>> {
        let (m, n) = self.with_value(Tensor::dims2);
        let mut idx = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(TensorError::Index {
                    op: "select_rows",
                    index: r,
                    len: m,
                });
            }
            idx.extend(r * n..(r + 1) * n);
        }
        self.gather(&idx)?.reshape(&[rows.len(), n])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(TensorError::Shape {
                op: "reshape",
                left: self.shape(),
                right: shape.to_vec(),
            });
        }
        let shape = shape.to_vec();
        Ok(self.unary(Op::Reshape(self.id), |a| Tensor {
            shape,
            data: a.data.clone(),
        }))
    }

    /// Concatenation along the last axis. Vectors join end to end; matrices
    /// with equal row counts join feature-wise.
    pub fn concat(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let tape = parts[0].tape;
        let out = {
            let nodes = tape.nodes.borrow();
            let values: Vec<&Tensor> = parts.iter().map(|p| &nodes[p.id].value).collect();
            let rank = values[0].shape.len().max(1);
            let rows = if rank == 1 { 1 } else { values[0].shape[0] };
            for v in &values {
                let ok = if rank == 1 {
                    v.shape.len() <= 1
                } else {
                    v.shape.len() == 2 && v.shape[0] == rows
                };
                if !ok {
                    return Err(TensorError::Shape {
                        op: "concat",
                        left: values[0].shape.clone(),
                        right: v.shape.clone(),
                    });
                }
            }
            let widths: Vec<usize> = values.iter().map(|v| v.dims2().1).collect();
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (v, w) in values.iter().zip(&widths) {
                    data.extend_from_slice(&v.data[r * w..(r + 1) * w]);
                }
            }
            let shape = if rank == 1 {
                vec![total]
            } else {
                vec![rows, total]
            };
            Tensor { shape, data }
        };
        Ok(tape.push(out, Op::Concat(parts.iter().map(|p| p.id).collect())))
    }

    /// Pairwise cosine similarity of the rows of `self` (m×d) and `other`
    /// (n×d): `a·b / (‖a‖‖b‖ + ε)`.
    pub fn cosine_matrix(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::CosineMatrix(self.id, other.id), |a, b| {
            let (m, d) = a.dims2();
            let (n, d2) = b.dims2();
            if d != d2 || d == 0 {
                return Err(TensorError::Shape {
                    op: "cosine_matrix",
                    left: a.shape.clone(),
                    right: b.shape.clone(),
                });
            }
            let mut data = Vec::with_capacity(m * n);
            for i in 0..m {
                let ai = &a.data[i * d..(i + 1) * d];
                let na = norm(ai);
                for j in 0..n {
                    let bj = &b.data[j * d..(j + 1) * d];
                    data.push(dot(ai, bj) / (na * norm(bj) + EPS));
                }
            }
            Ok(Tensor {
                shape: vec![m, n],
                data,
            })
        })
    }

    /// Cosine similarity of two equal-length vectors, as a scalar.
    pub fn cosine_sim(&self, other: Var<'t>) -> Result<Var<'t>> {
        let d = self.numel();
        if d == 0 || other.numel() != d {
            return Err(TensorError::Shape {
                op: "cosine_sim",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let u = self.reshape(&[1, d])?;
        let v = other.reshape(&[1, d])?;
        u.cosine_matrix(v)?.reshape(&[])
    }

    /// Mean of the rows of an S×D matrix where `mask` is set.
    pub fn masked_mean_pool(&self, mask: &[bool]) -> Result<Var<'t>> {
        let (s, _) = self.with_value(Tensor::dims2);
        if mask.len() != s {
            return Err(TensorError::Shape {
                op: "masked_mean_pool",
                left: self.shape(),
                right: vec![mask.len()],
            });
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(TensorError::EmptyScope);
        }
        let w: Vec<f64> = mask
            .iter()
            .map(|&m| if m { 1.0 / count as f64 } else { 0.0 })
            .collect();
        Ok(self.unary(Op::WeightedRowSum(self.id, w.clone()), |a| {
            let (rows, d) = a.dims2();
            let mut out = vec![0.0; d];
            for (r, &wr) in w.iter().enumerate().take(rows) {
                if wr != 0.0 {
                    for (o, v) in out.iter_mut().zip(&a.data[r * d..(r + 1) * d]) {
                        *o += wr * v;
                    }
                }
            }
            Tensor::vector(out)
        }))
    }
}

fn accumulate_broadcast(target: &mut [f64], g: &[f64], f: impl Fn(usize) -> f64) {
    if target.len() == 1 && g.len() != 1 {
        target[0] += g.iter().enumerate().map(|(i, gi)| gi * f(i)).sum::<f64>();
    } else {
        for (i, (t, gi)) in target.iter_mut().zip(g).enumerate() {
            *t += gi * f(i);
        }
    }
}

fn bval(t: &Tensor, i: usize) -> f64 {
    if t.numel() == 1 {
        t.data[0]
    } else {
        t.data[i]
    }
}

/// Adds the contribution of node `id` (whose upstream gradient is `g`) to the
/// gradients of its inputs.
pub(super) fn backprop(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Vec<f64>]) {
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[1]);
            let mut ga = vec![0.0; m * k];
            let mut gb = vec![0.0; k * n];
            for i in 0..m {
                for p in 0..k {
                    let mut acc = 0.0;
                    for j in 0..n {
                        let gij = g[i * n + j];
                        acc += gij * bv.data[p * n + j];
                        gb[p * n + j] += av.data[i * k + p] * gij;
                    }
                    ga[i * k + p] = acc;
                }
            }
            add_into(&mut grads[*a], &ga);
            add_into(&mut grads[*b], &gb);
        }
        Op::Transpose(a) => {
            let (m, n) = nodes[*a].value.dims2();
            let ga = &mut grads[*a];
            for i in 0..m {
                for j in 0..n {
                    ga[i * n + j] += g[j * m + i];
                }
            }
        }
        Op::Add(a, b) => {
            accumulate_broadcast(&mut grads[*a], g, |_| 1.0);
            accumulate_broadcast(&mut grads[*b], g, |_| 1.0);
        }
        Op::Sub(a, b) => {
            accumulate_broadcast(&mut grads[*a], g, |_| 1.0);
            accumulate_broadcast(&mut grads[*b], g, |_| -1.0);
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            accumulate_broadcast(&mut grads[*a], g, |i| bval(bv, i));
            accumulate_broadcast(&mut grads[*b], g, |i| bval(av, i));
        }
        Op::Scale(a, c) => {
            for (t, gi) in grads[*a].iter_mut().zip(g) {
                *t += c * gi;
            }
        }
        Op::AddConst(a) | Op::Reshape(a) => add_into(&mut grads[*a], g),
        Op::Relu(a) => {
            let x = &nodes[*a].value.data;
            for ((t, gi), xi) in grads[*a].iter_mut().zip(g).zip(x) {
                if *xi > 0.0 {
                    *t += gi;
                }
            }
        }
        Op::ClampMin(a, floor) => {
            let x = &nodes[*a].value.data;
            for ((t, gi), xi) in grads[*a].iter_mut().zip(g).zip(x) {
                if *xi > *floor {
                    *t += gi;
                }
            }
        }
        Op::Sigmoid(a) => {
            for ((t, gi), y) in grads[*a].iter_mut().zip(g).zip(&out.data) {
                *t += gi * y * (1.0 - y);
            }
        }
        Op::Exp(a) => {
            for ((t, gi), y) in grads[*a].iter_mut().zip(g).zip(&out.data) {
                *t += gi * y;
            }
        }
        Op::Log(a) => {
            let x = &nodes[*a].value.data;
            for ((t, gi), xi) in grads[*a].iter_mut().zip(g).zip(x) {
                *t += gi / xi;
            }
        }
        Op::SoftmaxRows(a) => {
            let (m, n) = out.dims2();
            let ga = &mut grads[*a];
            for r in 0..m {
                let y = &out.data[r * n..(r + 1) * n];
                let gr = &g[r * n..(r + 1) * n];
                let inner = dot(y, gr);
                for j in 0..n {
                    ga[r * n + j] += y[j] * (gr[j] - inner);
                }
            }
        }
        Op::LogSoftmaxRows(a) => {
            let (m, n) = out.dims2();
            let ga = &mut grads[*a];
            for r in 0..m {
                let y = &out.data[r * n..(r + 1) * n];
                let gr = &g[r * n..(r + 1) * n];
                let total: f64 = gr.iter().sum();
                for j in 0..n {
                    ga[r * n + j] += gr[j] - y[j].exp() * total;
                }
            }
        }
        Op::LogSumExpRows(a) => {
            let x = &nodes[*a].value;
            let (m, n) = x.dims2();
            let ga = &mut grads[*a];
            for r in 0..m {
                let lse = out.data[r];
                for j in 0..n {
                    ga[r * n + j] += g[r] * (x.data[r * n + j] - lse).exp();
                }
            }
        }
        Op::LogAddExp(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            for i in 0..g.len() {
                let y = out.data[i];
                grads[*a][i] += g[i] * (av.data[i] - y).exp();
                grads[*b][i] += g[i] * (bv.data[i] - y).exp();
            }
        }
        Op::Sum(a) => {
            for t in grads[*a].iter_mut() {
                *t += g[0];
            }
        }
        Op::AddRow(x, b) => {
            let (m, n) = nodes[*x].value.dims2();
            add_into(&mut grads[*x], g);
            let gb = &mut grads[*b];
            for r in 0..m {
                for j in 0..n {
                    gb[j] += g[r * n + j];
                }
            }
        }
        Op::Concat(parts) => {
            let (rows, total) = out.dims2();
            let mut offset = 0;
            for p in parts {
                let w = nodes[*p].value.dims2().1;
                let gp = &mut grads[*p];
                for r in 0..rows {
                    for j in 0..w {
                        gp[r * w + j] += g[r * total + offset + j];
                    }
                }
                offset += w;
            }
        }
        Op::Gather(a, idx) => {
            let ga = &mut grads[*a];
            for (k, &i) in idx.iter().enumerate() {
                ga[i] += g[k];
            }
        }
        Op::CosineMatrix(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (m, d) = av.dims2();
            let n = bv.dims2().0;
            let na: Vec<f64> = (0..m).map(|i| norm(&av.data[i * d..(i + 1) * d])).collect();
            let nb: Vec<f64> = (0..n).map(|j| norm(&bv.data[j * d..(j + 1) * d])).collect();
            let mut ga = vec![0.0; m * d];
            let mut gb = vec![0.0; n * d];
            for i in 0..m {
                let ai = &av.data[i * d..(i + 1) * d];
                for j in 0..n {
                    let gij = g[i * n + j];
                    if gij == 0.0 {
                        continue;
                    }
                    let bj = &bv.data[j * d..(j + 1) * d];
                    let p = dot(ai, bj);
                    let q = na[i] * nb[j] + EPS;
                    // dc/da = b/q - p/q^2 * ‖b‖ * a/‖a‖, symmetric for b.
                    let ca = if na[i] > 0.0 {
                        p / (q * q) * nb[j] / na[i]
                    } else {
                        0.0
                    };
                    let cb = if nb[j] > 0.0 {
                        p / (q * q) * na[i] / nb[j]
                    } else {
                        0.0
                    };
                    for k in 0..d {
                        ga[i * d + k] += gij * (bj[k] / q - ca * ai[k]);
                        gb[j * d + k] += gij * (ai[k] / q - cb * bj[k]);
                    }
                }
            }
            add_into(&mut grads[*a], &ga);
            add_into(&mut grads[*b], &gb);
        }
        Op::WeightedRowSum(a, w) => {
            let d = out.numel();
            let ga = &mut grads[*a];
            for (r, &wr) in w.iter().enumerate() {
                if wr != 0.0 {
                    for k in 0..d {
                        ga[r * d + k] += wr * g[k];
                    }
                }
            }
        }
    }
}

fn add_into(target: &mut [f64], g: &[f64]) {
    for (t, gi) in target.iter_mut().zip(g) {
        *t += gi;
    }
}
