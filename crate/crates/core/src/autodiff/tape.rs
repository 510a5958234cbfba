//! Operation tape for reverse-mode differentiation of rank-2 tensors.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};
use crate::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Groups of row indices, stored compactly (CSR layout).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
    items: Vec<usize>,
}

impl Segments {
    pub fn from_lists<L: AsRef<[usize]>>(lists: &[L]) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut items = Vec::new();
        offsets.push(0);
        for l in lists {
            items.extend_from_slice(l.as_ref());
            offsets.push(items.len());
        }
        Segments { offsets, items }
    }

    /// One group holding rows `0..n`.
    pub fn single(n: usize) -> Self {
        Segments {
            offsets: vec![0, n],
            items: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn group(&self, g: usize) -> &[usize] {
        &self.items[self.offsets[g]..self.offsets[g + 1]]
    }

    fn max_item(&self) -> Option<usize> {
        self.items.iter().copied().max()
    }
}

enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Concat(Vec<usize>),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Scale(usize, T),
    LeakyRelu(usize, T),
    Softmax(usize),
    Gather(usize, Arc<Vec<usize>>),
    SegMax(usize, Vec<usize>),
    SegMean(usize, Arc<Segments>),
    SegVar(usize, Arc<Segments>, Vec<T>),
    Dropout(usize, Vec<T>),
    Sum(usize),
    SoftmaxKl {
        logits: usize,
        weights: Vec<T>,
        advantage: Vec<T>,
    },
    LaplacianEnergy {
        weights: usize,
        support: Arc<Vec<Vec<usize>>>,
        edges: Arc<Vec<(usize, usize)>>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Records forward operations; [`Tape::backward`] replays them in reverse.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Sum of a slice after sorting, so the result does not depend on the
/// order the values arrive in.
fn ordered_sum<T: Scalar>(vals: &mut [T]) -> T {
    vals.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    vals.iter().copied().fold(T::zero(), |a, b| a + b)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push("leaf", value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims();
        let (k2, n) = self.value(b).dims();
        if k != k2 {
            return Err(Error::shape("matmul", format!("{m}x{k} · {k2}x{n}")));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (n as isize, 1),
            &mut out,
            false,
        );
        let value = Tensor::matrix(m, n, out)?;
        self.push("matmul", value, Op::MatMul(a.0, b.0))
    }

    /// Column-wise concatenation of tensors with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        if let Some(p) = parts.iter().find(|&&p| self.value(p).rows() != rows) {
            return Err(Error::shape("concat", format!("row count {} vs {rows}", self.value(*p).rows())));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::matrix(rows, cols, out)?;
        self.push("concat", value, Op::Concat(parts.iter().map(|p| p.0).collect()))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).dims() != self.value(b).dims() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.value(a).dims(), self.value(b).dims()),
            ));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (r, c) = self.value(a).dims();
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::matrix(r, c, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_with(a, b, |x, y| x + y)?;
        self.push("add", value, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_with(a, b, |x, y| x - y)?;
        self.push("sub", value, Op::Sub(a.0, b.0))
    }

    /// Adds the `1 × C` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.value(a).dims();
        if self.value(bias).dims() != (1, c) {
            return Err(Error::shape("add_row", format!("{r}x{c} + {:?}", self.value(bias).dims())));
        }
        let b = self.value(bias).data();
        let data = self
            .value(a)
            .data()
            .chunks(c.max(1))
            .flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y))
            .collect();
        let value = Tensor::matrix(r, c, data)?;
        self.push("add_row", value, Op::AddRow(a.0, bias.0))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let (r, c) = self.value(a).dims();
        let data = self.value(a).data().iter().map(|&x| x * s).collect();
        self.push("scale", Tensor::matrix(r, c, data)?, Op::Scale(a.0, s))
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: T) -> Result<Var> {
        let (r, c) = self.value(a).dims();
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| if x > T::zero() { x } else { alpha * x })
            .collect();
        self.push("leaky_relu", Tensor::matrix(r, c, data)?, Op::LeakyRelu(a.0, alpha))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.value(a).dims();
        let mut data = Vec::with_capacity(r * c);
        for row in self.value(a).data().chunks(c.max(1)) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let start = data.len();
            data.extend(row.iter().map(|&x| (x - m).exp()));
            let s: T = data[start..].iter().copied().sum();
            for x in &mut data[start..] {
                *x /= s;
            }
        }
        self.push("softmax", Tensor::matrix(r, c, data)?, Op::Softmax(a.0))
    }

    /// Output row `i` is input row `index[i]`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<Vec<usize>>) -> Result<Var> {
        let (r, c) = self.value(a).dims();
        if let Some(&bad) = index.iter().find(|&&i| i >= r) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {r}")));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            data.extend_from_slice(src.row(i));
        }
        let value = Tensor::matrix(index.len(), c, data)?;
        self.push("gather_rows", value, Op::Gather(a.0, index))
    }

    fn check_segments(&self, op: &'static str, a: Var, seg: &Segments) -> Result<()> {
        let r = self.value(a).rows();
        match seg.max_item() {
            Some(m) if m >= r => Err(Error::shape(op, format!("row {m} of {r}"))),
            _ => Ok(()),
        }
    }

    /// Column-wise maximum per group; empty groups give zeros. The gradient
    /// flows to the first maximal row.
    pub fn segment_max(&mut self, a: Var, seg: &Segments) -> Result<Var> {
        self.check_segments("segment_max", a, seg)?;
        let c = self.value(a).cols();
        let src = self.value(a);
        let mut data = vec![T::zero(); seg.len() * c];
        let mut arg = vec![usize::MAX; seg.len() * c];
        for g in 0..seg.len() {
            let items = seg.group(g);
            let Some((&first, rest)) = items.split_first() else { continue };
            let out = &mut data[g * c..(g + 1) * c];
            let idx = &mut arg[g * c..(g + 1) * c];
            out.copy_from_slice(src.row(first));
            idx.fill(first);
            for &i in rest {
                for (col, &x) in src.row(i).iter().enumerate() {
                    if x > out[col] {
                        out[col] = x;
                        idx[col] = i;
                    }
                }
            }
        }
        let value = Tensor::matrix(seg.len(), c, data)?;
        self.push("segment_max", value, Op::SegMax(a.0, arg))
    }

    /// Column-wise mean per group; empty groups give zeros.
    pub fn segment_mean(&mut self, a: Var, seg: Arc<Segments>) -> Result<Var> {
        self.check_segments("segment_mean", a, &seg)?;
        let c = self.value(a).cols();
        let src = self.value(a);
        let mut data = vec![T::zero(); seg.len() * c];
        let mut col_vals = Vec::new();
        for g in 0..seg.len() {
            let items = seg.group(g);
            if items.is_empty() {
                continue;
            }
            let n = T::lit(items.len() as f64);
            for col in 0..c {
                col_vals.clear();
                col_vals.extend(items.iter().map(|&i| src.get(i, col)));
                data[g * c + col] = ordered_sum(&mut col_vals) / n;
            }
        }
        let value = Tensor::matrix(seg.len(), c, data)?;
        self.push("segment_mean", value, Op::SegMean(a.0, seg))
    }

    /// Column-wise biased (1/n) variance per group; empty groups give zeros.
    pub fn segment_var(&mut self, a: Var, seg: Arc<Segments>) -> Result<Var> {
        self.check_segments("segment_var", a, &seg)?;
        let c = self.value(a).cols();
        let src = self.value(a);
        let mut data = vec![T::zero(); seg.len() * c];
        let mut means = vec![T::zero(); seg.len() * c];
        let mut col_vals = Vec::new();
        for g in 0..seg.len() {
            let items = seg.group(g);
            if items.is_empty() {
                continue;
            }
            let n = T::lit(items.len() as f64);
            for col in 0..c {
                col_vals.clear();
                col_vals.extend(items.iter().map(|&i| src.get(i, col)));
                let mu = ordered_sum(&mut col_vals) / n;
                for v in col_vals.iter_mut() {
                    *v = (*v - mu) * (*v - mu);
                }
                means[g * c + col] = mu;
                data[g * c + col] = ordered_sum(&mut col_vals) / n;
            }
        }
        let value = Tensor::matrix(seg.len(), c, data)?;
        self.push("segment_var", value, Op::SegVar(a.0, seg, means))
    }

    /// Zeroes each entry with probability `rate` and scales survivors by
    /// `1 / (1 − rate)`. The mask is a pure function of `seed`.
    pub fn dropout(&mut self, a: Var, rate: f64, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} not in [0, 1)")));
        }
        let (r, c) = self.value(a).dims();
        let keep = T::lit(1.0 / (1.0 - rate));
        let mask: Vec<T> = if rate == 0.0 {
            vec![T::one(); r * c]
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..r * c)
                .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
                .collect()
        };
        let data = self.value(a).data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        self.push("dropout", Tensor::matrix(r, c, data)?, Op::Dropout(a.0, mask))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a.0))
    }

    /// `Σ_rows Σ_k w_k (log w_k − log max(t_k, ε))` with `w = softmax(logits)`,
    /// evaluated in log space so it stays finite for saturated rows.
    pub fn softmax_kl(&mut self, logits: Var, target: &Tensor<T>, eps: T) -> Result<Var> {
        let (r, c) = self.value(logits).dims();
        if target.dims() != (r, c) {
            return Err(Error::shape("softmax_kl", format!("{r}x{c} vs target {:?}", target.dims())));
        }
        if !target.all_finite() {
            return Err(Error::NonFinite { op: "softmax_kl" });
        }
        let mut weights = Vec::with_capacity(r * c);
        let mut advantage = Vec::with_capacity(r * c);
        let mut total = T::zero();
        for (row, trow) in self.value(logits).data().chunks(c.max(1)).zip(target.data().chunks(c.max(1))) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<T>().ln();
            let start = weights.len();
            let mut row_loss = T::zero();
            for (&z, &t) in row.iter().zip(trow) {
                let logw = z - lse;
                let w = logw.exp();
                let a = logw - t.max(eps).ln();
                row_loss += w * a;
                weights.push(w);
                advantage.push(a);
            }
            for a in &mut advantage[start..] {
                *a -= row_loss;
            }
            total += row_loss;
        }
        self.push(
            "softmax_kl",
            Tensor::scalar(total),
            Op::SoftmaxKl {
                logits: logits.0,
                weights,
                advantage,
            },
        )
    }

    /// `Σ_edges Σ_bones (W_a − W_b)²` where `W` scatters the `N × K` weights
    /// onto bone columns through `support` (zeros elsewhere).
    pub fn laplacian_energy(
        &mut self,
        weights: Var,
        support: Arc<Vec<Vec<usize>>>,
        edges: Arc<Vec<(usize, usize)>>,
    ) -> Result<Var> {
        let (r, c) = self.value(weights).dims();
        if support.len() != r || support.iter().any(|s| s.len() != c) {
            return Err(Error::shape("laplacian_energy", format!("support does not match {r}x{c}")));
        }
        if let Some(&(a, b)) = edges.iter().find(|&&(a, b)| a >= r || b >= r) {
            return Err(Error::shape("laplacian_energy", format!("edge ({a}, {b}) with {r} rows")));
        }
        let w = self.value(weights);
        let mut total = T::zero();
        for &(a, b) in edges.iter() {
            total += edge_energy(w, &support, a, b, |_, _, _| {});
        }
        self.push(
            "laplacian_energy",
            Tensor::scalar(total),
            Op::LaplacianEnergy {
                weights: weights.0,
                support,
                edges,
            },
        )
    }

    /// Gradients of the scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).dims() != (1, 1) {
            return Err(Error::shape("backward", format!("loss is {:?}, expected 1x1", self.value(loss).dims())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (m, k) = self.nodes[*a].value.dims();
                    let n = node.value.cols();
                    let mut ga = vec![T::zero(); m * k];
                    T::gemm(m, n, k, g.data(), (n as isize, 1), self.nodes[*b].value.data(), (1, n as isize), &mut ga, false);
                    let mut gb = vec![T::zero(); k * n];
                    T::gemm(k, m, n, self.nodes[*a].value.data(), (1, k as isize), g.data(), (n as isize, 1), &mut gb, false);
                    accumulate(&mut grads, *a, Tensor::matrix(m, k, ga)?);
                    accumulate(&mut grads, *b, Tensor::matrix(k, n, gb)?);
                }
                Op::Concat(parts) => {
                    let rows = node.value.rows();
                    let total = node.value.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.nodes[p].value.cols();
                        let mut gp = Vec::with_capacity(rows * pc);
                        for r in 0..rows {
                            gp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + pc]);
                        }
                        accumulate(&mut grads, p, Tensor::matrix(rows, pc, gp)?);
                        offset += pc;
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    let neg = map(&g, |x| -x);
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, neg);
                }
                Op::AddRow(a, bias) => {
                    let c = g.cols();
                    let mut gb = vec![T::zero(); c];
                    for row in g.data().chunks(c.max(1)) {
                        for (s, &x) in gb.iter_mut().zip(row) {
                            *s += x;
                        }
                    }
                    accumulate(&mut grads, *bias, Tensor::matrix(1, c, gb)?);
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, map(&g, |x| x * *s)),
                Op::LeakyRelu(a, alpha) => {
                    let input = &self.nodes[*a].value;
                    let data = g
                        .data()
                        .iter()
                        .zip(input.data())
                        .map(|(&d, &x)| if x > T::zero() { d } else { d * *alpha })
                        .collect();
                    accumulate(&mut grads, *a, Tensor::new(g.shape().to_vec(), data)?);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let c = y.cols();
                    let mut out = Vec::with_capacity(y.len());
                    for (yr, gr) in y.data().chunks(c.max(1)).zip(g.data().chunks(c.max(1))) {
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        out.extend(yr.iter().zip(gr).map(|(&p, &q)| p * (q - dot)));
                    }
                    accumulate(&mut grads, *a, Tensor::new(y.shape().to_vec(), out)?);
                }
                Op::Gather(a, index) => {
                    let (r, c) = self.nodes[*a].value.dims();
                    let mut ga = vec![T::zero(); r * c];
                    for (k, &i) in index.iter().enumerate() {
                        for col in 0..c {
                            ga[i * c + col] += g.data()[k * c + col];
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::matrix(r, c, ga)?);
                }
                Op::SegMax(a, arg) => {
                    let (r, c) = self.nodes[*a].value.dims();
                    let mut ga = vec![T::zero(); r * c];
                    for (k, &src) in arg.iter().enumerate() {
                        if src != usize::MAX {
                            ga[src * c + k % c] += g.data()[k];
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::matrix(r, c, ga)?);
                }
                Op::SegMean(a, seg) => {
                    let (r, c) = self.nodes[*a].value.dims();
                    let mut ga = vec![T::zero(); r * c];
                    for gi in 0..seg.len() {
                        let items = seg.group(gi);
                        let n = T::lit(items.len() as f64);
                        for &i in items {
                            for col in 0..c {
                                ga[i * c + col] += g.data()[gi * c + col] / n;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::matrix(r, c, ga)?);
                }
                Op::SegVar(a, seg, means) => {
                    let x = &self.nodes[*a].value;
                    let (r, c) = x.dims();
                    let mut ga = vec![T::zero(); r * c];
                    let two = T::lit(2.0);
                    for gi in 0..seg.len() {
                        let items = seg.group(gi);
                        let n = T::lit(items.len() as f64);
                        for &i in items {
                            for col in 0..c {
                                let k = gi * c + col;
                                ga[i * c + col] += g.data()[k] * two * (x.get(i, col) - means[k]) / n;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::matrix(r, c, ga)?);
                }
                Op::Dropout(a, mask) => {
                    let data = g.data().iter().zip(mask).map(|(&d, &m)| d * m).collect();
                    accumulate(&mut grads, *a, Tensor::new(g.shape().to_vec(), data)?);
                }
                Op::Sum(a) => {
                    let s = g.item();
                    let shape = self.nodes[*a].value.shape().to_vec();
                    let n = self.nodes[*a].value.len();
                    accumulate(&mut grads, *a, Tensor::new(shape, vec![s; n])?);
                }
                Op::SoftmaxKl { logits, weights, advantage } => {
                    let s = g.item();
                    let shape = self.nodes[*logits].value.shape().to_vec();
                    let data = weights.iter().zip(advantage).map(|(&w, &a)| s * w * a).collect();
                    accumulate(&mut grads, *logits, Tensor::new(shape, data)?);
                }
                Op::LaplacianEnergy { weights, support, edges } => {
                    let w = &self.nodes[*weights].value;
                    let (r, c) = w.dims();
                    let mut gw = vec![T::zero(); r * c];
                    let s = g.item() * T::lit(2.0);
                    for &(a, b) in edges.iter() {
                        edge_energy(w, support, a, b, |row, k, diff| {
                            gw[row * c + k] += s * diff;
                        });
                    }
                    accumulate(&mut grads, *weights, Tensor::matrix(r, c, gw)?);
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Energy of one edge. `visit(row, k, ±diff)` is called for every support
/// slot touched, with the sign of `∂/∂W[row, k]` folded into `diff`.
fn edge_energy<T: Scalar>(
    w: &Tensor<T>,
    support: &[Vec<usize>],
    a: usize,
    b: usize,
    mut visit: impl FnMut(usize, usize, T),
) -> T {
    let (sa, sb) = (&support[a], &support[b]);
    let mut e = T::zero();
    for (ka, &bone) in sa.iter().enumerate() {
        let wa = w.get(a, ka);
        match sb.iter().position(|&x| x == bone) {
            Some(kb) => {
                let d = wa - w.get(b, kb);
                e += d * d;
                visit(a, ka, d);
                visit(b, kb, -d);
            }
            None => {
                e += wa * wa;
                visit(a, ka, wa);
            }
        }
    }
    for (kb, &bone) in sb.iter().enumerate() {
        if !sa.contains(&bone) {
            let wb = w.get(b, kb);
            e += wb * wb;
            visit(b, kb, wb);
        }
    }
    e
}

fn map<T: Scalar>(t: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect()).expect("same shape")
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: usize, g: Tensor<T>) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` did not
    /// influence the loss.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor<T>) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(r: usize, c: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::matrix(r, c, v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 3, &[0.0, 0.0, 0.0])).unwrap();
        let y = tape.softmax_rows(x).unwrap();
        for &p in tape.value(y).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn leaky_relu_value_and_slope() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 1, &[-1.0])).unwrap();
        let y = tape.leaky_relu(x, 0.2).unwrap();
        assert!((tape.value(y).item() + 0.2).abs() < 1e-15);
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert!((g.get(x).unwrap().item() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn linear_gradient_is_outer_structure() {
        // loss = sum(x · W) → dW[i][j] = Σ_rows x[r][i]
        let mut tape = Tape::new();
        let x = tape.leaf(t(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])).unwrap();
        let w = tape.leaf(t(3, 2, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6])).unwrap();
        let y = tape.matmul(x, w).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[5.0, 5.0, 7.0, 7.0, 9.0, 9.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut tape = Tape::new();
        let p = tape.leaf(t(2, 2, &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let c = tape.leaf(Tensor::scalar(5.0)).unwrap();
        let loss = tape.scale(c, 2.0).unwrap();
        let g = tape.backward(loss).unwrap();
        let gp = g.get_or_zeros(p, tape.value(p));
        assert!(gp.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let p = tape.leaf(t(1, 2, &[1.0, 2.0])).unwrap();
        assert!(tape.backward(p).is_err());
    }

    #[test]
    fn shape_and_index_errors_name_op() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(2, 3, &[0.0; 6])).unwrap();
        let b = tape.leaf(t(2, 3, &[0.0; 6])).unwrap();
        let e = tape.matmul(a, b).unwrap_err();
        assert!(e.to_string().contains("matmul"), "{e}");
        let e = tape.gather_rows(a, Arc::new(vec![0, 2])).unwrap_err();
        assert!(e.to_string().contains("gather_rows"), "{e}");
        assert!(tape.dropout(a, 1.0, 0).is_err());
    }

    #[test]
    fn non_finite_trips() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(1, 1, &[1e300])).unwrap();
        let e = tape.matmul(a, a).unwrap_err();
        assert!(matches!(e, Error::NonFinite { op: "matmul" }));
    }

    #[test]
    fn segment_statistics() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(4, 2, &[2.0, 1.0, 2.0, 5.0, 2.0, -3.0, 7.0, 0.0])).unwrap();
        let seg = Arc::new(Segments::from_lists(&[vec![0, 1, 2], vec![], vec![3]]));
        let mx = tape.segment_max(x, &seg).unwrap();
        let mean = tape.segment_mean(x, seg.clone()).unwrap();
        let var = tape.segment_var(x, seg).unwrap();
        assert_eq!(tape.value(mx).data(), &[2.0, 5.0, 0.0, 0.0, 7.0, 0.0]);
        assert_eq!(tape.value(mean).data()[0], 2.0);
        assert_eq!(tape.value(var).data()[0], 0.0);
        assert_eq!(&tape.value(mean).data()[2..], &[0.0, 0.0, 7.0, 0.0]);
        assert_eq!(&tape.value(var).data()[2..], &[0.0; 4]);
    }

    #[test]
    fn segment_max_routes_to_first_argmax() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(3, 1, &[1.0, 4.0, 4.0])).unwrap();
        let seg = Segments::single(3);
        let m = tape.segment_max(x, &seg).unwrap();
        let s = tape.sum(m).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn dropout_rate_zero_is_identity() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(2, 2, &[1.0, -2.0, 3.0, 0.5])).unwrap();
        let y = tape.dropout(x, 0.0, 77).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn dropout_preserves_expectation() {
        let n = 20_000;
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(1, n, vec![1.5; n]).unwrap()).unwrap();
        let mut total = 0.0;
        for seed in 0..10 {
            let y = tape.dropout(x, 0.85, seed).unwrap();
            total += tape.value(y).data().iter().sum::<f64>();
        }
        let mean = total / (10 * n) as f64;
        assert!((mean - 1.5).abs() < 0.05, "{mean}");
    }

    #[test]
    fn kl_is_zero_at_target() {
        let logits = t(2, 3, &[0.2, -1.0, 0.5, 3.0, 0.0, 0.0]);
        let mut tape = Tape::new();
        let z = tape.leaf(logits).unwrap();
        let w = tape.softmax_rows(z).unwrap();
        let target = tape.value(w).clone();
        let kl = tape.softmax_kl(z, &target, 1e-8).unwrap();
        assert!(tape.value(kl).item().abs() < 1e-14);
    }

    #[test]
    fn laplacian_energy_of_constant_column() {
        // every vertex supports bone 4 with weight 1 → no variation
        let mut tape = Tape::new();
        let w = tape.leaf(t(3, 1, &[1.0, 1.0, 1.0])).unwrap();
        let e = tape
            .laplacian_energy(w, Arc::new(vec![vec![4]; 3]), Arc::new(vec![(0, 1), (1, 2), (0, 2)]))
            .unwrap();
        assert_eq!(tape.value(e).item(), 0.0);
    }

    #[test]
    fn laplacian_energy_counts_off_support_mass() {
        // v0 on bone 0, v1 on bone 1 → the edge sees (1 − 0)² + (0 − 1)²
        let mut tape = Tape::new();
        let w = tape.leaf(t(2, 1, &[1.0, 1.0])).unwrap();
        let e = tape
            .laplacian_energy(w, Arc::new(vec![vec![0], vec![1]]), Arc::new(vec![(0, 1)]))
            .unwrap();
        assert_eq!(tape.value(e).item(), 2.0);
    }
}
