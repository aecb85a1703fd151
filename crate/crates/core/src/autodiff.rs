//! Minimal reverse-mode autodiff over vector-valued nodes.
//!
//! A [`Tape`] records a forward computation as a flat list of nodes; node
//! ids are topologically ordered by construction, so the backward pass is a
//! single reverse sweep. The op set is exactly what the toy encoder-decoder
//! needs: matrix-vector products, attention (dot-many / softmax / weighted
//! sum), log-softmax readouts, and a handful of scalar reductions.
//!
//! Scalars are represented as length-1 vectors.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    /// y = W x with W flattened row-major.
    MatVec { w: NodeId, x: NodeId, rows: usize, cols: usize },
    Add { a: NodeId, b: NodeId },
    Tanh { x: NodeId },
    /// y_j = scale · ⟨vecs[j], q⟩.
    DotMany { vecs: Vec<NodeId>, q: NodeId, scale: F },
    Softmax { x: NodeId },
    /// y = Σ_j weights[j] · vecs[j].
    WeightedSum { weights: NodeId, vecs: Vec<NodeId> },
    LogSoftmax { x: NodeId },
    /// Scalar: mean of x[idxs] (indices may repeat).
    MeanGather { x: NodeId, idxs: Vec<usize> },
    /// Scalar: log Σ exp(xs), each xs a scalar node.
    LogSumExp { xs: Vec<NodeId> },
    /// Scalar: Σ xs.
    SumScalars { xs: Vec<NodeId> },
    /// Scalar: a − b.
    SubScalar { a: NodeId, b: NodeId },
    /// Scalar: c · x.
    ScaleScalar { x: NodeId, c: F },
    ExpScalar { x: NodeId },
    LogScalar { x: NodeId },
}

struct Node<F> {
    value: Vec<F>,
    grad: Vec<F>,
    op: Op<F>,
}

pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Vec<F>, op: Op<F>) -> NodeId {
        let grad = vec![F::zero(); value.len()];
        self.nodes.push(Node { value, grad, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Vec<F>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &[F] {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &[F] {
        &self.nodes[id.0].grad
    }

    pub fn scalar(&self, id: NodeId) -> F {
        self.nodes[id.0].value[0]
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId, rows: usize, cols: usize) -> NodeId {
        debug_assert_eq!(self.nodes[w.0].value.len(), rows * cols);
        debug_assert_eq!(self.nodes[x.0].value.len(), cols);
        let mut y = vec![F::zero(); rows];
        {
            let wv = &self.nodes[w.0].value;
            let xv = &self.nodes[x.0].value;
            for (r, out) in y.iter_mut().enumerate() {
                let row = &wv[r * cols..(r + 1) * cols];
                let mut acc = F::zero();
                for (a, b) in row.iter().zip(xv.iter()) {
                    acc += *a * *b;
                }
                *out = acc;
            }
        }
        self.push(y, Op::MatVec { w, x, rows, cols })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let y: Vec<F> = self.nodes[a.0]
            .value
            .iter()
            .zip(self.nodes[b.0].value.iter())
            .map(|(x, y)| *x + *y)
            .collect();
        self.push(y, Op::Add { a, b })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let y: Vec<F> = self.nodes[x.0].value.iter().map(|v| v.tanh()).collect();
        self.push(y, Op::Tanh { x })
    }

    pub fn dot_many(&mut self, vecs: &[NodeId], q: NodeId, scale: F) -> NodeId {
        let qv = self.nodes[q.0].value.clone();
        let y: Vec<F> = vecs
            .iter()
            .map(|&v| {
                let mut acc = F::zero();
                for (a, b) in self.nodes[v.0].value.iter().zip(qv.iter()) {
                    acc += *a * *b;
                }
                acc * scale
            })
            .collect();
        self.push(
            y,
            Op::DotMany {
                vecs: vecs.to_vec(),
                q,
                scale,
            },
        )
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let m = xv.iter().copied().fold(F::neg_infinity(), F::max);
        let exps: Vec<F> = xv.iter().map(|v| (*v - m).exp()).collect();
        let z: F = exps.iter().copied().sum();
        let y: Vec<F> = exps.into_iter().map(|e| e / z).collect();
        self.push(y, Op::Softmax { x })
    }

    pub fn weighted_sum(&mut self, weights: NodeId, vecs: &[NodeId]) -> NodeId {
        debug_assert_eq!(self.nodes[weights.0].value.len(), vecs.len());
        let dim = self.nodes[vecs[0].0].value.len();
        let mut y = vec![F::zero(); dim];
        for (j, &v) in vecs.iter().enumerate() {
            let w = self.nodes[weights.0].value[j];
            for (out, a) in y.iter_mut().zip(self.nodes[v.0].value.iter()) {
                *out += w * *a;
            }
        }
        self.push(
            y,
            Op::WeightedSum {
                weights,
                vecs: vecs.to_vec(),
            },
        )
    }

    pub fn log_softmax(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let m = xv.iter().copied().fold(F::neg_infinity(), F::max);
        let z: F = xv.iter().map(|v| (*v - m).exp()).sum();
        let lse = m + z.ln();
        let y: Vec<F> = xv.iter().map(|v| *v - lse).collect();
        self.push(y, Op::LogSoftmax { x })
    }

    pub fn mean_gather(&mut self, x: NodeId, idxs: Vec<usize>) -> NodeId {
        debug_assert!(!idxs.is_empty());
        let xv = &self.nodes[x.0].value;
        let sum: F = idxs.iter().map(|&i| xv[i]).sum();
        let y = vec![sum / F::from_f64_lossy(idxs.len() as f64)];
        self.push(y, Op::MeanGather { x, idxs })
    }

    pub fn log_sum_exp(&mut self, xs: &[NodeId]) -> NodeId {
        let vals: Vec<F> = xs.iter().map(|&id| self.scalar(id)).collect();
        let m = vals.iter().copied().fold(F::neg_infinity(), F::max);
        let z: F = vals.iter().map(|v| (*v - m).exp()).sum();
        let y = vec![m + z.ln()];
        self.push(y, Op::LogSumExp { xs: xs.to_vec() })
    }

    pub fn sum_scalars(&mut self, xs: &[NodeId]) -> NodeId {
        let s: F = xs.iter().map(|&id| self.scalar(id)).sum();
        self.push(vec![s], Op::SumScalars { xs: xs.to_vec() })
    }

    pub fn sub_scalar(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let y = vec![self.scalar(a) - self.scalar(b)];
        self.push(y, Op::SubScalar { a, b })
    }

    pub fn scale_scalar(&mut self, x: NodeId, c: F) -> NodeId {
        let y = vec![self.scalar(x) * c];
        self.push(y, Op::ScaleScalar { x, c })
    }

    pub fn exp_scalar(&mut self, x: NodeId) -> NodeId {
        let y = vec![self.scalar(x).exp()];
        self.push(y, Op::ExpScalar { x })
    }

    pub fn log_scalar(&mut self, x: NodeId) -> NodeId {
        let y = vec![self.scalar(x).ln()];
        self.push(y, Op::LogScalar { x })
    }

    /// Reverse sweep from `root` (a scalar node), seeding its gradient
    /// with 1. Gradients accumulate into every reachable node.
    pub fn backward(&mut self, root: NodeId) {
        debug_assert_eq!(self.nodes[root.0].value.len(), 1);
        for n in &mut self.nodes {
            n.grad.iter_mut().for_each(|g| *g = F::zero());
        }
        self.nodes[root.0].grad[0] = F::one();

        for i in (0..=root.0).rev() {
            if self.nodes[i].grad.iter().all(|g| g.is_zero()) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let g = self.nodes[i].grad.clone();
            match op {
                Op::Leaf => {}
                Op::MatVec { w, x, rows, cols } => {
                    let xv = self.nodes[x.0].value.clone();
                    let wv = self.nodes[w.0].value.clone();
                    {
                        let gw = &mut self.nodes[w.0].grad;
                        for r in 0..rows {
                            for c in 0..cols {
                                gw[r * cols + c] += g[r] * xv[c];
                            }
                        }
                    }
                    {
                        let gx = &mut self.nodes[x.0].grad;
                        for r in 0..rows {
                            for c in 0..cols {
                                gx[c] += g[r] * wv[r * cols + c];
                            }
                        }
                    }
                }
                Op::Add { a, b } => {
                    for (ga, gi) in self.nodes[a.0].grad.iter_mut().zip(g.iter()) {
                        *ga += *gi;
                    }
                    for (gb, gi) in self.nodes[b.0].grad.iter_mut().zip(g.iter()) {
                        *gb += *gi;
                    }
                }
                Op::Tanh { x } => {
                    let yv = self.nodes[i].value.clone();
                    for ((gx, y), gi) in self.nodes[x.0].grad.iter_mut().zip(yv.iter()).zip(g.iter()) {
                        *gx += *gi * (F::one() - *y * *y);
                    }
                }
                Op::DotMany { vecs, q, scale } => {
                    let qv = self.nodes[q.0].value.clone();
                    for (j, &v) in vecs.iter().enumerate() {
                        let gj = g[j] * scale;
                        if gj.is_zero() {
                            continue;
                        }
                        let vv = self.nodes[v.0].value.clone();
                        for (gv, qc) in self.nodes[v.0].grad.iter_mut().zip(qv.iter()) {
                            *gv += gj * *qc;
                        }
                        for (gq, vc) in self.nodes[q.0].grad.iter_mut().zip(vv.iter()) {
                            *gq += gj * *vc;
                        }
                    }
                }
                Op::Softmax { x } => {
                    let yv = self.nodes[i].value.clone();
                    let dot: F = g.iter().zip(yv.iter()).map(|(gi, yi)| *gi * *yi).sum();
                    for ((gx, y), gi) in self.nodes[x.0].grad.iter_mut().zip(yv.iter()).zip(g.iter()) {
                        *gx += *y * (*gi - dot);
                    }
                }
                Op::WeightedSum { weights, vecs } => {
                    let wv = self.nodes[weights.0].value.clone();
                    for (j, &v) in vecs.iter().enumerate() {
                        let vv = self.nodes[v.0].value.clone();
                        let mut gw = F::zero();
                        for (gi, vc) in g.iter().zip(vv.iter()) {
                            gw += *gi * *vc;
                        }
                        self.nodes[weights.0].grad[j] += gw;
                        for (gveci, gi) in self.nodes[v.0].grad.iter_mut().zip(g.iter()) {
                            *gveci += wv[j] * *gi;
                        }
                    }
                }
                Op::LogSoftmax { x } => {
                    let yv = self.nodes[i].value.clone();
                    let gsum: F = g.iter().copied().sum();
                    for ((gx, y), gi) in self.nodes[x.0].grad.iter_mut().zip(yv.iter()).zip(g.iter()) {
                        *gx += *gi - y.exp() * gsum;
                    }
                }
                Op::MeanGather { x, idxs } => {
                    let share = g[0] / F::from_f64_lossy(idxs.len() as f64);
                    for &idx in &idxs {
                        self.nodes[x.0].grad[idx] += share;
                    }
                }
                Op::LogSumExp { xs } => {
                    let y = self.nodes[i].value[0];
                    for &xid in &xs {
                        let xi = self.nodes[xid.0].value[0];
                        self.nodes[xid.0].grad[0] += g[0] * (xi - y).exp();
                    }
                }
                Op::SumScalars { xs } => {
                    for &xid in &xs {
                        self.nodes[xid.0].grad[0] += g[0];
                    }
                }
                Op::SubScalar { a, b } => {
                    self.nodes[a.0].grad[0] += g[0];
                    self.nodes[b.0].grad[0] -= g[0];
                }
                Op::ScaleScalar { x, c } => {
                    self.nodes[x.0].grad[0] += g[0] * c;
                }
                Op::ExpScalar { x } => {
                    let y = self.nodes[i].value[0];
                    self.nodes[x.0].grad[0] += g[0] * y;
                }
                Op::LogScalar { x } => {
                    let xv = self.nodes[x.0].value[0];
                    self.nodes[x.0].grad[0] += g[0] / xv;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central-difference check of d(root)/d(leaf[coord]) for every
    /// coordinate of every leaf, against a rebuildable graph.
    fn check_grads(build: impl Fn(&mut Tape<f64>, &[Vec<f64>]) -> NodeId, leaves: Vec<Vec<f64>>) {
        let eval = |inputs: &[Vec<f64>]| {
            let mut tape = Tape::new();
            let root = build(&mut tape, inputs);
            tape.scalar(root)
        };

        let mut tape = Tape::new();
        let ids: Vec<NodeId> = Vec::new();
        let _ = ids;
        let root = build(&mut tape, &leaves);
        tape.backward(root);
        // Leaves are created first, in order, by the builder contract.
        let h = 1e-6;
        for (li, leaf) in leaves.iter().enumerate() {
            for c in 0..leaf.len() {
                let mut plus = leaves.clone();
                plus[li][c] += h;
                let mut minus = leaves.clone();
                minus[li][c] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let analytic = tape.grad(NodeId(li))[c];
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    (analytic - numeric).abs() / denom < 1e-6,
                    "leaf {li} coord {c}: analytic {analytic} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn matvec_tanh_add_grads() {
        let w = vec![0.3, -0.5, 0.2, 0.9, 0.1, -0.7];
        let x = vec![0.4, -0.2, 0.8];
        let b = vec![0.05, -0.3];
        check_grads(
            |tape, inputs| {
                let w = tape.leaf(inputs[0].clone());
                let x = tape.leaf(inputs[1].clone());
                let b = tape.leaf(inputs[2].clone());
                let y = tape.matvec(w, x, 2, 3);
                let z = tape.add(y, b);
                let t = tape.tanh(z);
                tape.mean_gather(t, vec![0, 1])
            },
            vec![w, x, b],
        );
    }

    #[test]
    fn attention_block_grads() {
        let q = vec![0.2, -0.4, 0.6];
        let k1 = vec![0.5, 0.1, -0.3];
        let k2 = vec![-0.2, 0.7, 0.4];
        let v1 = vec![1.0, 0.0, -1.0];
        let v2 = vec![0.3, 0.3, 0.3];
        check_grads(
            |tape, inputs| {
                let q = tape.leaf(inputs[0].clone());
                let k1 = tape.leaf(inputs[1].clone());
                let k2 = tape.leaf(inputs[2].clone());
                let v1 = tape.leaf(inputs[3].clone());
                let v2 = tape.leaf(inputs[4].clone());
                let scores = tape.dot_many(&[k1, k2], q, 0.57735);
                let alpha = tape.softmax(scores);
                let out = tape.weighted_sum(alpha, &[v1, v2]);
                tape.mean_gather(out, vec![0, 1, 2])
            },
            vec![q, k1, k2, v1, v2],
        );
    }

    #[test]
    fn log_softmax_readout_grads() {
        let logits = vec![1.2, -0.7, 0.3, 2.0];
        check_grads(
            |tape, inputs| {
                let x = tape.leaf(inputs[0].clone());
                let ls = tape.log_softmax(x);
                let m1 = tape.mean_gather(ls, vec![0, 2]);
                let m2 = tape.mean_gather(ls, vec![3]);
                let lse = tape.log_sum_exp(&[m1, m2]);
                tape.sub_scalar(lse, m1)
            },
            vec![logits],
        );
    }

    #[test]
    fn scalar_chain_grads() {
        let x = vec![0.8];
        let y = vec![-0.4];
        check_grads(
            |tape, inputs| {
                let x = tape.leaf(inputs[0].clone());
                let y = tape.leaf(inputs[1].clone());
                let e = tape.exp_scalar(y);
                let s = tape.sum_scalars(&[x, e]);
                let sc = tape.scale_scalar(s, 0.25);
                tape.log_scalar(sc)
            },
            vec![x, y],
        );
    }

    #[test]
    fn gradients_accumulate_across_shared_use() {
        // The same leaf feeds two paths; grads must sum.
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(vec![0.5]);
        let a = tape.exp_scalar(x);
        let b = tape.scale_scalar(x, 3.0);
        let s = tape.sum_scalars(&[a, b]);
        tape.backward(s);
        let expected = 0.5_f64.exp() + 3.0;
        assert!((tape.grad(x)[0] - expected).abs() < 1e-12);
    }
}
