//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass in order. Nodes
//! are appended only after their parents, so the node list is already a
//! topological order and [`Graph::backward`] walks it in reverse exactly once.

use crate::ops::{self, AttentionShape};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Relu(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    AddPositional {
        x: Var,
        table: Var,
    },
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        valid: Option<Vec<bool>>,
        probs: Vec<f64>,
    },
    MaskedMse {
        q: Var,
        actions: Vec<usize>,
        targets: Vec<f64>,
        mask: Vec<bool>,
    },
    WeightedSum {
        x: Var,
        weights: Tensor,
    },
}

struct Node {
    /// `None` for parameters, which are read from the store.
    value: Option<Tensor>,
    op: Op,
}

/// One forward pass worth of recorded operations.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

/// Output of [`Graph::backward`].
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to a recorded node, if it was reached.
    pub fn of(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].as_deref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params[id.0].as_ref()
    }

    /// Per-parameter gradients aligned with the store, for the optimiser.
    pub fn into_param_grads(self) -> Vec<Option<Tensor>> {
        self.params
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(64),
        }
    }

    fn push(&mut self, value: Option<Tensor>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Some(t), Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(None, Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(Some(out), Op::MatMul(a, b))
    }

    /// `x + bias` with `bias` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(bias));
        let c = xv.cols();
        assert_eq!(bv.len(), c, "bias width");
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(c) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out);
        self.push(Some(out), Op::AddBias(x, bias))
    }

    /// Affine map `x·w + b`.
    pub fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Var {
        let w = self.param(w);
        let b = self.param(b);
        let h = self.matmul(x, w);
        self.add_bias(h, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(Some(out), Op::Add(a, b))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v.max(0.0)).collect();
        let out = Tensor::new(xv.shape().to_vec(), data);
        self.push(Some(out), Op::Relu(x))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Var {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        assert!(start + width <= c, "column slice out of range");
        let mut out = Vec::with_capacity(r * width);
        for i in 0..r {
            out.extend_from_slice(&xv.row(i)[start..start + width]);
        }
        let out = Tensor::new(vec![r, width], out);
        self.push(Some(out), Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let r = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; r * total];
        let mut off = 0;
        for (p, w) in parts.iter().zip(&widths) {
            let pv = self.value(*p);
            assert_eq!(pv.rows(), r, "concat row mismatch");
            for i in 0..r {
                out[i * total + off..i * total + off + w].copy_from_slice(pv.row(i));
            }
            off += w;
        }
        let out = Tensor::new(vec![r, total], out);
        self.push(Some(out), Op::ConcatCols(parts.to_vec()))
    }

    /// Adds row `t` of `table` (`[seq, d]`) to every row `b·seq + t` of `x`.
    pub fn add_positional(&mut self, x: Var, table: Var) -> Var {
        let (xv, tv) = (self.value(x), self.value(table));
        let (seq, d) = (tv.rows(), tv.cols());
        assert_eq!(xv.cols(), d, "positional width");
        assert_eq!(xv.rows() % seq, 0, "rows must be a multiple of the sequence length");
        let mut out = xv.data().to_vec();
        for (i, row) in out.chunks_mut(d).enumerate() {
            for (o, p) in row.iter_mut().zip(tv.row(i % seq)) {
                *o += p;
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out);
        self.push(Some(out), Op::AddPositional { x, table })
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let out = ops::softmax_rows(self.value(x));
        self.push(Some(out), Op::Softmax(x))
    }

    pub fn layer_norm(&mut self, x: Var, gain: ParamId, bias: ParamId) -> Var {
        let g = self.param(gain);
        let b = self.param(bias);
        self.layer_norm_vars(x, g, b)
    }

    pub fn layer_norm_vars(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (y, xhat, rstd) =
            ops::layer_norm_forward(self.value(x), self.value(gain), self.value(bias), ops::LAYER_NORM_EPS);
        self.push(
            Some(y),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        )
    }

    /// Batched multi-head attention over `[batch·seq, d]` projections.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, shape: AttentionShape, valid: Option<&[bool]>) -> Var {
        let (y, probs) = ops::attention_forward(self.value(q), self.value(k), self.value(v), shape, valid);
        self.push(
            Some(y),
            Op::Attention {
                q,
                k,
                v,
                shape,
                valid: valid.map(<[bool]>::to_vec),
                probs,
            },
        )
    }

    /// `Σ_{mask} (q[r, actions[r]] − targets[r])² / |mask|`; zero when the
    /// mask is empty.
    pub fn masked_mse(&mut self, q: Var, actions: &[usize], targets: &[f64], mask: &[bool]) -> Var {
        let qv = self.value(q);
        let (r, a) = (qv.rows(), qv.cols());
        assert_eq!(actions.len(), r);
        assert_eq!(targets.len(), r);
        assert_eq!(mask.len(), r);
        let count = mask.iter().filter(|m| **m).count();
        let mut loss = 0.0;
        for i in 0..r {
            if mask[i] {
                assert!(actions[i] < a, "action index out of range");
                let e = qv.get(i, actions[i]) - targets[i];
                loss += e * e;
            }
        }
        if count > 0 {
            loss /= count as f64;
        }
        self.push(
            Some(Tensor::new(vec![1], vec![loss])),
            Op::MaskedMse {
                q,
                actions: actions.to_vec(),
                targets: targets.to_vec(),
                mask: mask.to_vec(),
            },
        )
    }

    /// `Σ x ⊙ weights`, a generic scalar probe for gradient checks.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.len(), weights.len());
        let s = xv.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        self.push(Some(Tensor::new(vec![1], vec![s])), Op::WeightedSum { x, weights })
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "not a scalar");
        t.data()[0]
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar");
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        let mut param_grads: Vec<Option<Tensor>> = vec![None; self.params.len()];

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    let shape = self.params.get(*id).shape().to_vec();
                    match &mut param_grads[id.0] {
                        Some(t) => {
                            for (a, b) in t.data_mut().iter_mut().zip(&g) {
                                *a += b;
                            }
                        }
                        slot @ None => *slot = Some(Tensor::new(shape, g.clone())),
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, nn) = (av.rows(), av.cols(), bv.cols());
                    // dA = dC·Bᵀ, dB = Aᵀ·dC
                    let mut da = vec![0.0; m * k];
                    gemm(m, nn, k, &g, false, bv.data(), true, &mut da, false);
                    accumulate(&mut grads, *a, da);
                    let mut db = vec![0.0; k * nn];
                    gemm(k, m, nn, av.data(), true, &g, false, &mut db, false);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddBias(x, b) => {
                    let c = self.value(*b).len();
                    let mut db = vec![0.0; c];
                    for row in g.chunks(c) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *b, db);
                    accumulate(&mut grads, *x, g.clone());
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Relu(x) => {
                    let xv = self.value(*x).data();
                    let dx = g
                        .iter()
                        .zip(xv)
                        .map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let (r, c) = (xv.rows(), xv.cols());
                    let w = g.len() / r;
                    let mut dx = vec![0.0; r * c];
                    for i in 0..r {
                        dx[i * c + start..i * c + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let total = node.value.as_ref().map(Tensor::cols).unwrap_or(0);
                    let r = g.len() / total;
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        let mut dp = Vec::with_capacity(r * w);
                        for i in 0..r {
                            dp.extend_from_slice(&g[i * total + off..i * total + off + w]);
                        }
                        accumulate(&mut grads, *p, dp);
                        off += w;
                    }
                }
                Op::AddPositional { x, table } => {
                    let tv = self.value(*table);
                    let (seq, d) = (tv.rows(), tv.cols());
                    let mut dt = vec![0.0; seq * d];
                    for (i, row) in g.chunks(d).enumerate() {
                        let t = i % seq;
                        for (o, v) in dt[t * d..(t + 1) * d].iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *table, dt);
                    accumulate(&mut grads, *x, g.clone());
                }
                Op::Softmax(x) => {
                    let y = node.value.as_ref().expect("softmax value");
                    let c = y.cols();
                    let mut dx = vec![0.0; g.len()];
                    for (i, (gr, yr)) in g.chunks(c).zip(y.data().chunks(c)).enumerate() {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            dx[i * c + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let gv = self.value(*gain).data();
                    let c = gv.len();
                    let r = g.len() / c;
                    let mut dgain = vec![0.0; c];
                    let mut dbias = vec![0.0; c];
                    let mut dx = vec![0.0; g.len()];
                    let mut dxhat = vec![0.0; c];
                    for i in 0..r {
                        let gr = &g[i * c..(i + 1) * c];
                        let xr = &xhat[i * c..(i + 1) * c];
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..c {
                            dgain[j] += gr[j] * xr[j];
                            dbias[j] += gr[j];
                            dxhat[j] = gr[j] * gv[j];
                            mean_d += dxhat[j];
                            mean_dx += dxhat[j] * xr[j];
                        }
                        mean_d /= c as f64;
                        mean_dx /= c as f64;
                        for j in 0..c {
                            dx[i * c + j] = rstd[i] * (dxhat[j] - mean_d - xr[j] * mean_dx);
                        }
                    }
                    accumulate(&mut grads, *gain, dgain);
                    accumulate(&mut grads, *bias, dbias);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    shape,
                    valid,
                    probs,
                } => {
                    let (dq, dk, dv) = attention_backward(
                        self.value(*q),
                        self.value(*k),
                        self.value(*v),
                        *shape,
                        valid.as_deref(),
                        probs,
                        &g,
                    );
                    accumulate(&mut grads, *q, dq);
                    accumulate(&mut grads, *k, dk);
                    accumulate(&mut grads, *v, dv);
                }
                Op::MaskedMse {
                    q,
                    actions,
                    targets,
                    mask,
                } => {
                    let qv = self.value(*q);
                    let a = qv.cols();
                    let count = mask.iter().filter(|m| **m).count();
                    let mut dq = vec![0.0; qv.len()];
                    if count > 0 {
                        let scale = 2.0 * g[0] / count as f64;
                        for i in 0..qv.rows() {
                            if mask[i] {
                                dq[i * a + actions[i]] = scale * (qv.get(i, actions[i]) - targets[i]);
                            }
                        }
                    }
                    accumulate(&mut grads, *q, dq);
                }
                Op::WeightedSum { x, weights } => {
                    let dx = weights.data().iter().map(|w| w * g[0]).collect();
                    accumulate(&mut grads, *x, dx);
                }
            }
            grads[idx] = Some(g);
        }

        Gradients {
            nodes: grads,
            params: param_grads,
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.iter_mut().zip(&g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn attention_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    shape: AttentionShape,
    valid: Option<&[bool]>,
    probs: &[f64],
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let AttentionShape { batch, seq, heads, .. } = shape;
    let d = q.cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let mut dq = vec![0.0; qd.len()];
    let mut dk = vec![0.0; kd.len()];
    let mut dv = vec![0.0; vd.len()];
    let mut dp = vec![0.0; seq];
    for b in 0..batch {
        for h in 0..heads {
            let off = h * dh;
            for i in 0..seq {
                let p = &probs[((b * heads + h) * seq + i) * seq..][..seq];
                let dyi = &dy[(b * seq + i) * d + off..][..dh];
                let mut dot = 0.0;
                for j in 0..seq {
                    if p[j] == 0.0 || !shape.allowed(valid, b, i, j) {
                        dp[j] = 0.0;
                        continue;
                    }
                    let vj = &vd[(b * seq + j) * d + off..][..dh];
                    dp[j] = dyi.iter().zip(vj).map(|(a, c)| a * c).sum();
                    dot += p[j] * dp[j];
                    let dvj = &mut dv[(b * seq + j) * d + off..][..dh];
                    for (o, x) in dvj.iter_mut().zip(dyi) {
                        *o += p[j] * x;
                    }
                }
                let qi_row = (b * seq + i) * d + off;
                for j in 0..seq {
                    if p[j] == 0.0 {
                        continue;
                    }
                    let ds = p[j] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj_row = (b * seq + j) * d + off;
                    for c in 0..dh {
                        dq[qi_row + c] += ds * kd[kj_row + c];
                        dk[kj_row + c] += ds * qd[qi_row + c];
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}
