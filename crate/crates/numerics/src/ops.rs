//! Forward kernels shared by the tape and the stand-alone functional API.

use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let (r, c) = (x.rows(), x.cols());
    let mut out = x.data().to_vec();
    for i in 0..r {
        softmax_in_place(&mut out[i * c..(i + 1) * c]);
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        // Fully masked row: no mass anywhere.
        row.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Layer normalisation over the last axis followed by the affine map.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Tensor {
    layer_norm_forward(x, gain, bias, eps).0
}

/// Returns `(y, xhat, rstd)`.
pub(crate) fn layer_norm_forward(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (r, c) = (x.rows(), x.cols());
    assert_eq!(gain.len(), c, "layer_norm gain width");
    assert_eq!(bias.len(), c, "layer_norm bias width");
    let mut y = vec![0.0; r * c];
    let mut xhat = vec![0.0; r * c];
    let mut rstd = vec![0.0; r];
    let (g, b) = (gain.data(), bias.data());
    for i in 0..r {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let rs = 1.0 / (var + eps).sqrt();
        rstd[i] = rs;
        for j in 0..c {
            let h = (row[j] - mean) * rs;
            xhat[i * c + j] = h;
            y[i * c + j] = h * g[j] + b[j];
        }
    }
    (Tensor::new(x.shape().to_vec(), y), xhat, rstd)
}

/// Geometry of a batched multi-head attention call. Rows of the `[batch·seq, d]`
/// inputs are grouped into `batch` sequences of `seq` positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionShape {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub causal: bool,
}

impl AttentionShape {
    /// Whether query `i` may attend to key `j` of sequence `b`.
    #[inline]
    pub(crate) fn allowed(&self, valid: Option<&[bool]>, b: usize, i: usize, j: usize) -> bool {
        if self.causal && j > i {
            return false;
        }
        match valid {
            // Invalid (padding) queries keep the plain causal pattern so the
            // softmax stays defined; their outputs are never read.
            Some(v) if v[b * self.seq + i] => v[b * self.seq + j],
            _ => true,
        }
    }
}

/// `softmax(Q·Kᵀ/√d_head + mask)·V` per head. Returns the output and the
/// attention probabilities laid out as `[batch, heads, seq, seq]`.
pub(crate) fn attention_forward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    shape: AttentionShape,
    valid: Option<&[bool]>,
) -> (Tensor, Vec<f64>) {
    let AttentionShape { batch, seq, heads, .. } = shape;
    let d = q.cols();
    assert_eq!(q.rows(), batch * seq, "attention rows must equal batch·seq");
    assert_eq!(k.shape(), q.shape());
    assert_eq!(v.shape(), q.shape());
    assert_eq!(d % heads, 0, "model width must divide into heads");
    if let Some(v) = valid {
        assert_eq!(v.len(), batch * seq);
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let mut y = vec![0.0; batch * seq * d];
    let mut probs = vec![0.0; batch * heads * seq * seq];
    let mut scores = vec![0.0; seq];
    for b in 0..batch {
        for h in 0..heads {
            let off = h * dh;
            for i in 0..seq {
                let qi = &qd[(b * seq + i) * d + off..][..dh];
                for (j, s) in scores.iter_mut().enumerate() {
                    *s = if shape.allowed(valid, b, i, j) {
                        let kj = &kd[(b * seq + j) * d + off..][..dh];
                        scale * qi.iter().zip(kj).map(|(a, c)| a * c).sum::<f64>()
                    } else {
                        f64::NEG_INFINITY
                    };
                }
                softmax_in_place(&mut scores);
                let p_base = ((b * heads + h) * seq + i) * seq;
                probs[p_base..p_base + seq].copy_from_slice(&scores);
                let yi = &mut y[(b * seq + i) * d + off..][..dh];
                for (j, &p) in scores.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    let vj = &vd[(b * seq + j) * d + off..][..dh];
                    for (o, x) in yi.iter_mut().zip(vj) {
                        *o += p * x;
                    }
                }
            }
        }
    }
    (Tensor::new(q.shape().to_vec(), y), probs)
}

/// Single-head scaled dot-product attention on `[L, d]` tensors.
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor, causal: bool) -> Tensor {
    let shape = AttentionShape {
        batch: 1,
        seq: q.rows(),
        heads: 1,
        causal,
    };
    attention_forward(q, k, v, shape, None).0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let y = softmax_rows(&Tensor::from_rows(&[&[0.0, 0.0]]));
        assert_eq!(y.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_is_stable_for_large_inputs() {
        let y = softmax_rows(&Tensor::from_rows(&[&[1000.0, 0.0]]));
        assert!(y.data().iter().all(|v| v.is_finite()));
        assert!((y.data()[0] - 1.0).abs() < 1e-300_f64.max(f64::EPSILON));
        assert!(y.data()[1] < 1e-300);
    }

    #[test]
    fn layer_norm_of_constant_row_is_bias() {
        let x = Tensor::from_rows(&[&[3.0, 3.0, 3.0]]);
        let g = Tensor::new(vec![3], vec![2.0, 2.0, 2.0]);
        let b = Tensor::new(vec![3], vec![0.1, 0.2, 0.3]);
        let y = layer_norm(&x, &g, &b, LAYER_NORM_EPS);
        assert_eq!(y.data(), &[0.1, 0.2, 0.3]);
    }

    #[test]
    fn layer_norm_unit_gain_standardises() {
        let x = Tensor::from_rows(&[&[1.0, 2.0, 4.0, 9.0]]);
        let g = Tensor::filled(vec![4], 1.0);
        let b = Tensor::zeros(vec![4]);
        let y = layer_norm(&x, &g, &b, LAYER_NORM_EPS);
        let mean = y.sum() / 4.0;
        let var = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-5);
    }

    #[test]
    fn single_position_attention_returns_v() {
        let q = Tensor::from_rows(&[&[0.3, -1.0]]);
        let k = Tensor::from_rows(&[&[2.0, 0.5]]);
        let v = Tensor::from_rows(&[&[7.0, -3.0]]);
        assert_eq!(scaled_dot_attention(&q, &k, &v, true), v);
    }

    #[test]
    fn identical_value_rows_give_identical_outputs() {
        let q = Tensor::from_rows(&[&[0.3, -1.0], &[1.0, 2.0], &[-0.5, 0.1]]);
        let k = Tensor::from_rows(&[&[2.0, 0.5], &[0.0, 1.0], &[3.0, -2.0]]);
        let v = Tensor::from_rows(&[&[1.5, -2.0], &[1.5, -2.0], &[1.5, -2.0]]);
        for causal in [true, false] {
            let y = scaled_dot_attention(&q, &k, &v, causal);
            for i in 0..3 {
                assert!((y.get(i, 0) - 1.5).abs() < 1e-12);
                assert!((y.get(i, 1) + 2.0).abs() < 1e-12);
            }
        }
    }
}
