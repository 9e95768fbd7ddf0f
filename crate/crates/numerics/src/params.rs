use crate::tensor::Tensor;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable tensors.
///
/// Cloning a store gives an independent snapshot; that is how target
/// networks and serving copies are made.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Overwrite every tensor with the values of `other`. Layouts must match.
    pub fn copy_from(&mut self, other: &ParamStore) {
        assert_eq!(self.names, other.names, "parameter layouts differ");
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            assert_eq!(dst.shape(), src.shape());
            dst.data_mut().copy_from_slice(src.data());
        }
    }
}

/// Adam optimiser over a whole [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        Adam::with_betas(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. `grads[i]` is `None` for parameters
    /// that did not take part in the loss.
    pub fn update(&mut self, params: &mut ParamStore, grads: &[Option<Tensor>], lr: f64) {
        assert_eq!(grads.len(), params.len());
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, grad) in grads.iter().enumerate() {
            let Some(g) = grad else { continue };
            let p = params.tensors[i].data_mut();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut ps = ParamStore::new();
        let id = ps.add("w", Tensor::new(vec![2], vec![1.0, -1.0]));
        let mut opt = Adam::new(&ps);
        let g = Tensor::new(vec![2], vec![0.3, -5.0]);
        opt.update(&mut ps, &[Some(g)], 0.01);
        let w = ps.get(id).data();
        assert!((w[0] - 0.99).abs() < 1e-9);
        assert!((w[1] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut ps = ParamStore::new();
        let id = ps.add("x", Tensor::new(vec![1], vec![5.0]));
        let mut opt = Adam::new(&ps);
        for _ in 0..2000 {
            let x = ps.get(id).data()[0];
            opt.update(&mut ps, &[Some(Tensor::new(vec![1], vec![2.0 * (x - 2.0)]))], 0.05);
        }
        assert!((ps.get(id).data()[0] - 2.0).abs() < 1e-3);
    }
}
