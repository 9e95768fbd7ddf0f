use numerics::{AttentionShape, Graph, ParamId, ParamStore, Tensor, Var};
use rand::Rng;

use super::config::AgentConfig;

#[derive(Debug, Clone)]
struct Encoder {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
struct Block {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    ff1_w: ParamId,
    ff1_b: ParamId,
    ff2_w: ParamId,
    ff2_b: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

/// Layout of the Q-function: per-subflow encoders, a merge projection,
/// learned positions, post-norm attention blocks and a joint-action head.
/// Parameters live in a separate [`ParamStore`] so online and target copies
/// share one `QNetwork`.
#[derive(Debug, Clone)]
pub struct QNetwork {
    cfg: AgentConfig,
    encoders: Vec<Encoder>,
    merge_w: ParamId,
    merge_b: ParamId,
    pos: ParamId,
    blocks: Vec<Block>,
    head_w: ParamId,
    head_b: ParamId,
}

fn find(ps: &ParamStore, name: &str) -> ParamId {
    ps.find(name).unwrap_or_else(|| panic!("parameter {name} missing"))
}

/// Shrinks the initial Q-head so an untrained target network bootstraps
/// values near zero.
const HEAD_INIT_SCALE: f64 = 0.01;

impl QNetwork {
    /// Fresh randomly initialised parameters.
    pub fn init<R: Rng + ?Sized>(cfg: &AgentConfig, rng: &mut R) -> (QNetwork, ParamStore) {
        let mut ps = ParamStore::new();
        let (f0, f1) = cfg.fc_dims;
        let d = cfg.embedding_dim;
        let n_enc = if cfg.share_encoders { 1 } else { cfg.subflows };
        for i in 0..n_enc {
            ps.add(format!("enc{i}.w1"), Tensor::xavier(cfg.fields, f0, rng));
            ps.add(format!("enc{i}.b1"), Tensor::zeros(vec![f0]));
            ps.add(format!("enc{i}.w2"), Tensor::xavier(f0, f1, rng));
            ps.add(format!("enc{i}.b2"), Tensor::zeros(vec![f1]));
        }
        ps.add("merge.w", Tensor::xavier(cfg.subflows * f1, d, rng));
        ps.add("merge.b", Tensor::zeros(vec![d]));
        ps.add("pos", Tensor::uniform(vec![cfg.context_len, d], 0.1, rng));
        for l in 0..cfg.transformer_layers {
            for p in ["q", "k", "v", "o"] {
                ps.add(format!("blk{l}.w{p}"), Tensor::xavier(d, d, rng));
                ps.add(format!("blk{l}.b{p}"), Tensor::zeros(vec![d]));
            }
            ps.add(format!("blk{l}.ln1.g"), Tensor::filled(vec![d], 1.0));
            ps.add(format!("blk{l}.ln1.b"), Tensor::zeros(vec![d]));
            ps.add(format!("blk{l}.ff1.w"), Tensor::xavier(d, cfg.ff_dim, rng));
            ps.add(format!("blk{l}.ff1.b"), Tensor::zeros(vec![cfg.ff_dim]));
            ps.add(format!("blk{l}.ff2.w"), Tensor::xavier(cfg.ff_dim, d, rng));
            ps.add(format!("blk{l}.ff2.b"), Tensor::zeros(vec![d]));
            ps.add(format!("blk{l}.ln2.g"), Tensor::filled(vec![d], 1.0));
            ps.add(format!("blk{l}.ln2.b"), Tensor::zeros(vec![d]));
        }
        let mut head = Tensor::xavier(d, cfg.n_actions, rng);
        head.scale(HEAD_INIT_SCALE);
        ps.add("head.w", head);
        ps.add("head.b", Tensor::zeros(vec![cfg.n_actions]));
        (QNetwork::bind(cfg, &ps), ps)
    }

    /// Resolves parameter handles by name, e.g. after loading a checkpoint.
    pub fn bind(cfg: &AgentConfig, ps: &ParamStore) -> QNetwork {
        let n_enc = if cfg.share_encoders { 1 } else { cfg.subflows };
        let encoders = (0..n_enc)
            .map(|i| Encoder {
                w1: find(ps, &format!("enc{i}.w1")),
                b1: find(ps, &format!("enc{i}.b1")),
                w2: find(ps, &format!("enc{i}.w2")),
                b2: find(ps, &format!("enc{i}.b2")),
            })
            .collect();
        let blocks = (0..cfg.transformer_layers)
            .map(|l| {
                let f = |s: &str| find(ps, &format!("blk{l}.{s}"));
                Block {
                    wq: f("wq"),
                    bq: f("bq"),
                    wk: f("wk"),
                    bk: f("bk"),
                    wv: f("wv"),
                    bv: f("bv"),
                    wo: f("wo"),
                    bo: f("bo"),
                    ln1_g: f("ln1.g"),
                    ln1_b: f("ln1.b"),
                    ff1_w: f("ff1.w"),
                    ff1_b: f("ff1.b"),
                    ff2_w: f("ff2.w"),
                    ff2_b: f("ff2.b"),
                    ln2_g: f("ln2.g"),
                    ln2_b: f("ln2.b"),
                }
            })
            .collect();
        QNetwork {
            cfg: cfg.clone(),
            encoders,
            merge_w: find(ps, "merge.w"),
            merge_b: find(ps, "merge.b"),
            pos: find(ps, "pos"),
            blocks,
            head_w: find(ps, "head.w"),
            head_b: find(ps, "head.b"),
        }
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    /// Records the forward pass for `x` (`[batch·L, obs_dim]`) and returns
    /// the `[batch·L, n_actions]` Q-values. `valid` marks real (unpadded)
    /// positions.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, batch: usize, valid: Option<&[bool]>) -> Var {
        let c = &self.cfg;
        let xv = g.value(x);
        assert_eq!(xv.cols(), c.obs_dim(), "observation width");
        assert_eq!(xv.rows(), batch * c.context_len, "rows must be batch·L");
        let mut feats = Vec::with_capacity(c.subflows);
        for i in 0..c.subflows {
            let e = &self.encoders[if c.share_encoders { 0 } else { i }];
            let xi = g.slice_cols(x, i * c.fields, c.fields);
            let h = g.linear(xi, e.w1, e.b1);
            let h = g.relu(h);
            let h = g.linear(h, e.w2, e.b2);
            feats.push(g.relu(h));
        }
        let cat = if feats.len() == 1 {
            feats[0]
        } else {
            g.concat_cols(&feats)
        };
        let h = g.linear(cat, self.merge_w, self.merge_b);
        let pos = g.param(self.pos);
        let mut h = g.add_positional(h, pos);
        let shape = AttentionShape {
            batch,
            seq: c.context_len,
            heads: c.heads,
            causal: true,
        };
        for b in &self.blocks {
            let q = g.linear(h, b.wq, b.bq);
            let k = g.linear(h, b.wk, b.bk);
            let v = g.linear(h, b.wv, b.bv);
            let a = g.attention(q, k, v, shape, valid);
            let o = g.linear(a, b.wo, b.bo);
            let r = g.add(h, o);
            h = g.layer_norm(r, b.ln1_g, b.ln1_b);
            let f = g.linear(h, b.ff1_w, b.ff1_b);
            let f = g.relu(f);
            let f = g.linear(f, b.ff2_w, b.ff2_b);
            let r = g.add(h, f);
            h = g.layer_norm(r, b.ln2_g, b.ln2_b);
        }
        g.linear(h, self.head_w, self.head_b)
    }

    /// Inference-only Q-values for a batch of contexts.
    pub fn q_values(&self, params: &ParamStore, x: &Tensor, batch: usize, valid: Option<&[bool]>) -> Tensor {
        let mut g = Graph::new(params);
        let xv = g.input(x.clone());
        let q = self.forward(&mut g, xv, batch, valid);
        g.value(q).clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(l: usize) -> AgentConfig {
        AgentConfig {
            subflows: 2,
            fields: 3,
            n_actions: 4,
            fc_dims: (5, 4),
            embedding_dim: 8,
            heads: 2,
            ff_dim: 8,
            context_len: l,
            ..AgentConfig::default()
        }
    }

    #[test]
    fn output_shape_is_positions_by_actions() {
        let cfg = tiny(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (net, ps) = QNetwork::init(&cfg, &mut rng);
        let x = Tensor::uniform(vec![3 * 4, 6], 1.0, &mut rng);
        let q = net.q_values(&ps, &x, 3, None);
        assert_eq!(q.shape(), &[12, 4]);
    }

    #[test]
    fn later_positions_do_not_affect_earlier_ones() {
        let cfg = tiny(5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (net, ps) = QNetwork::init(&cfg, &mut rng);
        let x = Tensor::uniform(vec![5, 6], 1.0, &mut rng);
        let mut y = x.clone();
        for v in &mut y.data_mut()[3 * 6..] {
            *v += 0.7;
        }
        let (qx, qy) = (net.q_values(&ps, &x, 1, None), net.q_values(&ps, &y, 1, None));
        for t in 0..5 {
            let same = qx.row(t) == qy.row(t);
            assert_eq!(same, t < 3, "position {t}");
        }
    }

    #[test]
    fn batch_entries_are_independent() {
        let cfg = tiny(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (net, ps) = QNetwork::init(&cfg, &mut rng);
        let a = Tensor::uniform(vec![3, 6], 1.0, &mut rng);
        let b = Tensor::uniform(vec![3, 6], 1.0, &mut rng);
        let stack = |p: &Tensor, q: &Tensor| Tensor::new(vec![6, 6], [p.data(), q.data()].concat());
        let ab = net.q_values(&ps, &stack(&a, &b), 2, None);
        let ba = net.q_values(&ps, &stack(&b, &a), 2, None);
        for t in 0..3 {
            assert_eq!(ab.row(t), ba.row(t + 3));
            assert_eq!(ab.row(t + 3), ba.row(t));
        }
    }

    #[test]
    fn single_position_matches_attention_free_pass() {
        let cfg = tiny(1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (net, ps) = QNetwork::init(&cfg, &mut rng);
        let x = Tensor::uniform(vec![1, 6], 1.0, &mut rng);
        let q = net.q_values(&ps, &x, 1, None);
        // With one position attention returns its value row, so the block is
        // x + (x·Wv + bv)·Wo + bo.
        let mut g = Graph::new(&ps);
        let xv = g.input(x.clone());
        let c = &net.cfg;
        let mut feats = Vec::new();
        for (i, e) in net.encoders.iter().enumerate() {
            let xi = g.slice_cols(xv, i * c.fields, c.fields);
            let h = g.linear(xi, e.w1, e.b1);
            let h = g.relu(h);
            let h = g.linear(h, e.w2, e.b2);
            feats.push(g.relu(h));
        }
        let cat = g.concat_cols(&feats);
        let h = g.linear(cat, net.merge_w, net.merge_b);
        let pos = g.param(net.pos);
        let h = g.add_positional(h, pos);
        let b = &net.blocks[0];
        let v = g.linear(h, b.wv, b.bv);
        let o = g.linear(v, b.wo, b.bo);
        let r = g.add(h, o);
        let h = g.layer_norm(r, b.ln1_g, b.ln1_b);
        let f = g.linear(h, b.ff1_w, b.ff1_b);
        let f = g.relu(f);
        let f = g.linear(f, b.ff2_w, b.ff2_b);
        let r = g.add(h, f);
        let h = g.layer_norm(r, b.ln2_g, b.ln2_b);
        let out = g.linear(h, net.head_w, net.head_b);
        assert!(g.value(out).max_abs_diff(&q) < 1e-12);
    }

    #[test]
    fn shared_encoders_reduce_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = tiny(2);
        let (_, own) = QNetwork::init(&cfg, &mut rng);
        let shared_cfg = AgentConfig {
            share_encoders: true,
            ..cfg
        };
        let (_, shared) = QNetwork::init(&shared_cfg, &mut rng);
        assert_eq!(own.num_scalars() - shared.num_scalars(), 3 * 5 + 5 + 5 * 4 + 4);
    }
}
