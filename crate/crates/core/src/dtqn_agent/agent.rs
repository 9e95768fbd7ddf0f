use std::collections::VecDeque;
use std::path::Path;

use numerics::checkpoint::{self, CheckpointError};
use numerics::{grad_check, Adam, GradCheckReport, Graph, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::config::AgentConfig;
use super::network::QNetwork;
use super::replay::{ContextBatch, ReplayBuffer};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint metadata: {0}")]
    Meta(#[from] serde_json::Error),
}

/// Anything that maps front-padded contexts to per-position Q-values.
pub trait QFunction {
    /// `obs` is `[batch·len, obs_dim]`; returns `[batch·len, n_actions]`.
    fn q_values(&self, obs: &Tensor, batch: usize, valid: &[bool]) -> Tensor;
}

/// A network evaluated with a particular parameter set.
#[derive(Clone, Copy)]
pub struct NetQ<'a> {
    pub net: &'a QNetwork,
    pub params: &'a ParamStore,
}

impl QFunction for NetQ<'_> {
    fn q_values(&self, obs: &Tensor, batch: usize, valid: &[bool]) -> Tensor {
        self.net.q_values(self.params, obs, batch, Some(valid))
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Double-DQN targets: `online` picks the next action, `target` values it.
/// Padded positions get 0.
pub fn td_targets(online: &dyn QFunction, target: &dyn QFunction, batch: &ContextBatch, gamma: f64) -> Vec<f64> {
    let q_on = online.q_values(&batch.next_obs, batch.batch, &batch.valid);
    let q_tg = target.q_values(&batch.next_obs, batch.batch, &batch.valid);
    (0..batch.valid.len())
        .map(|r| {
            if !batch.valid[r] {
                return 0.0;
            }
            if batch.dones[r] {
                return batch.rewards[r];
            }
            let a = argmax(q_on.row(r));
            batch.rewards[r] + gamma * q_tg.get(r, a)
        })
        .collect()
}

/// Records the masked squared TD error of `batch` against `targets`.
pub fn loss_graph(g: &mut Graph<'_>, net: &QNetwork, batch: &ContextBatch, targets: &[f64]) -> Var {
    let x = g.input(batch.obs.clone());
    let q = net.forward(g, x, batch.batch, Some(&batch.valid));
    g.masked_mse(q, &batch.actions, targets, &batch.valid)
}

pub fn loss(net: &QNetwork, params: &ParamStore, batch: &ContextBatch, targets: &[f64]) -> f64 {
    let mut g = Graph::new(params);
    let l = loss_graph(&mut g, net, batch, targets);
    g.scalar(l)
}

/// Compares the loss gradient of a randomly initialised, then jittered,
/// network against central differences with step `h`.
pub fn check_gradients(cfg: &AgentConfig, batch: usize, seed: u64, h: f64, tol: f64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (net, mut ps) = QNetwork::init(cfg, &mut rng);
    // Off the initial point so biases and norm gains are generic.
    let ids: Vec<_> = ps.ids().collect();
    for id in ids {
        for v in ps.get_mut(id).data_mut() {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
    let (l, d) = (cfg.context_len, cfg.obs_dim());
    let rows = batch * l;
    // The first context is front-padded by half its length.
    let valid: Vec<bool> = (0..rows).map(|r| r >= l / 2).collect();
    let data = ContextBatch {
        batch,
        len: l,
        obs: Tensor::uniform(vec![rows, d], 1.0, &mut rng),
        next_obs: Tensor::uniform(vec![rows, d], 1.0, &mut rng),
        actions: (0..rows).map(|_| rng.gen_range(0..cfg.n_actions)).collect(),
        rewards: vec![0.0; rows],
        dones: vec![false; rows],
        valid,
    };
    let targets: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut g = Graph::new(&ps);
    let lv = loss_graph(&mut g, &net, &data, &targets);
    let analytic = g.backward(lv).into_param_grads();
    grad_check(|p| loss(&net, p, &data, &targets), &ps, &analytic, h, tol)
}

/// Rolling window of the most recent observations for acting.
#[derive(Debug, Clone)]
pub struct ContextWindow {
    len: usize,
    dim: usize,
    rows: VecDeque<Vec<f64>>,
}

impl ContextWindow {
    pub fn new(len: usize, dim: usize) -> Self {
        ContextWindow {
            len,
            dim,
            rows: VecDeque::with_capacity(len),
        }
    }

    pub fn push(&mut self, obs: Vec<f64>) {
        assert_eq!(obs.len(), self.dim, "observation width");
        if self.rows.len() == self.len {
            self.rows.pop_front();
        }
        self.rows.push_back(obs);
    }

    pub fn clear(&mut self) {
        self.rows.clear();
    }

    pub fn filled(&self) -> usize {
        self.rows.len()
    }

    /// Front-padded `[len, dim]` tensor and its validity mask.
    pub fn tensor(&self) -> (Tensor, Vec<bool>) {
        let pad = self.len - self.rows.len();
        let mut data = vec![0.0; pad * self.dim];
        for r in &self.rows {
            data.extend_from_slice(r);
        }
        let valid = (0..self.len).map(|i| i >= pad).collect();
        (Tensor::new(vec![self.len, self.dim], data), valid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainMetrics {
    pub loss: f64,
    /// Learning rate after this step.
    pub lr: f64,
    pub step: u64,
    pub synced: bool,
}

/// Online and target Q-networks with their optimiser state.
#[derive(Debug, Clone)]
pub struct Agent {
    cfg: AgentConfig,
    net: QNetwork,
    online: ParamStore,
    target: ParamStore,
    opt: Adam,
    lr: f64,
    train_steps: u64,
}

impl Agent {
    pub fn new(cfg: AgentConfig, seed: u64) -> Result<Self, AgentError> {
        cfg.validate().map_err(AgentError::Config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (net, online) = QNetwork::init(&cfg, &mut rng);
        Ok(Agent::from_params(cfg, net, online))
    }

    fn from_params(cfg: AgentConfig, net: QNetwork, online: ParamStore) -> Self {
        let opt = Adam::new(&online);
        Agent {
            lr: cfg.lr_init,
            target: online.clone(),
            cfg,
            net,
            online,
            opt,
            train_steps: 0,
        }
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn network(&self) -> &QNetwork {
        &self.net
    }

    pub fn online(&self) -> &ParamStore {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut ParamStore {
        &mut self.online
    }

    pub fn target(&self) -> &ParamStore {
        &self.target
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn online_q(&self) -> NetQ<'_> {
        NetQ {
            net: &self.net,
            params: &self.online,
        }
    }

    pub fn target_q(&self) -> NetQ<'_> {
        NetQ {
            net: &self.net,
            params: &self.target,
        }
    }

    pub fn new_context(&self) -> ContextWindow {
        ContextWindow::new(self.cfg.context_len, self.cfg.obs_dim())
    }

    /// Q-values at the newest position of `ctx`.
    pub fn q_last(&self, ctx: &ContextWindow) -> Vec<f64> {
        let (x, valid) = ctx.tensor();
        let q = self.online_q().q_values(&x, 1, &valid);
        q.row(self.cfg.context_len - 1).to_vec()
    }

    /// ε-greedy action for the newest position of `ctx`.
    pub fn act<R: Rng + ?Sized>(&self, ctx: &ContextWindow, eps: f64, rng: &mut R) -> usize {
        if eps > 0.0 && rng.gen::<f64>() < eps {
            return rng.gen_range(0..self.cfg.n_actions);
        }
        argmax(&self.q_last(ctx))
    }

    pub fn sync_target(&mut self) {
        self.target.copy_from(&self.online);
    }

    /// One gradient step on a sampled batch. Returns `None` when the buffer
    /// cannot yet fill a batch.
    pub fn train_step<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Option<TrainMetrics> {
        let (b, l) = (self.cfg.batch_size, self.cfg.context_len);
        if buffer.len() < b * l {
            log::warn!(
                "replay holds {} transitions, need {} for a batch; skipping update",
                buffer.len(),
                b * l
            );
            return None;
        }
        let batch = buffer.sample(b, l, rng);
        Some(self.train_on(&batch))
    }

    /// One gradient step on a given batch.
    pub fn train_on(&mut self, batch: &ContextBatch) -> TrainMetrics {
        let y = td_targets(&self.online_q(), &self.target_q(), batch, self.cfg.gamma);
        let (value, grads) = {
            let mut g = Graph::new(&self.online);
            let l = loss_graph(&mut g, &self.net, batch, &y);
            (g.scalar(l), g.backward(l).into_param_grads())
        };
        self.opt.update(&mut self.online, &grads, self.lr);
        self.train_steps += 1;
        if self.train_steps % self.cfg.lr_decay_every.max(1) == 0 {
            self.lr = (self.lr * self.cfg.lr_decay).max(self.cfg.lr_min);
        }
        let synced = self.train_steps % self.cfg.target_sync.max(1) == 0;
        if synced {
            self.sync_target();
        }
        TrainMetrics {
            loss: value,
            lr: self.lr,
            step: self.train_steps,
            synced,
        }
    }

    /// Writes the online parameters; the config travels in the header.
    pub fn save(&self, path: &Path) -> Result<(), AgentError> {
        let meta = serde_json::to_string(&self.cfg)?;
        checkpoint::save(path, &self.online, &meta)?;
        Ok(())
    }

    /// Restores an agent from [`Agent::save`] output. Target equals online.
    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let (params, meta) = checkpoint::load(path)?;
        let cfg: AgentConfig = serde_json::from_str(&meta)?;
        cfg.validate().map_err(AgentError::Config)?;
        let net = QNetwork::bind(&cfg, &params);
        Ok(Agent::from_params(cfg, net, params))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtqn_agent::replay::Transition;

    fn tiny() -> AgentConfig {
        AgentConfig {
            subflows: 1,
            fields: 2,
            n_actions: 3,
            fc_dims: (4, 4),
            embedding_dim: 4,
            heads: 2,
            ff_dim: 4,
            context_len: 3,
            batch_size: 2,
            ..AgentConfig::default()
        }
    }

    fn filled_buffer(n: usize) -> ReplayBuffer {
        let mut b = ReplayBuffer::new(100, 2);
        for i in 0..n {
            let x = i as f64 * 0.1;
            b.push(Transition {
                obs: vec![x, -x],
                action: i % 3,
                reward: x,
                done: i % 5 == 4,
                next_obs: vec![x + 0.1, -x - 0.1],
            });
        }
        b
    }

    #[test]
    fn argmax_prefers_lowest_tied_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }

    #[test]
    fn greedy_act_is_deterministic() {
        let a = Agent::new(tiny(), 1).unwrap();
        let mut ctx = a.new_context();
        ctx.push(vec![0.3, 0.1]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let first = a.act(&ctx, 0.0, &mut rng);
        for _ in 0..10 {
            assert_eq!(a.act(&ctx, 0.0, &mut rng), first);
        }
        assert_eq!(first, argmax(&a.q_last(&ctx)));
    }

    #[test]
    fn too_small_buffer_is_a_no_op() {
        let mut a = Agent::new(tiny(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(a.train_step(&filled_buffer(5), &mut rng).is_none());
        assert_eq!(a.train_steps(), 0);
    }

    #[test]
    fn learning_rate_decays_every_ten_steps_to_a_floor() {
        let mut a = Agent::new(tiny(), 1).unwrap();
        let buf = filled_buffer(20);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..9 {
            a.train_step(&buf, &mut rng).unwrap();
        }
        assert_eq!(a.lr(), 1e-4);
        a.train_step(&buf, &mut rng).unwrap();
        assert_eq!(a.lr(), 1e-4 * 0.96);
        for _ in 0..2000 {
            a.train_step(&buf, &mut rng).unwrap();
        }
        assert_eq!(a.lr(), 1e-6);
    }

    #[test]
    fn target_syncs_on_schedule() {
        let cfg = AgentConfig {
            target_sync: 5,
            lr_init: 1e-2,
            ..tiny()
        };
        let mut a = Agent::new(cfg, 2).unwrap();
        let buf = filled_buffer(20);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for i in 1..=5 {
            let m = a.train_step(&buf, &mut rng).unwrap();
            assert_eq!(m.synced, i == 5);
            assert_eq!(a.online() == a.target(), i == 5);
        }
    }

    #[test]
    fn terminal_targets_are_rewards() {
        let a = Agent::new(tiny(), 3).unwrap();
        let buf = filled_buffer(20);
        let batch = buf.sample(4, 3, &mut ChaCha8Rng::seed_from_u64(1));
        let y = td_targets(&a.online_q(), &a.target_q(), &batch, 0.969);
        for r in 0..y.len() {
            if batch.valid[r] && batch.dones[r] {
                assert_eq!(y[r], batch.rewards[r]);
            }
        }
        let y0 = td_targets(&a.online_q(), &a.target_q(), &batch, 0.0);
        for r in 0..y0.len() {
            if batch.valid[r] {
                assert_eq!(y0[r], batch.rewards[r]);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let a = Agent::new(tiny(), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("agent.ckpt");
        a.save(&p).unwrap();
        let b = Agent::load(&p).unwrap();
        assert_eq!(a.online(), b.online());
        assert_eq!(a.config(), b.config());
    }

    #[test]
    fn context_window_pads_front() {
        let mut c = ContextWindow::new(3, 1);
        c.push(vec![1.0]);
        let (x, v) = c.tensor();
        assert_eq!(x.data(), &[0.0, 0.0, 1.0]);
        assert_eq!(v, vec![false, false, true]);
        for i in 2..6 {
            c.push(vec![i as f64]);
        }
        assert_eq!(c.tensor().0.data(), &[3.0, 4.0, 5.0]);
    }
}
