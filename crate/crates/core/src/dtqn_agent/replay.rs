use numerics::Tensor;
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
    pub next_obs: Vec<f64>,
}

/// `batch` contexts of `len` positions, front-padded. Row `b·len + t` holds
/// position `t` of context `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextBatch {
    pub batch: usize,
    pub len: usize,
    pub obs: Tensor,
    pub next_obs: Tensor,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub valid: Vec<bool>,
}

/// Ring of transitions kept in arrival order, tagged by episode so sampled
/// contexts stay inside one episode.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    obs: Vec<f64>,
    next_obs: Vec<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
    episodes: Vec<u64>,
    /// Physical slot of the oldest entry once the ring is full.
    oldest: usize,
    episode: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            obs_dim,
            obs: Vec::new(),
            next_obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
            episodes: Vec::new(),
            oldest: 0,
            episode: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn push(&mut self, t: Transition) {
        assert_eq!(t.obs.len(), self.obs_dim, "observation width");
        assert_eq!(t.next_obs.len(), self.obs_dim, "next observation width");
        let d = self.obs_dim;
        if self.len() < self.capacity {
            self.obs.extend_from_slice(&t.obs);
            self.next_obs.extend_from_slice(&t.next_obs);
            self.actions.push(t.action);
            self.rewards.push(t.reward);
            self.dones.push(t.done);
            self.episodes.push(self.episode);
        } else {
            let i = self.oldest;
            self.obs[i * d..(i + 1) * d].copy_from_slice(&t.obs);
            self.next_obs[i * d..(i + 1) * d].copy_from_slice(&t.next_obs);
            self.actions[i] = t.action;
            self.rewards[i] = t.reward;
            self.dones[i] = t.done;
            self.episodes[i] = self.episode;
            self.oldest = (self.oldest + 1) % self.capacity;
        }
        if t.done {
            self.episode += 1;
        }
    }

    /// Closes the current episode without a terminal transition.
    pub fn end_episode(&mut self) {
        self.episode += 1;
    }

    fn slot(&self, logical: usize) -> usize {
        (self.oldest + logical) % self.len()
    }

    /// Transition at logical index `i`, oldest first.
    pub fn get(&self, i: usize) -> Transition {
        let s = self.slot(i);
        let d = self.obs_dim;
        Transition {
            obs: self.obs[s * d..(s + 1) * d].to_vec(),
            action: self.actions[s],
            reward: self.rewards[s],
            done: self.dones[s],
            next_obs: self.next_obs[s * d..(s + 1) * d].to_vec(),
        }
    }

    pub fn episode_of(&self, i: usize) -> u64 {
        self.episodes[self.slot(i)]
    }

    /// Context ending at logical index `end`: how many positions it has
    /// (at most `len`) without leaving `end`'s episode.
    pub fn context_span(&self, end: usize, len: usize) -> usize {
        let ep = self.episode_of(end);
        let mut n = 1;
        while n < len && n <= end && self.episode_of(end - n) == ep {
            n += 1;
        }
        n
    }

    /// Context ending at `end`, front-padded to `len` positions.
    pub fn context(&self, end: usize, len: usize) -> ContextBatch {
        self.gather(&[end], len)
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, len: usize, rng: &mut R) -> ContextBatch {
        assert!(!self.is_empty(), "sampling from an empty buffer");
        let ends: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..self.len())).collect();
        self.gather(&ends, len)
    }

    fn gather(&self, ends: &[usize], len: usize) -> ContextBatch {
        let d = self.obs_dim;
        let rows = ends.len() * len;
        let mut obs = vec![0.0; rows * d];
        let mut next_obs = vec![0.0; rows * d];
        let mut actions = vec![0; rows];
        let mut rewards = vec![0.0; rows];
        let mut dones = vec![false; rows];
        let mut valid = vec![false; rows];
        for (b, &end) in ends.iter().enumerate() {
            let n = self.context_span(end, len);
            for j in 0..n {
                let row = b * len + (len - n + j);
                let s = self.slot(end + 1 - n + j);
                obs[row * d..(row + 1) * d].copy_from_slice(&self.obs[s * d..(s + 1) * d]);
                next_obs[row * d..(row + 1) * d].copy_from_slice(&self.next_obs[s * d..(s + 1) * d]);
                actions[row] = self.actions[s];
                rewards[row] = self.rewards[s];
                dones[row] = self.dones[s];
                valid[row] = true;
            }
        }
        ContextBatch {
            batch: ends.len(),
            len,
            obs: Tensor::new(vec![rows, d], obs),
            next_obs: Tensor::new(vec![rows, d], next_obs),
            actions,
            rewards,
            dones,
            valid,
        }
    }
}
