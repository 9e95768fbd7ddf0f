use serde::{Deserialize, Serialize};

/// Q-network shape and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    /// Subflows per observation.
    pub subflows: usize,
    /// Scalar features per subflow.
    pub fields: usize,
    pub n_actions: usize,
    pub fc_dims: (usize, usize),
    pub embedding_dim: usize,
    pub heads: usize,
    /// Zero drops the attention stack entirely.
    pub transformer_layers: usize,
    pub ff_dim: usize,
    pub context_len: usize,
    pub share_encoders: bool,
    pub gamma: f64,
    pub lr_init: f64,
    pub lr_min: f64,
    pub lr_decay: f64,
    /// Gradient steps between learning-rate decays.
    pub lr_decay_every: u64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Gradient steps between target-network copies.
    pub target_sync: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Share of all training steps over which ε anneals.
    pub eps_fraction: f64,
    /// Environment steps per gradient step.
    pub train_every: u64,
    /// Environment steps before the first gradient step.
    pub learning_starts: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            subflows: 2,
            fields: crate::pomdp_env::FIELDS_PER_SUBFLOW,
            n_actions: 25,
            fc_dims: (64, 64),
            embedding_dim: 128,
            heads: 4,
            transformer_layers: 1,
            ff_dim: 128,
            context_len: 20,
            share_encoders: false,
            gamma: 0.969,
            lr_init: 1e-4,
            lr_min: 1e-6,
            lr_decay: 0.96,
            lr_decay_every: 10,
            batch_size: 32,
            replay_capacity: 1_000_000,
            target_sync: 10_000,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_fraction: 0.2,
            train_every: 1,
            learning_starts: 0,
        }
    }
}

impl AgentConfig {
    /// Width of one flattened observation.
    pub fn obs_dim(&self) -> usize {
        self.subflows * self.fields
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.subflows == 0 || self.fields == 0 || self.n_actions == 0 {
            return Err("subflows, fields and n_actions must be positive".into());
        }
        if self.embedding_dim % self.heads.max(1) != 0 {
            return Err(format!(
                "embedding_dim {} is not divisible by {} heads",
                self.embedding_dim, self.heads
            ));
        }
        if self.context_len == 0 || self.batch_size == 0 {
            return Err("context_len and batch_size must be positive".into());
        }
        if !(self.lr_min <= self.lr_init) {
            return Err("lr_min exceeds lr_init".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(format!("gamma {} outside [0, 1]", self.gamma));
        }
        Ok(())
    }
}

/// Linear ε from `eps_start` to `eps_end` over the first `eps_fraction` of
/// `total` steps, flat afterwards.
pub fn epsilon(cfg: &AgentConfig, step: u64, total: u64) -> f64 {
    let span = (cfg.eps_fraction * total as f64).max(1.0);
    let frac = (step as f64 / span).min(1.0);
    cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        assert_eq!(AgentConfig::default().validate(), Ok(()));
        let bad = AgentConfig {
            embedding_dim: 10,
            ..AgentConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn epsilon_schedule() {
        let c = AgentConfig::default();
        assert_eq!(epsilon(&c, 0, 1000), 1.0);
        assert!((epsilon(&c, 100, 1000) - 0.525).abs() < 1e-12);
        assert!((epsilon(&c, 200, 1000) - 0.05).abs() < 1e-12);
        assert!((epsilon(&c, 900, 1000) - 0.05).abs() < 1e-12);
    }
}
