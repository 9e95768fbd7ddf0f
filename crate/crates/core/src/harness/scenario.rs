use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline_cc::BaselineAlgorithm;
use crate::control_plane::InvocationMode;
use crate::dtqn_agent::AgentConfig;
use crate::netsim::PathSpec;
use crate::pomdp_env::{EnvConfig, Network, RewardConfig, TputNorm};
use crate::world::{AppSource, ConnectionSpec, ControllerSpec, WorldConfig};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}, column {column}: {msg}")]
    Syntax { line: usize, column: usize, msg: String },
    #[error("line {line}: `{field}` {reason}")]
    Invalid {
        line: usize,
        field: &'static str,
        reason: String,
    },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Tcco,
    /// Single-observation agent: no attention block, context of one.
    TccoNoTransformer,
    Reno,
    Cubic,
    Lia,
    FixedCwnd,
}

impl Algorithm {
    pub fn is_agent(self) -> bool {
        matches!(self, Algorithm::Tcco | Algorithm::TccoNoTransformer)
    }

    pub fn baseline(self) -> Option<BaselineAlgorithm> {
        match self {
            Algorithm::Reno => Some(BaselineAlgorithm::Reno),
            Algorithm::Cubic => Some(BaselineAlgorithm::Cubic),
            Algorithm::Lia => Some(BaselineAlgorithm::Lia),
            _ => None,
        }
    }
}

/// Another connection sharing the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Competitor {
    pub paths: Vec<usize>,
    pub algorithm: Algorithm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_cwnd: Option<Vec<f64>>,
    /// Seconds.
    #[serde(default)]
    pub start: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    LossRate,
    QueuePackets,
    DecisionInterval,
    ControlDelay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub parameter: SweepParam,
    pub values: Vec<f64>,
    /// Paths a path parameter applies to; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<Vec<usize>>,
}

/// Partial reward configuration layered over the defaults for the
/// network's RTT floor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tput_norm: Option<TputNorm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cwnd_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cwnd_max_bdp: Option<f64>,
}

fn default_interval() -> f64 {
    0.02
}

fn default_seeds() -> u32 {
    20
}

fn default_horizon() -> usize {
    500
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

/// One experiment: a network, the algorithm driving the measured
/// connection and how long to run it. Times are seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub paths: Vec<PathSpec>,
    /// Path of each subflow of the measured connection; one per path when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subflow_paths: Option<Vec<usize>>,
    pub algorithm: Algorithm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_cwnd: Option<Vec<f64>>,
    #[serde(default = "default_interval")]
    pub decision_interval: f64,
    #[serde(default)]
    pub control_delay: f64,
    pub duration: f64,
    /// Leading seconds left out of summary statistics.
    #[serde(default)]
    pub warmup: f64,
    /// Bytes per flow. Each flow runs alone on a fresh network.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flow_sizes: Vec<u64>,
    #[serde(default = "default_seeds")]
    pub seeds: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub competitors: Vec<Competitor>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub reward: RewardOverrides,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<AgentConfig>,
    /// Steps per training episode.
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_invocation")]
    pub invocation: InvocationMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub block_on_fast_recovery: bool,
}

fn default_invocation() -> InvocationMode {
    InvocationMode::EveryWindow
}

/// Parses and validates a scenario. Errors carry the offending line.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Syntax {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    s.validate(text)?;
    Ok(s)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    parse_scenario(&std::fs::read_to_string(path)?)
}

pub fn emit_scenario(s: &Scenario) -> String {
    serde_json::to_string_pretty(s).expect("scenario serialises")
}

/// First line mentioning `"key"`, or 1.
fn line_of(text: &str, key: &str) -> usize {
    let quoted = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&quoted)).map_or(1, |i| i + 1)
}

impl Scenario {
    fn validate(&self, text: &str) -> Result<(), ScenarioError> {
        let bad = |field: &'static str, reason: String| ScenarioError::Invalid {
            line: line_of(text, field),
            field,
            reason,
        };
        if self.paths.is_empty() {
            return Err(bad("paths", "needs at least one path".into()));
        }
        for (i, p) in self.paths.iter().enumerate() {
            p.build::<()>(i).map_err(|e| bad("paths", format!("path {i}: {e}")))?;
        }
        if !(self.duration > 0.0) {
            return Err(bad("duration", format!("must be positive, got {}", self.duration)));
        }
        if !(0.0..self.duration).contains(&self.warmup) {
            return Err(bad("warmup", "must lie in [0, duration)".into()));
        }
        if !(self.decision_interval > 0.0) {
            return Err(bad("decision_interval", "must be positive".into()));
        }
        if !(self.control_delay >= 0.0) {
            return Err(bad("control_delay", "must be non-negative".into()));
        }
        if self.seeds == 0 {
            return Err(bad("seeds", "must be at least 1".into()));
        }
        if self.horizon == 0 {
            return Err(bad("horizon", "must be at least 1".into()));
        }
        let np = self.paths.len();
        if let Some(sp) = &self.subflow_paths {
            if sp.is_empty() || sp.iter().any(|&p| p >= np) {
                return Err(bad("subflow_paths", format!("must name paths below {np}")));
            }
        }
        let m = self.subflow_count();
        if self.algorithm == Algorithm::FixedCwnd {
            match &self.fixed_cwnd {
                Some(w) if w.len() == m && w.iter().all(|&x| x >= 1.0) => {}
                _ => return Err(bad("fixed_cwnd", format!("needs {m} windows of at least 1"))),
            }
        }
        if self.flow_sizes.contains(&0) {
            return Err(bad("flow_sizes", "must be positive".into()));
        }
        for c in &self.competitors {
            if c.paths.is_empty() || c.paths.iter().any(|&p| p >= np) {
                return Err(bad("competitors", format!("paths must be below {np}")));
            }
            if c.algorithm.is_agent() {
                return Err(bad("competitors", "must use a non-learning algorithm".into()));
            }
            if c.algorithm == Algorithm::FixedCwnd && c.fixed_cwnd.as_ref().map(|w| w.len()) != Some(c.paths.len()) {
                return Err(bad("competitors", "fixed_cwnd needs one window per path".into()));
            }
        }
        if let Some(a) = &self.agent {
            a.validate().map_err(|e| bad("agent", e))?;
        }
        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() {
                return Err(bad("sweep", "needs at least one value".into()));
            }
            if let Some(ps) = &sw.paths {
                if ps.iter().any(|&p| p >= np) {
                    return Err(bad("sweep", format!("paths must be below {np}")));
                }
            }
            for &v in &sw.values {
                let mut probe = self.clone();
                probe.sweep = None;
                probe.apply(sw, v);
                probe
                    .validate(text)
                    .map_err(|e| bad("sweep", format!("value {v}: {e}")))?;
            }
        }
        Ok(())
    }

    pub fn subflow_paths(&self) -> Vec<usize> {
        self.subflow_paths
            .clone()
            .unwrap_or_else(|| (0..self.paths.len()).collect())
    }

    pub fn subflow_count(&self) -> usize {
        self.subflow_paths.as_ref().map_or(self.paths.len(), Vec::len)
    }

    /// This scenario with one sweep value applied.
    pub fn with_value(&self, value: f64) -> Scenario {
        let mut s = self.clone();
        if let Some(sw) = s.sweep.take() {
            s.apply(&sw, value);
        }
        s
    }

    fn apply(&mut self, sw: &Sweep, v: f64) {
        let targets: Vec<usize> = sw.paths.clone().unwrap_or_else(|| (0..self.paths.len()).collect());
        match sw.parameter {
            SweepParam::LossRate => targets.iter().for_each(|&p| self.paths[p].loss_rate = v),
            SweepParam::QueuePackets => targets
                .iter()
                .for_each(|&p| self.paths[p].queue_packets = v.round() as usize),
            SweepParam::DecisionInterval => self.decision_interval = v,
            SweepParam::ControlDelay => self.control_delay = v,
        }
    }

    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            control_delay: self.control_delay,
            block_on_fast_recovery: self.block_on_fast_recovery,
            ..WorldConfig::default()
        }
    }

    pub fn competitor_specs(&self) -> Vec<ConnectionSpec> {
        self.competitors
            .iter()
            .map(|c| ConnectionSpec {
                paths: c.paths.clone(),
                controller: match c.algorithm.baseline() {
                    Some(b) => ControllerSpec::Baseline(b),
                    None => ControllerSpec::Fixed(c.fixed_cwnd.clone().unwrap_or_default()),
                },
                app: AppSource::Bulk,
                start: c.start,
            })
            .collect()
    }

    pub fn network(&self) -> Network {
        Network {
            paths: self.paths.clone(),
            subflow_paths: self.subflow_paths(),
            agent_app: AppSource::Bulk,
            cross_traffic: self.competitor_specs(),
            world: self.world_config(),
        }
    }

    pub fn reward_config(&self) -> RewardConfig {
        let o = &self.reward;
        let mut r = RewardConfig::for_floor(o.d_f.unwrap_or_else(|| self.network().rtt_floor()));
        if o.d_f.is_some() && o.beta.is_none() {
            r.beta = 2.0 * r.d_f;
        }
        r.beta = o.beta.unwrap_or(r.beta);
        r.g = o.g.unwrap_or(r.g);
        r.sigma = o.sigma.unwrap_or(r.sigma);
        r.kappa = o.kappa.unwrap_or(r.kappa);
        r.w_d = o.w_d.unwrap_or(r.w_d);
        r.tput_norm = o.tput_norm.unwrap_or(r.tput_norm);
        r.cwnd_min = o.cwnd_min.unwrap_or(r.cwnd_min);
        r.cwnd_max_bdp = o.cwnd_max_bdp.unwrap_or(r.cwnd_max_bdp);
        r
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            decision_interval: self.decision_interval,
            horizon: self.horizon,
            invocation: self.invocation,
            ..EnvConfig::default()
        }
    }

    /// Agent configuration sized to this scenario's subflows.
    pub fn agent_config(&self) -> AgentConfig {
        let mut a = self.agent.clone().unwrap_or_default();
        a.subflows = self.subflow_count();
        let n = self.env_config().n as usize;
        a.n_actions = (2 * n + 1).pow(a.subflows as u32);
        if self.algorithm == Algorithm::TccoNoTransformer {
            a.transformer_layers = 0;
            a.context_len = 1;
        }
        a
    }
}
