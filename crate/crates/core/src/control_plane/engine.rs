use numerics::ParamStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::frames::CwndDirective;
use crate::dtqn_agent::{argmax, Agent, ContextWindow, NetQ, QFunction, QNetwork};
use crate::pomdp_env::{directive_targets, initial_targets, ActionSpace, Observation, RewardConfig};

/// A served decision: the joint action and the directive it becomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: usize,
    pub directive: CwndDirective,
}

/// Decision tier: holds an immutable parameter snapshot and the rolling
/// context for one connection.
#[derive(Debug, Clone)]
pub struct Engine {
    net: QNetwork,
    params: ParamStore,
    context: ContextWindow,
    actions: ActionSpace,
    reward: RewardConfig,
    conn_id: u32,
    decision_seq: u64,
    /// Last commanded windows; taken from the first observation.
    targets: Option<Vec<f64>>,
    /// Exploration rate; zero when serving.
    pub epsilon: f64,
    rng: ChaCha8Rng,
}

impl Engine {
    pub fn new(agent: &Agent, actions: ActionSpace, reward: RewardConfig, conn_id: u32, seed: u64) -> Self {
        assert_eq!(
            agent.config().n_actions,
            actions.size(),
            "agent head does not match the action space"
        );
        Engine {
            net: agent.network().clone(),
            params: agent.online().clone(),
            context: agent.new_context(),
            actions,
            reward,
            conn_id,
            decision_seq: 0,
            targets: None,
            epsilon: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Replaces the parameter snapshot, keeping the context.
    pub fn update_snapshot(&mut self, agent: &Agent) {
        self.params.copy_from(agent.online());
    }

    /// Forgets the context, e.g. at an episode boundary.
    pub fn reset(&mut self) {
        self.context.clear();
        self.targets = None;
    }

    pub fn decision_seq(&self) -> u64 {
        self.decision_seq
    }

    pub fn context(&self) -> &ContextWindow {
        &self.context
    }

    /// Appends `obs` to the context and picks the next joint action.
    pub fn serve(&mut self, obs: &Observation) -> Decision {
        self.context.push(obs.features());
        let action = if self.epsilon > 0.0 && self.rng.gen::<f64>() < self.epsilon {
            self.rng.gen_range(0..self.actions.size())
        } else {
            let (x, valid) = self.context.tensor();
            let q = NetQ {
                net: &self.net,
                params: &self.params,
            }
            .q_values(&x, 1, &valid);
            argmax(q.row(q.rows() - 1))
        };
        self.decision_seq += 1;
        let deltas = self.actions.decode(action);
        let base = self.targets.take().unwrap_or_else(|| initial_targets(obs));
        let target_cwnd = directive_targets(&base, obs, &deltas, self.actions.k, &self.reward);
        self.targets = Some(target_cwnd.iter().map(|&t| t as f64).collect());
        Decision {
            action,
            directive: CwndDirective {
                conn_id: self.conn_id,
                decision_seq: self.decision_seq,
                target_cwnd,
                subflow_id: None,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtqn_agent::AgentConfig;
    use crate::pomdp_env::SubflowObs;

    fn setup() -> (Agent, ActionSpace, RewardConfig, Observation) {
        let cfg = AgentConfig {
            n_actions: 25,
            fc_dims: (8, 8),
            embedding_dim: 8,
            heads: 2,
            ff_dim: 8,
            context_len: 4,
            ..AgentConfig::default()
        };
        let s = SubflowObs {
            tput_smoothed: 40e6,
            rtt_smoothed: 0.012,
            cwnd: 30.0,
            bw_estimate: 48e6,
            base_rtt: 0.01,
            expflag: false,
            stale: false,
        };
        (
            Agent::new(cfg, 9).unwrap(),
            ActionSpace::new(2, 2, 2),
            RewardConfig::for_floor(0.01),
            Observation {
                subflows: vec![s, SubflowObs { cwnd: 160.0, ..s }],
            },
        )
    }

    #[test]
    fn identical_context_gives_identical_directive() {
        let (agent, actions, reward, obs) = setup();
        let mut a = Engine::new(&agent, actions, reward, 0, 1);
        let mut b = Engine::new(&agent, actions, reward, 0, 2);
        let (da, db) = (a.serve(&obs), b.serve(&obs));
        assert_eq!(da, db);
        assert_eq!(da.directive.decision_seq, 1);
        assert_eq!(a.serve(&obs).directive.decision_seq, 2);
    }

    #[test]
    fn targets_accumulate_across_decisions() {
        let (agent, actions, reward, obs) = setup();
        let mut e = Engine::new(&agent, actions, reward, 0, 1);
        e.epsilon = 1.0;
        let mut base = initial_targets(&obs);
        for _ in 0..20 {
            let d = e.serve(&obs);
            let want = directive_targets(&base, &obs, &actions.decode(d.action), 2, &reward);
            assert_eq!(d.directive.target_cwnd, want);
            base = want.iter().map(|&t| t as f64).collect();
        }
    }

    #[test]
    fn hold_keeps_windows_and_growth_is_clamped() {
        let (_, actions, reward, obs) = setup();
        let base = initial_targets(&obs);
        let hold = directive_targets(&base, &obs, &actions.decode(actions.hold()), 2, &reward);
        assert_eq!(hold, vec![30, 160]);
        // BDP 40 packets caps the second subflow at 160.
        let up = directive_targets(&base, &obs, &[2, 2], 2, &reward);
        assert_eq!(up, vec![34, 160]);
    }
}
