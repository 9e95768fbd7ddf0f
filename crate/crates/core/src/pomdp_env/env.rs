use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::action::ActionSpace;
use super::observation::{aggregate_window, Observation};
use super::reward::{subflow_reward, total_reward, RewardComponents, RewardConfig, RewardInput};
use crate::control_plane::{
    encode_frame, CwndDirective, Frame, InvocationMode, InvocationPolicy, MetricReport, Proxy, ProxyDecision,
};
use crate::mptcp_core::AccountingFault;
use crate::netsim::{PathError, PathSpec, SimTime};
use crate::world::{AppSource, ConnectionSpec, ControllerSpec, IntervalStats, World, WorldConfig};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Accounting(#[from] AccountingFault),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("episode is over; call reset")]
    EpisodeOver,
    #[error("start phase did not finish within {0} s")]
    Warmup(f64),
}

/// The network an episode runs on.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub paths: Vec<PathSpec>,
    /// Path carrying each agent subflow.
    pub subflow_paths: Vec<usize>,
    /// Traffic source of the agent connection.
    pub agent_app: AppSource,
    pub cross_traffic: Vec<ConnectionSpec>,
    pub world: WorldConfig,
}

impl Network {
    /// Multipath agent connection with one subflow per path.
    pub fn disjoint(paths: Vec<PathSpec>, world: WorldConfig) -> Self {
        let subflow_paths = (0..paths.len()).collect();
        Network {
            paths,
            subflow_paths,
            agent_app: AppSource::Bulk,
            cross_traffic: Vec::new(),
            world,
        }
    }

    /// Smallest achievable RTT over the agent's paths: propagation plus one
    /// packet's serialisation at the path's peak rate.
    pub fn rtt_floor(&self) -> f64 {
        let bits = self.world.mss as f64 * 8.0;
        self.subflow_paths
            .iter()
            .map(|&p| {
                let path = &self.paths[p];
                let peak = path.capacity.iter().map(|c| c.1).fold(0.0, f64::max);
                path.base_rtt() + bits / peak
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn build(&self, seed: u64) -> Result<World, PathError> {
        let paths = self
            .paths
            .iter()
            .enumerate()
            .map(|(i, p)| p.build(i))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(World::new(paths, self.world.clone(), seed))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Seconds.
    pub decision_interval: f64,
    /// Steps per episode.
    pub horizon: usize,
    pub n: u32,
    pub k: u32,
    /// Blend factor of the previous observation into the new one.
    pub ewma: f64,
    pub invocation: InvocationMode,
    /// Seconds of simulated time allowed for the start phase.
    pub warmup_limit: f64,
    /// Windows to wait in all-subflows mode before invoking anyway.
    pub max_wait_windows: u32,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            decision_interval: 0.02,
            horizon: 500,
            n: 2,
            k: 2,
            ewma: 0.0,
            invocation: InvocationMode::EveryWindow,
            warmup_limit: 10.0,
            max_wait_windows: 5,
        }
    }
}

/// Absolute window targets for `deltas` applied to the previous targets
/// `base`, clamped to each subflow's bounds under `obs`.
pub fn directive_targets(base: &[f64], obs: &Observation, deltas: &[i32], k: u32, cfg: &RewardConfig) -> Vec<u32> {
    obs.subflows
        .iter()
        .zip(base)
        .zip(deltas)
        .map(|((s, &b), &d)| {
            let (lo, hi) = cfg.cwnd_bounds(s.bdp_packets());
            (b + (d as f64) * k as f64).clamp(lo, hi).round() as u32
        })
        .collect()
}

/// Initial targets: the windows observed at handoff.
pub fn initial_targets(obs: &Observation) -> Vec<f64> {
    obs.subflows.iter().map(|s| s.cwnd).collect()
}

fn merge_interval(acc: &mut [IntervalStats], add: &[IntervalStats]) {
    for (a, b) in acc.iter_mut().zip(add) {
        a.goodput_bytes += b.goodput_bytes;
        a.rtt_sum += b.rtt_sum;
        a.rtt_samples += b.rtt_samples;
        a.loss_events += b.loss_events;
        a.sent_packets += b.sent_packets;
    }
}

/// What happened on each subflow during a step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepInfo {
    /// Simulated time at the end of the step, seconds.
    pub time: f64,
    /// Seconds covered by the step.
    pub elapsed: f64,
    pub interval: Vec<IntervalStats>,
    pub cwnd: Vec<f64>,
    pub targets: Vec<u32>,
}

impl StepInfo {
    /// Unique bytes delivered per second, summed over subflows.
    pub fn goodput_bps(&self) -> f64 {
        let bytes: u64 = self.interval.iter().map(|s| s.goodput_bytes).sum();
        bytes as f64 * 8.0 / self.elapsed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub components: Vec<RewardComponents>,
    pub done: bool,
    pub info: StepInfo,
}

/// One agent connection on a simulated network, stepped one decision
/// interval at a time.
pub struct Env {
    net: Network,
    cfg: EnvConfig,
    reward: RewardConfig,
    actions: ActionSpace,
    world: World,
    proxy: Proxy,
    conn: usize,
    obs: Observation,
    /// Last commanded window per subflow.
    targets: Vec<f64>,
    warmup: StepInfo,
    steps: usize,
    decision_seq: u64,
    done: bool,
}

impl Env {
    pub fn new(net: Network, cfg: EnvConfig, reward: RewardConfig) -> Result<Self, EnvError> {
        let m = net.subflow_paths.len();
        let actions = ActionSpace::new(cfg.n, cfg.k, m);
        let world = net.build(0)?;
        let proxy = Self::make_proxy(&cfg, m);
        Ok(Env {
            net,
            cfg,
            reward,
            actions,
            world,
            proxy,
            conn: 0,
            obs: Observation::default(),
            targets: Vec::new(),
            warmup: StepInfo::default(),
            steps: 0,
            decision_seq: 0,
            done: true,
        })
    }

    fn make_proxy(cfg: &EnvConfig, m: usize) -> Proxy {
        let policy = InvocationPolicy {
            mode: cfg.invocation,
            window: cfg.decision_interval,
        };
        Proxy::new(0, m, policy)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn set_config(&mut self, cfg: EnvConfig) {
        self.cfg = cfg;
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn action_space(&self) -> ActionSpace {
        self.actions
    }

    pub fn observation(&self) -> &Observation {
        &self.obs
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn agent_conn(&self) -> usize {
        self.conn
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Traffic from connection start up to the first observation.
    pub fn warmup(&self) -> &StepInfo {
        &self.warmup
    }

    /// Whether the agent's finite flow has completed.
    pub fn finished(&self) -> bool {
        self.world.connection(self.conn).finish_time().is_some()
    }

    /// Returns and resets the interval counters of any connection,
    /// e.g. cross traffic.
    pub fn take_interval(&mut self, conn: usize) -> Vec<IntervalStats> {
        self.world.take_interval(conn)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn proxy(&self) -> &Proxy {
        &self.proxy
    }

    /// Starts a fresh episode: builds the network, runs the start phase to
    /// handoff and returns the first observation.
    pub fn reset(&mut self, seed: u64) -> Result<Observation, EnvError> {
        let m = self.net.subflow_paths.len();
        self.world = self.net.build(seed)?;
        self.conn = self.world.add_connection(ConnectionSpec {
            paths: self.net.subflow_paths.clone(),
            controller: ControllerSpec::Agent,
            app: self.net.agent_app,
            start: 0.0,
        });
        // The agent connection is always conn_id 0.
        debug_assert_eq!(self.conn, 0);
        for c in &self.net.cross_traffic {
            self.world.add_connection(c.clone());
        }
        self.proxy = Self::make_proxy(&self.cfg, m);
        self.steps = 0;
        self.decision_seq = 0;
        self.obs = Observation::default();
        let limit = SimTime::from_secs(self.cfg.warmup_limit);
        let tick = SimTime::from_secs(self.cfg.decision_interval);
        let mut interval = vec![IntervalStats::default(); m];
        while !self.world.connection(self.conn).handed_off() && !self.finished() {
            if self.world.now() >= limit {
                return Err(EnvError::Warmup(self.cfg.warmup_limit));
            }
            let t = self.world.now() + tick;
            self.world.run_until(t)?;
        }
        // Reports from the start phase are not part of any window.
        self.world.drain_reports();
        self.proxy.take_reports();
        merge_interval(&mut interval, &self.world.take_interval(self.conn));
        if !self.finished() {
            let (reports, elapsed) = self.advance_window()?;
            self.obs = aggregate_window(&reports, elapsed, None, 0.0);
            merge_interval(&mut interval, &self.world.take_interval(self.conn));
        }
        let conn = self.world.connection(self.conn);
        let now = self.world.now().as_secs();
        self.warmup = StepInfo {
            time: now,
            elapsed: now,
            interval,
            cwnd: (0..m).map(|i| conn.subflow(i).cwnd).collect(),
            targets: Vec::new(),
        };
        self.targets = initial_targets(&self.obs);
        self.done = self.finished();
        Ok(self.obs.clone())
    }

    /// Runs whole windows until the proxy invokes a decision.
    fn advance_window(&mut self) -> Result<(Vec<Vec<MetricReport>>, f64), EnvError> {
        let tick = SimTime::from_secs(self.cfg.decision_interval);
        let start = self.world.now();
        let mut waited = 0;
        loop {
            let t = self.world.now() + tick;
            self.world.run_until(t)?;
            let bytes = self.world.drain_reports();
            self.proxy.ingest(&bytes);
            waited += 1;
            if self.proxy.collect() == ProxyDecision::InvokeDecision || waited >= self.cfg.max_wait_windows.max(1) {
                break;
            }
        }
        let elapsed = (self.world.now() - start).as_secs();
        Ok((self.proxy.take_reports(), elapsed))
    }

    /// Applies `action`, advances one decision interval and scores the result.
    pub fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        let deltas = self.actions.decode(action);
        let before = self.obs.clone();
        let base = self.targets.clone();
        let targets = directive_targets(&base, &before, &deltas, self.actions.k, &self.reward);
        self.decision_seq += 1;
        let joint = CwndDirective {
            conn_id: self.conn as u32,
            decision_seq: self.decision_seq,
            target_cwnd: targets.clone(),
            subflow_id: None,
        };
        for part in self.proxy.demux(&joint) {
            self.world
                .send_client_frame(self.conn, encode_frame(&Frame::Directive(part)));
        }
        let (reports, elapsed) = self.advance_window()?;
        let after = aggregate_window(&reports, elapsed, Some(&before), self.cfg.ewma);
        let now = self.world.now();
        let conn = self.world.connection(self.conn);
        let components: Vec<RewardComponents> = (0..deltas.len())
            .map(|i| {
                let path = conn.path_of(i);
                let inp = RewardInput {
                    before: &before.subflows[i],
                    after: &after.subflows[i],
                    delta: deltas[i],
                    k: self.actions.k,
                    base_cwnd: base[i],
                    cwnd_bounds: self.reward.cwnd_bounds(before.subflows[i].bdp_packets()),
                    capacity_bps: self.world.paths()[path].rate_at(now),
                };
                subflow_reward(&inp, &self.reward)
            })
            .collect();
        let cwnd = (0..deltas.len()).map(|i| conn.subflow(i).cwnd).collect();
        let interval = self.world.take_interval(self.conn);
        self.steps += 1;
        self.done = self.steps >= self.cfg.horizon || self.finished();
        self.obs = after.clone();
        self.targets = targets.iter().map(|&t| t as f64).collect();
        Ok(StepResult {
            obs: after,
            reward: total_reward(&components),
            components,
            done: self.done,
            info: StepInfo {
                time: now.as_secs(),
                elapsed,
                interval,
                cwnd,
                targets,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pomdp_env::SubflowObs;

    fn stationary() -> Network {
        let p = PathSpec::constant(50e6, 0.005, 100, 0.0);
        Network::disjoint(vec![p.clone(), p], WorldConfig::default())
    }

    fn env(horizon: usize) -> Env {
        let net = stationary();
        let reward = RewardConfig::for_floor(net.rtt_floor());
        let cfg = EnvConfig {
            horizon,
            ..EnvConfig::default()
        };
        Env::new(net, cfg, reward).unwrap()
    }

    #[test]
    fn targets_are_clamped() {
        let cfg = RewardConfig::for_floor(0.01);
        let s = SubflowObs {
            cwnd: 3.0,
            bw_estimate: 12e6,
            base_rtt: 0.01,
            ..SubflowObs::default()
        };
        let obs = Observation {
            subflows: vec![s, SubflowObs { cwnd: 39.0, ..s }],
        };
        // BDP 10 packets: bounds [2, 40].
        let base = initial_targets(&obs);
        assert_eq!(directive_targets(&base, &obs, &[-2, 2], 2, &cfg), vec![2, 40]);
        assert_eq!(directive_targets(&base, &obs, &[0, 0], 2, &cfg), vec![3, 39]);
        // The base, not the live window, is what the delta moves.
        assert_eq!(directive_targets(&[20.0, 20.0], &obs, &[1, -1], 2, &cfg), vec![22, 18]);
    }

    #[test]
    fn episode_runs_to_horizon() {
        let mut e = env(5);
        let o = e.reset(1).unwrap();
        assert_eq!(o.subflows.len(), 2);
        assert!(o.subflows.iter().all(|s| !s.stale && s.cwnd == 16.0));
        let hold = e.action_space().hold();
        for i in 0..5 {
            let r = e.step(hold).unwrap();
            assert_eq!(r.done, i == 4);
            assert!((r.info.elapsed - 0.02).abs() < 1e-12);
        }
        assert!(matches!(e.step(hold), Err(EnvError::EpisodeOver)));
    }

    #[test]
    fn growth_action_raises_window() {
        let mut e = env(40);
        e.reset(2).unwrap();
        let up = e.action_space().size() - 1;
        let mut last = None;
        for _ in 0..10 {
            last = Some(e.step(up).unwrap());
        }
        let r = last.unwrap();
        assert!(r.obs.subflows.iter().all(|s| s.cwnd > 30.0), "{:?}", r.info.cwnd);
    }

    #[test]
    fn holding_on_stationary_link_is_stationary() {
        let mut e = env(60);
        e.reset(3).unwrap();
        let hold = e.action_space().hold();
        let mut tputs = Vec::new();
        for _ in 0..60 {
            let r = e.step(hold).unwrap();
            tputs.push(r.obs.subflows[0].tput_smoothed);
        }
        let tail = &tputs[20..];
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!(tail.iter().all(|t| (t / mean - 1.0).abs() < 0.1), "{tail:?}");
    }

    #[test]
    fn same_seed_same_trajectory() {
        let run = |seed| {
            let mut e = env(20);
            e.reset(seed).unwrap();
            (0..20).map(|i| e.step(i % 25).unwrap().reward).collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7));
    }
}
